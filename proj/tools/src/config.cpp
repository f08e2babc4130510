#include "ctn_cli/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include "ctn/error.hpp"

namespace ctn::cli {
namespace {

namespace pt = boost::property_tree;

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

template <class T>
T parse_number(const std::string& text, const std::string& where) {
  T value{};
  const char* end = text.data() + text.size();
  auto res = std::from_chars(text.data(), end, value);
  require(res.ec == std::errc() && res.ptr == end, ErrorCode::ParseError, where + ": bad number '" + text + "'");
  return value;
}

bool parse_bool(const std::string& text, const std::string& where) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  fail(ErrorCode::ParseError, where + ": expected true or false, got '" + text + "'");
}

/// Runs a domain parser, reporting its failure as a malformed value at `where`.
template <class F>
auto parse_value(F&& parse, const std::string& text, const std::string& where) {
  try {
    return parse(text);
  } catch (const Error& e) {
    fail(ErrorCode::ParseError, where + ": " + e.what());
  }
}

/// One settable key: reads from and writes to an ExperimentConfig.
struct Field {
  std::function<void(ExperimentConfig&, const std::string&, const std::string&)> read;
  std::function<std::string(const ExperimentConfig&)> write;
};

template <class T, class Get>
Field int_field(Get get) {
  return {[get](ExperimentConfig& c, const std::string& v, const std::string& w) { get(c) = parse_number<T>(v, w); },
          [get](const ExperimentConfig& c) { return std::to_string(get(c)); }};
}

template <class Get>
Field double_field(Get get) {
  return {[get](ExperimentConfig& c, const std::string& v, const std::string& w) { get(c) = parse_number<double>(v, w); },
          [get](const ExperimentConfig& c) { return format_double(get(c)); }};
}

using Section = std::vector<std::pair<std::string, Field>>;

const std::vector<std::pair<std::string, Section>>& schema() {
  static const std::vector<std::pair<std::string, Section>> sections = {
      {"data",
       {
           {"seed", int_field<std::uint64_t>([](auto& c) -> auto& { return c.data.seed; })},
           {"train_count", int_field<std::int64_t>([](auto& c) -> auto& { return c.data.train_count; })},
           {"test_count", int_field<std::int64_t>([](auto& c) -> auto& { return c.data.test_count; })},
       }},
      {"tokenizer",
       {
           {"seed", int_field<std::uint64_t>([](auto& c) -> auto& { return c.tokenizer.seed; })},
           {"codebook_size", int_field<std::int64_t>([](auto& c) -> auto& { return c.tokenizer.codebook_size; })},
           {"latent_dim", int_field<std::int64_t>([](auto& c) -> auto& { return c.tokenizer.latent_dim; })},
           {"hidden_channels",
            int_field<std::int64_t>([](auto& c) -> auto& { return c.tokenizer.hidden_channels; })},
           {"layers", int_field<std::int64_t>([](auto& c) -> auto& { return c.tokenizer.layers; })},
           {"kernel_size", int_field<std::int64_t>([](auto& c) -> auto& { return c.tokenizer.kernel_size; })},
           {"patch_size", int_field<std::int64_t>([](auto& c) -> auto& { return c.tokenizer.patch_size; })},
           {"beta", double_field([](auto& c) -> auto& { return c.tokenizer.beta; })},
           {"lr", double_field([](auto& c) -> auto& { return c.tokenizer.lr; })},
           {"batch_size", int_field<std::int64_t>([](auto& c) -> auto& { return c.tokenizer.batch_size; })},
           {"epochs", int_field<std::int64_t>([](auto& c) -> auto& { return c.tokenizer.epochs; })},
           {"dead_code_reset",
            {[](ExperimentConfig& c, const std::string& v, const std::string& w) {
               c.tokenizer.dead_code_reset = parse_bool(v, w);
             },
             [](const ExperimentConfig& c) { return std::string(c.tokenizer.dead_code_reset ? "true" : "false"); }}},
       }},
      {"pretrain",
       {
           {"seed", int_field<std::uint64_t>([](auto& c) -> auto& { return c.pretrain.seed; })},
           {"mask_ratio", double_field([](auto& c) -> auto& { return c.pretrain.mask_ratio; })},
           {"mixing",
            {[](ExperimentConfig& c, const std::string& v, const std::string& w) {
               c.pretrain.mixing = parse_value([](const std::string& t) { return Mixing::parse(t); }, v, w);
             },
             [](const ExperimentConfig& c) { return c.pretrain.mixing.to_string(); }}},
           {"lr", double_field([](auto& c) -> auto& { return c.pretrain.lr; })},
           {"batch_size", int_field<std::int64_t>([](auto& c) -> auto& { return c.pretrain.batch_size; })},
           {"epochs", int_field<std::int64_t>([](auto& c) -> auto& { return c.pretrain.epochs; })},
           {"external_vocab", int_field<std::int64_t>([](auto& c) -> auto& { return c.pretrain.external_vocab; })},
           {"layers", int_field<std::int64_t>([](auto& c) -> auto& { return c.encoder.layers; })},
           {"d_model", int_field<std::int64_t>([](auto& c) -> auto& { return c.encoder.d_model; })},
           {"heads", int_field<std::int64_t>([](auto& c) -> auto& { return c.encoder.heads; })},
           {"ffn_width", int_field<std::int64_t>([](auto& c) -> auto& { return c.encoder.ffn_width; })},
           {"dropout", double_field([](auto& c) -> auto& { return c.encoder.dropout; })},
       }},
      {"finetune",
       {
           {"seed", int_field<std::uint64_t>([](auto& c) -> auto& { return c.finetune.seed; })},
           {"mode",
            {[](ExperimentConfig& c, const std::string& v, const std::string& w) {
               c.finetune.mode = parse_value([](const std::string& t) { return parse_adapt_mode(t); }, v, w);
             },
             [](const ExperimentConfig& c) { return std::string(to_string(c.finetune.mode)); }}},
           {"lr", double_field([](auto& c) -> auto& { return c.finetune.lr; })},
           {"epochs", int_field<std::int64_t>([](auto& c) -> auto& { return c.finetune.epochs; })},
           {"batch_size", int_field<std::int64_t>([](auto& c) -> auto& { return c.finetune.batch_size; })},
           {"train_fraction", double_field([](auto& c) -> auto& { return c.finetune.train_fraction; })},
       }},
  };
  return sections;
}

}  // namespace

ExperimentConfig ExperimentConfig::parse(std::string_view text, const std::string& source) {
  pt::ptree tree;
  std::istringstream in{std::string(text)};
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    fail(ErrorCode::ParseError, source + ": " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }

  ExperimentConfig config;
  for (const auto& [section_name, section] : tree) {
    const Section* fields = nullptr;
    for (const auto& [name, s] : schema())
      if (name == section_name) fields = &s;
    require(fields != nullptr, ErrorCode::UnknownKey, source + ": unknown section [" + section_name + "]");
    for (const auto& [key, node] : section) {
      const Field* field = nullptr;
      for (const auto& [name, f] : *fields)
        if (name == key) field = &f;
      const std::string where = source + ": " + section_name + "." + key;
      require(field != nullptr, ErrorCode::UnknownKey, source + ": unknown key '" + key + "' in [" + section_name + "]");
      field->read(config, node.data(), where);
    }
  }
  return config;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::Io, "cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse(text.str(), path.string());
}

std::string ExperimentConfig::to_ini() const {
  std::ostringstream out;
  bool first = true;
  for (const auto& [section_name, fields] : schema()) {
    if (!first) out << '\n';
    first = false;
    out << '[' << section_name << "]\n";
    for (const auto& [key, field] : fields) out << key << " = " << field.write(*this) << '\n';
  }
  return out.str();
}

bool ExperimentConfig::operator==(const ExperimentConfig& other) const { return to_ini() == other.to_ini(); }

}  // namespace ctn::cli
