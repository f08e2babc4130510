#include "ctn/encoder.hpp"

#include <algorithm>
#include <charconv>

#include "ctn/ops.hpp"

namespace ctn {

void EncoderConfig::validate() const {
  require(layers >= 1 && d_model >= 1 && heads >= 1 && ffn_width >= 1, ErrorCode::InvalidArgument,
          "encoder sizes must be positive");
  require(d_model % heads == 0, ErrorCode::InvalidArgument,
          "d_model " + std::to_string(d_model) + " is not divisible by " + std::to_string(heads) + " heads");
  require(dropout >= 0 && dropout < 1, ErrorCode::InvalidArgument, "dropout must lie in [0, 1)");
  require(max_length >= 2, ErrorCode::InvalidArgument, "max_length must leave room for CLS and one token");
  require(embedding_rows >= 0, ErrorCode::InvalidArgument, "embedding_rows must be non-negative");
}

std::vector<std::string> encoder_tensor_names(const EncoderConfig& config) {
  std::vector<std::string> names = {"embeddings.word", "embeddings.position", "embeddings.norm_gamma", "embeddings.norm_beta"};
  for (std::int64_t i = 0; i < config.layers; ++i) {
    const auto p = "layer" + std::to_string(i) + ".";
    for (const char* n : {"query", "key", "value", "output"}) {
      names.push_back(p + "attention." + n);
      names.push_back(p + "attention." + n + "_bias");
    }
    names.push_back(p + "attention.norm_gamma");
    names.push_back(p + "attention.norm_beta");
    for (const char* n : {"in", "out"}) {
      names.push_back(p + "ffn." + n);
      names.push_back(p + "ffn." + n + "_bias");
    }
    names.push_back(p + "ffn.norm_gamma");
    names.push_back(p + "ffn.norm_beta");
  }
  return names;
}

namespace {

constexpr double kInitStd = 0.02;

std::int64_t word_rows(const EncoderConfig& config, const WordMapping& words) {
  return config.embedding_rows > 0 ? config.embedding_rows : words.external_size;
}

/// Expected shape of every body tensor; the word table is checked separately.
Shape expected_shape(const EncoderConfig& c, const std::string& name, std::int64_t rows) {
  const auto d = c.d_model;
  if (name == "embeddings.word") return {rows, d};
  if (name == "embeddings.position") return {c.max_length, d};
  const auto ends = [&](std::string_view s) { return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0; };
  if (ends("norm_gamma") || ends("norm_beta")) return {d};
  if (ends("ffn.in")) return {c.ffn_width, d};
  if (ends("ffn.in_bias")) return {c.ffn_width};
  if (ends("ffn.out")) return {d, c.ffn_width};
  if (ends("_bias")) return {d};
  return {d, d};
}

std::uint64_t fnv_tensors(const ParameterSet& params, const std::vector<std::string>& names) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  auto feed = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 0x100000001B3ULL;
    }
  };
  for (const auto& name : names) {
    const auto& t = params.get(name);
    feed(name.data(), name.size());
    for (auto d : t.shape()) feed(&d, sizeof d);
    const auto b = t.bytes();
    feed(b.data(), b.size());
  }
  return h;
}

}  // namespace

EncoderCheckpoint EncoderCheckpoint::initialize(const EncoderConfig& config, const GlobalTokenSpace& space,
                                                const WordMapping& words, std::uint64_t seed, DType dtype) {
  config.validate();
  require(static_cast<std::int64_t>(words.targets.size()) == space.total_size(), ErrorCode::InvalidArgument,
          "word mapping does not cover the token space");
  const auto rows = word_rows(config, words);
  require(rows >= words.external_size, ErrorCode::ShapeMismatch,
          "word table has " + std::to_string(rows) + " rows, mapping needs " + std::to_string(words.external_size));
  EncoderCheckpoint ck;
  ck.config = config;
  ck.space = space;
  ck.words = words;
  ck.seed = seed;
  SeededRng rng = SeededRng(seed).fork("encoder.init");
  for (const auto& name : encoder_tensor_names(config)) {
    const auto shape = expected_shape(config, name, rows);
    const bool is_gamma = name.find("norm_gamma") != std::string::npos;
    const bool is_zero = name.find("norm_beta") != std::string::npos || name.find("_bias") != std::string::npos;
    if (is_gamma)
      ck.params.add(name, Tensor::full(shape, 1.0, dtype));
    else if (is_zero)
      ck.params.add(name, Tensor::zeros(shape, dtype));
    else
      ck.params.add(name, normal_init(shape, kInitStd, rng, dtype));
  }
  ck.params.add("mtp_head.weight", normal_init({space.vocab_size, config.d_model}, kInitStd, rng, dtype));
  ck.params.add("mtp_head.bias", Tensor::zeros({space.vocab_size}, dtype));
  return ck;
}

std::vector<Tensor> EncoderCheckpoint::encoder_tensors() const {
  std::vector<Tensor> out;
  for (const auto& name : encoder_tensor_names(config)) out.push_back(params.get(name));
  return out;
}

std::uint64_t EncoderCheckpoint::encoder_fingerprint() const { return fnv_tensors(params, encoder_tensor_names(config)); }

EncoderCheckpoint EncoderCheckpoint::clone() const {
  EncoderCheckpoint out = *this;
  out.params = params.clone();
  return out;
}

// ---- persistence ---------------------------------------------------------------

namespace {

std::string join_pairs(const std::vector<std::int64_t>& targets) {
  std::string out;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(i);
    out += ':';
    out += std::to_string(targets[i]);
  }
  return out;
}

std::int64_t parse_int(std::string_view text, const std::string& what) {
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  require(ec == std::errc() && ptr == text.data() + text.size(), ErrorCode::ParseError, what + ": bad integer '" + std::string(text) + "'");
  return v;
}

std::vector<std::int64_t> split_pairs(std::string_view text, std::int64_t expected) {
  std::vector<std::int64_t> out;
  while (!text.empty()) {
    const auto comma = text.find(',');
    const auto item = text.substr(0, comma);
    text = comma == std::string_view::npos ? std::string_view{} : text.substr(comma + 1);
    const auto colon = item.find(':');
    require(colon != std::string_view::npos, ErrorCode::ParseError, "word mapping entry lacks ':'");
    const auto key = parse_int(item.substr(0, colon), "word mapping");
    require(key == static_cast<std::int64_t>(out.size()), ErrorCode::ParseError, "word mapping entries out of order");
    out.push_back(parse_int(item.substr(colon + 1), "word mapping"));
  }
  require(static_cast<std::int64_t>(out.size()) == expected, ErrorCode::HeaderInconsistent,
          "word mapping has " + std::to_string(out.size()) + " entries, expected " + std::to_string(expected));
  return out;
}

}  // namespace

void EncoderCheckpoint::save(const std::filesystem::path& path) const {
  Manifest m;
  m.set("kind", "encoder");
  m.set("seed", std::to_string(seed));
  m.set_int("config.layers", config.layers);
  m.set_int("config.d_model", config.d_model);
  m.set_int("config.heads", config.heads);
  m.set_int("config.ffn_width", config.ffn_width);
  m.set_double("config.dropout", config.dropout);
  m.set_int("config.max_length", config.max_length);
  m.set_int("config.embedding_rows", config.embedding_rows);
  m.set_int("space.vocab_size", space.vocab_size);
  m.set_int("space.domains", static_cast<std::int64_t>(space.domains.size()));
  for (std::size_t i = 0; i < space.domains.size(); ++i) {
    const auto& s = space.domains[i];
    const auto p = "space.domain" + std::to_string(i) + ".";
    m.set(p + "name", s.name);
    m.set_int(p + "offset", s.offset);
    m.set_int(p + "size", s.size);
  }
  m.set_int("words.external_size", words.external_size);
  m.set("words.seed", std::to_string(words.seed));
  m.set("words.pairs", join_pairs(words.targets));
  for (const auto& [k, v] : info.entries()) m.set("info." + k, v);
  save_archive(path, to_named_tensors(params), m);
}

EncoderCheckpoint EncoderCheckpoint::load(const std::filesystem::path& path) {
  const auto m = load_manifest(path);
  require(m.get("kind") == "encoder", ErrorCode::HeaderInconsistent, path.string() + " is not an encoder checkpoint");
  EncoderConfig cfg;
  cfg.layers = m.get_int("config.layers");
  cfg.d_model = m.get_int("config.d_model");
  cfg.heads = m.get_int("config.heads");
  cfg.ffn_width = m.get_int("config.ffn_width");
  cfg.dropout = m.get_double("config.dropout");
  cfg.max_length = m.get_int("config.max_length");
  cfg.embedding_rows = m.get_int("config.embedding_rows");

  GlobalTokenSpace space;
  space.vocab_size = m.get_int("space.vocab_size");
  const auto n = m.get_int("space.domains");
  for (std::int64_t i = 0; i < n; ++i) {
    const auto p = "space.domain" + std::to_string(i) + ".";
    space.domains.push_back({m.get(p + "name"), m.get_int(p + "offset"), m.get_int(p + "size")});
  }
  WordMapping words;
  words.external_size = m.get_int("words.external_size");
  words.seed = std::stoull(m.get("words.seed"));
  words.targets = split_pairs(m.get("words.pairs"), space.total_size());

  const auto archive = load_nta(path);
  EncoderCheckpoint ck;
  ck.config = cfg;
  ck.space = space;
  ck.words = words;
  ck.seed = std::stoull(m.get("seed"));
  for (const auto& [k, v] : m.entries())
    if (k.rfind("info.", 0) == 0) ck.info.set(k.substr(5), v);

  const auto rows = word_rows(cfg, words);
  auto required = encoder_tensor_names(cfg);
  required.push_back("mtp_head.weight");
  required.push_back("mtp_head.bias");
  for (const auto& name : required) {
    const Tensor* t = archive.find(name);
    require(t != nullptr, ErrorCode::MissingTensor, path.string() + ": missing tensor '" + name + "'");
    Shape want = name == "mtp_head.weight" ? Shape{space.vocab_size, cfg.d_model}
                 : name == "mtp_head.bias" ? Shape{space.vocab_size}
                                           : expected_shape(cfg, name, rows);
    require(t->shape() == want, ErrorCode::ShapeMismatch,
            path.string() + ": tensor '" + name + "' expected " + shape_string(want) + ", got " + shape_string(t->shape()));
  }
  // Archive order is the parameter order; this keeps save(load(x)) byte-identical.
  for (const auto& [name, t] : archive.tensors) ck.params.add(name, t.clone());
  return ck;
}

// ---- forward -------------------------------------------------------------------

EncodedBatch encoder_forward(const EncoderCheckpoint& model, const std::vector<std::vector<std::int64_t>>& sequences,
                             const ForwardOptions& options) {
  const auto& cfg = model.config;
  const auto& p = model.params;
  require(!sequences.empty(), ErrorCode::EmptyInput, "encoder_forward needs at least one sequence");
  std::int64_t longest = options.pad_to;
  for (const auto& s : sequences) longest = std::max<std::int64_t>(longest, static_cast<std::int64_t>(s.size()));
  const auto b = static_cast<std::int64_t>(sequences.size());
  const auto seq = longest + 1;
  require(seq <= cfg.max_length, ErrorCode::InvalidArgument,
          "sequence of " + std::to_string(longest) + " tokens plus CLS exceeds max length " + std::to_string(cfg.max_length));

  EncodedBatch out;
  out.batch = b;
  out.seq = seq;
  out.valid.assign(static_cast<std::size_t>(b * seq), 0);
  std::vector<std::int64_t> word_ids(static_cast<std::size_t>(b * seq));
  std::vector<std::int64_t> pos_ids(static_cast<std::size_t>(b * seq));
  const auto total = model.space.total_size();
  for (std::int64_t i = 0; i < b; ++i) {
    const auto& s = sequences[static_cast<std::size_t>(i)];
    for (std::int64_t t = 0; t < seq; ++t) {
      std::int64_t id;
      if (t == 0)
        id = model.space.cls_id();
      else if (t - 1 < static_cast<std::int64_t>(s.size()))
        id = s[static_cast<std::size_t>(t - 1)];
      else
        id = model.space.pad_id();
      require(id >= 0 && id < total, ErrorCode::IndexOutOfRange, "token id " + std::to_string(id) + " outside the token space");
      const auto k = static_cast<std::size_t>(i * seq + t);
      word_ids[k] = model.words(id);
      pos_ids[k] = t;
      out.valid[k] = id != model.space.pad_id();
    }
  }

  const bool drop = options.training && cfg.dropout > 0;
  require(!drop || options.rng != nullptr, ErrorCode::InvalidArgument, "training with dropout needs an rng");
  auto maybe_dropout = [&](const Tensor& x) { return drop ? dropout(x, cfg.dropout, *options.rng) : x; };

  Tensor h = add(gather_rows(p.get("embeddings.word"), word_ids), gather_rows(p.get("embeddings.position"), pos_ids));
  h = reshape(h, {b, seq, cfg.d_model});
  h = maybe_dropout(layer_norm(h, p.get("embeddings.norm_gamma"), p.get("embeddings.norm_beta")));

  if (options.attention) options.attention->clear();
  for (std::int64_t l = 0; l < cfg.layers; ++l) {
    const auto pre = "layer" + std::to_string(l) + ".";
    const auto lin = [&](const Tensor& x, const std::string& name) { return linear(x, p.get(pre + name), p.get(pre + name + "_bias")); };
    Tensor probs;
    const Tensor q = lin(h, "attention.query");
    const Tensor k = lin(h, "attention.key");
    const Tensor v = lin(h, "attention.value");
    const Tensor a = multi_head_attention(q, k, v, cfg.heads, out.valid, options.attention ? &probs : nullptr);
    if (options.attention) options.attention->push_back(probs);
    h = layer_norm(add(h, maybe_dropout(lin(a, "attention.output"))), p.get(pre + "attention.norm_gamma"),
                   p.get(pre + "attention.norm_beta"));
    const Tensor f = lin(gelu(lin(h, "ffn.in")), "ffn.out");
    h = layer_norm(add(h, maybe_dropout(f)), p.get(pre + "ffn.norm_gamma"), p.get(pre + "ffn.norm_beta"));
  }
  out.hidden = h;
  return out;
}

Tensor cls_rows(const EncodedBatch& encoded) {
  std::vector<std::int64_t> rows(static_cast<std::size_t>(encoded.batch));
  for (std::int64_t i = 0; i < encoded.batch; ++i) rows[i] = i * encoded.seq;
  return gather_rows(encoded.hidden, rows);
}

EncoderCheckpoint load_external_weights(const std::filesystem::path& path, const EncoderCheckpoint& model) {
  const auto archive = load_nta(path);
  EncoderCheckpoint out = model.clone();
  const auto& cfg = model.config;
  for (const auto& name : encoder_tensor_names(cfg)) {
    const Tensor* t = archive.find(name);
    require(t != nullptr, ErrorCode::MissingTensor, path.string() + ": missing tensor '" + name + "'");
    if (name == "embeddings.word") {
      require(t->rank() == 2 && t->dim(1) == cfg.d_model && t->dim(0) >= model.words.external_size, ErrorCode::ShapeMismatch,
              path.string() + ": tensor 'embeddings.word' expected [>=" + std::to_string(model.words.external_size) + ", " +
                  std::to_string(cfg.d_model) + "], got " + shape_string(t->shape()));
      out.config.embedding_rows = t->dim(0);
    } else {
      const auto want = expected_shape(cfg, name, 0);
      require(t->shape() == want, ErrorCode::ShapeMismatch,
              path.string() + ": tensor '" + name + "' expected " + shape_string(want) + ", got " + shape_string(t->shape()));
    }
    Tensor copy = t->to(model.params.get(name).dtype());
    copy.set_requires_grad(true);
    out.params.replace(name, copy);
  }
  out.info.set("external_weights", path.string());
  return out;
}

}  // namespace ctn
