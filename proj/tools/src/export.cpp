#include <fstream>

#include "common.hpp"
#include "ctn/archive.hpp"
#include "ctn/downstream.hpp"
#include "ctn/encoder.hpp"
#include "ctn_cli/cli.hpp"

namespace ctn::cli {
namespace {

constexpr std::int64_t kChunk = 32;

std::vector<std::vector<std::int64_t>> global_ids(const EncoderCheckpoint& model, const std::vector<TokenSequence>& seqs) {
  std::vector<std::vector<std::int64_t>> out;
  out.reserve(seqs.size());
  for (const auto& s : seqs) out.push_back(model.space.to_global(s.domain, s.ids));
  return out;
}

void check_encoder(const EncoderCheckpoint& model, const Tokenizer& tokenizer) {
  const auto& name = tokenizer.meta().name;
  require(model.space.contains(name), ErrorCode::UnknownDomain, "checkpoint has no tokens for domain '" + name + "'");
  require(model.space.slot(name).size == tokenizer.codebook_size(), ErrorCode::HeaderInconsistent,
          "checkpoint and tokenizer disagree on the codebook size of '" + name + "'");
}

void write_tokens(const std::vector<TokenSequence>& seqs, const std::string& split, std::ostream& out) {
  const std::size_t len = seqs.empty() ? 0 : seqs.front().ids.size();
  out << "split,instance";
  for (std::size_t t = 0; t < len; ++t) out << ",t" << t;
  out << '\n';
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    out << split << ',' << i;
    for (auto id : seqs[i].ids) out << ',' << id;
    out << '\n';
  }
}

}  // namespace

std::string_view to_string(ExportKind kind) {
  switch (kind) {
    case ExportKind::embeddings: return "embeddings";
    case ExportKind::attention: return "attention";
    case ExportKind::tokens: return "tokens";
  }
  return "?";
}

ExportKind parse_export_kind(std::string_view text) {
  for (auto k : {ExportKind::embeddings, ExportKind::attention, ExportKind::tokens})
    if (to_string(k) == text) return k;
  fail(ErrorCode::InvalidArgument, "unknown export kind '" + std::string(text) + "'");
}

void write_token_csv(const std::vector<TokenSequence>& seqs, const std::string& split, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorCode::Io, "cannot open " + path.string());
  write_tokens(seqs, split, out);
  require(out.good(), ErrorCode::Io, "cannot write " + path.string());
}

void export_artifacts(const ExportRequest& request) {
  const auto dataset = load_domain(request.domain);
  const auto tokenizer = Tokenizer::load(request.tokenizer);
  check_compatible(tokenizer, *dataset.meta);

  std::vector<TimeSeriesInstance> instances = split_of(dataset, request.split);
  if (request.limit > 0 && static_cast<std::size_t>(request.limit) < instances.size())
    instances.resize(static_cast<std::size_t>(request.limit));
  const auto seqs = tokenizer.tokenize_all(instances);

  if (request.what == ExportKind::tokens) {
    write_token_csv(seqs, request.split, request.out);
    return;
  }

  const auto model = EncoderCheckpoint::load(request.checkpoint);
  check_encoder(model, tokenizer);
  const auto ids = global_ids(model, seqs);

  if (request.what == ExportKind::embeddings) {
    std::ofstream out(request.out, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorCode::Io, "cannot open " + request.out.string());
    const auto d = model.config.d_model;
    out << "run_id,instance,position,token_id";
    for (std::int64_t k = 0; k < d; ++k) out << ",h" << k;
    out << '\n';
    for (std::size_t begin = 0; begin < ids.size(); begin += kChunk) {
      const std::size_t end = std::min(ids.size(), begin + kChunk);
      const std::vector<std::vector<std::int64_t>> chunk(ids.begin() + begin, ids.begin() + end);
      const auto encoded = encoder_forward(model, chunk);
      const auto hidden = encoded.hidden.to(DType::f32);
      const auto h = hidden.values<float>();
      for (std::size_t b = 0; b < chunk.size(); ++b) {
        const std::size_t len = chunk[b].size() + 1;
        for (std::size_t s = 0; s < len; ++s) {
          const std::int64_t token = s == 0 ? model.space.cls_id() : chunk[b][s - 1];
          out << request.run_id << ',' << begin + b << ',' << s << ',' << token;
          const std::size_t row = (b * static_cast<std::size_t>(encoded.seq) + s) * static_cast<std::size_t>(d);
          for (std::int64_t k = 0; k < d; ++k) out << ',' << format_number(h[row + static_cast<std::size_t>(k)]);
          out << '\n';
        }
      }
    }
    require(out.good(), ErrorCode::Io, "cannot write " + request.out.string());
    return;
  }

  // attention
  NamedTensors archive;
  std::int64_t seq_len = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::vector<Tensor> maps;
    ForwardOptions opts;
    opts.attention = &maps;
    const auto encoded = encoder_forward(model, {ids[i]}, opts);
    seq_len = encoded.seq;
    const auto s = encoded.seq;
    for (std::size_t layer = 0; layer < maps.size(); ++layer) {
      const auto a = maps[layer].to(DType::f32);
      const auto v = a.values<float>();
      const auto heads = a.dim(1);
      for (std::int64_t head = 0; head < heads; ++head) {
        std::vector<float> block(v.begin() + head * s * s, v.begin() + (head + 1) * s * s);
        archive.tensors.emplace_back("instance" + std::to_string(i) + ".layer" + std::to_string(layer) + ".head" +
                                         std::to_string(head),
                                     Tensor::from_vector({s, s}, std::move(block)));
      }
    }
  }
  Manifest m;
  m.set("kind", "attention");
  m.set("run_id", request.run_id);
  m.set("domain", tokenizer.meta().name);
  m.set("split", request.split);
  m.set_int("instances", static_cast<std::int64_t>(ids.size()));
  m.set_int("layers", model.config.layers);
  m.set_int("heads", model.config.heads);
  m.set_int("seq", seq_len);
  save_archive(request.out, archive, m);
}

}  // namespace ctn::cli
