#include "ctn/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "ctn/archive.hpp"
#include "ctn/autograd.hpp"
#include "ctn/ops.hpp"
#include "ctn/optim.hpp"
#include "ctn/rng.hpp"

namespace ctn {

std::int64_t nearest_code(std::span<const float> z, const Tensor& codebook) {
  require(codebook.defined() && codebook.rank() == 2 && codebook.dim(0) > 0, ErrorCode::InvalidArgument, "empty codebook");
  const auto k = codebook.dim(0);
  const auto d = codebook.dim(1);
  require(static_cast<std::int64_t>(z.size()) == d, ErrorCode::ShapeMismatch,
          "latent width " + std::to_string(z.size()) + " does not match codebook width " + std::to_string(d));
  return dispatch(codebook.dtype(), [&]<class T>() {
    const auto e = codebook.values<T>();
    std::int64_t best = 0;
    double best_dist = std::numeric_limits<double>::infinity();
    for (std::int64_t row = 0; row < k; ++row) {
      const T* er = e.data() + row * d;
      double dist = 0;
      for (std::int64_t j = 0; j < d; ++j) {
        const double diff = static_cast<double>(z[j]) - static_cast<double>(er[j]);
        dist += diff * diff;
      }
      if (dist < best_dist) {
        best_dist = dist;
        best = row;
      }
    }
    return best;
  });
}

LatentPatch quantize(std::span<const float> z, const Tensor& codebook) {
  LatentPatch out;
  out.z.assign(z.begin(), z.end());
  out.index = nearest_code(z, codebook);
  const auto d = codebook.dim(1);
  out.z_q.resize(static_cast<std::size_t>(d));
  for (std::int64_t j = 0; j < d; ++j) out.z_q[j] = static_cast<float>(codebook.at(out.index * d + j));
  return out;
}

Tensor straight_through(const Tensor& z, const Tensor& z_q) { return add(z, detach(sub(z_q, z))); }

VqLoss vq_loss(const Tensor& patch, const Tensor& patch_hat, const Tensor& z, const Tensor& z_q, double beta) {
  require(beta >= 0, ErrorCode::InvalidArgument, "beta must be non-negative");
  VqLoss out;
  out.reconstruction = mse(patch_hat, patch);
  out.codebook = mean_row_sq_dist(detach(z), z_q);
  out.commitment = mean_row_sq_dist(z, detach(z_q));
  out.total = add(add(out.reconstruction, out.codebook), scale(out.commitment, beta));
  return out;
}

// ---- Tokenizer -----------------------------------------------------------------

namespace {

// std = gain / sqrt(fan_in). Residual branches use gain sqrt(2 / layers) so the
// stack's activation scale stays O(1) at any depth.
void add_conv(ParameterSet& params, const std::string& name, std::int64_t out, std::int64_t in, std::int64_t k,
              double gain, SeededRng& rng, DType dtype) {
  params.add(name + ".weight", normal_init({out, in, k}, gain / std::sqrt(static_cast<double>(in * k)), rng, dtype));
  params.add(name + ".bias", Tensor::zeros({out}, dtype));
}

Tensor apply_conv(const ParameterSet& params, const std::string& name, const Tensor& x, std::int64_t dilation) {
  return conv1d(x, params.get(name + ".weight"), params.get(name + ".bias"), dilation, Padding::same);
}

}  // namespace

Tokenizer Tokenizer::initialize(const DomainMeta& meta, const TokenizerConfig& config, DType dtype) {
  Tokenizer tok;
  tok.meta_ = meta;
  if (config.patch_size > 0) tok.meta_.patch_size = config.patch_size;
  tok.config_ = config;
  tok.config_.patch_size = tok.meta_.patch_size;
  require(tok.meta_.patch_size >= 1 && tok.meta_.patch_size <= tok.meta_.length, ErrorCode::InvalidArgument,
          "patch size " + std::to_string(tok.meta_.patch_size) + " must lie in [1, " + std::to_string(tok.meta_.length) + "]");
  tok.meta_.validate();
  require(config.codebook_size >= 2, ErrorCode::InvalidArgument, "codebook size must be at least 2");
  require(config.latent_dim >= 1 && config.hidden_channels >= 1 && config.layers >= 0 && config.kernel_size >= 1,
          ErrorCode::InvalidArgument, "tokenizer widths must be positive");

  const auto c = tok.meta_.channels;
  const auto p = tok.meta_.patch_size;
  const auto h = config.hidden_channels;
  const auto d = config.latent_dim;
  SeededRng rng = SeededRng(config.seed).fork("tokenizer.init");
  auto& params = tok.params_;

  const double relu_gain = std::sqrt(2.0);
  const double block_gain = std::sqrt(2.0 / static_cast<double>(std::max<std::int64_t>(1, config.layers)));
  add_conv(params, "encoder.in", h, c, 1, relu_gain, rng, dtype);
  params.add("encoder.position", Tensor::zeros({h, p}, dtype));
  for (std::int64_t i = 0; i < config.layers; ++i)
    add_conv(params, "encoder.block" + std::to_string(i), h, h, config.kernel_size, block_gain, rng, dtype);
  add_conv(params, "encoder.out", d, h, 1, 1.0, rng, dtype);

  add_conv(params, "decoder.in", h, d, 1, relu_gain, rng, dtype);
  params.add("decoder.position", Tensor::zeros({h, p}, dtype));
  for (std::int64_t i = 0; i < config.layers; ++i)
    add_conv(params, "decoder.block" + std::to_string(i), h, h, config.kernel_size, block_gain, rng, dtype);
  add_conv(params, "decoder.out", c, h, 1, 1.0, rng, dtype);

  const double bound = 1.0 / std::sqrt(static_cast<double>(d));
  params.add("codebook", uniform_init({config.codebook_size, d}, -bound, bound, rng, dtype));
  return tok;
}

std::vector<std::int64_t> Tokenizer::dilations() const {
  const auto cap = std::max<std::int64_t>(1, meta_.patch_size - 1);
  std::vector<std::int64_t> out;
  std::int64_t dil = 1;
  for (std::int64_t i = 0; i < config_.layers; ++i, dil *= 2) out.push_back(std::min(dil, cap));
  return out;
}

Tensor Tokenizer::conv_stack(Tensor h, const std::string& prefix) const {
  h = relu(add_broadcast_batch(apply_conv(params_, prefix + ".in", h, 1), params_.get(prefix + ".position")));
  const auto dils = dilations();
  for (std::size_t i = 0; i < dils.size(); ++i)
    h = add(h, relu(apply_conv(params_, prefix + ".block" + std::to_string(i), h, dils[i])));
  return apply_conv(params_, prefix + ".out", h, 1);
}

Tensor Tokenizer::encode(const Tensor& patches) const {
  require(patches.rank() == 3 && patches.dim(1) == meta_.channels && patches.dim(2) == meta_.patch_size,
          ErrorCode::ShapeMismatch,
          "expected patches [N, " + std::to_string(meta_.channels) + ", " + std::to_string(meta_.patch_size) + "], got " +
              shape_string(patches.shape()));
  return mean_last(conv_stack(patches, "encoder"));
}

Tensor Tokenizer::decode(const Tensor& latents) const {
  require(latents.rank() == 2 && latents.dim(1) == config_.latent_dim, ErrorCode::ShapeMismatch,
          "expected latents [N, " + std::to_string(config_.latent_dim) + "], got " + shape_string(latents.shape()));
  return conv_stack(repeat_last(latents, meta_.patch_size), "decoder");
}

namespace {

Tensor tensor_from_floats(Shape shape, std::span<const float> values, DType dtype) {
  Tensor t = Tensor::from_vector(std::move(shape), std::vector<float>(values.begin(), values.end()));
  return dtype == DType::f32 ? t : t.to(dtype);
}

std::vector<float> floats_of(const Tensor& t) {
  std::vector<float> out(static_cast<std::size_t>(t.numel()));
  dispatch(t.dtype(), [&]<class T>() {
    const auto v = t.values<T>();
    std::transform(v.begin(), v.end(), out.begin(), [](T x) { return static_cast<float>(x); });
  });
  return out;
}

}  // namespace

std::vector<float> Tokenizer::encode_patch(std::span<const float> patch) const {
  require(static_cast<std::int64_t>(patch.size()) == meta_.channels * meta_.patch_size, ErrorCode::ShapeMismatch,
          "patch has " + std::to_string(patch.size()) + " values, expected " +
              std::to_string(meta_.channels * meta_.patch_size));
  return floats_of(encode(tensor_from_floats({1, meta_.channels, meta_.patch_size}, patch, codebook().dtype())));
}

std::vector<float> Tokenizer::decode_patch(std::span<const float> z_q) const {
  require(static_cast<std::int64_t>(z_q.size()) == config_.latent_dim, ErrorCode::ShapeMismatch,
          "latent has " + std::to_string(z_q.size()) + " values, expected " + std::to_string(config_.latent_dim));
  return floats_of(decode(tensor_from_floats({1, config_.latent_dim}, z_q, codebook().dtype())));
}

std::vector<std::int64_t> Tokenizer::quantize_rows(const Tensor& latents) const {
  const auto n = latents.dim(0);
  const auto d = latents.dim(1);
  const auto z = floats_of(latents);
  std::vector<std::int64_t> ids(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i)
    ids[i] = nearest_code(std::span<const float>(z).subspan(static_cast<std::size_t>(i * d), static_cast<std::size_t>(d)),
                          codebook());
  return ids;
}

Tensor stack_patches(const std::vector<TimeSeriesInstance>& instances, std::int64_t patch_size, DType dtype) {
  require(!instances.empty(), ErrorCode::EmptyInput, "no instances to patchify");
  const auto c = instances.front().domain->channels;
  std::vector<float> values;
  std::int64_t rows = 0;
  for (const auto& inst : instances) {
    const auto seq = patchify(znormalize(inst), patch_size);
    for (const auto& p : seq.patches) values.insert(values.end(), p.begin(), p.end());
    rows += static_cast<std::int64_t>(seq.patches.size());
  }
  Tensor t = Tensor::from_vector({rows, c, patch_size}, std::move(values));
  return dtype == DType::f32 ? t : t.to(dtype);
}

TokenSequence Tokenizer::tokenize(const TimeSeriesInstance& instance) const {
  require(instance.domain != nullptr && instance.domain->channels == meta_.channels && instance.domain->length == meta_.length,
          ErrorCode::ShapeMismatch, "instance does not match the tokenizer's domain '" + meta_.name + "'");
  TokenSequence seq;
  seq.domain = meta_.name;
  seq.ids = quantize_rows(encode(stack_patches({instance}, meta_.patch_size, codebook().dtype())));
  return seq;
}

std::vector<TokenSequence> Tokenizer::tokenize_all(const std::vector<TimeSeriesInstance>& instances) const {
  std::vector<TokenSequence> out;
  out.reserve(instances.size());
  for (const auto& inst : instances) out.push_back(tokenize(inst));
  return out;
}

void Tokenizer::save(const std::filesystem::path& path) const {
  Manifest m;
  m.set("kind", "tokenizer");
  m.set("domain", meta_.name);
  m.set_int("K", config_.codebook_size);
  m.set_int("d", config_.latent_dim);
  m.set_int("P", meta_.patch_size);
  m.set_int("C", meta_.channels);
  m.set_int("T", meta_.length);
  m.set("task", std::string(to_string(meta_.task)));
  m.set_int("num_classes", meta_.num_classes);
  m.set_int("hidden_channels", config_.hidden_channels);
  m.set_int("layers", config_.layers);
  m.set_int("kernel_size", config_.kernel_size);
  m.set_double("beta", config_.beta);
  m.set("seed", std::to_string(config_.seed));
  m.set_double("lr", config_.lr);
  m.set_int("batch_size", config_.batch_size);
  m.set_int("epochs", config_.epochs);
  m.set("dead_code_reset", config_.dead_code_reset ? "true" : "false");
  for (const auto& [k, v] : info_.entries()) m.set("info." + k, v);
  save_archive(path, to_named_tensors(params_), m);
}

Tokenizer Tokenizer::clone() const {
  Tokenizer out = *this;
  out.params_ = params_.clone();
  return out;
}

Tokenizer Tokenizer::load(const std::filesystem::path& path) {
  const auto m = load_manifest(path);
  require(m.get("kind") == "tokenizer", ErrorCode::HeaderInconsistent, path.string() + " is not a tokenizer checkpoint");
  DomainMeta meta;
  meta.name = m.get("domain");
  meta.channels = m.get_int("C");
  meta.length = m.get_int("T");
  meta.patch_size = m.get_int("P");
  meta.task = parse_task(m.get("task"));
  meta.num_classes = m.get_int("num_classes");
  TokenizerConfig cfg;
  cfg.codebook_size = m.get_int("K");
  cfg.latent_dim = m.get_int("d");
  cfg.hidden_channels = m.get_int("hidden_channels");
  cfg.layers = m.get_int("layers");
  cfg.kernel_size = m.get_int("kernel_size");
  cfg.beta = m.get_double("beta");
  cfg.seed = std::stoull(m.get("seed"));
  cfg.lr = m.get_double("lr");
  cfg.batch_size = m.get_int("batch_size");
  cfg.epochs = m.get_int("epochs");
  cfg.dead_code_reset = m.get("dead_code_reset") == "true";

  Tokenizer tok = initialize(meta, cfg);
  for (const auto& [k, v] : m.entries())
    if (k.rfind("info.", 0) == 0) tok.info_.set(k.substr(5), v);
  const auto archive = load_nta(path);
  for (const auto& [name, t] : tok.params_.items()) {
    const Tensor* stored = archive.find(name);
    require(stored != nullptr, ErrorCode::MissingTensor, path.string() + ": missing tensor '" + name + "'");
    require(stored->shape() == t.shape(), ErrorCode::ShapeMismatch,
            path.string() + ": tensor '" + name + "' has shape " + shape_string(stored->shape()) + ", expected " +
                shape_string(t.shape()));
  }
  for (const auto& [name, t] : archive.tensors)
    if (tok.params_.contains(name)) {
      Tensor copy = t.clone();
      copy.set_requires_grad(true);
      tok.params_.replace(name, copy);
    }
  return tok;
}

// ---- training ---------------------------------------------------------------------

TokenizerTraining train_tokenizer(const DomainDataset& domain, const TokenizerConfig& config,
                                  const std::function<void(const TokenizerEpoch&)>& on_epoch, const Tokenizer* init) {
  require(domain.meta != nullptr && !domain.train.empty(), ErrorCode::EmptyInput, "tokenizer training needs a non-empty train split");
  require(config.epochs >= 1 && config.batch_size >= 1, ErrorCode::InvalidArgument, "epochs and batch size must be positive");
  TokenizerTraining result{init ? init->clone() : Tokenizer::initialize(*domain.meta, config), {}};
  require(result.tokenizer.meta().channels == domain.meta->channels && result.tokenizer.meta().length == domain.meta->length,
          ErrorCode::ShapeMismatch, "initial tokenizer does not match domain '" + domain.meta->name + "'");
  Tokenizer& tok = result.tokenizer;
  const auto p = tok.patch_size();
  const auto c = tok.meta().channels;
  const auto row_size = c * p;

  const Tensor all = stack_patches(domain.train, p);
  const auto all_values = all.values<float>();
  const auto n = all.dim(0);

  Adam adam(tok.params().tensors(), AdamOptions{.lr = config.lr});
  SeededRng rng = SeededRng(config.seed).fork("tokenizer.train");

  for (std::int64_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto order = rng.permutation(n);
    double loss_sum = 0, mse_sum = 0;
    std::vector<std::uint8_t> used(static_cast<std::size_t>(tok.codebook_size()), 0);
    std::vector<float> latents;

    for (std::int64_t start = 0; start < n; start += config.batch_size) {
      const auto rows = std::min(n, start + config.batch_size) - start;
      std::vector<float> batch(static_cast<std::size_t>(rows * row_size));
      for (std::int64_t r = 0; r < rows; ++r) {
        const auto src = all_values.subspan(static_cast<std::size_t>(order[start + r] * row_size), static_cast<std::size_t>(row_size));
        std::copy(src.begin(), src.end(), batch.begin() + r * row_size);
      }
      const Tensor x = Tensor::from_vector({rows, c, p}, std::move(batch));

      Record record;
      RecordScope scope(record);
      const Tensor z = tok.encode(x);
      const auto ids = tok.quantize_rows(z);
      const Tensor e = gather_rows(tok.codebook(), ids);
      const Tensor x_hat = tok.decode(straight_through(z, e));
      const VqLoss loss = vq_loss(x, x_hat, z, e, config.beta);
      record.backward(loss.total);
      adam.step();
      adam.zero_grad();

      loss_sum += loss.total.item() * static_cast<double>(rows);
      mse_sum += loss.reconstruction.item() * static_cast<double>(rows);
      for (auto id : ids) used[static_cast<std::size_t>(id)] = 1;
      if (config.dead_code_reset) {
        const auto zv = floats_of(z);
        latents.insert(latents.end(), zv.begin(), zv.end());
      }
    }

    TokenizerEpoch rec;
    rec.epoch = epoch;
    rec.loss = loss_sum / static_cast<double>(n);
    rec.mse = mse_sum / static_cast<double>(n);
    rec.coverage = static_cast<double>(std::count(used.begin(), used.end(), 1)) / static_cast<double>(used.size());
    result.trace.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (config.dead_code_reset && epoch < config.epochs) {
      const auto d = tok.latent_dim();
      const auto available = static_cast<std::uint64_t>(latents.size() / static_cast<std::size_t>(d));
      auto cb = tok.params().get("codebook").values<float>();
      for (std::size_t k = 0; k < used.size(); ++k) {
        if (used[k]) continue;
        const auto src = static_cast<std::int64_t>(rng.below(available));
        std::copy_n(latents.begin() + src * d, d, cb.begin() + static_cast<std::int64_t>(k) * d);
      }
    }
  }
  return result;
}

TokenizerMetrics tokenizer_metrics(const std::vector<TokenSequence>& sequences, const Tokenizer& tokenizer,
                                   const std::vector<TimeSeriesInstance>& instances) {
  require(!sequences.empty(), ErrorCode::EmptyInput, "no token sequences to measure");
  require(instances.empty() || instances.size() == sequences.size(), ErrorCode::InvalidArgument,
          "instances and token sequences must pair one to one");
  const auto k = tokenizer.codebook_size();
  std::set<std::int64_t> distinct;
  for (const auto& s : sequences)
    for (auto id : s.ids) {
      require(id >= 0 && id < k, ErrorCode::IndexOutOfRange, "token id " + std::to_string(id) + " outside the codebook");
      distinct.insert(id);
    }
  TokenizerMetrics out;
  out.coverage = static_cast<double>(distinct.size()) / static_cast<double>(k);
  if (instances.empty()) return out;

  constexpr std::size_t kChunk = 256;
  double err = 0;
  std::int64_t count = 0;
  for (std::size_t start = 0; start < instances.size(); start += kChunk) {
    const auto stop = std::min(instances.size(), start + kChunk);
    const std::vector<TimeSeriesInstance> chunk(instances.begin() + static_cast<std::ptrdiff_t>(start),
                                                instances.begin() + static_cast<std::ptrdiff_t>(stop));
    const Tensor target = stack_patches(chunk, tokenizer.patch_size(), tokenizer.codebook().dtype());
    std::vector<std::int64_t> ids;
    for (std::size_t i = start; i < stop; ++i) ids.insert(ids.end(), sequences[i].ids.begin(), sequences[i].ids.end());
    require(static_cast<std::int64_t>(ids.size()) == target.dim(0), ErrorCode::ShapeMismatch,
            "token sequences do not match the instances' patch count");
    const auto recon = tokenizer.decode(gather_rows(tokenizer.codebook(), ids)).to_doubles();
    const auto ref = target.to_doubles();
    for (std::size_t j = 0; j < ref.size(); ++j) err += (recon[j] - ref[j]) * (recon[j] - ref[j]);
    count += static_cast<std::int64_t>(ref.size());
  }
  out.mse = err / static_cast<double>(count);
  return out;
}

}  // namespace ctn
