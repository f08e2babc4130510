#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ctn/archive.hpp"
#include "ctn/data.hpp"
#include "ctn/parameters.hpp"
#include "ctn/tensor.hpp"

namespace ctn {

struct TokenizerConfig {
  std::int64_t codebook_size = 512;
  std::int64_t latent_dim = 64;
  std::int64_t hidden_channels = 64;
  std::int64_t layers = 4;
  std::int64_t kernel_size = 3;
  /// 0 keeps the domain meta's patch size.
  std::int64_t patch_size = 0;
  double beta = 0.25;
  double lr = 5e-4;
  /// Patches per optimizer step.
  std::int64_t batch_size = 32;
  std::int64_t epochs = 30;
  std::uint64_t seed = 0;
  /// Re-seed codes unused during an epoch from random encoder outputs of that epoch.
  bool dead_code_reset = true;
};

struct LatentPatch {
  std::vector<float> z;
  std::int64_t index = 0;
  std::vector<float> z_q;
};

struct TokenSequence {
  std::vector<std::int64_t> ids;
  std::string domain;

  std::int64_t length() const noexcept { return static_cast<std::int64_t>(ids.size()); }
  bool operator==(const TokenSequence&) const = default;
};

/// Nearest codebook row by exact squared distance; ties go to the smallest
/// index. `codebook` is [K, d].
std::int64_t nearest_code(std::span<const float> z, const Tensor& codebook);
LatentPatch quantize(std::span<const float> z, const Tensor& codebook);

/// z + sg(z_q - z): forward value z_q, gradient copied straight to z.
Tensor straight_through(const Tensor& z, const Tensor& z_q);

struct VqLoss {
  Tensor total;
  Tensor reconstruction;  // mean squared error per element
  Tensor codebook;        // ||sg(z) - z_q||^2, averaged over patches
  Tensor commitment;      // ||z - sg(z_q)||^2, averaged over patches
};

/// reconstruction + codebook + beta * commitment.
VqLoss vq_loss(const Tensor& patch, const Tensor& patch_hat, const Tensor& z, const Tensor& z_q, double beta);

/// Per-domain TCN autoencoder with a learned codebook.
///
/// Encoder: 1x1 conv C->H plus a learned per-position bias, ReLU, then
/// `layers` residual blocks h + relu(conv_k(h)) with dilations 1, 2, 4, ...
/// clamped to P-1, a 1x1 conv H->d and a mean over time. The decoder mirrors
/// it starting from z_q broadcast over the P positions, ending in a 1x1 conv
/// back to C channels.
class Tokenizer {
 public:
  static Tokenizer initialize(const DomainMeta& meta, const TokenizerConfig& config, DType dtype = DType::f32);

  const DomainMeta& meta() const noexcept { return meta_; }
  const TokenizerConfig& config() const noexcept { return config_; }
  std::int64_t patch_size() const noexcept { return meta_.patch_size; }
  std::int64_t codebook_size() const noexcept { return config_.codebook_size; }
  std::int64_t latent_dim() const noexcept { return config_.latent_dim; }
  std::vector<std::int64_t> dilations() const;

  ParameterSet& params() noexcept { return params_; }
  const ParameterSet& params() const noexcept { return params_; }
  /// Free-form provenance, persisted in the manifest under "info.".
  Manifest& info() noexcept { return info_; }
  const Manifest& info() const noexcept { return info_; }
  const Tensor& codebook() const { return params_.get("codebook"); }

  /// [N, C, P] -> [N, d]; differentiable.
  Tensor encode(const Tensor& patches) const;
  /// [N, d] -> [N, C, P]; differentiable.
  Tensor decode(const Tensor& latents) const;

  std::vector<float> encode_patch(std::span<const float> patch) const;
  std::vector<float> decode_patch(std::span<const float> z_q) const;
  std::vector<std::int64_t> quantize_rows(const Tensor& latents) const;

  /// z-normalize, patchify, encode, quantize.
  TokenSequence tokenize(const TimeSeriesInstance& instance) const;
  std::vector<TokenSequence> tokenize_all(const std::vector<TimeSeriesInstance>& instances) const;

  void save(const std::filesystem::path& path) const;
  static Tokenizer load(const std::filesystem::path& path);
  Tokenizer clone() const;

 private:
  Tensor conv_stack(Tensor h, const std::string& prefix) const;

  DomainMeta meta_;
  TokenizerConfig config_;
  ParameterSet params_;
  Manifest info_;
};

struct TokenizerEpoch {
  std::int64_t epoch = 0;
  double loss = 0;
  double mse = 0;
  double coverage = 0;
};

struct TokenizerTraining {
  Tokenizer tokenizer;
  std::vector<TokenizerEpoch> trace;
};

/// Adam on the VQ objective over the domain's z-normalized train split.
/// Starts from a copy of `init` when given.
TokenizerTraining train_tokenizer(const DomainDataset& domain, const TokenizerConfig& config,
                                  const std::function<void(const TokenizerEpoch&)>& on_epoch = {},
                                  const Tokenizer* init = nullptr);

struct TokenizerMetrics {
  double coverage = 0;
  double mse = 0;
};

/// Coverage = distinct ids / K; mse = mean squared error between each
/// (z-normalized) patch and the decoding of its code.
TokenizerMetrics tokenizer_metrics(const std::vector<TokenSequence>& sequences, const Tokenizer& tokenizer,
                                   const std::vector<TimeSeriesInstance>& instances);

/// Stacks z-normalized patches of the given instances into [N*L, C, P].
Tensor stack_patches(const std::vector<TimeSeriesInstance>& instances, std::int64_t patch_size, DType dtype = DType::f32);

}  // namespace ctn
