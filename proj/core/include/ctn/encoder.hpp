#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ctn/archive.hpp"
#include "ctn/parameters.hpp"
#include "ctn/rng.hpp"
#include "ctn/tensor.hpp"
#include "ctn/token_space.hpp"

namespace ctn {

struct EncoderConfig {
  std::int64_t layers = 4;
  std::int64_t d_model = 128;
  std::int64_t heads = 4;
  std::int64_t ffn_width = 256;
  double dropout = 0.1;
  /// Longest input including the CLS slot.
  std::int64_t max_length = 128;
  /// Rows of the word embedding table; 0 means the word mapping's external size.
  std::int64_t embedding_rows = 0;

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

/// Every tensor the encoder body needs, in creation order. The MTP and
/// classification heads are not part of the body.
std::vector<std::string> encoder_tensor_names(const EncoderConfig& config);

/// Post-LN bidirectional transformer over word-mapped token embeddings,
/// together with its token space, word mapping and an MTP head.
///
/// Tensor names: embeddings.{word,position,norm_gamma,norm_beta};
/// layer<i>.attention.{query,key,value,output}[_bias];
/// layer<i>.attention.norm_{gamma,beta}; layer<i>.ffn.{in,out}[_bias];
/// layer<i>.ffn.norm_{gamma,beta}; mtp_head.{weight,bias}; and optionally
/// head.{weight,bias} once a task head is attached.
struct EncoderCheckpoint {
  EncoderConfig config;
  GlobalTokenSpace space;
  WordMapping words;
  ParameterSet params;
  std::uint64_t seed = 0;
  /// Free-form provenance and training settings, persisted in the manifest.
  Manifest info;

  static EncoderCheckpoint initialize(const EncoderConfig& config, const GlobalTokenSpace& space, const WordMapping& words,
                                      std::uint64_t seed, DType dtype = DType::f32);

  /// Tensors of the encoder body (aliases, not copies).
  std::vector<Tensor> encoder_tensors() const;
  /// Hash over the encoder body's names and bytes.
  std::uint64_t encoder_fingerprint() const;
  EncoderCheckpoint clone() const;

  void save(const std::filesystem::path& path) const;
  static EncoderCheckpoint load(const std::filesystem::path& path);
};

struct ForwardOptions {
  bool training = false;
  /// Dropout stream; required when training with dropout > 0.
  SeededRng* rng = nullptr;
  /// Receives one [B, H, S, S] attention tensor per layer.
  std::vector<Tensor>* attention = nullptr;
  /// Pad every sequence to this many tokens (excluding CLS); 0 pads to the batch maximum.
  std::int64_t pad_to = 0;
};

struct EncodedBatch {
  Tensor hidden;  // [B, S, d_model]; position 0 is CLS
  std::int64_t batch = 0;
  std::int64_t seq = 0;
  std::vector<std::uint8_t> valid;  // B * S, 0 at PAD positions
};

/// Prepends CLS, pads with PAD, embeds through the word mapping and runs the
/// transformer. `sequences` hold global token ids (MASK allowed).
EncodedBatch encoder_forward(const EncoderCheckpoint& model, const std::vector<std::vector<std::int64_t>>& sequences,
                             const ForwardOptions& options = {});

/// CLS rows of an encoded batch, [B, d_model].
Tensor cls_rows(const EncodedBatch& encoded);

/// Replaces the encoder body with tensors from an NTA archive. The word
/// table may have more rows than the mapping needs. Throws MissingTensor or
/// ShapeMismatch naming the offending tensor.
EncoderCheckpoint load_external_weights(const std::filesystem::path& path, const EncoderCheckpoint& model);

}  // namespace ctn
