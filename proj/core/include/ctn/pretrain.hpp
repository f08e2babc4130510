#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ctn/encoder.hpp"
#include "ctn/tokenizer.hpp"

namespace ctn {

enum class MixingMode { agnostic, sequential };

/// "agnostic", "sequential" (input order) or "sequential:a-b-c".
struct Mixing {
  MixingMode mode = MixingMode::agnostic;
  std::vector<std::string> order;

  static Mixing parse(std::string_view text);
  std::string to_string() const;
  bool operator==(const Mixing&) const = default;
};

struct PretrainConfig {
  double mask_ratio = 0.45;
  double lr = 1e-4;
  std::int64_t batch_size = 32;
  std::int64_t epochs = 20;
  std::uint64_t seed = 0;
  Mixing mixing;
  /// External vocabulary size for the word mapping; 0 means V + 3.
  std::int64_t external_vocab = 0;
};

/// Local token ids of one domain's train and evaluation sequences.
struct DomainTokens {
  std::string domain;
  std::vector<TokenSequence> train;
  std::vector<TokenSequence> eval;
};

struct PretrainBatch {
  /// Set when every item comes from one domain.
  std::string domain;
  std::vector<std::pair<std::size_t, std::size_t>> items;  // (corpus index, sequence index)
};

/// One epoch of batches. Agnostic mixing shuffles all sequences together;
/// sequential mixing walks the domains in order, shuffling within each.
std::vector<PretrainBatch> pretrain_schedule(const std::vector<DomainTokens>& corpora, const Mixing& mixing,
                                             std::int64_t batch_size, SeededRng& rng);

/// MTP head applied to the hidden rows at `flat_rows` of an encoded batch.
Tensor mtp_logits(const EncoderCheckpoint& model, const EncodedBatch& encoded, std::span<const std::int64_t> flat_rows);
/// Mean softmax cross-entropy over masked positions. Throws EmptyMask.
Tensor mtp_loss(const Tensor& logits, std::span<const std::int64_t> targets);

struct MtpEvaluation {
  double loss = 0;
  double accuracy = 0;
  std::int64_t masked = 0;
};

/// Eval-mode loss and top-1 accuracy at masked positions. Plans come from
/// `seed` and the sequence index only, so repeated calls see the same masks.
MtpEvaluation evaluate_mtp(const EncoderCheckpoint& model, const std::vector<std::vector<std::int64_t>>& sequences,
                           double mask_ratio, std::uint64_t seed, std::int64_t batch_size = 64);

struct PretrainEpoch {
  std::int64_t epoch = 0;
  double train_loss = 0;  // NaN for the initial evaluation (epoch 0)
  double eval_loss = 0;
  double masked_acc = 0;
};

struct PretrainResult {
  EncoderCheckpoint checkpoint;
  std::vector<PretrainEpoch> trace;
};

/// Builds the word mapping and a fresh encoder sized for the corpora.
EncoderCheckpoint initialize_encoder(const GlobalTokenSpace& space, const std::vector<DomainTokens>& corpora,
                                     EncoderConfig config, const PretrainConfig& pretrain);

/// Masked token prediction over the corpora. Epoch 0 of the trace is the
/// evaluation before any update. Starts from `init` when given.
PretrainResult run_pretraining(const GlobalTokenSpace& space, const std::vector<DomainTokens>& corpora,
                               const EncoderConfig& config, const PretrainConfig& pretrain,
                               const std::function<void(const PretrainEpoch&)>& on_epoch = {},
                               const EncoderCheckpoint* init = nullptr);

}  // namespace ctn
