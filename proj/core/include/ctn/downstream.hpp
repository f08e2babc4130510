#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "ctn/data.hpp"
#include "ctn/encoder.hpp"
#include "ctn/tokenizer.hpp"

namespace ctn {

/// Token sequences of one domain with their labels.
struct LabeledTokens {
  std::shared_ptr<const DomainMeta> meta;
  std::vector<TokenSequence> train;
  std::vector<TokenSequence> test;
  std::vector<Label> train_labels;
  std::vector<Label> test_labels;
};

LabeledTokens tokenize_dataset(const Tokenizer& tokenizer, const DomainDataset& dataset);

enum class AdaptMode { linear, full };

std::string_view to_string(AdaptMode mode);
AdaptMode parse_adapt_mode(std::string_view text);

struct FinetuneConfig {
  AdaptMode mode = AdaptMode::linear;
  /// 0 selects the mode default: 1e-3 for the linear head, 1e-4 for full fine-tuning.
  double lr = 0;
  /// 0 selects the mode default: 50 for the linear head, 10 for full fine-tuning.
  std::int64_t epochs = 0;
  std::int64_t batch_size = 32;
  std::uint64_t seed = 0;
  double train_fraction = 1.0;

  double resolved_lr() const;
  std::int64_t resolved_epochs() const;
};

/// Linear map from the CLS representation to one logit per class.
struct TaskHead {
  Task task = Task::multiclass;
  std::int64_t num_classes = 0;
  Tensor weight;  // [num_classes, d_model]
  Tensor bias;    // [num_classes]
};

/// Adds head.weight / head.bias to the model for the given domain.
TaskHead attach_head(EncoderCheckpoint& model, const DomainMeta& meta, std::uint64_t seed);
/// The head previously attached (or loaded) on a model.
TaskHead model_head(const EncoderCheckpoint& model);

struct ClassificationMetrics {
  double accuracy = 0;  // exact match (subset accuracy for multilabel)
  double macro_f1 = 0;
  double hamming_accuracy = 0;  // multilabel: mean per-label agreement; multiclass: equals accuracy
  std::vector<double> precision;
  std::vector<double> recall;
  std::vector<double> f1;
};

/// Per-class F1 of a class with no true positives counts as 0.
ClassificationMetrics compute_classification_metrics(const std::vector<Label>& predictions, const std::vector<Label>& labels,
                                                     Task task, std::int64_t num_classes);

/// Argmax for multiclass, logit >= 0 (probability >= 0.5) per class for multilabel.
std::vector<Label> predict_labels(const Tensor& logits, Task task);

struct FinetuneEpoch {
  std::int64_t epoch = 0;
  double train_loss = 0;
  double test_loss = 0;
  double accuracy = 0;
  double macro_f1 = 0;
};

struct EvalReport {
  std::string domain;
  AdaptMode mode = AdaptMode::linear;
  Task task = Task::multiclass;
  ClassificationMetrics metrics;
  double loss = 0;
  std::vector<FinetuneEpoch> trace;
  std::uint64_t encoder_fingerprint_before = 0;
  std::uint64_t encoder_fingerprint_after = 0;

  std::string to_json() const;
};

struct FinetuneResult {
  EvalReport report;
  /// Encoder plus trained head.
  EncoderCheckpoint model;
};

/// Trains only the head on frozen eval-mode CLS features. `model` is not modified.
FinetuneResult run_linear_eval(const EncoderCheckpoint& model, const LabeledTokens& data, const FinetuneConfig& config,
                               const std::function<void(const FinetuneEpoch&)>& on_epoch = {});

/// Trains the encoder and head together on a copy of `model`.
FinetuneResult run_full_finetune(const EncoderCheckpoint& model, const LabeledTokens& data, const FinetuneConfig& config,
                                 const std::function<void(const FinetuneEpoch&)>& on_epoch = {});

/// Dispatches on config.mode.
FinetuneResult run_finetune(const EncoderCheckpoint& model, const LabeledTokens& data, const FinetuneConfig& config,
                            const std::function<void(const FinetuneEpoch&)>& on_epoch = {});

struct SplitEvaluation {
  ClassificationMetrics metrics;
  double loss = 0;
};

/// Scores a model with an attached head on token sequences.
SplitEvaluation evaluate_classifier(const EncoderCheckpoint& model, const std::string& domain,
                                    const std::vector<TokenSequence>& sequences, const std::vector<Label>& labels);

}  // namespace ctn
