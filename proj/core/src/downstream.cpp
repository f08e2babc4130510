#include "ctn/downstream.hpp"

#include <algorithm>
#include <cstdio>

#include <nlohmann/json.hpp>

#include "ctn/autograd.hpp"
#include "ctn/ops.hpp"
#include "ctn/optim.hpp"

namespace ctn {

LabeledTokens tokenize_dataset(const Tokenizer& tokenizer, const DomainDataset& dataset) {
  require(dataset.meta != nullptr, ErrorCode::InvalidArgument, "dataset has no domain meta");
  require(dataset.meta->name == tokenizer.meta().name, ErrorCode::UnknownDomain,
          "tokenizer for '" + tokenizer.meta().name + "' cannot tokenize domain '" + dataset.meta->name + "'");
  LabeledTokens out;
  out.meta = dataset.meta;
  out.train = tokenizer.tokenize_all(dataset.train);
  out.test = tokenizer.tokenize_all(dataset.test);
  for (const auto& inst : dataset.train) out.train_labels.push_back(inst.label);
  for (const auto& inst : dataset.test) out.test_labels.push_back(inst.label);
  return out;
}

std::string_view to_string(AdaptMode mode) { return mode == AdaptMode::linear ? "linear" : "full"; }

AdaptMode parse_adapt_mode(std::string_view text) {
  if (text == "linear") return AdaptMode::linear;
  if (text == "full") return AdaptMode::full;
  fail(ErrorCode::InvalidArgument, "unknown fine-tuning mode '" + std::string(text) + "' (expected linear or full)");
}

double FinetuneConfig::resolved_lr() const { return lr > 0 ? lr : (mode == AdaptMode::linear ? 1e-3 : 1e-4); }

std::int64_t FinetuneConfig::resolved_epochs() const { return epochs > 0 ? epochs : (mode == AdaptMode::linear ? 50 : 10); }

// ---- head ------------------------------------------------------------------------

TaskHead attach_head(EncoderCheckpoint& model, const DomainMeta& meta, std::uint64_t seed) {
  require(meta.task == Task::multiclass || meta.task == Task::multilabel, ErrorCode::InvalidArgument, "unknown task");
  require(meta.num_classes >= 2, ErrorCode::InvalidArgument, "a head needs at least two classes");
  const auto d = model.config.d_model;
  SeededRng rng = SeededRng(seed).fork("head.init");
  const auto dtype = model.params.get("embeddings.word").dtype();
  Tensor w = xavier_uniform({meta.num_classes, d}, d, meta.num_classes, rng, dtype);
  Tensor b = Tensor::zeros({meta.num_classes}, dtype);
  if (model.params.contains("head.weight")) {
    model.params.replace("head.weight", w);
    model.params.replace("head.bias", b);
    model.params.get("head.weight").set_requires_grad(true);
    model.params.get("head.bias").set_requires_grad(true);
  } else {
    model.params.add("head.weight", w);
    model.params.add("head.bias", b);
  }
  model.info.set("head.domain", meta.name);
  model.info.set("head.task", std::string(to_string(meta.task)));
  model.info.set_int("head.classes", meta.num_classes);
  return model_head(model);
}

TaskHead model_head(const EncoderCheckpoint& model) {
  require(model.params.contains("head.weight") && model.params.contains("head.bias") && model.info.contains("head.task"),
          ErrorCode::MissingTensor, "model has no task head");
  TaskHead h;
  h.task = parse_task(model.info.get("head.task"));
  h.num_classes = model.info.get_int("head.classes");
  h.weight = model.params.get("head.weight");
  h.bias = model.params.get("head.bias");
  require(h.weight.shape() == Shape{h.num_classes, model.config.d_model}, ErrorCode::ShapeMismatch, "head weight has the wrong shape");
  return h;
}

// ---- metrics ---------------------------------------------------------------------

ClassificationMetrics compute_classification_metrics(const std::vector<Label>& predictions, const std::vector<Label>& labels,
                                                     Task task, std::int64_t num_classes) {
  require(predictions.size() == labels.size(), ErrorCode::ShapeMismatch,
          std::to_string(predictions.size()) + " predictions for " + std::to_string(labels.size()) + " labels");
  require(!labels.empty(), ErrorCode::EmptyInput, "no labels to score");
  require(num_classes >= 1, ErrorCode::InvalidArgument, "num_classes must be positive");
  const auto k = static_cast<std::size_t>(num_classes);
  std::vector<double> tp(k, 0), fp(k, 0), fn(k, 0);
  double exact = 0, agree = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto& p = predictions[i];
    const auto& y = labels[i];
    if (task == Task::multiclass) {
      require(p.class_index < k && y.class_index < k, ErrorCode::IndexOutOfRange, "class index out of range");
      if (p.class_index == y.class_index) {
        ++exact;
        ++tp[p.class_index];
      } else {
        ++fp[p.class_index];
        ++fn[y.class_index];
      }
    } else {
      require(p.bits.size() == k && y.bits.size() == k, ErrorCode::ShapeMismatch, "label vector width differs from num_classes");
      bool all = true;
      for (std::size_t c = 0; c < k; ++c) {
        const bool pc = p.bits[c] != 0, yc = y.bits[c] != 0;
        if (pc == yc) ++agree;
        else all = false;
        if (pc && yc) ++tp[c];
        if (pc && !yc) ++fp[c];
        if (!pc && yc) ++fn[c];
      }
      if (all) ++exact;
    }
  }
  ClassificationMetrics m;
  const auto n = static_cast<double>(labels.size());
  m.accuracy = exact / n;
  m.hamming_accuracy = task == Task::multiclass ? m.accuracy : agree / (n * static_cast<double>(k));
  double f1_sum = 0;
  for (std::size_t c = 0; c < k; ++c) {
    const double prec = tp[c] + fp[c] > 0 ? tp[c] / (tp[c] + fp[c]) : 0.0;
    const double rec = tp[c] + fn[c] > 0 ? tp[c] / (tp[c] + fn[c]) : 0.0;
    const double f1 = tp[c] > 0 ? 2 * tp[c] / (2 * tp[c] + fp[c] + fn[c]) : 0.0;
    m.precision.push_back(prec);
    m.recall.push_back(rec);
    m.f1.push_back(f1);
    f1_sum += f1;
  }
  m.macro_f1 = f1_sum / static_cast<double>(k);
  return m;
}

std::vector<Label> predict_labels(const Tensor& logits, Task task) {
  require(logits.rank() == 2, ErrorCode::ShapeMismatch, "logits must be [N, classes]");
  const auto n = logits.dim(0), k = logits.dim(1);
  const auto v = logits.to_doubles();
  std::vector<Label> out(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const double* row = v.data() + i * k;
    if (task == Task::multiclass) {
      std::int64_t best = 0;
      for (std::int64_t c = 1; c < k; ++c)
        if (row[c] > row[best]) best = c;
      out[i].class_index = static_cast<std::uint32_t>(best);
    } else {
      out[i].bits.resize(static_cast<std::size_t>(k));
      for (std::int64_t c = 0; c < k; ++c) out[i].bits[c] = row[c] >= 0.0 ? 1 : 0;
    }
  }
  return out;
}

// ---- training ----------------------------------------------------------------------

namespace {

std::vector<std::vector<std::int64_t>> global_ids(const EncoderCheckpoint& model, const std::string& domain,
                                                  const std::vector<TokenSequence>& seqs) {
  std::vector<std::vector<std::int64_t>> out;
  out.reserve(seqs.size());
  for (const auto& s : seqs) out.push_back(model.space.to_global(domain, s.ids));
  return out;
}

template <class T>
std::vector<T> pick(const std::vector<T>& v, const std::vector<std::size_t>& idx) {
  std::vector<T> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(v[i]);
  return out;
}

Tensor head_loss(const Tensor& logits, const std::vector<Label>& labels, Task task) {
  if (task == Task::multiclass) {
    std::vector<std::int64_t> targets;
    for (const auto& l : labels) targets.push_back(l.class_index);
    return softmax_cross_entropy(logits, targets);
  }
  const auto k = logits.dim(1);
  std::vector<double> bits;
  for (const auto& l : labels)
    for (std::int64_t c = 0; c < k; ++c) bits.push_back(l.bits.at(static_cast<std::size_t>(c)));
  Tensor t = Tensor::from_vector({static_cast<std::int64_t>(labels.size()), k}, std::move(bits));
  return sigmoid_bce(logits, logits.dtype() == DType::f64 ? t : t.to(logits.dtype()));
}

Tensor apply_head(const TaskHead& head, const Tensor& features) { return linear(features, head.weight, head.bias); }

/// Eval-mode CLS features for every sequence, [N, d_model], detached.
Tensor cls_features(const EncoderCheckpoint& model, const std::vector<std::vector<std::int64_t>>& seqs) {
  constexpr std::size_t kBatch = 64;
  const auto d = model.config.d_model;
  std::vector<double> values;
  values.reserve(seqs.size() * static_cast<std::size_t>(d));
  for (std::size_t start = 0; start < seqs.size(); start += kBatch) {
    const std::vector<std::vector<std::int64_t>> chunk(seqs.begin() + static_cast<std::ptrdiff_t>(start),
                                                       seqs.begin() + static_cast<std::ptrdiff_t>(std::min(seqs.size(), start + kBatch)));
    const auto v = cls_rows(encoder_forward(model, chunk)).to_doubles();
    values.insert(values.end(), v.begin(), v.end());
  }
  Tensor t = Tensor::from_vector({static_cast<std::int64_t>(seqs.size()), d}, std::move(values));
  return t.to(model.params.get("embeddings.word").dtype());
}

void check_domain(const EncoderCheckpoint& model, const LabeledTokens& data) {
  require(data.meta != nullptr, ErrorCode::InvalidArgument, "labeled tokens have no domain meta");
  require(model.space.contains(data.meta->name), ErrorCode::UnknownDomain,
          "checkpoint token space lacks domain '" + data.meta->name + "'");
  require(!data.train.empty() && !data.test.empty(), ErrorCode::EmptyInput, "fine-tuning needs train and test sequences");
  require(data.train.size() == data.train_labels.size() && data.test.size() == data.test_labels.size(), ErrorCode::ShapeMismatch,
          "sequences and labels differ in count");
}

EvalReport start_report(const EncoderCheckpoint& model, const LabeledTokens& data, AdaptMode mode) {
  EvalReport r;
  r.domain = data.meta->name;
  r.mode = mode;
  r.task = data.meta->task;
  r.encoder_fingerprint_before = model.encoder_fingerprint();
  return r;
}

void finish_epoch(EvalReport& report, FinetuneEpoch rec, const SplitEvaluation& test,
                  const std::function<void(const FinetuneEpoch&)>& on_epoch) {
  rec.test_loss = test.loss;
  rec.accuracy = test.metrics.accuracy;
  rec.macro_f1 = test.metrics.macro_f1;
  report.trace.push_back(rec);
  report.metrics = test.metrics;
  report.loss = test.loss;
  if (on_epoch) on_epoch(rec);
}

SplitEvaluation score(const Tensor& logits, const std::vector<Label>& labels, const TaskHead& head) {
  SplitEvaluation out;
  out.loss = head_loss(logits, labels, head.task).item();
  out.metrics = compute_classification_metrics(predict_labels(logits, head.task), labels, head.task, head.num_classes);
  return out;
}

}  // namespace

FinetuneResult run_linear_eval(const EncoderCheckpoint& model, const LabeledTokens& data, const FinetuneConfig& config,
                               const std::function<void(const FinetuneEpoch&)>& on_epoch) {
  check_domain(model, data);
  const auto& domain = data.meta->name;
  FinetuneResult result{start_report(model, data, AdaptMode::linear), model.clone()};
  const auto keep = stratified_indices(data.train_labels, config.train_fraction, config.seed);
  const auto train_labels = pick(data.train_labels, keep);

  const Tensor train_x = cls_features(model, global_ids(model, domain, pick(data.train, keep)));
  const Tensor test_x = cls_features(model, global_ids(model, domain, data.test));

  const TaskHead head = attach_head(result.model, *data.meta, config.seed);
  Adam adam({head.weight, head.bias}, AdamOptions{.lr = config.resolved_lr()});
  SeededRng rng = SeededRng(config.seed).fork("linear.order");
  const auto n = static_cast<std::int64_t>(keep.size());
  for (std::int64_t epoch = 1; epoch <= config.resolved_epochs(); ++epoch) {
    const auto order = rng.permutation(n);
    double loss_sum = 0;
    for (std::int64_t start = 0; start < n; start += config.batch_size) {
      const auto stop = std::min(n, start + config.batch_size);
      std::vector<std::int64_t> rows(order.begin() + start, order.begin() + stop);
      std::vector<Label> labels;
      for (auto r : rows) labels.push_back(train_labels[static_cast<std::size_t>(r)]);
      Record record;
      RecordScope scope(record);
      const Tensor loss = head_loss(apply_head(head, gather_rows(train_x, rows)), labels, head.task);
      record.backward(loss);
      adam.step();
      adam.zero_grad();
      loss_sum += loss.item() * static_cast<double>(rows.size());
    }
    FinetuneEpoch rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(n);
    finish_epoch(result.report, rec, score(apply_head(head, test_x), data.test_labels, head), on_epoch);
  }
  result.report.encoder_fingerprint_after = model.encoder_fingerprint();
  return result;
}

FinetuneResult run_full_finetune(const EncoderCheckpoint& model, const LabeledTokens& data, const FinetuneConfig& config,
                                 const std::function<void(const FinetuneEpoch&)>& on_epoch) {
  check_domain(model, data);
  const auto& domain = data.meta->name;
  FinetuneResult result{start_report(model, data, AdaptMode::full), model.clone()};
  EncoderCheckpoint& tuned = result.model;
  const auto keep = stratified_indices(data.train_labels, config.train_fraction, config.seed);
  const auto train_labels = pick(data.train_labels, keep);
  const auto train_seqs = global_ids(model, domain, pick(data.train, keep));

  const TaskHead head = attach_head(tuned, *data.meta, config.seed);
  auto trainable = tuned.encoder_tensors();
  for (auto& t : trainable) t.set_requires_grad(true);
  trainable.push_back(head.weight);
  trainable.push_back(head.bias);
  Adam adam(trainable, AdamOptions{.lr = config.resolved_lr()});
  const SeededRng root(config.seed);
  SeededRng order_rng = root.fork("finetune.order");
  SeededRng dropout_rng = root.fork("finetune.dropout");
  const auto n = static_cast<std::int64_t>(keep.size());
  for (std::int64_t epoch = 1; epoch <= config.resolved_epochs(); ++epoch) {
    const auto order = order_rng.permutation(n);
    double loss_sum = 0;
    for (std::int64_t start = 0; start < n; start += config.batch_size) {
      const auto stop = std::min(n, start + config.batch_size);
      std::vector<std::vector<std::int64_t>> seqs;
      std::vector<Label> labels;
      for (auto i = start; i < stop; ++i) {
        seqs.push_back(train_seqs[static_cast<std::size_t>(order[i])]);
        labels.push_back(train_labels[static_cast<std::size_t>(order[i])]);
      }
      Record record;
      RecordScope scope(record);
      ForwardOptions opts;
      opts.training = true;
      opts.rng = &dropout_rng;
      const Tensor loss = head_loss(apply_head(head, cls_rows(encoder_forward(tuned, seqs, opts))), labels, head.task);
      record.backward(loss);
      adam.step();
      adam.zero_grad();
      loss_sum += loss.item() * static_cast<double>(seqs.size());
    }
    FinetuneEpoch rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(n);
    finish_epoch(result.report, rec, evaluate_classifier(tuned, domain, data.test, data.test_labels), on_epoch);
  }
  result.report.encoder_fingerprint_after = tuned.encoder_fingerprint();
  return result;
}

FinetuneResult run_finetune(const EncoderCheckpoint& model, const LabeledTokens& data, const FinetuneConfig& config,
                            const std::function<void(const FinetuneEpoch&)>& on_epoch) {
  return config.mode == AdaptMode::linear ? run_linear_eval(model, data, config, on_epoch)
                                          : run_full_finetune(model, data, config, on_epoch);
}

SplitEvaluation evaluate_classifier(const EncoderCheckpoint& model, const std::string& domain,
                                    const std::vector<TokenSequence>& sequences, const std::vector<Label>& labels) {
  require(sequences.size() == labels.size(), ErrorCode::ShapeMismatch, "sequences and labels differ in count");
  const TaskHead head = model_head(model);
  require(model.info.get("head.domain") == domain, ErrorCode::UnknownDomain,
          "head was trained for '" + model.info.get("head.domain") + "', not '" + domain + "'");
  return score(apply_head(head, cls_features(model, global_ids(model, domain, sequences))), labels, head);
}

// ---- report ----------------------------------------------------------------------

std::string EvalReport::to_json() const {
  auto hex = [](std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
  };
  nlohmann::ordered_json j;
  j["domain"] = domain;
  j["mode"] = std::string(to_string(mode));
  j["task"] = std::string(ctn::to_string(task));
  j["accuracy"] = metrics.accuracy;
  j["macro_f1"] = metrics.macro_f1;
  j["hamming_accuracy"] = metrics.hamming_accuracy;
  j["loss"] = loss;
  j["precision"] = metrics.precision;
  j["recall"] = metrics.recall;
  j["f1"] = metrics.f1;
  auto trace_json = nlohmann::ordered_json::array();
  for (const auto& e : trace)
    trace_json.push_back({{"epoch", e.epoch},
                          {"train_loss", e.train_loss},
                          {"test_loss", e.test_loss},
                          {"accuracy", e.accuracy},
                          {"macro_f1", e.macro_f1}});
  j["trace"] = std::move(trace_json);
  j["encoder_fingerprint_before"] = hex(encoder_fingerprint_before);
  j["encoder_fingerprint_after"] = hex(encoder_fingerprint_after);
  return j.dump();
}

}  // namespace ctn
