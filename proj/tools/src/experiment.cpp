#include <cmath>
#include <sstream>

#include "ctn/synth.hpp"
#include "pipeline.hpp"

namespace ctn::cli {

void MetricsSink::emit(MetricsRecord record) const {
  if (writer == nullptr) return;
  if (record.run_id.empty()) record.run_id = run_id;
  record.wall_seconds =
      wall_clock ? std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() : 0.0;
  writer->emit(record);
}

TrainedTokenizer train_tokenizer_stage(const DomainDataset& dataset, const TokenizerConfig& config,
                                       const MetricsSink& sink, const std::string& run_id) {
  TrainedTokenizer out{train_tokenizer(dataset, config,
                                       [&](const TokenizerEpoch& e) {
                                         MetricsRecord r;
                                         r.run_id = run_id;
                                         r.stage = "tokenizer";
                                         r.epoch = e.epoch;
                                         r.split = "train";
                                         r.loss = e.loss;
                                         r.mse = e.mse;
                                         r.coverage = e.coverage;
                                         sink.emit(r);
                                       }),
                       {}};
  const auto& tok = out.training.tokenizer;
  out.test = tokenizer_metrics(tok.tokenize_all(dataset.test), tok, dataset.test);

  MetricsRecord r;
  r.run_id = run_id;
  r.stage = "tokenizer-test";
  r.epoch = config.epochs;
  r.split = "test";
  r.mse = out.test.mse;
  r.coverage = out.test.coverage;
  sink.emit(r);
  return out;
}

PretrainResult pretrain_stage(const GlobalTokenSpace& space, const std::vector<DomainTokens>& corpora,
                              const EncoderConfig& encoder, const PretrainConfig& config, const MetricsSink& sink,
                              const std::string& run_id, const EncoderCheckpoint* init) {
  const auto log = [&](const PretrainEpoch& e) {
    MetricsRecord r;
    r.run_id = run_id;
    r.stage = "pretrain";
    r.epoch = e.epoch;
    r.split = "eval";
    r.loss = e.eval_loss;
    r.masked_acc = e.masked_acc;
    sink.emit(r);
    if (!std::isnan(e.train_loss)) {
      MetricsRecord t;
      t.run_id = run_id;
      t.stage = "pretrain-train";
      t.epoch = e.epoch;
      t.split = "train";
      t.loss = e.train_loss;
      sink.emit(t);
    }
  };
  return run_pretraining(space, corpora, encoder, config, log, init);
}

FinetuneResult finetune_stage(const EncoderCheckpoint& model, const LabeledTokens& data, const FinetuneConfig& config,
                              const MetricsSink& sink, const std::string& run_id) {
  const std::string stage(to_string(config.mode));
  return run_finetune(model, data, config, [&](const FinetuneEpoch& e) {
    MetricsRecord t;
    t.run_id = run_id;
    t.stage = stage + "-train";
    t.epoch = e.epoch;
    t.split = "train";
    t.loss = e.train_loss;
    sink.emit(t);

    MetricsRecord r;
    r.run_id = run_id;
    r.stage = stage;
    r.epoch = e.epoch;
    r.split = "test";
    r.loss = e.test_loss;
    r.accuracy = e.accuracy;
    r.macro_f1 = e.macro_f1;
    sink.emit(r);
  });
}

void embed_config(Manifest& info, const ExperimentConfig& config) {
  std::istringstream in(config.to_ini());
  std::string line, section;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.front() == '[') {
      section = line.substr(1, line.size() - 2);
      continue;
    }
    const auto eq = line.find(" = ");
    info.set("experiment." + section + "." + line.substr(0, eq), line.substr(eq + 3));
  }
}

ExperimentOutcome run_experiment(const ExperimentConfig& config, const MetricsSink& sink) {
  const auto corpus = synth_corpus(default_synth_spec(config.data.train_count, config.data.test_count), config.data.seed);

  ExperimentOutcome outcome;
  std::vector<Tokenizer> tokenizers;
  for (const auto& dataset : corpus) {
    auto trained = train_tokenizer_stage(dataset, config.tokenizer, sink, sink.run_id + "/" + dataset.meta->name);
    DomainOutcome d;
    d.domain = dataset.meta->name;
    d.task = dataset.meta->task;
    d.coverage = trained.test.coverage;
    d.mse = trained.test.mse;
    outcome.domains.push_back(d);
    tokenizers.push_back(std::move(trained.training.tokenizer));
  }

  std::vector<const Tokenizer*> tok_ptrs;
  for (const auto& t : tokenizers) tok_ptrs.push_back(&t);
  const auto space = build_token_space(tok_ptrs);

  std::vector<LabeledTokens> labeled;
  std::vector<DomainTokens> corpora;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    labeled.push_back(tokenize_dataset(tokenizers[i], corpus[i]));
    corpora.push_back({corpus[i].meta->name, labeled.back().train, labeled.back().test});
  }

  const auto pretrained = pretrain_stage(space, corpora, config.encoder, config.pretrain, sink, sink.run_id);
  outcome.pretrain_eval_loss = pretrained.trace.back().eval_loss;
  outcome.masked_acc = pretrained.trace.back().masked_acc;

  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const std::string run_id = sink.run_id + "/" + corpus[i].meta->name;
    FinetuneConfig fc = config.finetune;
    fc.mode = AdaptMode::linear;
    outcome.domains[i].linear = finetune_stage(pretrained.checkpoint, labeled[i], fc, sink, run_id).report.metrics;
    fc.mode = AdaptMode::full;
    outcome.domains[i].full = finetune_stage(pretrained.checkpoint, labeled[i], fc, sink, run_id).report.metrics;
  }
  return outcome;
}

}  // namespace ctn::cli
