#pragma once

#include <string>
#include <vector>

#include "ctn/downstream.hpp"
#include "ctn/pretrain.hpp"
#include "ctn/tokenizer.hpp"
#include "ctn_cli/cli.hpp"

namespace ctn::cli {

// Training stages with their metrics lines. `run_id` names the stream the
// lines belong to. Stage names pair with one split each, so epochs increase
// strictly within every (run_id, stage):
//   tokenizer / train, tokenizer-test / test,
//   pretrain / eval (epoch 0 = before training), pretrain-train / train,
//   linear|full / test, linear-train|full-train / train, eval / <split>.

struct TrainedTokenizer {
  TokenizerTraining training;
  TokenizerMetrics test;
};

TrainedTokenizer train_tokenizer_stage(const DomainDataset& dataset, const TokenizerConfig& config,
                                       const MetricsSink& sink, const std::string& run_id);

PretrainResult pretrain_stage(const GlobalTokenSpace& space, const std::vector<DomainTokens>& corpora,
                              const EncoderConfig& encoder, const PretrainConfig& config, const MetricsSink& sink,
                              const std::string& run_id, const EncoderCheckpoint* init = nullptr);

FinetuneResult finetune_stage(const EncoderCheckpoint& model, const LabeledTokens& data, const FinetuneConfig& config,
                              const MetricsSink& sink, const std::string& run_id);

/// Manifest entries "experiment.<section>.<key>" for every resolved setting.
void embed_config(Manifest& info, const ExperimentConfig& config);

}  // namespace ctn::cli
