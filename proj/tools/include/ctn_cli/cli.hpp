#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "ctn/downstream.hpp"
#include "ctn/metrics.hpp"
#include "ctn_cli/config.hpp"

namespace ctn::cli {

/// Runs one subcommand (args exclude the program name). Returns 0 on
/// success, 1 on a runtime failure (message on `err`) and 2 on a usage
/// error (usage text on `err`).
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// ---- experiments -----------------------------------------------------------

/// Metrics sink shared by the pipeline stages. wall_seconds stays 0 unless
/// wall_clock is set, which keeps the stream byte-identical across runs.
struct MetricsSink {
  MetricsWriter* writer = nullptr;
  std::string run_id = "run";
  bool wall_clock = false;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void emit(MetricsRecord record) const;
};

struct DomainOutcome {
  std::string domain;
  Task task = Task::multiclass;
  double coverage = 0;
  double mse = 0;
  ClassificationMetrics linear;
  ClassificationMetrics full;
};

struct ExperimentOutcome {
  double pretrain_eval_loss = 0;
  double masked_acc = 0;
  std::vector<DomainOutcome> domains;
};

/// synthetic corpus -> per-domain tokenizers -> cross-domain pre-training ->
/// linear evaluation and full fine-tuning on every domain, all in memory.
ExperimentOutcome run_experiment(const ExperimentConfig& config, const MetricsSink& metrics);

// ---- sweeps ----------------------------------------------------------------

enum class SweepAxis { mask_ratio, codebook_size, patch_size, mixing };

std::string_view to_string(SweepAxis axis);
/// Throws InvalidArgument for anything but the four axis names.
SweepAxis parse_sweep_axis(std::string_view text);

/// Copy of `base` with the axis set to `value`.
ExperimentConfig apply_axis(const ExperimentConfig& base, SweepAxis axis, const std::string& value);

struct SweepOptions {
  SweepAxis axis = SweepAxis::mask_ratio;
  std::vector<std::string> values;
  ExperimentConfig base;
  std::filesystem::path out_dir;
  /// Values run concurrently when > 1; each run has its own directory.
  int jobs = 1;
  bool wall_clock = false;
};

struct SweepTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

/// One row per value. Writes out_dir/sweep.csv, out_dir/sweep.jsonl (row
/// plus the resolved config) and out_dir/run<i>/{config.ini,metrics.jsonl}.
SweepTable run_sweep(const SweepOptions& options);

// ---- export ----------------------------------------------------------------

enum class ExportKind { embeddings, attention, tokens };

std::string_view to_string(ExportKind kind);
ExportKind parse_export_kind(std::string_view text);

struct ExportRequest {
  ExportKind what = ExportKind::tokens;
  /// Encoder checkpoint; unused for tokens.
  std::filesystem::path checkpoint;
  std::filesystem::path tokenizer;
  std::filesystem::path domain;
  std::string split = "test";
  /// Export at most this many instances; 0 means all.
  std::int64_t limit = 0;
  std::string run_id = "run";
  std::filesystem::path out;
};

/// embeddings: CSV run_id,instance,position,token_id,h0..h{d-1}, one row per
/// position including CLS. attention: NTA archive with one [S, S] tensor
/// "instance<i>.layer<l>.head<h>" each. tokens: CSV split,instance,t0..t{L-1}.
/// Throws UnknownDomain or HeaderInconsistent when the inputs do not match.
void export_artifacts(const ExportRequest& request);

}  // namespace ctn::cli
