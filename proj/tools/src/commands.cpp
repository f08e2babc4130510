#include <fstream>
#include <functional>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "common.hpp"
#include "ctn/synth.hpp"
#include "pipeline.hpp"

namespace ctn::cli {
namespace {

/// Bad flag values or config contents; reported with exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Flags every subcommand accepts.
struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string metrics;
  std::string run_id = "run";
  bool wall_clock = false;

  void attach(CLI::App* app) {
    app->add_option("--config", config, "INI experiment config")->check(CLI::ExistingFile);
    app->add_option("--seed", seed, "Seed for this stage");
    app->add_option("--metrics", metrics, "Append metrics JSONL lines to this file");
    app->add_option("--run-id", run_id, "run_id written on metrics lines");
    app->add_flag("--wall-clock", wall_clock, "Record elapsed seconds on metrics lines (breaks byte-identity)");
  }
};

template <class F>
auto as_usage(F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

ExperimentConfig load_config(const Common& common) {
  return as_usage([&] { return common.config.empty() ? ExperimentConfig{} : ExperimentConfig::load(common.config); });
}

template <class T>
void override_with(T& target, const std::optional<T>& value) {
  if (value) target = *value;
}

/// Opens the metrics stream when requested; the sink is inert otherwise.
/// Lines are appended so a pipeline of commands can share one stream.
struct MetricsOutput {
  std::optional<MetricsWriter> writer;
  MetricsSink sink;

  explicit MetricsOutput(const Common& common) {
    if (!common.metrics.empty()) writer.emplace(common.metrics, false);
    sink.writer = writer ? &*writer : nullptr;
    sink.run_id = common.run_id;
    sink.wall_clock = common.wall_clock;
  }
};

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorCode::Io, "cannot open " + path.string());
  out << text;
  require(out.good(), ErrorCode::Io, "cannot write " + path.string());
}

std::string report_json(const EvalReport& report, const ExperimentConfig& config) {
  auto j = nlohmann::ordered_json::parse(report.to_json());
  j["config"] = config.to_ini();
  return j.dump(2) + "\n";
}

std::string metrics_json(const std::string& domain, const std::string& split, const SplitEvaluation& eval) {
  nlohmann::ordered_json j;
  j["domain"] = domain;
  j["split"] = split;
  j["loss"] = eval.loss;
  j["accuracy"] = eval.metrics.accuracy;
  j["macro_f1"] = eval.metrics.macro_f1;
  j["hamming_accuracy"] = eval.metrics.hamming_accuracy;
  j["precision"] = eval.metrics.precision;
  j["recall"] = eval.metrics.recall;
  j["f1"] = eval.metrics.f1;
  return j.dump(2) + "\n";
}

void require_domain(const EncoderCheckpoint& model, const std::string& name) {
  require(model.space.contains(name), ErrorCode::UnknownDomain, "checkpoint has no tokens for domain '" + name + "'");
}

}  // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Cross-domain discrete time series tokenization, pre-training and evaluation", "ctn"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "ctn 0.1.0");

  std::function<void()> action;

  // ---- synth -------------------------------------------------------------
  Common synth_common;
  std::string synth_out;
  std::optional<std::int64_t> synth_train, synth_test;
  auto* synth = app.add_subcommand("synth", "Generate the synthetic motion / waves / beats corpus");
  synth_common.attach(synth);
  synth->add_option("--out", synth_out, "Output directory (one subdirectory per domain)")->required();
  synth->add_option("--train-count", synth_train, "Train instances per domain");
  synth->add_option("--test-count", synth_test, "Test instances per domain");
  synth->callback([&] {
    action = [&] {
      auto config = load_config(synth_common);
      override_with(config.data.seed, synth_common.seed);
      override_with(config.data.train_count, synth_train);
      override_with(config.data.test_count, synth_test);
      const auto corpus = synth_corpus(default_synth_spec(config.data.train_count, config.data.test_count), config.data.seed);
      std::filesystem::create_directories(synth_out);
      for (const auto& d : corpus) {
        save_domain(std::filesystem::path(synth_out) / d.meta->name, d);
        out << d.meta->name << ": " << d.train.size() << " train, " << d.test.size() << " test\n";
      }
      write_text(std::filesystem::path(synth_out) / "config.ini", config.to_ini());
    };
  });

  // ---- tok-train -----------------------------------------------------------
  Common tok_common;
  std::string tok_domain, tok_out;
  std::optional<std::int64_t> tok_epochs, tok_codebook, tok_patch, tok_batch;
  std::optional<double> tok_lr;
  auto* tok = app.add_subcommand("tok-train", "Train a VQ tokenizer for one domain");
  tok_common.attach(tok);
  tok->add_option("--domain", tok_domain, "Domain directory")->required()->check(CLI::ExistingDirectory);
  tok->add_option("--out", tok_out, "Tokenizer checkpoint (.nta)")->required();
  tok->add_option("--epochs", tok_epochs);
  tok->add_option("--codebook-size", tok_codebook);
  tok->add_option("--patch-size", tok_patch);
  tok->add_option("--batch-size", tok_batch);
  tok->add_option("--lr", tok_lr);
  tok->callback([&] {
    action = [&] {
      auto config = load_config(tok_common);
      override_with(config.tokenizer.seed, tok_common.seed);
      override_with(config.tokenizer.epochs, tok_epochs);
      override_with(config.tokenizer.codebook_size, tok_codebook);
      override_with(config.tokenizer.patch_size, tok_patch);
      override_with(config.tokenizer.batch_size, tok_batch);
      override_with(config.tokenizer.lr, tok_lr);
      const auto dataset = load_domain(tok_domain);
      MetricsOutput metrics(tok_common);
      auto trained = train_tokenizer_stage(dataset, config.tokenizer, metrics.sink, tok_common.run_id);
      auto& tokenizer = trained.training.tokenizer;
      embed_config(tokenizer.info(), config);
      tokenizer.save(tok_out);
      out << dataset.meta->name << ": test mse " << trained.test.mse << ", coverage " << trained.test.coverage << '\n';
    };
  });

  // ---- tokenize ------------------------------------------------------------
  Common tokz_common;
  std::string tokz_domain, tokz_tokenizer, tokz_out, tokz_split = "test";
  auto* tokz = app.add_subcommand("tokenize", "Write the token ids of a dataset split as CSV");
  tokz_common.attach(tokz);
  tokz->add_option("--domain", tokz_domain)->required()->check(CLI::ExistingDirectory);
  tokz->add_option("--tokenizer", tokz_tokenizer)->required()->check(CLI::ExistingFile);
  tokz->add_option("--split", tokz_split)->check(CLI::IsMember({"train", "test"}));
  tokz->add_option("--out", tokz_out, "CSV output")->required();
  tokz->callback([&] {
    action = [&] {
      load_config(tokz_common);
      const auto dataset = load_domain(tokz_domain);
      const auto tokenizer = Tokenizer::load(tokz_tokenizer);
      check_compatible(tokenizer, *dataset.meta);
      write_token_csv(tokenizer.tokenize_all(split_of(dataset, tokz_split)), tokz_split, tokz_out);
    };
  });

  // ---- pretrain ------------------------------------------------------------
  Common pre_common;
  std::vector<std::string> pre_domains, pre_tokenizers;
  std::string pre_out, pre_external, pre_mixing;
  std::optional<double> pre_ratio, pre_lr;
  std::optional<std::int64_t> pre_epochs, pre_batch;
  auto* pre = app.add_subcommand("pretrain", "Masked token prediction over one or more domains");
  pre_common.attach(pre);
  pre->add_option("--domain", pre_domains, "Domain directory (repeat per domain)")->required()->check(CLI::ExistingDirectory);
  pre->add_option("--tokenizer", pre_tokenizers, "Tokenizer for the matching --domain")->required()->check(CLI::ExistingFile);
  pre->add_option("--out", pre_out, "Encoder checkpoint (.nta)")->required();
  pre->add_option("--mask-ratio", pre_ratio);
  pre->add_option("--mixing", pre_mixing, "agnostic | sequential | sequential:a-b-c");
  pre->add_option("--epochs", pre_epochs);
  pre->add_option("--batch-size", pre_batch);
  pre->add_option("--lr", pre_lr);
  pre->add_option("--external-weights", pre_external, "Initialize the encoder body from this archive")
      ->check(CLI::ExistingFile);
  pre->callback([&] {
    action = [&] {
      auto config = load_config(pre_common);
      override_with(config.pretrain.seed, pre_common.seed);
      override_with(config.pretrain.mask_ratio, pre_ratio);
      override_with(config.pretrain.epochs, pre_epochs);
      override_with(config.pretrain.batch_size, pre_batch);
      override_with(config.pretrain.lr, pre_lr);
      if (!pre_mixing.empty()) config.pretrain.mixing = as_usage([&] { return Mixing::parse(pre_mixing); });
      if (pre_domains.size() != pre_tokenizers.size())
        throw UsageError("every --domain needs a matching --tokenizer");

      std::vector<DomainDataset> datasets;
      std::vector<Tokenizer> tokenizers;
      for (std::size_t i = 0; i < pre_domains.size(); ++i) {
        datasets.push_back(load_domain(pre_domains[i]));
        tokenizers.push_back(Tokenizer::load(pre_tokenizers[i]));
        check_compatible(tokenizers.back(), *datasets.back().meta);
      }
      std::vector<const Tokenizer*> ptrs;
      for (const auto& t : tokenizers) ptrs.push_back(&t);
      const auto space = build_token_space(ptrs);

      std::vector<DomainTokens> corpora;
      for (std::size_t i = 0; i < datasets.size(); ++i)
        corpora.push_back({datasets[i].meta->name, tokenizers[i].tokenize_all(datasets[i].train),
                           tokenizers[i].tokenize_all(datasets[i].test)});

      MetricsOutput metrics(pre_common);
      std::optional<EncoderCheckpoint> init;
      if (!pre_external.empty())
        init = load_external_weights(pre_external, initialize_encoder(space, corpora, config.encoder, config.pretrain));
      auto result = pretrain_stage(space, corpora, config.encoder, config.pretrain, metrics.sink, pre_common.run_id,
                                   init ? &*init : nullptr);
      embed_config(result.checkpoint.info, config);
      result.checkpoint.save(pre_out);
      const auto& last = result.trace.back();
      out << "pretrain: eval loss " << last.eval_loss << ", masked accuracy " << last.masked_acc << '\n';
    };
  });

  // ---- finetune ------------------------------------------------------------
  Common ft_common;
  std::string ft_checkpoint, ft_domain, ft_tokenizer, ft_out, ft_report, ft_mode;
  std::optional<double> ft_lr, ft_fraction;
  std::optional<std::int64_t> ft_epochs, ft_batch;
  auto* ft = app.add_subcommand("finetune", "Linear evaluation or full fine-tuning on one domain");
  ft_common.attach(ft);
  ft->add_option("--checkpoint", ft_checkpoint, "Pre-trained encoder")->required()->check(CLI::ExistingFile);
  ft->add_option("--domain", ft_domain)->required()->check(CLI::ExistingDirectory);
  ft->add_option("--tokenizer", ft_tokenizer)->required()->check(CLI::ExistingFile);
  ft->add_option("--out", ft_out, "Encoder plus task head (.nta)")->required();
  ft->add_option("--report", ft_report, "Write the evaluation report JSON here");
  ft->add_option("--mode", ft_mode)->check(CLI::IsMember({"linear", "full"}));
  ft->add_option("--lr", ft_lr);
  ft->add_option("--epochs", ft_epochs);
  ft->add_option("--batch-size", ft_batch);
  ft->add_option("--train-fraction", ft_fraction, "Stratified fraction of the train split to use");
  ft->callback([&] {
    action = [&] {
      auto config = load_config(ft_common);
      override_with(config.finetune.seed, ft_common.seed);
      override_with(config.finetune.lr, ft_lr);
      override_with(config.finetune.epochs, ft_epochs);
      override_with(config.finetune.batch_size, ft_batch);
      override_with(config.finetune.train_fraction, ft_fraction);
      if (!ft_mode.empty()) config.finetune.mode = parse_adapt_mode(ft_mode);

      const auto model = EncoderCheckpoint::load(ft_checkpoint);
      const auto dataset = load_domain(ft_domain);
      const auto tokenizer = Tokenizer::load(ft_tokenizer);
      check_compatible(tokenizer, *dataset.meta);
      require_domain(model, dataset.meta->name);

      MetricsOutput metrics(ft_common);
      auto result = finetune_stage(model, tokenize_dataset(tokenizer, dataset), config.finetune, metrics.sink,
                                   ft_common.run_id);
      embed_config(result.model.info, config);
      result.model.save(ft_out);
      if (!ft_report.empty()) write_text(ft_report, report_json(result.report, config));
      out << dataset.meta->name << " (" << to_string(config.finetune.mode) << "): accuracy "
          << result.report.metrics.accuracy << ", macro-F1 " << result.report.metrics.macro_f1 << '\n';
    };
  });

  // ---- eval ----------------------------------------------------------------
  Common ev_common;
  std::string ev_checkpoint, ev_domain, ev_tokenizer, ev_out, ev_split = "test";
  auto* ev = app.add_subcommand("eval", "Score a fine-tuned model on a dataset split");
  ev_common.attach(ev);
  ev->add_option("--checkpoint", ev_checkpoint, "Model with a task head")->required()->check(CLI::ExistingFile);
  ev->add_option("--domain", ev_domain)->required()->check(CLI::ExistingDirectory);
  ev->add_option("--tokenizer", ev_tokenizer)->required()->check(CLI::ExistingFile);
  ev->add_option("--split", ev_split)->check(CLI::IsMember({"train", "test"}));
  ev->add_option("--out", ev_out, "Write the metrics JSON here instead of stdout");
  ev->callback([&] {
    action = [&] {
      load_config(ev_common);
      const auto model = EncoderCheckpoint::load(ev_checkpoint);
      const auto dataset = load_domain(ev_domain);
      const auto tokenizer = Tokenizer::load(ev_tokenizer);
      check_compatible(tokenizer, *dataset.meta);
      require_domain(model, dataset.meta->name);
      const auto& instances = split_of(dataset, ev_split);
      std::vector<Label> labels;
      for (const auto& inst : instances) labels.push_back(inst.label);
      const auto result = evaluate_classifier(model, dataset.meta->name, tokenizer.tokenize_all(instances), labels);

      MetricsOutput metrics(ev_common);
      MetricsRecord r;
      r.stage = "eval";
      r.split = ev_split;
      r.loss = result.loss;
      r.accuracy = result.metrics.accuracy;
      r.macro_f1 = result.metrics.macro_f1;
      metrics.sink.emit(r);

      const auto text = metrics_json(dataset.meta->name, ev_split, result);
      if (ev_out.empty())
        out << text;
      else
        write_text(ev_out, text);
    };
  });

  // ---- sweep ---------------------------------------------------------------
  Common sw_common;
  std::string sw_axis, sw_out;
  std::vector<std::string> sw_values;
  int sw_jobs = 1;
  auto* sw = app.add_subcommand("sweep", "Run the full pipeline once per value of one axis");
  sw_common.attach(sw);
  sw->add_option("--axis", sw_axis)->required()->check(CLI::IsMember({"mask_ratio", "codebook_size", "patch_size", "mixing"}));
  sw->add_option("--values", sw_values, "Comma-separated values")->required()->delimiter(',');
  sw->add_option("--out", sw_out, "Output directory")->required();
  sw->add_option("--jobs", sw_jobs, "Runs to execute concurrently")->check(CLI::PositiveNumber);
  sw->callback([&] {
    action = [&] {
      SweepOptions options;
      options.base = load_config(sw_common);
      if (sw_common.seed) {
        options.base.data.seed = *sw_common.seed;
        options.base.tokenizer.seed = *sw_common.seed;
        options.base.pretrain.seed = *sw_common.seed;
        options.base.finetune.seed = *sw_common.seed;
      }
      options.axis = parse_sweep_axis(sw_axis);
      options.values = sw_values;
      for (const auto& v : sw_values) as_usage([&] { return apply_axis(options.base, options.axis, v); });
      options.out_dir = sw_out;
      options.jobs = sw_jobs;
      options.wall_clock = sw_common.wall_clock;
      const auto table = run_sweep(options);
      if (!sw_common.metrics.empty()) {
        std::ofstream all(sw_common.metrics, std::ios::binary | std::ios::trunc);
        for (std::size_t i = 0; i < sw_values.size(); ++i) {
          std::ifstream run(options.out_dir / ("run" + std::to_string(i)) / "metrics.jsonl", std::ios::binary);
          all << run.rdbuf();
        }
        require(all.good(), ErrorCode::Io, "cannot write " + sw_common.metrics);
      }
      for (std::size_t k = 0; k < table.header.size(); ++k) out << (k ? "," : "") << table.header[k];
      out << '\n';
      for (const auto& row : table.rows) {
        for (std::size_t k = 0; k < row.size(); ++k) out << (k ? "," : "") << row[k];
        out << '\n';
      }
    };
  });

  // ---- export --------------------------------------------------------------
  Common ex_common;
  ExportRequest ex;
  std::string ex_what, ex_checkpoint, ex_tokenizer, ex_domain, ex_out;
  auto* exp = app.add_subcommand("export", "Export embeddings, attention maps or token ids");
  ex_common.attach(exp);
  exp->add_option("--what", ex_what)->required()->check(CLI::IsMember({"embeddings", "attention", "tokens"}));
  exp->add_option("--checkpoint", ex_checkpoint, "Encoder checkpoint (embeddings, attention)")->check(CLI::ExistingFile);
  exp->add_option("--tokenizer", ex_tokenizer)->required()->check(CLI::ExistingFile);
  exp->add_option("--domain", ex_domain)->required()->check(CLI::ExistingDirectory);
  exp->add_option("--split", ex.split)->check(CLI::IsMember({"train", "test"}));
  exp->add_option("--limit", ex.limit, "Export at most this many instances");
  exp->add_option("--out", ex_out)->required();
  exp->callback([&] {
    action = [&] {
      load_config(ex_common);
      ex.what = parse_export_kind(ex_what);
      if (ex.what != ExportKind::tokens && ex_checkpoint.empty())
        throw UsageError("--checkpoint is required for --what " + ex_what);
      ex.checkpoint = ex_checkpoint;
      ex.tokenizer = ex_tokenizer;
      ex.domain = ex_domain;
      ex.out = ex_out;
      ex.run_id = ex_common.run_id;
      export_artifacts(ex);
    };
  });

  if (!args.empty() && !args.front().starts_with("-") && app.get_subcommand_no_throw(args.front()) == nullptr) {
    err << "error: unknown subcommand '" << args.front() << "'\n\n" << app.help();
    return 2;
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      app.exit(e, out, err);
      return 0;
    }
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    action();
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n\n" << app.get_subcommands().front()->help();
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace ctn::cli
