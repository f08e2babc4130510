#include <gtest/gtest.h>

#include <map>
#include <nlohmann/json.hpp>
#include <sstream>

#include "ctn/archive.hpp"
#include "ctn/metrics.hpp"
#include "ctn_cli/cli.hpp"
#include "test_support.hpp"

namespace ctn::cli {
namespace {

using ctn::testing::TempDir;
using ctn::testing::read_file;
using ctn::testing::write_file;

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run ctn(std::vector<std::string> args) {
  std::ostringstream out, err;
  Run r;
  r.code = run_command(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

// Small enough that the whole pipeline runs in seconds.
constexpr const char* kTinyConfig = R"([data]
seed = 3
train_count = 12
test_count = 6

[tokenizer]
codebook_size = 16
latent_dim = 8
hidden_channels = 8
layers = 1
epochs = 1

[pretrain]
seed = 5
epochs = 2
batch_size = 8
layers = 1
d_model = 16
heads = 2
ffn_width = 32

[finetune]
epochs = 2
batch_size = 8
)";

ExperimentConfig tiny_config() { return ExperimentConfig::parse(kTinyConfig); }

std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path) {
  std::vector<MetricsRecord> out;
  std::istringstream in(read_file(path));
  for (std::string line; std::getline(in, line);) out.push_back(parse_metrics_line(line));
  return out;
}

void expect_increasing_epochs(const std::vector<MetricsRecord>& records) {
  std::map<std::pair<std::string, std::string>, std::int64_t> last;
  for (const auto& r : records) {
    const auto key = std::make_pair(r.run_id, r.stage);
    const auto it = last.find(key);
    if (it != last.end()) {
      EXPECT_GT(r.epoch, it->second) << r.run_id << "/" << r.stage;
    }
    last[key] = r.epoch;
  }
}

/// synth -> tok-train x3 -> pretrain -> finetune -> eval, returning the directory.
void pipeline(const std::filesystem::path& dir) {
  write_file(dir / "tiny.ini", kTinyConfig);
  const auto cfg = (dir / "tiny.ini").string();
  const auto metrics = (dir / "metrics.jsonl").string();
  ASSERT_EQ(ctn({"synth", "--config", cfg, "--out", (dir / "data").string()}).code, 0);
  std::vector<std::string> pre{"pretrain", "--config", cfg, "--metrics", metrics, "--out", (dir / "enc.nta").string()};
  for (const char* d : {"motion", "waves", "beats"}) {
    const auto r = ctn({"tok-train", "--config", cfg, "--domain", (dir / "data" / d).string(), "--out",
                        (dir / (std::string(d) + ".nta")).string(), "--metrics", metrics, "--run-id", d});
    ASSERT_EQ(r.code, 0) << r.err;
    pre.insert(pre.end(), {"--domain", (dir / "data" / d).string(), "--tokenizer", (dir / (std::string(d) + ".nta")).string()});
  }
  auto r = ctn(pre);
  ASSERT_EQ(r.code, 0) << r.err;
  r = ctn({"finetune", "--config", cfg, "--checkpoint", (dir / "enc.nta").string(), "--domain", (dir / "data" / "waves").string(),
           "--tokenizer", (dir / "waves.nta").string(), "--out", (dir / "head.nta").string(), "--report",
           (dir / "report.json").string(), "--metrics", metrics, "--mode", "full"});
  ASSERT_EQ(r.code, 0) << r.err;
  r = ctn({"eval", "--checkpoint", (dir / "head.nta").string(), "--domain", (dir / "data" / "waves").string(), "--tokenizer",
           (dir / "waves.nta").string(), "--metrics", metrics, "--out", (dir / "eval.json").string()});
  ASSERT_EQ(r.code, 0) << r.err;
}

TEST(Config, CanonicalTextRoundTrips) {
  const auto c = tiny_config();
  EXPECT_EQ(c.tokenizer.codebook_size, 16);
  EXPECT_EQ(c.encoder.d_model, 16);
  EXPECT_EQ(c.pretrain.mask_ratio, 0.45);
  EXPECT_EQ(ExperimentConfig::parse(c.to_ini()), c);
  EXPECT_EQ(ExperimentConfig::parse(c.to_ini()).to_ini(), c.to_ini());
  EXPECT_EQ(ExperimentConfig::parse(ExperimentConfig{}.to_ini()), ExperimentConfig{});
  auto odd = c;
  odd.pretrain.mixing = Mixing::parse("sequential:waves-motion-beats");
  odd.pretrain.lr = 1.0 / 3.0;
  odd.finetune.mode = AdaptMode::full;
  EXPECT_EQ(ExperimentConfig::parse(odd.to_ini()), odd);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  auto code_of = [](const std::string& text) {
    try {
      ExperimentConfig::parse(text);
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::InvalidArgument;
  };
  EXPECT_EQ(code_of("[pretrain]\nmask_ration = 0.3\n"), ErrorCode::UnknownKey);
  EXPECT_EQ(code_of("[model]\nlayers = 2\n"), ErrorCode::UnknownKey);
  EXPECT_EQ(code_of("[pretrain]\nepochs = many\n"), ErrorCode::ParseError);
  EXPECT_EQ(code_of("[pretrain]\nmixing = shuffled\n"), ErrorCode::ParseError);
}

TEST(Commands, ExitCodes) {
  auto r = ctn({"frobnicate"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("unknown subcommand 'frobnicate'"), std::string::npos) << r.err;
  EXPECT_EQ(ctn({}).code, 2);
  EXPECT_EQ(ctn({"tok-train", "--out", "x.nta"}).code, 2);
  EXPECT_EQ(ctn({"--help"}).code, 0);
  EXPECT_EQ(ctn({"--version"}).code, 0);
  TempDir dir("cli");
  write_file(dir / "bad.ini", "[pretrain]\nmask_ration = 0.3\n");
  // A config file the parser rejects is a usage error.
  r = ctn({"synth", "--config", (dir / "bad.ini").string(), "--out", (dir / "d").string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("mask_ration"), std::string::npos) << r.err;
}

TEST(Commands, SynthAndTokenizerSmoke) {
  TempDir dir("cli");
  write_file(dir / "tiny.ini", kTinyConfig);
  auto r = ctn({"synth", "--config", (dir / "tiny.ini").string(), "--out", (dir / "data").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto motion = load_domain(dir / "data" / "motion");
  EXPECT_EQ(motion.train.size(), 12u);
  EXPECT_EQ(motion.test.size(), 6u);
  r = ctn({"tok-train", "--config", (dir / "tiny.ini").string(), "--domain", (dir / "data" / "motion").string(), "--out",
           (dir / "motion.nta").string(), "--metrics", (dir / "m.jsonl").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto tok = Tokenizer::load(dir / "motion.nta");
  EXPECT_EQ(tok.config().codebook_size, 16);
  const auto records = read_metrics(dir / "m.jsonl");
  ASSERT_FALSE(records.empty());
  EXPECT_EQ(records.front().stage, "tokenizer");
  EXPECT_TRUE(records.front().mse.has_value());
  r = ctn({"tokenize", "--domain", (dir / "data" / "motion").string(), "--tokenizer", (dir / "motion.nta").string(), "--out",
           (dir / "tokens.csv").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = read_file(dir / "tokens.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
  // A tokenizer only accepts its own domain.
  r = ctn({"tokenize", "--domain", (dir / "data" / "waves").string(), "--tokenizer", (dir / "motion.nta").string(), "--out",
           (dir / "bad.csv").string()});
  EXPECT_EQ(r.code, 1);
}

TEST(Pipeline, MetricsAreByteIdenticalAcrossRuns) {
  TempDir a("pipe"), b("pipe");
  pipeline(a.path());
  pipeline(b.path());
  const auto ma = read_file(a / "metrics.jsonl");
  EXPECT_FALSE(ma.empty());
  EXPECT_EQ(ma, read_file(b / "metrics.jsonl"));
  EXPECT_EQ(read_file(a / "report.json"), read_file(b / "report.json"));
  EXPECT_EQ(load_nta(a / "enc.nta").tensors.size(), load_nta(b / "enc.nta").tensors.size());
  EXPECT_EQ(read_file(a / "head.nta"), read_file(b / "head.nta"));

  const auto records = read_metrics(a / "metrics.jsonl");
  expect_increasing_epochs(records);
  std::set<std::string> stages;
  for (const auto& r : records) {
    stages.insert(r.stage);
    EXPECT_EQ(r.wall_seconds, 0.0);
  }
  for (const char* s : {"tokenizer", "tokenizer-test", "pretrain", "pretrain-train", "full", "full-train", "eval"})
    EXPECT_TRUE(stages.count(s)) << s;

  const auto report = nlohmann::json::parse(read_file(a / "report.json"));
  EXPECT_EQ(report.at("mode"), "full");
  EXPECT_NE(report.at("encoder_fingerprint_before"), report.at("encoder_fingerprint_after"));
  const auto eval = nlohmann::json::parse(read_file(a / "eval.json"));
  EXPECT_EQ(eval.at("accuracy").get<double>(), report.at("accuracy").get<double>());
}

TEST(Export, EmbeddingsAttentionAndTokens) {
  TempDir dir("export");
  pipeline(dir.path());
  const auto enc = EncoderCheckpoint::load(dir / "enc.nta");
  const auto waves = load_domain(dir / "data" / "waves");
  const std::int64_t seq = waves.meta->num_patches() + 1;

  ExportRequest req;
  req.what = ExportKind::embeddings;
  req.checkpoint = dir / "enc.nta";
  req.tokenizer = dir / "waves.nta";
  req.domain = dir / "data" / "waves";
  req.limit = 3;
  req.out = dir / "emb.csv";
  export_artifacts(req);
  std::istringstream emb(read_file(req.out));
  std::string header;
  std::getline(emb, header);
  EXPECT_EQ(header.rfind("run_id,instance,position,token_id,h0,", 0), 0u) << header;
  EXPECT_EQ(std::count(header.begin(), header.end(), ','), 3 + enc.config.d_model);
  std::int64_t rows = 0;
  for (std::string line; std::getline(emb, line);) ++rows;
  EXPECT_EQ(rows, 3 * seq);

  req.what = ExportKind::attention;
  req.out = dir / "attn.nta";
  export_artifacts(req);
  const auto maps = load_nta(req.out);
  EXPECT_EQ(static_cast<std::int64_t>(maps.tensors.size()), 3 * enc.config.layers * enc.config.heads);
  EXPECT_EQ(maps.tensors.front().first, "instance0.layer0.head0");
  for (const auto& [name, t] : maps.tensors) {
    ASSERT_EQ(t.shape(), (Shape{seq, seq})) << name;
    const auto v = t.to_doubles();
    for (std::int64_t i = 0; i < seq; ++i) {
      double s = 0;
      for (std::int64_t j = 0; j < seq; ++j) s += v[static_cast<std::size_t>(i * seq + j)];
      EXPECT_NEAR(s, 1.0, 1e-4) << name << " row " << i;
    }
  }

  req.what = ExportKind::tokens;
  req.limit = 0;
  req.out = dir / "tok.csv";
  export_artifacts(req);
  const auto tok = read_file(req.out);
  EXPECT_EQ(std::count(tok.begin(), tok.end(), '\n'), static_cast<std::ptrdiff_t>(waves.test.size()) + 1);

  // Tokenizer from another domain.
  req.tokenizer = dir / "motion.nta";
  EXPECT_THROW(export_artifacts(req), Error);
  EXPECT_THROW(parse_export_kind("weights"), Error);
}

TEST(Sweep, SchemaAndRunDirectories) {
  TempDir dir("sweep");
  SweepOptions opt;
  opt.axis = SweepAxis::mask_ratio;
  opt.values = {"0.15", "0.6"};
  opt.base = tiny_config();
  opt.out_dir = dir.path();
  const auto table = run_sweep(opt);
  ASSERT_EQ(table.rows.size(), 2u);
  EXPECT_EQ(table.header.size(), 4u + 3 * 6);
  EXPECT_EQ(table.header[0], "axis");
  EXPECT_EQ(table.rows[0][0], "mask_ratio");
  EXPECT_EQ(table.rows[1][1], "0.6");
  for (const auto& row : table.rows) EXPECT_EQ(row.size(), table.header.size());
  const auto csv = read_file(dir / "sweep.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
  std::istringstream jl(read_file(dir / "sweep.jsonl"));
  std::string line;
  std::getline(jl, line);
  const auto j = nlohmann::json::parse(line);
  EXPECT_TRUE(j.contains("config"));
  for (const char* run : {"run0", "run1"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / run / "config.ini"));
    expect_increasing_epochs(read_metrics(dir / run / "metrics.jsonl"));
  }
  EXPECT_EQ(ExperimentConfig::load(dir / "run1" / "config.ini").pretrain.mask_ratio, 0.6);
}

TEST(Sweep, AxisApplication) {
  const auto base = tiny_config();
  EXPECT_EQ(apply_axis(base, SweepAxis::codebook_size, "128").tokenizer.codebook_size, 128);
  EXPECT_EQ(apply_axis(base, SweepAxis::patch_size, "10").tokenizer.patch_size, 10);
  EXPECT_EQ(apply_axis(base, SweepAxis::mixing, "sequential:beats-waves-motion").pretrain.mixing.to_string(),
            "sequential:beats-waves-motion");
  EXPECT_THROW(apply_axis(base, SweepAxis::mask_ratio, "lots"), Error);
  EXPECT_THROW(parse_sweep_axis("depth"), Error);
  EXPECT_EQ(parse_sweep_axis("patch_size"), SweepAxis::patch_size);
}

}  // namespace
}  // namespace ctn::cli
