#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "ctn/ops.hpp"
#include "ctn/sax.hpp"
#include "ctn/tokenizer.hpp"
#include "test_support.hpp"

namespace ctn {
namespace {

using testing::TempDir;

Tensor rows(std::int64_t k, std::int64_t d, std::vector<float> values) { return Tensor::from_vector({k, d}, std::move(values)); }

std::int64_t brute_force(std::span<const float> z, const Tensor& codebook) {
  const auto cb = codebook.values<float>();
  const auto d = static_cast<std::size_t>(codebook.dim(1));
  std::int64_t best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::int64_t k = 0; k < codebook.dim(0); ++k) {
    double dist = 0;
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = static_cast<double>(z[j]) - static_cast<double>(cb[static_cast<std::size_t>(k) * d + j]);
      dist += diff * diff;
    }
    if (dist < best_dist) {
      best_dist = dist;
      best = k;
    }
  }
  return best;
}

TokenizerConfig small_config(std::uint64_t seed = 1) {
  TokenizerConfig cfg;
  cfg.codebook_size = 16;
  cfg.latent_dim = 8;
  cfg.hidden_channels = 16;
  cfg.layers = 2;
  cfg.epochs = 3;
  cfg.lr = 2e-3;
  cfg.seed = seed;
  return cfg;
}

TEST(Quantize, HandExample) {
  const auto cb = rows(2, 2, {0, 0, 1, 1});
  const std::vector<float> z{0.9f, 0.8f};
  EXPECT_EQ(nearest_code(z, cb), 1);
  const auto q = quantize(z, cb);
  EXPECT_EQ(q.index, 1);
  EXPECT_EQ(q.z_q, (std::vector<float>{1, 1}));
}

TEST(Quantize, ExactMatchAndSmallestIndexTieBreak) {
  const auto cb = rows(6, 2, {3, 3, 9, 9, 1, 0, 7, 7, 7, 7, -1, 0});
  const std::vector<float> row0{3, 3};
  const auto q = quantize(row0, cb);
  EXPECT_EQ(q.index, 0);
  EXPECT_EQ(q.z_q, row0);
  // (0, 0) is at distance 1 from rows 2 and 5.
  EXPECT_EQ(nearest_code(std::vector<float>{0, 0}, cb), 2);
  // Rows 3 and 4 are duplicates.
  EXPECT_EQ(nearest_code(std::vector<float>{7, 7.1f}, cb), 3);
  EXPECT_THROW(nearest_code(row0, Tensor::zeros({0, 2})), Error);
}

TEST(Quantize, MatchesBruteForceOnRandomPairs) {
  SeededRng rng(99);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto k = static_cast<std::int64_t>(2 + rng.below(40));
    const auto d = static_cast<std::int64_t>(1 + rng.below(16));
    std::vector<float> cb(static_cast<std::size_t>(k * d));
    // A coarse grid makes exact ties common.
    const bool grid = trial % 3 == 0;
    for (auto& v : cb) v = grid ? static_cast<float>(rng.below(3)) : static_cast<float>(rng.normal());
    if (trial % 5 == 0) std::copy_n(cb.begin(), d, cb.end() - d);
    std::vector<float> z(static_cast<std::size_t>(d));
    for (auto& v : z) v = grid ? static_cast<float>(rng.below(3)) * 0.5f : static_cast<float>(rng.normal());
    const auto codebook = rows(k, d, cb);
    ASSERT_EQ(nearest_code(z, codebook), brute_force(z, codebook)) << "trial " << trial;
  }
}

TEST(VqLoss, ZeroAtPerfectReconstructionAndBetaDecomposes) {
  SeededRng rng(3);
  const auto x = testing::random_tensor({2, 3, 4}, rng, -1, 1, DType::f64, false);
  const auto z = testing::random_tensor({2, 5}, rng, -1, 1, DType::f64, false);
  EXPECT_EQ(vq_loss(x, x, z, z, 0.25).total.item(), 0.0);

  const auto x_hat = testing::random_tensor({2, 3, 4}, rng, -1, 1, DType::f64, false);
  const auto e = testing::random_tensor({2, 5}, rng, -1, 1, DType::f64, false);
  const auto none = vq_loss(x, x_hat, z, e, 0.0);
  EXPECT_EQ(none.total.item(), none.reconstruction.item() + none.codebook.item());
  const auto quarter = vq_loss(x, x_hat, z, e, 0.25);
  EXPECT_NEAR(quarter.total.item(), mse(x, x_hat).item() + 1.25 * mean_row_sq_dist(z, e).item(), 1e-12);
}

TEST(StraightThrough, ForwardsTheCodeValue) {
  const auto z = Tensor::from_values({1, 2}, {0.5, -0.5}, DType::f64);
  const auto e = Tensor::from_values({1, 2}, {1.0, 2.0}, DType::f64);
  EXPECT_EQ(straight_through(z, e).to_doubles(), (std::vector<double>{1.0, 2.0}));
}

TEST(Tokenizer, ShapesAndDeterminismUnderDefaults) {
  const DomainMeta meta{"har", 9, 128, 2, Task::multiclass, 6};
  auto tok = Tokenizer::initialize(meta, TokenizerConfig{});
  std::vector<float> patch(18, 0.0f);
  const auto z = tok.encode_patch(patch);
  EXPECT_EQ(z.size(), 64u);
  for (float v : z) EXPECT_TRUE(std::isfinite(v));
  SeededRng rng(1);
  for (auto& v : patch) v = static_cast<float>(rng.normal());
  EXPECT_EQ(tok.encode_patch(patch), tok.encode_patch(patch));
  const auto q = quantize(tok.encode_patch(patch), tok.codebook());
  const auto recon = tok.decode_patch(q.z_q);
  EXPECT_EQ(recon.size(), 18u);
  EXPECT_EQ(recon, tok.decode_patch(q.z_q));
  EXPECT_EQ(tok.dilations(), (std::vector<std::int64_t>{1, 1, 1, 1}));
  EXPECT_THROW(tok.encode_patch(std::vector<float>(17)), Error);
}

TEST(Tokenizer, DilationsDoubleUntilClampedToPatchLength) {
  auto dil = [](std::int64_t p, std::int64_t layers) {
    TokenizerConfig cfg;
    cfg.layers = layers;
    return Tokenizer::initialize({"d", 1, 100, p, Task::multiclass, 2}, cfg).dilations();
  };
  EXPECT_EQ(dil(20, 4), (std::vector<std::int64_t>{1, 2, 4, 8}));
  EXPECT_EQ(dil(4, 4), (std::vector<std::int64_t>{1, 2, 3, 3}));
  EXPECT_EQ(dil(1, 3), (std::vector<std::int64_t>{1, 1, 1}));
}

TEST(Tokenizer, CodebookStartsUniformInInverseSqrtD) {
  auto tok = Tokenizer::initialize({"d", 1, 16, 4, Task::multiclass, 2}, TokenizerConfig{});
  const double bound = 1.0 / std::sqrt(64.0);
  for (float v : tok.codebook().values<float>()) {
    EXPECT_GE(v, -bound);
    EXPECT_LE(v, bound);
  }
}

TEST(Tokenizer, TokenizeYieldsFloorTOverPIdsInRange) {
  const auto corpus = testing::small_corpus(3, 2);
  for (const auto& ds : corpus) {
    const auto tok = Tokenizer::initialize(*ds.meta, TokenizerConfig{});
    for (const auto& inst : ds.test) {
      const auto seq = tok.tokenize(inst);
      EXPECT_EQ(seq.length(), ds.meta->length / ds.meta->patch_size);
      EXPECT_EQ(seq.domain, ds.meta->name);
      for (auto id : seq.ids) {
        EXPECT_GE(id, 0);
        EXPECT_LT(id, 512);
      }
      EXPECT_EQ(seq, tok.tokenize(inst));
    }
  }
  const DomainMeta har{"har", 9, 128, 2, Task::multiclass, 6};
  TimeSeriesInstance inst;
  inst.domain = std::make_shared<const DomainMeta>(har);
  inst.values.assign(9 * 128, 0.0f);
  SeededRng rng(5);
  for (auto& v : inst.values) v = static_cast<float>(rng.normal());
  EXPECT_EQ(Tokenizer::initialize(har, TokenizerConfig{}).tokenize(inst).length(), 64);
}

TEST(Tokenizer, RejectsInstancesOfAnotherShape) {
  const auto corpus = testing::small_corpus(2, 1);
  const auto tok = Tokenizer::initialize(*corpus[0].meta, TokenizerConfig{});
  EXPECT_THROW(tok.tokenize(corpus[1].train[0]), Error);
}

TEST(Tokenizer, DecodedCodesAreFiniteWithDecoderShape) {
  const auto ds = testing::small_corpus(4, 2)[1];
  const auto trained = train_tokenizer(ds, small_config());
  for (const auto& seq : trained.tokenizer.tokenize_all(ds.test)) {
    for (auto id : seq.ids) {
      const auto cb = trained.tokenizer.codebook().values<float>();
      const auto d = static_cast<std::size_t>(trained.tokenizer.latent_dim());
      const auto out = trained.tokenizer.decode_patch(std::span<const float>(cb).subspan(static_cast<std::size_t>(id) * d, d));
      ASSERT_EQ(static_cast<std::int64_t>(out.size()), ds.meta->channels * ds.meta->patch_size);
      for (float v : out) ASSERT_TRUE(std::isfinite(v));
    }
  }
}

TEST(TokenizerTraining, ReducesLossFiniteAndDeterministic) {
  const auto ds = testing::small_corpus(12, 4)[0];
  auto cfg = small_config(5);
  cfg.epochs = 6;
  const auto a = train_tokenizer(ds, cfg);
  const auto b = train_tokenizer(ds, cfg);
  ASSERT_EQ(a.trace.size(), 6u);
  for (const auto& e : a.trace) {
    EXPECT_TRUE(std::isfinite(e.loss));
    EXPECT_TRUE(std::isfinite(e.mse));
    EXPECT_GT(e.coverage, 0.0);
    EXPECT_LE(e.coverage, 1.0);
  }
  EXPECT_LT(a.trace.back().loss, a.trace.front().loss);
  EXPECT_NEAR(a.trace.back().loss, b.trace.back().loss, 1e-6);
  EXPECT_EQ(a.tokenizer.params().fingerprint(), b.tokenizer.params().fingerprint());
}

TEST(TokenizerTraining, ConstantPatchesAreReconstructed) {
  // Every instance permutes the same four levels, so after z-normalization
  // the train set holds exactly four distinct constant patches.
  auto meta = std::make_shared<const DomainMeta>(DomainMeta{"flat", 2, 8, 2, Task::multiclass, 2});
  const float levels[4] = {-2, -1, 1, 2};
  DomainDataset ds{meta, {}, {}};
  SeededRng rng(8);
  for (int i = 0; i < 32; ++i) {
    const auto order = rng.permutation(4);
    TimeSeriesInstance inst;
    inst.domain = meta;
    inst.label.class_index = static_cast<std::uint32_t>(i % 2);
    for (int c = 0; c < 2; ++c)
      for (int t = 0; t < 8; ++t) inst.values.push_back(levels[order[static_cast<std::size_t>(t / 2)]] * (c == 0 ? 1.0f : -1.0f));
    (i < 24 ? ds.train : ds.test).push_back(inst);
  }
  TokenizerConfig cfg;
  cfg.codebook_size = 8;
  cfg.latent_dim = 4;
  cfg.hidden_channels = 16;
  cfg.layers = 1;
  cfg.epochs = 150;
  cfg.lr = 5e-3;
  cfg.batch_size = 16;
  cfg.seed = 2;
  const auto trained = train_tokenizer(ds, cfg);
  const auto m = tokenizer_metrics(trained.tokenizer.tokenize_all(ds.train), trained.tokenizer, ds.train);
  EXPECT_LT(m.mse, 1e-3);
}

TEST(TokenizerTraining, RejectsEmptyDomain) {
  auto meta = std::make_shared<const DomainMeta>(DomainMeta{"e", 1, 8, 2, Task::multiclass, 2});
  EXPECT_THROW(train_tokenizer(DomainDataset{meta, {}, {}}, small_config()), Error);
}

TEST(TokenizerMetrics, CoverageExamplesAndMonotonicity) {
  const DomainMeta meta{"m", 1, 8, 2, Task::multiclass, 2};
  TokenizerConfig cfg;
  cfg.codebook_size = 4;
  const auto four = Tokenizer::initialize(meta, cfg);
  EXPECT_EQ(tokenizer_metrics({TokenSequence{{0, 1, 2, 3}, "m"}}, four, {}).coverage, 1.0);
  const auto big = Tokenizer::initialize(meta, TokenizerConfig{});
  EXPECT_NEAR(tokenizer_metrics({TokenSequence{{0, 0}, "m"}}, big, {}).coverage, 1.0 / 512, 1e-15);
  EXPECT_THROW(tokenizer_metrics({}, big, {}), Error);
  EXPECT_THROW(tokenizer_metrics({TokenSequence{{512}, "m"}}, big, {}), Error);

  const auto ds = testing::small_corpus(10, 2)[0];
  const auto tok = train_tokenizer(ds, small_config()).tokenizer;
  const auto seqs = tok.tokenize_all(ds.train);
  double previous = 0;
  for (std::size_t n = 1; n <= seqs.size(); ++n) {
    const double c = tokenizer_metrics({seqs.begin(), seqs.begin() + static_cast<std::ptrdiff_t>(n)}, tok, {}).coverage;
    EXPECT_GE(c, previous);
    EXPECT_GT(c, 0.0);
    EXPECT_LE(c, 1.0);
    previous = c;
  }
}

TEST(Tokenizer, SaveLoadRoundTrip) {
  TempDir dir("tok");
  const auto ds = testing::small_corpus(6, 3)[2];
  auto trained = train_tokenizer(ds, small_config());
  trained.tokenizer.info().set("note", "x");
  trained.tokenizer.save(dir / "tok.nta");
  const auto back = Tokenizer::load(dir / "tok.nta");
  EXPECT_EQ(back.meta(), *ds.meta);
  EXPECT_EQ(back.params().fingerprint(), trained.tokenizer.params().fingerprint());
  EXPECT_EQ(back.info().get("note"), "x");
  EXPECT_EQ(back.config().codebook_size, 16);
  EXPECT_EQ(back.tokenize_all(ds.test), trained.tokenizer.tokenize_all(ds.test));
  const auto manifest = load_manifest(dir / "tok.nta");
  for (const char* key : {"domain", "K", "d", "P", "C"}) EXPECT_TRUE(manifest.contains(key)) << key;
}

TEST(Sax, HandExamples) {
  auto single = [](std::vector<float> values, std::int64_t p, std::int64_t a) {
    TimeSeriesInstance inst;
    inst.domain = std::make_shared<const DomainMeta>(
        DomainMeta{"s", 1, static_cast<std::int64_t>(values.size()), p, Task::multiclass, 2});
    inst.values = std::move(values);
    return sax_tokenize(inst, p, a).at(0).ids;
  };
  EXPECT_EQ(single({-1, -1, 1, 1}, 2, 4), (std::vector<std::int64_t>{0, 3}));
  EXPECT_EQ(single({0, 0, 0, 0, 0, 0}, 2, 4), (std::vector<std::int64_t>{2, 2, 2}));
  EXPECT_EQ(single({-0.3f, 0.1f, 0.2f, 0.4f, -5, 5}, 1, 2), (std::vector<std::int64_t>{0, 1, 1, 1, 0, 1}));
  const auto bp = sax_breakpoints(4);
  ASSERT_EQ(bp.size(), 3u);
  EXPECT_NEAR(bp[0], -0.6745, 1e-4);
  EXPECT_EQ(bp[1], 0.0);
  EXPECT_NEAR(bp[2], 0.6745, 1e-4);
  EXPECT_THROW(sax_breakpoints(1), Error);
}

TEST(Sax, OneStreamPerChannelAndLocality) {
  const auto ds = testing::small_corpus(2, 1)[0];
  auto inst = ds.train[0];
  const auto base = sax_tokenize(inst, 4, 8);
  ASSERT_EQ(static_cast<std::int64_t>(base.size()), ds.meta->channels);
  for (const auto& s : base) EXPECT_EQ(s.length(), ds.meta->length / 4);
  // Reordering samples within patch 3 of channel 0 keeps its mean.
  std::swap(inst.values[12], inst.values[15]);
  EXPECT_EQ(sax_tokenize(inst, 4, 8)[0].ids, base[0].ids);
  inst.values[12] += 100.0f;
  const auto moved = sax_tokenize(inst, 4, 8)[0].ids;
  for (std::size_t i = 0; i < moved.size(); ++i)
    if (i != 3) {
      EXPECT_EQ(moved[i], base[0].ids[i]);
    }
}

}  // namespace
}  // namespace ctn
