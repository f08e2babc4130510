#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "ctn/ops.hpp"
#include "ctn/pretrain.hpp"
#include "test_support.hpp"

namespace ctn {
namespace {

// Arithmetic token progressions: every masked token is recoverable from its
// neighbours, so a small encoder learns them quickly.
std::vector<TokenSequence> progressions(const std::string& domain, std::int64_t k, std::int64_t step, std::int64_t count,
                                        std::int64_t length, std::uint64_t seed) {
  SeededRng rng(seed);
  std::vector<TokenSequence> out;
  for (std::int64_t i = 0; i < count; ++i) {
    TokenSequence s;
    s.domain = domain;
    const auto start = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(k)));
    for (std::int64_t t = 0; t < length; ++t) s.ids.push_back((start + step * t) % k);
    out.push_back(std::move(s));
  }
  return out;
}

struct ToyCorpus {
  GlobalTokenSpace space;
  std::vector<DomainTokens> corpora;
};

ToyCorpus toy_corpus(std::int64_t count = 48) {
  ToyCorpus c;
  c.space = build_token_space(std::vector<std::pair<std::string, std::int64_t>>{{"a", 12}, {"b", 20}});
  c.corpora.push_back({"a", progressions("a", 12, 1, count, 10, 1), progressions("a", 12, 1, 16, 10, 2)});
  c.corpora.push_back({"b", progressions("b", 20, 3, count, 14, 3), progressions("b", 20, 3, 16, 14, 4)});
  return c;
}

PretrainConfig toy_pretrain(std::int64_t epochs) {
  PretrainConfig p;
  p.epochs = epochs;
  p.lr = 2e-3;
  p.batch_size = 16;
  p.seed = 9;
  return p;
}

TEST(Mixing, ParsesAndPrints) {
  EXPECT_EQ(Mixing::parse("agnostic").mode, MixingMode::agnostic);
  const auto seq = Mixing::parse("sequential:motion-waves-beats");
  EXPECT_EQ(seq.mode, MixingMode::sequential);
  EXPECT_EQ(seq.order, (std::vector<std::string>{"motion", "waves", "beats"}));
  EXPECT_EQ(seq.to_string(), "sequential:motion-waves-beats");
  EXPECT_EQ(Mixing::parse("sequential").to_string(), "sequential");
  EXPECT_THROW(Mixing::parse("random"), Error);
  EXPECT_THROW(Mixing::parse("sequential:a--b"), Error);
}

TEST(Schedule, SequentialConsumesDomainsInOrder) {
  const auto c = toy_corpus(40);
  SeededRng rng(1);
  const auto batches = pretrain_schedule(c.corpora, Mixing::parse("sequential:b-a"), 16, rng);
  std::vector<std::size_t> domains;
  std::set<std::pair<std::size_t, std::size_t>> seen;
  for (const auto& b : batches) {
    EXPECT_FALSE(b.domain.empty());
    for (const auto& item : b.items) {
      EXPECT_EQ(c.corpora[item.first].domain, b.domain);
      domains.push_back(item.first);
      EXPECT_TRUE(seen.insert(item).second);
    }
  }
  EXPECT_EQ(seen.size(), 80u);
  const auto first_a = std::find(domains.begin(), domains.end(), 0u);
  EXPECT_TRUE(std::all_of(domains.begin(), first_a, [](auto d) { return d == 1u; }));
  EXPECT_TRUE(std::all_of(first_a, domains.end(), [](auto d) { return d == 0u; }));
  EXPECT_THROW(pretrain_schedule(c.corpora, Mixing::parse("sequential:a-zzz"), 16, rng), Error);
}

TEST(Schedule, AgnosticCoversEverySequenceOnceAndMixes) {
  const auto c = toy_corpus(40);
  SeededRng rng(2);
  const auto batches = pretrain_schedule(c.corpora, Mixing{}, 16, rng);
  std::set<std::pair<std::size_t, std::size_t>> seen;
  bool mixed = false;
  for (const auto& b : batches) {
    EXPECT_LE(b.items.size(), 16u);
    std::set<std::size_t> doms;
    for (const auto& item : b.items) {
      EXPECT_TRUE(seen.insert(item).second);
      doms.insert(item.first);
    }
    mixed |= doms.size() > 1;
  }
  EXPECT_EQ(seen.size(), 80u);
  EXPECT_TRUE(mixed);
}

TEST(MtpLoss, ReferenceValues) {
  const std::int64_t v = 1536;
  const auto uniform = Tensor::zeros({3, v}, DType::f64);
  const std::vector<std::int64_t> targets{0, 700, 1535};
  EXPECT_NEAR(mtp_loss(uniform, targets).item(), std::log(1536.0), 1e-12);
  EXPECT_NEAR(std::log(1536.0), 7.337, 1e-3);

  std::vector<double> sat(2 * 4, 0.0);
  sat[1] = 80;
  sat[4 + 3] = 80;
  EXPECT_NEAR(mtp_loss(Tensor::from_vector({2, 4}, sat), std::vector<std::int64_t>{1, 3}).item(), 0.0, 1e-12);

  const auto one = Tensor::from_values({1, 3}, {0.2, -1.0, 0.7}, DType::f64);
  const std::int64_t t[] = {2};
  EXPECT_DOUBLE_EQ(mtp_loss(one, t).item(), softmax_cross_entropy(one, t).item());
  try {
    mtp_loss(Tensor::zeros({1, 4}, DType::f64), {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyMask);
  }
}

TEST(Pretrain, InitialLossIsNearLogV) {
  const auto corpus = testing::small_corpus(8, 4);
  const auto space = build_token_space(std::vector<std::pair<std::string, std::int64_t>>{{"motion", 512}, {"waves", 512}, {"beats", 512}});
  std::vector<DomainTokens> corpora;
  SeededRng rng(4);
  for (const auto& slot : space.domains) {
    DomainTokens d{slot.name, {}, {}};
    for (int i = 0; i < 16; ++i) {
      TokenSequence s{{}, slot.name};
      for (int t = 0; t < 30; ++t) s.ids.push_back(static_cast<std::int64_t>(rng.below(512)));
      d.train.push_back(s);
    }
    corpora.push_back(d);
  }
  PretrainConfig cfg;
  cfg.seed = 3;
  const auto model = initialize_encoder(space, corpora, EncoderConfig{}, cfg);
  std::vector<std::vector<std::int64_t>> seqs;
  for (const auto& d : corpora)
    for (const auto& s : d.train) seqs.push_back(space.to_global(d.domain, s.ids));
  const auto eval = evaluate_mtp(model, seqs, 0.45, 1);
  EXPECT_NEAR(eval.loss / std::log(1536.0), 1.0, 0.05);
  EXPECT_EQ(eval.masked, 48 * 14);
  const auto again = evaluate_mtp(model, seqs, 0.45, 1);
  EXPECT_EQ(eval.loss, again.loss);
}

TEST(Pretrain, LearnsProgressionsAndIsDeterministic) {
  const auto c = toy_corpus();
  const auto cfg = testing::tiny_encoder_config();
  std::vector<PretrainEpoch> seen;
  const auto a = run_pretraining(c.space, c.corpora, cfg, toy_pretrain(30), [&](const PretrainEpoch& e) { seen.push_back(e); });
  ASSERT_EQ(a.trace.size(), 31u);
  ASSERT_EQ(seen.size(), 31u);
  EXPECT_EQ(a.trace.front().epoch, 0);
  EXPECT_TRUE(std::isnan(a.trace.front().train_loss));
  for (std::size_t i = 1; i < a.trace.size(); ++i) {
    EXPECT_EQ(a.trace[i].epoch, static_cast<std::int64_t>(i));
    EXPECT_TRUE(std::isfinite(a.trace[i].train_loss));
  }
  EXPECT_LT(a.trace.back().eval_loss, a.trace.front().eval_loss);
  EXPECT_GT(a.trace.back().masked_acc, 3.0 / static_cast<double>(c.space.vocab_size));
  EXPECT_EQ(a.checkpoint.info.get("pretrain.mixing"), "agnostic");

  const auto b = run_pretraining(c.space, c.corpora, cfg, toy_pretrain(30));
  EXPECT_EQ(a.checkpoint.params.fingerprint(), b.checkpoint.params.fingerprint());
  EXPECT_EQ(a.trace.back().eval_loss, b.trace.back().eval_loss);
}

TEST(Pretrain, TrainedEncoderMixesPositionsInBothDirections) {
  const auto c = toy_corpus();
  const auto trained = run_pretraining(c.space, c.corpora, testing::tiny_encoder_config(), toy_pretrain(4)).checkpoint;
  const std::vector<std::int64_t> base{3, 4, 5, 6, 7, 8};
  const auto reference = encoder_forward(trained, {base}).hidden.to_doubles();
  const auto d = static_cast<std::size_t>(trained.config.d_model);
  auto changed_at = [&](std::size_t flip, std::size_t pos) {
    auto probe = base;
    probe[flip] = 11;
    const auto out = encoder_forward(trained, {probe}).hidden.to_doubles();
    double diff = 0;
    for (std::size_t j = 0; j < d; ++j) diff = std::max(diff, std::abs(out[(pos + 1) * d + j] - reference[(pos + 1) * d + j]));
    return diff;
  };
  EXPECT_GT(changed_at(5, 0), 1e-4);  // later token reaches an earlier position
  EXPECT_GT(changed_at(0, 5), 1e-4);  // and the other way round
}

TEST(Pretrain, SequentialMixingAndWarmStart) {
  const auto c = toy_corpus(24);
  auto cfg = toy_pretrain(1);
  cfg.mixing = Mixing::parse("sequential:b-a");
  const auto seq = run_pretraining(c.space, c.corpora, testing::tiny_encoder_config(), cfg);
  EXPECT_EQ(seq.checkpoint.info.get("pretrain.mixing"), "sequential:b-a");
  cfg.mixing = Mixing{};
  const auto warm = run_pretraining(c.space, c.corpora, testing::tiny_encoder_config(), cfg, {}, &seq.checkpoint);
  EXPECT_EQ(warm.trace.front().eval_loss, seq.trace.back().eval_loss);
}

TEST(Pretrain, RejectsBadSettings) {
  const auto c = toy_corpus(8);
  auto cfg = toy_pretrain(1);
  cfg.mask_ratio = 1.2;
  EXPECT_THROW(run_pretraining(c.space, c.corpora, testing::tiny_encoder_config(), cfg), Error);
  cfg.mask_ratio = -0.1;
  EXPECT_THROW(run_pretraining(c.space, c.corpora, testing::tiny_encoder_config(), cfg), Error);
  cfg = toy_pretrain(1);
  auto corpora = c.corpora;
  corpora[0].domain = "zzz";
  EXPECT_THROW(run_pretraining(c.space, corpora, testing::tiny_encoder_config(), cfg), Error);
  cfg.external_vocab = 5;
  EXPECT_THROW(run_pretraining(c.space, c.corpora, testing::tiny_encoder_config(), cfg), Error);
}

TEST(Pretrain, ExternalVocabularyWidensTheWordTable) {
  const auto c = toy_corpus(8);
  auto cfg = toy_pretrain(0);
  cfg.external_vocab = 500;
  const auto model = initialize_encoder(c.space, c.corpora, testing::tiny_encoder_config(), cfg);
  EXPECT_EQ(model.words.external_size, 500);
  EXPECT_EQ(model.params.get("embeddings.word").dim(0), 500);
}

}  // namespace
}  // namespace ctn
