#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "ctn/token_space.hpp"
#include "ctn/tokenizer.hpp"

namespace ctn {
namespace {

TEST(TokenSpace, ThreeDomainsGetDisjointContiguousRanges) {
  const auto space = build_token_space(std::vector<std::pair<std::string, std::int64_t>>{{"a", 512}, {"b", 512}, {"c", 512}});
  EXPECT_EQ(space.vocab_size, 1536);
  EXPECT_EQ(space.slot("a").offset, 0);
  EXPECT_EQ(space.slot("b").offset, 512);
  EXPECT_EQ(space.slot("c").offset, 1024);
  EXPECT_EQ(space.mask_id(), 1536);
  EXPECT_EQ(space.cls_id(), 1537);
  EXPECT_EQ(space.pad_id(), 1538);
  EXPECT_EQ(space.total_size(), 1539);
  EXPECT_EQ(space.to_global("b", 7), 519);
  EXPECT_THROW(space.to_global("b", 512), Error);
  EXPECT_THROW(space.slot("zzz"), Error);
}

TEST(TokenSpace, SingleDomainIsIdentityAndUnevenSizesStayContiguous) {
  const auto one = build_token_space(std::vector<std::pair<std::string, std::int64_t>>{{"only", 64}});
  for (std::int64_t i = 0; i < 64; ++i) EXPECT_EQ(one.to_global("only", i), i);
  const auto mixed = build_token_space(std::vector<std::pair<std::string, std::int64_t>>{{"x", 3}, {"y", 10}, {"z", 1}});
  EXPECT_EQ(mixed.slot("y").offset, 3);
  EXPECT_EQ(mixed.slot("z").offset, 13);
  EXPECT_EQ(mixed.vocab_size, 14);
}

TEST(TokenSpace, DuplicateDomainsAreRejected) {
  try {
    build_token_space(std::vector<std::pair<std::string, std::int64_t>>{{"a", 4}, {"a", 4}});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DuplicateDomain);
  }
}

TEST(TokenSpace, BuildsFromTokenizersInOrder) {
  TokenizerConfig small;
  small.codebook_size = 8;
  const auto a = Tokenizer::initialize({"first", 1, 8, 2, Task::multiclass, 2}, small);
  small.codebook_size = 5;
  const auto b = Tokenizer::initialize({"second", 2, 8, 4, Task::multiclass, 2}, small);
  const auto space = build_token_space(std::vector<const Tokenizer*>{&a, &b});
  EXPECT_EQ(space.domains[0].name, "first");
  EXPECT_EQ(space.slot("second").offset, 8);
  EXPECT_EQ(space.vocab_size, 13);
}

TEST(TokenSpace, SharedLayoutStartsEveryDomainAtZero) {
  const auto space = build_shared_token_space(std::vector<std::pair<std::string, std::int64_t>>{{"a", 4}, {"b", 9}});
  EXPECT_EQ(space.vocab_size, 9);
  EXPECT_EQ(space.to_global("a", 3), 3);
  EXPECT_EQ(space.to_global("b", 3), 3);
}

TEST(WordMapping, InjectiveDeterministicAndSized) {
  const auto space = build_token_space(std::vector<std::pair<std::string, std::int64_t>>{{"a", 20}, {"b", 30}});
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    const auto m = word_map(space, 200, seed);
    ASSERT_EQ(static_cast<std::int64_t>(m.targets.size()), space.total_size());
    const std::set<std::int64_t> image(m.targets.begin(), m.targets.end());
    EXPECT_EQ(static_cast<std::int64_t>(image.size()), space.total_size());
    for (auto t : image) {
      EXPECT_GE(t, 0);
      EXPECT_LT(t, 200);
    }
    EXPECT_EQ(m, word_map(space, 200, seed));
  }
  EXPECT_NE(word_map(space, 200, 1).targets, word_map(space, 200, 2).targets);
  const auto exact = word_map(space, space.total_size(), 4);
  auto sorted = exact.targets;
  std::sort(sorted.begin(), sorted.end());
  for (std::int64_t i = 0; i < space.total_size(); ++i) EXPECT_EQ(sorted[static_cast<std::size_t>(i)], i);
  try {
    word_map(space, space.total_size() - 1, 4);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::VocabularyTooSmall);
  }
}

TEST(Masking, CountsFollowRoundedRatio) {
  SeededRng rng(1);
  EXPECT_EQ(mask_plan(20, 0.45, rng).positions.size(), 9u);
  EXPECT_EQ(mask_plan(100, 0.15, rng).positions.size(), 15u);
  EXPECT_TRUE(mask_plan(100, 0.0, rng).positions.empty());
  EXPECT_EQ(mask_plan(3, 0.01, rng).positions.size(), 1u);
  EXPECT_EQ(mask_plan(7, 1.0, rng).positions.size(), 7u);
  EXPECT_THROW(mask_plan(0, 0.5, rng), Error);
  EXPECT_THROW(mask_plan(10, 1.5, rng), Error);
  EXPECT_THROW(mask_plan(10, -0.1, rng), Error);
}

TEST(Masking, PlanStatisticsAtSixtyFourTokens) {
  SeededRng rng(2024);
  std::vector<int> hits(64, 0);
  const int plans = 10000;
  for (int i = 0; i < plans; ++i) {
    const auto plan = mask_plan(64, 0.45, rng);
    ASSERT_EQ(plan.positions.size(), 29u);
    ASSERT_TRUE(std::is_sorted(plan.positions.begin(), plan.positions.end()));
    ASSERT_EQ(std::adjacent_find(plan.positions.begin(), plan.positions.end()), plan.positions.end());
    for (auto p : plan.positions) ++hits[static_cast<std::size_t>(p)];
  }
  const double p = 29.0 / 64.0;
  const double sigma = std::sqrt(plans * p * (1 - p));
  for (int pos = 0; pos < 64; ++pos) EXPECT_LE(std::abs(hits[static_cast<std::size_t>(pos)] - plans * p), 3 * sigma) << pos;
}

TEST(Corrupt, OnlyPlannedPositionsChange) {
  SeededRng rng(5);
  const std::vector<std::int64_t> tokens{4, 8, 15, 16, 23, 42, 7, 9};
  EXPECT_EQ(corrupt(tokens, mask_plan(8, 0.0, rng), 99), tokens);
  const auto all = corrupt(tokens, mask_plan(8, 1.0, rng), 99);
  EXPECT_TRUE(std::all_of(all.begin(), all.end(), [](auto t) { return t == 99; }));
  for (int trial = 0; trial < 100; ++trial) {
    const auto plan = mask_plan(8, 0.45, rng);
    const auto out = corrupt(tokens, plan, 99);
    std::size_t changed = 0;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      const bool masked = std::binary_search(plan.positions.begin(), plan.positions.end(), static_cast<std::int64_t>(i));
      EXPECT_EQ(out[i], masked ? 99 : tokens[i]);
      changed += out[i] != tokens[i];
    }
    EXPECT_EQ(changed, plan.positions.size());
  }
  MaskPlan bad{{8}, 0.1};
  EXPECT_THROW(corrupt(tokens, bad, 99), Error);
}

}  // namespace
}  // namespace ctn
