#include "ctn/token_space.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "ctn/error.hpp"
#include "ctn/tokenizer.hpp"

namespace ctn {

const DomainSlot& GlobalTokenSpace::slot(std::string_view domain) const {
  for (const auto& s : domains)
    if (s.name == domain) return s;
  fail(ErrorCode::UnknownDomain, "token space has no domain '" + std::string(domain) + "'");
}

bool GlobalTokenSpace::contains(std::string_view domain) const {
  return std::any_of(domains.begin(), domains.end(), [&](const DomainSlot& s) { return s.name == domain; });
}

std::int64_t GlobalTokenSpace::to_global(std::string_view domain, std::int64_t local_id) const {
  const auto& s = slot(domain);
  require(local_id >= 0 && local_id < s.size, ErrorCode::IndexOutOfRange,
          "token " + std::to_string(local_id) + " outside domain '" + s.name + "' codebook of " + std::to_string(s.size));
  return s.offset + local_id;
}

std::vector<std::int64_t> GlobalTokenSpace::to_global(std::string_view domain, std::span<const std::int64_t> local_ids) const {
  std::vector<std::int64_t> out;
  out.reserve(local_ids.size());
  for (auto id : local_ids) out.push_back(to_global(domain, id));
  return out;
}

namespace {

void check_domains(const std::vector<std::pair<std::string, std::int64_t>>& domains) {
  require(!domains.empty(), ErrorCode::EmptyInput, "token space needs at least one domain");
  std::set<std::string> seen;
  for (const auto& [name, k] : domains) {
    require(seen.insert(name).second, ErrorCode::DuplicateDomain, "domain '" + name + "' appears twice");
    require(k >= 1, ErrorCode::InvalidArgument, "domain '" + name + "' has an empty codebook");
  }
}

}  // namespace

GlobalTokenSpace build_token_space(const std::vector<std::pair<std::string, std::int64_t>>& domains) {
  check_domains(domains);
  GlobalTokenSpace space;
  for (const auto& [name, k] : domains) {
    space.domains.push_back({name, space.vocab_size, k});
    space.vocab_size += k;
  }
  return space;
}

GlobalTokenSpace build_token_space(const std::vector<const Tokenizer*>& tokenizers) {
  std::vector<std::pair<std::string, std::int64_t>> domains;
  for (const auto* t : tokenizers) domains.emplace_back(t->meta().name, t->codebook_size());
  return build_token_space(domains);
}

GlobalTokenSpace build_shared_token_space(const std::vector<std::pair<std::string, std::int64_t>>& domains) {
  check_domains(domains);
  GlobalTokenSpace space;
  for (const auto& [name, k] : domains) {
    space.domains.push_back({name, 0, k});
    space.vocab_size = std::max(space.vocab_size, k);
  }
  return space;
}

std::int64_t WordMapping::operator()(std::int64_t id) const {
  require(id >= 0 && id < static_cast<std::int64_t>(targets.size()), ErrorCode::IndexOutOfRange,
          "token id " + std::to_string(id) + " outside the word mapping");
  return targets[static_cast<std::size_t>(id)];
}

WordMapping word_map(const GlobalTokenSpace& space, std::int64_t external_size, std::uint64_t seed) {
  require(external_size >= space.total_size(), ErrorCode::VocabularyTooSmall,
          "external vocabulary of " + std::to_string(external_size) + " cannot hold " + std::to_string(space.total_size()) +
              " distinct tokens");
  SeededRng rng = SeededRng(seed).fork("word_map");
  auto perm = rng.permutation(external_size);
  perm.resize(static_cast<std::size_t>(space.total_size()));
  return WordMapping{std::move(perm), external_size, seed};
}

MaskPlan mask_plan(std::int64_t length, double ratio, SeededRng& rng) {
  require(length >= 1, ErrorCode::InvalidArgument, "cannot mask an empty sequence");
  require(ratio >= 0 && ratio <= 1, ErrorCode::InvalidArgument, "mask ratio must lie in [0, 1]");
  MaskPlan plan;
  plan.ratio = ratio;
  if (ratio == 0) return plan;
  const auto count = std::max<std::int64_t>(1, std::llround(ratio * static_cast<double>(length)));
  // Partial Fisher-Yates: the first `count` slots form a uniform sample.
  std::vector<std::int64_t> idx(static_cast<std::size_t>(length));
  for (std::int64_t i = 0; i < length; ++i) idx[i] = i;
  for (std::int64_t i = 0; i < count; ++i) {
    const auto j = i + static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(length - i)));
    std::swap(idx[i], idx[j]);
  }
  plan.positions.assign(idx.begin(), idx.begin() + count);
  std::sort(plan.positions.begin(), plan.positions.end());
  return plan;
}

std::vector<std::int64_t> corrupt(std::span<const std::int64_t> tokens, const MaskPlan& plan, std::int64_t mask_id) {
  std::vector<std::int64_t> out(tokens.begin(), tokens.end());
  for (auto p : plan.positions) {
    require(p >= 0 && p < static_cast<std::int64_t>(out.size()), ErrorCode::IndexOutOfRange,
            "mask position " + std::to_string(p) + " outside a sequence of length " + std::to_string(out.size()));
    out[static_cast<std::size_t>(p)] = mask_id;
  }
  return out;
}

}  // namespace ctn
