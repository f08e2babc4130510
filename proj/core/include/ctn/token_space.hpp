#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ctn/rng.hpp"

namespace ctn {

class Tokenizer;

struct DomainSlot {
  std::string name;
  std::int64_t offset = 0;
  std::int64_t size = 0;

  bool operator==(const DomainSlot&) const = default;
};

/// Union of per-domain codebooks. Domain n owns global ids
/// [offset_n, offset_n + K_n); three special ids follow the vocabulary.
struct GlobalTokenSpace {
  std::vector<DomainSlot> domains;
  std::int64_t vocab_size = 0;

  std::int64_t mask_id() const noexcept { return vocab_size; }
  std::int64_t cls_id() const noexcept { return vocab_size + 1; }
  std::int64_t pad_id() const noexcept { return vocab_size + 2; }
  /// Vocabulary plus the specials.
  std::int64_t total_size() const noexcept { return vocab_size + 3; }

  /// Throws UnknownDomain.
  const DomainSlot& slot(std::string_view domain) const;
  bool contains(std::string_view domain) const;
  std::int64_t to_global(std::string_view domain, std::int64_t local_id) const;
  std::vector<std::int64_t> to_global(std::string_view domain, std::span<const std::int64_t> local_ids) const;

  bool operator==(const GlobalTokenSpace&) const = default;
};

/// Contiguous disjoint offsets in input order. Throws DuplicateDomain.
GlobalTokenSpace build_token_space(const std::vector<std::pair<std::string, std::int64_t>>& domains);
GlobalTokenSpace build_token_space(const std::vector<const Tokenizer*>& tokenizers);
/// Alternative layout where every domain starts at offset 0 and V is the largest K.
GlobalTokenSpace build_shared_token_space(const std::vector<std::pair<std::string, std::int64_t>>& domains);

/// Injective map from [0, V + 3) into an external vocabulary [0, V_ext).
struct WordMapping {
  std::vector<std::int64_t> targets;
  std::int64_t external_size = 0;
  std::uint64_t seed = 0;

  std::int64_t operator()(std::int64_t id) const;
  bool operator==(const WordMapping&) const = default;
};

/// Seeded sampling without replacement. Throws VocabularyTooSmall when
/// external_size < V + 3.
WordMapping word_map(const GlobalTokenSpace& space, std::int64_t external_size, std::uint64_t seed);

struct MaskPlan {
  std::vector<std::int64_t> positions;  // sorted, distinct
  double ratio = 0;
};

/// max(1, round(r * L)) positions drawn uniformly without replacement; empty for r = 0.
MaskPlan mask_plan(std::int64_t length, double ratio, SeededRng& rng);

/// Replaces the planned positions with `mask_id`.
std::vector<std::int64_t> corrupt(std::span<const std::int64_t> tokens, const MaskPlan& plan, std::int64_t mask_id);

}  // namespace ctn
