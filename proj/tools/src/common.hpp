#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ctn/data.hpp"
#include "ctn/error.hpp"
#include "ctn/tokenizer.hpp"

namespace ctn::cli {

/// Shortest text that parses back to the same value.
template <class T>
std::string format_number(T value) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

/// Fails with HeaderInconsistent unless the tokenizer was trained for data shaped like `meta`.
inline void check_compatible(const Tokenizer& tokenizer, const DomainMeta& meta) {
  const auto& tm = tokenizer.meta();
  require(tm.name == meta.name, ErrorCode::UnknownDomain,
          "tokenizer is for domain '" + tm.name + "' but the dataset is '" + meta.name + "'");
  require(tm.channels == meta.channels && tm.length == meta.length && tm.task == meta.task &&
              tm.num_classes == meta.num_classes,
          ErrorCode::HeaderInconsistent, "tokenizer and dataset '" + meta.name + "' disagree on shape or labels");
}

inline const std::vector<TimeSeriesInstance>& split_of(const DomainDataset& dataset, const std::string& split) {
  if (split == "train") return dataset.train;
  if (split == "test") return dataset.test;
  fail(ErrorCode::InvalidArgument, "split must be train or test, got '" + split + "'");
}

/// CSV with header split,instance,t0..t{L-1}.
void write_token_csv(const std::vector<TokenSequence>& sequences, const std::string& split,
                     const std::filesystem::path& path);

}  // namespace ctn::cli
