#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "ctn/downstream.hpp"
#include "ctn/encoder.hpp"
#include "ctn/pretrain.hpp"
#include "ctn/tokenizer.hpp"

namespace ctn::cli {

struct DataSettings {
  std::uint64_t seed = 7;
  std::int64_t train_count = 200;
  std::int64_t test_count = 120;
};

/// Settings for one experiment, read from an INI file with sections
/// [data], [tokenizer], [pretrain] and [finetune]. Keys mirror the fields
/// of the module configs; encoder shape keys live under [pretrain].
struct ExperimentConfig {
  DataSettings data;
  TokenizerConfig tokenizer;
  PretrainConfig pretrain;
  EncoderConfig encoder;
  FinetuneConfig finetune;

  /// Throws UnknownKey for keys or sections it does not recognize and
  /// ParseError for malformed values.
  static ExperimentConfig parse(std::string_view text, const std::string& source = "<config>");
  static ExperimentConfig load(const std::filesystem::path& path);

  /// Canonical INI text with every key spelled out. parse(to_ini()) == *this.
  std::string to_ini() const;
  bool operator==(const ExperimentConfig&) const;
};

}  // namespace ctn::cli
