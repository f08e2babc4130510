#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "ctn/parameters.hpp"
#include "ctn/tensor.hpp"

namespace ctn {

/// Ordered `key=value` text, one entry per line. Used for domain.meta files
/// and for the manifests that accompany tensor archives.
class Manifest {
 public:
  void set(const std::string& key, std::string value);
  void set_int(const std::string& key, std::int64_t value);
  /// Stored with 17 significant digits so it survives a round trip exactly.
  void set_double(const std::string& key, double value);

  bool contains(std::string_view key) const;
  /// Throws ParseError naming the key when absent.
  const std::string& get(std::string_view key) const;
  std::int64_t get_int(std::string_view key) const;
  double get_double(std::string_view key) const;

  const std::vector<std::pair<std::string, std::string>>& entries() const noexcept { return entries_; }
  std::string serialize() const;
  static Manifest parse(std::string_view text, const std::string& source);

  bool operator==(const Manifest&) const = default;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

/// In-memory named-tensor archive: ordered (name, f32 tensor) records.
struct NamedTensors {
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(std::string_view name) const;
};

NamedTensors to_named_tensors(const ParameterSet& params);

/// Serializes the NTA1 binary layout (tensors converted to f32).
std::string encode_nta(const NamedTensors& archive);
NamedTensors decode_nta(std::string_view bytes, const std::string& source);

/// Sidecar manifest path: same basename, ".manifest" extension.
std::filesystem::path manifest_path(const std::filesystem::path& archive_path);

/// Atomically writes the archive and its manifest.
void save_archive(const std::filesystem::path& path, const NamedTensors& archive, const Manifest& manifest);
NamedTensors load_nta(const std::filesystem::path& path);
Manifest load_manifest(const std::filesystem::path& archive_path);

}  // namespace ctn
