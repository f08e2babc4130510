#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace ctn {

enum class Task : std::uint8_t { multiclass = 0, multilabel = 1 };

std::string_view to_string(Task task);
/// Accepts "multiclass" / "multilabel"; throws InvalidArgument otherwise.
Task parse_task(std::string_view text);

/// Shape and labelling of one domain.
struct DomainMeta {
  std::string name;
  std::int64_t channels = 1;
  std::int64_t length = 1;
  std::int64_t patch_size = 1;
  Task task = Task::multiclass;
  std::int64_t num_classes = 2;

  /// Number of whole patches per instance.
  std::int64_t num_patches() const { return length / patch_size; }
  void validate() const;
  bool operator==(const DomainMeta&) const = default;
};

struct Label {
  std::uint32_t class_index = 0;     // multiclass
  std::vector<std::uint8_t> bits;    // multilabel, one 0/1 entry per class

  bool operator==(const Label&) const = default;
};

struct TimeSeriesInstance {
  std::vector<float> values;  // channels x length, channel-major
  Label label;
  std::shared_ptr<const DomainMeta> domain;

  float at(std::int64_t channel, std::int64_t t) const {
    return values[static_cast<std::size_t>(channel * domain->length + t)];
  }
};

struct DomainDataset {
  std::shared_ptr<const DomainMeta> meta;
  std::vector<TimeSeriesInstance> train;
  std::vector<TimeSeriesInstance> test;
};

/// L = floor(T / P) contiguous windows, each stored channel-major (C x P).
struct PatchSequence {
  std::int64_t channels = 0;
  std::int64_t patch_size = 0;
  std::vector<std::vector<float>> patches;
  const TimeSeriesInstance* source = nullptr;
};

/// Contents of one TSB file.
struct TsbSplit {
  std::int64_t channels = 0;
  std::int64_t length = 0;
  Task task = Task::multiclass;
  std::int64_t num_classes = 0;
  std::vector<TimeSeriesInstance> instances;
};

// ---- formats -------------------------------------------------------------

void save_tsb(const std::filesystem::path& path, const std::vector<TimeSeriesInstance>& instances, const DomainMeta& meta);
/// When `meta` is given the header must agree with it (HeaderInconsistent
/// otherwise) and instances point at it; else a nameless meta is synthesized
/// from the header.
TsbSplit load_tsb(const std::filesystem::path& path, std::shared_ptr<const DomainMeta> meta = nullptr);

void write_meta(const std::filesystem::path& path, const DomainMeta& meta);
DomainMeta read_meta(const std::filesystem::path& path);

/// Directory layout: domain.meta, train.tsb, test.tsb.
void save_domain(const std::filesystem::path& dir, const DomainDataset& dataset);
DomainDataset load_domain(const std::filesystem::path& dir);

/// Rows are label field(s) followed by C*T values in channel-major order.
std::vector<TimeSeriesInstance> import_csv(const std::filesystem::path& path, std::shared_ptr<const DomainMeta> meta,
                                           bool has_header = false);

// ---- preprocessing ---------------------------------------------------------

/// Per channel: (x - mean) / (population std + 1e-8).
TimeSeriesInstance znormalize(const TimeSeriesInstance& instance);
/// Throws InvalidArgument when P < 1 or P > T. Trailing T mod P samples are dropped.
PatchSequence patchify(const TimeSeriesInstance& instance, std::int64_t patch_size);

/// Deterministic stratified subsample keeping round(fraction * n_class)
/// (at least one) instances of every class, in original order. Multilabel
/// data is stratified by its full label vector.
std::vector<TimeSeriesInstance> stratified_subsample(const std::vector<TimeSeriesInstance>& instances, double fraction,
                                                     std::uint64_t seed);
/// Indices kept by the same rule, sorted.
std::vector<std::size_t> stratified_indices(const std::vector<Label>& labels, double fraction, std::uint64_t seed);

}  // namespace ctn
