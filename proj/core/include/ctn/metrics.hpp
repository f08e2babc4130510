#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>

namespace ctn {

/// One line of the metrics stream. Absent values serialize as null, so every
/// line carries the same keys.
struct MetricsRecord {
  std::string run_id;
  std::string stage;
  std::int64_t epoch = 0;
  std::string split;
  std::optional<double> loss;
  std::optional<double> accuracy;
  std::optional<double> macro_f1;
  std::optional<double> coverage;
  std::optional<double> mse;
  std::optional<double> masked_acc;
  double wall_seconds = 0;

  bool operator==(const MetricsRecord&) const = default;
};

/// Single-line JSON object, newline-terminated. Non-finite values become null.
std::string to_json_line(const MetricsRecord& record);
MetricsRecord parse_metrics_line(std::string_view line);

/// Appends the line and flushes; throws Io when the stream fails.
void emit_metrics(const MetricsRecord& record, std::ostream& out);

/// Appends records to a JSONL file, flushing after each line.
class MetricsWriter {
 public:
  MetricsWriter() = default;
  explicit MetricsWriter(const std::filesystem::path& path, bool truncate = true);

  bool is_open() const { return out_.is_open(); }
  void emit(const MetricsRecord& record);

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

}  // namespace ctn
