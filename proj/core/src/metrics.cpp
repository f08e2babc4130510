#include "ctn/metrics.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "ctn/error.hpp"

namespace ctn {

namespace {

constexpr const char* kNumericKeys[] = {"loss", "accuracy", "macro_f1", "coverage", "mse", "masked_acc"};

std::optional<double>* field(MetricsRecord& r, std::string_view key) {
  if (key == "loss") return &r.loss;
  if (key == "accuracy") return &r.accuracy;
  if (key == "macro_f1") return &r.macro_f1;
  if (key == "coverage") return &r.coverage;
  if (key == "mse") return &r.mse;
  if (key == "masked_acc") return &r.masked_acc;
  return nullptr;
}

}  // namespace

std::string to_json_line(const MetricsRecord& record) {
  nlohmann::ordered_json j;
  j["run_id"] = record.run_id;
  j["stage"] = record.stage;
  j["epoch"] = record.epoch;
  j["split"] = record.split;
  MetricsRecord copy = record;
  for (const char* key : kNumericKeys) {
    const auto& v = *field(copy, key);
    if (v && std::isfinite(*v))
      j[key] = *v;
    else
      j[key] = nullptr;
  }
  j["wall_seconds"] = record.wall_seconds;
  return j.dump() + "\n";
}

MetricsRecord parse_metrics_line(std::string_view line) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, std::string("metrics line is not JSON: ") + e.what());
  }
  MetricsRecord r;
  try {
    r.run_id = j.at("run_id").get<std::string>();
    r.stage = j.at("stage").get<std::string>();
    r.epoch = j.at("epoch").get<std::int64_t>();
    r.split = j.at("split").get<std::string>();
    for (const char* key : kNumericKeys) {
      const auto& v = j.at(key);
      if (!v.is_null()) *field(r, key) = v.get<double>();
    }
    r.wall_seconds = j.at("wall_seconds").get<double>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, std::string("metrics line lacks a field: ") + e.what());
  }
  return r;
}

void emit_metrics(const MetricsRecord& record, std::ostream& out) {
  require(record.wall_seconds >= 0, ErrorCode::InvalidArgument, "wall_seconds must be non-negative");
  out << to_json_line(record);
  out.flush();
  require(static_cast<bool>(out), ErrorCode::Io, "failed to write metrics line");
}

MetricsWriter::MetricsWriter(const std::filesystem::path& path, bool truncate)
    : path_(path), out_(path, truncate ? std::ios::trunc : std::ios::app) {
  require(out_.is_open(), ErrorCode::Io, "cannot open metrics file " + path.string());
}

void MetricsWriter::emit(const MetricsRecord& record) {
  require(out_.is_open(), ErrorCode::Io, "metrics writer is not open");
  try {
    emit_metrics(record, out_);
  } catch (const Error& e) {
    fail(ErrorCode::Io, path_.string() + ": " + e.what());
  }
}

}  // namespace ctn
