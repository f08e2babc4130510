#include <algorithm>
#include <atomic>
#include <fstream>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "common.hpp"
#include "pipeline.hpp"

namespace ctn::cli {
namespace {

std::int64_t parse_int_value(const std::string& value, const std::string& axis) {
  std::int64_t v = 0;
  const char* end = value.data() + value.size();
  auto res = std::from_chars(value.data(), end, v);
  require(res.ec == std::errc() && res.ptr == end && v > 0, ErrorCode::InvalidArgument,
          axis + " values must be positive integers, got '" + value + "'");
  return v;
}

double parse_double_value(const std::string& value, const std::string& axis) {
  double v = 0;
  const char* end = value.data() + value.size();
  auto res = std::from_chars(value.data(), end, v);
  require(res.ec == std::errc() && res.ptr == end, ErrorCode::InvalidArgument,
          axis + " values must be numbers, got '" + value + "'");
  return v;
}

nlohmann::ordered_json config_json(const ExperimentConfig& config) {
  nlohmann::ordered_json out = nlohmann::ordered_json::object();
  std::istringstream in(config.to_ini());
  std::string line, section;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line.front() == '[') {
      section = line.substr(1, line.size() - 2);
      out[section] = nlohmann::ordered_json::object();
      continue;
    }
    const auto eq = line.find(" = ");
    out[section][line.substr(0, eq)] = line.substr(eq + 3);
  }
  return out;
}

std::string csv_field(const std::string& text) {
  if (text.find_first_of(",\"\n") == std::string::npos) return text;
  std::string out = "\"";
  for (char c : text) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

}  // namespace

std::string_view to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::mask_ratio: return "mask_ratio";
    case SweepAxis::codebook_size: return "codebook_size";
    case SweepAxis::patch_size: return "patch_size";
    case SweepAxis::mixing: return "mixing";
  }
  return "?";
}

SweepAxis parse_sweep_axis(std::string_view text) {
  for (auto axis : {SweepAxis::mask_ratio, SweepAxis::codebook_size, SweepAxis::patch_size, SweepAxis::mixing})
    if (to_string(axis) == text) return axis;
  fail(ErrorCode::InvalidArgument,
       "unknown sweep axis '" + std::string(text) + "' (expected mask_ratio, codebook_size, patch_size or mixing)");
}

ExperimentConfig apply_axis(const ExperimentConfig& base, SweepAxis axis, const std::string& value) {
  ExperimentConfig c = base;
  const std::string name(to_string(axis));
  switch (axis) {
    case SweepAxis::mask_ratio: {
      const double r = parse_double_value(value, name);
      require(r > 0 && r < 1, ErrorCode::InvalidArgument, "mask_ratio must lie in (0, 1), got " + value);
      c.pretrain.mask_ratio = r;
      break;
    }
    case SweepAxis::codebook_size: c.tokenizer.codebook_size = parse_int_value(value, name); break;
    case SweepAxis::patch_size: c.tokenizer.patch_size = parse_int_value(value, name); break;
    case SweepAxis::mixing: c.pretrain.mixing = Mixing::parse(value); break;
  }
  return c;
}

SweepTable run_sweep(const SweepOptions& options) {
  require(!options.values.empty(), ErrorCode::InvalidArgument, "sweep needs at least one value");
  const std::size_t n = options.values.size();

  std::vector<ExperimentConfig> configs;
  for (const auto& v : options.values) configs.push_back(apply_axis(options.base, options.axis, v));

  std::filesystem::create_directories(options.out_dir);
  std::vector<ExperimentOutcome> outcomes(n);
  std::vector<std::exception_ptr> errors(n);

  auto run_one = [&](std::size_t i) {
    try {
      const auto dir = options.out_dir / ("run" + std::to_string(i));
      std::filesystem::create_directories(dir);
      {
        std::ofstream cfg(dir / "config.ini", std::ios::binary | std::ios::trunc);
        cfg << configs[i].to_ini();
        require(cfg.good(), ErrorCode::Io, "cannot write " + (dir / "config.ini").string());
      }
      MetricsWriter writer(dir / "metrics.jsonl");
      MetricsSink sink;
      sink.writer = &writer;
      sink.run_id = std::string(to_string(options.axis)) + "=" + options.values[i];
      sink.wall_clock = options.wall_clock;
      outcomes[i] = run_experiment(configs[i], sink);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };

  const std::size_t jobs = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(options.jobs, 1)), 1, n);
  if (jobs == 1) {
    for (std::size_t i = 0; i < n; ++i) run_one(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j)
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) run_one(i);
      });
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  SweepTable table;
  table.header = {"axis", "value", "pretrain_eval_loss", "masked_acc"};
  for (const auto& d : outcomes.front().domains)
    for (const char* col : {"coverage", "mse", "linear_accuracy", "linear_macro_f1", "full_accuracy", "full_macro_f1"})
      table.header.push_back(d.domain + "." + col);

  std::ofstream jsonl(options.out_dir / "sweep.jsonl", std::ios::binary | std::ios::trunc);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& o = outcomes[i];
    std::vector<double> numbers = {o.pretrain_eval_loss, o.masked_acc};
    for (const auto& d : o.domains)
      numbers.insert(numbers.end(), {d.coverage, d.mse, d.linear.accuracy, d.linear.macro_f1, d.full.accuracy,
                                     d.full.macro_f1});

    std::vector<std::string> row = {std::string(to_string(options.axis)), options.values[i]};
    nlohmann::ordered_json line;
    line["axis"] = row[0];
    line["value"] = row[1];
    line["run"] = "run" + std::to_string(i);
    nlohmann::ordered_json metrics = nlohmann::ordered_json::object();
    for (std::size_t k = 0; k < numbers.size(); ++k) {
      row.push_back(format_number(numbers[k]));
      metrics[table.header[k + 2]] = numbers[k];
    }
    line["metrics"] = metrics;
    line["config"] = config_json(configs[i]);
    jsonl << line.dump() << '\n';
    table.rows.push_back(std::move(row));
  }
  require(jsonl.good(), ErrorCode::Io, "cannot write sweep.jsonl");

  std::ofstream csv(options.out_dir / "sweep.csv", std::ios::binary | std::ios::trunc);
  auto write_row = [&](const std::vector<std::string>& cells) {
    for (std::size_t k = 0; k < cells.size(); ++k) csv << (k ? "," : "") << csv_field(cells[k]);
    csv << '\n';
  };
  write_row(table.header);
  for (const auto& row : table.rows) write_row(row);
  require(csv.good(), ErrorCode::Io, "cannot write sweep.csv");
  return table;
}

}  // namespace ctn::cli
