#include "ctn/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>

#include "binio.hpp"
#include "ctn/archive.hpp"
#include "ctn/error.hpp"
#include "ctn/rng.hpp"

namespace ctn {

std::string_view to_string(Task task) { return task == Task::multiclass ? "multiclass" : "multilabel"; }

Task parse_task(std::string_view text) {
  if (text == "multiclass") return Task::multiclass;
  if (text == "multilabel") return Task::multilabel;
  fail(ErrorCode::InvalidArgument, "unknown task '" + std::string(text) + "' (expected multiclass or multilabel)");
}

void DomainMeta::validate() const {
  const std::string who = "domain '" + name + "': ";
  require(channels >= 1 && length >= 1 && patch_size >= 1, ErrorCode::InvalidArgument,
          who + "channels, length and patch_size must be positive");
  require(patch_size <= length, ErrorCode::InvalidArgument,
          who + "patch_size " + std::to_string(patch_size) + " exceeds length " + std::to_string(length));
  require(num_classes >= 2, ErrorCode::InvalidArgument, who + "num_classes must be >= 2");
  require(name.find_first_of("\n=") == std::string::npos, ErrorCode::InvalidArgument, who + "name contains '=' or a newline");
}

// ---- TSB --------------------------------------------------------------------------

namespace {

constexpr std::string_view kTsbMagic = "TSB1";
constexpr std::uint32_t kTsbVersion = 1;

void check_instance(const TimeSeriesInstance& inst, const DomainMeta& meta, std::size_t index) {
  const auto where = "instance " + std::to_string(index) + " of domain '" + meta.name + "'";
  require(static_cast<std::int64_t>(inst.values.size()) == meta.channels * meta.length, ErrorCode::ShapeMismatch,
          where + " has " + std::to_string(inst.values.size()) + " values, expected C*T");
  if (meta.task == Task::multiclass)
    require(inst.label.class_index < meta.num_classes, ErrorCode::InvalidArgument, where + " has an out-of-range class");
  else
    require(static_cast<std::int64_t>(inst.label.bits.size()) == meta.num_classes, ErrorCode::InvalidArgument,
            where + " has a label vector of the wrong width");
}

}  // namespace

void save_tsb(const std::filesystem::path& path, const std::vector<TimeSeriesInstance>& instances, const DomainMeta& meta) {
  meta.validate();
  detail::ByteWriter w;
  w.text(kTsbMagic);
  w.u32(kTsbVersion);
  w.u32(static_cast<std::uint32_t>(instances.size()));
  w.u32(static_cast<std::uint32_t>(meta.channels));
  w.u32(static_cast<std::uint32_t>(meta.length));
  w.u8(static_cast<std::uint8_t>(meta.task));
  w.u32(static_cast<std::uint32_t>(meta.num_classes));
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& inst = instances[i];
    check_instance(inst, meta, i);
    if (meta.task == Task::multiclass)
      w.u32(inst.label.class_index);
    else
      for (auto b : inst.label.bits) w.u8(b ? 1 : 0);
    for (float v : inst.values) w.f32(v);
  }
  detail::write_file_atomic(path, w.buffer());
}

TsbSplit load_tsb(const std::filesystem::path& path, std::shared_ptr<const DomainMeta> meta) {
  const std::string bytes = detail::read_file(path);
  const std::string source = path.string();
  if (bytes.size() < kTsbMagic.size() && kTsbMagic.starts_with(bytes))
    fail(ErrorCode::TruncatedFile, source + ": file ends inside the TSB1 magic");
  if (!std::string_view(bytes).starts_with(kTsbMagic)) fail(ErrorCode::MagicMismatch, source + ": missing TSB1 magic");
  detail::ByteReader r(bytes, source);
  r.take(4);
  const auto version = r.u32();
  require(version == kTsbVersion, ErrorCode::HeaderInconsistent, source + ": unsupported version " + std::to_string(version));
  TsbSplit split;
  const auto count = r.u32();
  split.channels = r.u32();
  split.length = r.u32();
  const auto task_byte = r.u8();
  split.num_classes = r.u32();
  require(task_byte <= 1, ErrorCode::HeaderInconsistent, source + ": task byte " + std::to_string(task_byte) + " is not 0 or 1");
  split.task = static_cast<Task>(task_byte);
  require(split.channels > 0 && split.length > 0, ErrorCode::HeaderInconsistent, source + ": zero channels or length");
  require(split.num_classes >= 2, ErrorCode::HeaderInconsistent, source + ": num_classes must be >= 2");

  if (meta) {
    require(meta->channels == split.channels && meta->length == split.length && meta->task == split.task &&
                meta->num_classes == split.num_classes,
            ErrorCode::HeaderInconsistent, source + ": header disagrees with domain meta '" + meta->name + "'");
  } else {
    auto m = std::make_shared<DomainMeta>();
    m->channels = split.channels;
    m->length = split.length;
    m->patch_size = 1;
    m->task = split.task;
    m->num_classes = split.num_classes;
    meta = std::move(m);
  }

  const std::uint64_t label_bytes = split.task == Task::multiclass ? 4 : static_cast<std::uint64_t>(split.num_classes);
  const std::uint64_t per_instance = label_bytes + 4ULL * static_cast<std::uint64_t>(split.channels * split.length);
  if (per_instance * count > r.remaining())
    fail(ErrorCode::TruncatedFile, source + ": header promises " + std::to_string(count) + " instances (" +
                                       std::to_string(per_instance * count) + " bytes) but only " +
                                       std::to_string(r.remaining()) + " payload bytes exist");
  require(per_instance * count == r.remaining(), ErrorCode::HeaderInconsistent, source + ": trailing bytes after the payload");

  split.instances.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    TimeSeriesInstance inst;
    inst.domain = meta;
    if (split.task == Task::multiclass) {
      inst.label.class_index = r.u32();
      require(inst.label.class_index < split.num_classes, ErrorCode::HeaderInconsistent,
              source + ": instance " + std::to_string(i) + " has class " + std::to_string(inst.label.class_index) +
                  " >= num_classes");
    } else {
      inst.label.bits.resize(static_cast<std::size_t>(split.num_classes));
      for (auto& b : inst.label.bits) {
        b = r.u8();
        require(b <= 1, ErrorCode::HeaderInconsistent, source + ": multilabel byte is not 0/1 in instance " + std::to_string(i));
      }
    }
    inst.values.resize(static_cast<std::size_t>(split.channels * split.length));
    for (auto& v : inst.values) v = r.f32();
    split.instances.push_back(std::move(inst));
  }
  return split;
}

// ---- domain.meta --------------------------------------------------------------

void write_meta(const std::filesystem::path& path, const DomainMeta& meta) {
  meta.validate();
  Manifest m;
  m.set("name", meta.name);
  m.set_int("channels", meta.channels);
  m.set_int("length", meta.length);
  m.set_int("patch_size", meta.patch_size);
  m.set("task", std::string(to_string(meta.task)));
  m.set_int("num_classes", meta.num_classes);
  detail::write_file_atomic(path, m.serialize());
}

DomainMeta read_meta(const std::filesystem::path& path) {
  const auto m = Manifest::parse(detail::read_file(path), path.string());
  for (const auto& [k, v] : m.entries())
    require(k == "name" || k == "channels" || k == "length" || k == "patch_size" || k == "task" || k == "num_classes",
            ErrorCode::UnknownKey, path.string() + ": unknown key '" + k + "'");
  DomainMeta meta;
  meta.name = m.get("name");
  meta.channels = m.get_int("channels");
  meta.length = m.get_int("length");
  meta.patch_size = m.get_int("patch_size");
  meta.task = parse_task(m.get("task"));
  meta.num_classes = m.get_int("num_classes");
  meta.validate();
  return meta;
}

void save_domain(const std::filesystem::path& dir, const DomainDataset& dataset) {
  std::filesystem::create_directories(dir);
  write_meta(dir / "domain.meta", *dataset.meta);
  save_tsb(dir / "train.tsb", dataset.train, *dataset.meta);
  save_tsb(dir / "test.tsb", dataset.test, *dataset.meta);
}

DomainDataset load_domain(const std::filesystem::path& dir) {
  DomainDataset ds;
  ds.meta = std::make_shared<const DomainMeta>(read_meta(dir / "domain.meta"));
  ds.train = load_tsb(dir / "train.tsb", ds.meta).instances;
  ds.test = load_tsb(dir / "test.tsb", ds.meta).instances;
  return ds;
}

// ---- CSV ----------------------------------------------------------------------------

std::vector<TimeSeriesInstance> import_csv(const std::filesystem::path& path, std::shared_ptr<const DomainMeta> meta,
                                           bool has_header) {
  require(meta != nullptr, ErrorCode::InvalidArgument, "import_csv needs a domain meta");
  meta->validate();
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::Io, "cannot open " + path.string());
  const std::int64_t label_fields = meta->task == Task::multiclass ? 1 : meta->num_classes;
  const std::int64_t expected = label_fields + meta->channels * meta->length;
  std::vector<TimeSeriesInstance> out;
  std::string line;
  std::int64_t row = 0;
  bool skipped_header = !has_header;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!skipped_header) {
      skipped_header = true;
      continue;
    }
    ++row;
    std::vector<std::string_view> fields;
    std::string_view rest(line);
    while (true) {
      const auto comma = rest.find(',');
      fields.push_back(rest.substr(0, comma));
      if (comma == std::string_view::npos) break;
      rest.remove_prefix(comma + 1);
    }
    require(static_cast<std::int64_t>(fields.size()) == expected, ErrorCode::ParseError,
            path.string() + ": row " + std::to_string(row) + " has " + std::to_string(fields.size()) + " fields, expected " +
                std::to_string(expected));
    auto parse_number = [&](std::string_view f, std::size_t col) {
      while (!f.empty() && f.front() == ' ') f.remove_prefix(1);
      while (!f.empty() && f.back() == ' ') f.remove_suffix(1);
      double v = 0;
      const auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      require(ec == std::errc() && ptr == f.data() + f.size() && std::isfinite(v), ErrorCode::ParseError,
              path.string() + ": row " + std::to_string(row) + ", column " + std::to_string(col + 1) + ": cannot parse '" +
                  std::string(f) + "' as a number");
      return v;
    };
    TimeSeriesInstance inst;
    inst.domain = meta;
    if (meta->task == Task::multiclass) {
      const double c = parse_number(fields[0], 0);
      require(c >= 0 && c < static_cast<double>(meta->num_classes) && c == std::floor(c), ErrorCode::ParseError,
              path.string() + ": row " + std::to_string(row) + ": class label out of range");
      inst.label.class_index = static_cast<std::uint32_t>(c);
    } else {
      for (std::int64_t j = 0; j < label_fields; ++j) {
        const double b = parse_number(fields[static_cast<std::size_t>(j)], static_cast<std::size_t>(j));
        require(b == 0.0 || b == 1.0, ErrorCode::ParseError,
                path.string() + ": row " + std::to_string(row) + ", column " + std::to_string(j + 1) + ": label bit must be 0 or 1");
        inst.label.bits.push_back(static_cast<std::uint8_t>(b));
      }
    }
    inst.values.reserve(static_cast<std::size_t>(meta->channels * meta->length));
    for (auto j = static_cast<std::size_t>(label_fields); j < fields.size(); ++j)
      inst.values.push_back(static_cast<float>(parse_number(fields[j], j)));
    out.push_back(std::move(inst));
  }
  return out;
}

// ---- preprocessing ----------------------------------------------------------------

TimeSeriesInstance znormalize(const TimeSeriesInstance& instance) {
  require(instance.domain != nullptr, ErrorCode::InvalidArgument, "instance has no domain");
  const auto c_count = instance.domain->channels;
  const auto t_count = instance.domain->length;
  TimeSeriesInstance out = instance;
  for (std::int64_t c = 0; c < c_count; ++c) {
    const float* x = instance.values.data() + c * t_count;
    double mu = 0;
    for (std::int64_t t = 0; t < t_count; ++t) mu += x[t];
    mu /= static_cast<double>(t_count);
    double var = 0;
    for (std::int64_t t = 0; t < t_count; ++t) var += (x[t] - mu) * (x[t] - mu);
    const double denom = std::sqrt(var / static_cast<double>(t_count)) + 1e-8;
    float* y = out.values.data() + c * t_count;
    for (std::int64_t t = 0; t < t_count; ++t) y[t] = static_cast<float>((x[t] - mu) / denom);
  }
  return out;
}

PatchSequence patchify(const TimeSeriesInstance& instance, std::int64_t patch_size) {
  require(instance.domain != nullptr, ErrorCode::InvalidArgument, "instance has no domain");
  const auto c_count = instance.domain->channels;
  const auto t_count = instance.domain->length;
  require(patch_size >= 1, ErrorCode::InvalidArgument, "patch size must be >= 1");
  require(patch_size <= t_count, ErrorCode::InvalidArgument,
          "patch size " + std::to_string(patch_size) + " exceeds series length " + std::to_string(t_count));
  PatchSequence seq;
  seq.channels = c_count;
  seq.patch_size = patch_size;
  seq.source = &instance;
  const auto count = t_count / patch_size;
  seq.patches.reserve(static_cast<std::size_t>(count));
  for (std::int64_t l = 0; l < count; ++l) {
    std::vector<float> patch(static_cast<std::size_t>(c_count * patch_size));
    for (std::int64_t c = 0; c < c_count; ++c)
      std::copy_n(instance.values.data() + c * t_count + l * patch_size, patch_size, patch.data() + c * patch_size);
    seq.patches.push_back(std::move(patch));
  }
  return seq;
}

std::vector<std::size_t> stratified_indices(const std::vector<Label>& labels, double fraction, std::uint64_t seed) {
  require(fraction > 0 && fraction <= 1, ErrorCode::InvalidArgument, "train fraction must lie in (0, 1]");
  std::vector<std::size_t> keep;
  if (fraction == 1.0) {
    for (std::size_t i = 0; i < labels.size(); ++i) keep.push_back(i);
    return keep;
  }
  std::map<std::vector<std::uint8_t>, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto& l = labels[i];
    std::vector<std::uint8_t> key = l.bits;
    if (key.empty()) {
      key.resize(4);
      for (int b = 0; b < 4; ++b) key[static_cast<std::size_t>(b)] = static_cast<std::uint8_t>(l.class_index >> (8 * b));
    }
    strata[key].push_back(i);
  }
  SeededRng rng(seed);
  for (auto& [key, members] : strata) {
    rng.shuffle(std::span(members));
    const auto n = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(members.size()))));
    keep.insert(keep.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(std::min(n, members.size())));
  }
  std::sort(keep.begin(), keep.end());
  return keep;
}

std::vector<TimeSeriesInstance> stratified_subsample(const std::vector<TimeSeriesInstance>& instances, double fraction,
                                                     std::uint64_t seed) {
  std::vector<Label> labels;
  labels.reserve(instances.size());
  for (const auto& inst : instances) labels.push_back(inst.label);
  std::vector<TimeSeriesInstance> out;
  for (auto i : stratified_indices(labels, fraction, seed)) out.push_back(instances[i]);
  return out;
}

}  // namespace ctn
