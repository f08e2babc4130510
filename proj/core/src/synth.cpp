#include "ctn/synth.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <set>

#include "ctn/error.hpp"
#include "ctn/rng.hpp"

namespace ctn {

namespace {

constexpr double kPi = std::numbers::pi;

void validate(const SynthDomainSpec& d) {
  d.meta.validate();
  require(d.train_count >= 1 && d.test_count >= 1, ErrorCode::InvalidArgument,
          "synth domain '" + d.meta.name + "': train/test counts must be positive");
  require(d.noise >= 0 && std::isfinite(d.noise), ErrorCode::InvalidArgument,
          "synth domain '" + d.meta.name + "': noise must be finite and >= 0");
  switch (d.kind) {
    case SynthKind::motion:
      require(d.meta.task == Task::multiclass && d.meta.num_classes <= 12, ErrorCode::InvalidArgument,
              "synth domain '" + d.meta.name + "': motion generator is multiclass with at most 12 classes");
      break;
    case SynthKind::waves:
      require(d.meta.task == Task::multiclass && d.meta.num_classes == 4, ErrorCode::InvalidArgument,
              "synth domain '" + d.meta.name + "': waves generator needs exactly 4 multiclass labels");
      break;
    case SynthKind::beats:
      require(d.meta.task == Task::multilabel && d.meta.num_classes <= 5, ErrorCode::InvalidArgument,
              "synth domain '" + d.meta.name + "': beats generator is multilabel with at most 5 motifs");
      break;
  }
}

void motion_instance(std::vector<float>& x, const DomainMeta& m, std::uint32_t cls, SeededRng& rng) {
  const double c = cls;
  const double cycles = (2.0 + 1.25 * c) * rng.uniform(0.95, 1.05);
  const double omega = 2.0 * kPi * cycles / static_cast<double>(m.length);
  static constexpr std::array<double, 12> harmonic{0.0, 0.5, 0.25, 0.6, 0.1, 0.4, 0.3, 0.55, 0.15, 0.45, 0.35, 0.2};
  const double h = harmonic[cls];
  const double phase = rng.uniform(0.0, 2.0 * kPi);
  for (std::int64_t ch = 0; ch < m.channels; ++ch) {
    const double lag = static_cast<double>(ch) * kPi / 3.0 * (1.0 + 0.3 * c);
    const double lag2 = static_cast<double>(ch) * kPi / 4.0 * (1.0 + 0.5 * c);
    const double gain = rng.uniform(0.8, 1.2);
    for (std::int64_t t = 0; t < m.length; ++t) {
      const double tt = static_cast<double>(t);
      x[static_cast<std::size_t>(ch * m.length + t)] =
          static_cast<float>(gain * (std::sin(omega * tt + phase + lag) + h * std::sin(2.0 * omega * tt + 2.0 * phase + lag2)));
    }
  }
}

double wave_shape(std::uint32_t cls, double cycles_so_far) {
  const double frac = cycles_so_far - std::floor(cycles_so_far);
  switch (cls) {
    case 0: return std::sin(2.0 * kPi * frac);
    case 1: return frac < 0.5 ? 1.0 : -1.0;
    case 2: return 2.0 * frac - 1.0;
    default: return std::sin(2.0 * kPi * frac);
  }
}

void waves_instance(std::vector<float>& x, const DomainMeta& m, std::uint32_t cls, SeededRng& rng) {
  const double len = static_cast<double>(m.length);
  const double cycles = rng.uniform(3.0, 6.0);
  const double phase = rng.uniform(0.0, 1.0);
  // Chirp sweeps linearly from f0 to f1 cycles per window.
  const double f0 = rng.uniform(1.5, 2.5), f1 = rng.uniform(7.0, 9.0);
  for (std::int64_t ch = 0; ch < m.channels; ++ch) {
    const double offset = 0.25 * static_cast<double>(ch);
    const double gain = rng.uniform(0.7, 1.3);
    for (std::int64_t t = 0; t < m.length; ++t) {
      const double u = static_cast<double>(t) / len;
      const double progress = cls == 3 ? f0 * u + 0.5 * (f1 - f0) * u * u : cycles * u;
      x[static_cast<std::size_t>(ch * m.length + t)] = static_cast<float>(gain * wave_shape(cls, progress + phase + offset));
    }
  }
}

double motif_shape(std::size_t k, double dt) {
  switch (k) {
    case 0: return 1.5 * std::exp(-0.5 * dt * dt / 9.0);
    case 1: return -1.2 * std::exp(-0.5 * dt * dt / 16.0);
    case 2: return -1.8 * (dt / 3.0) * std::exp(-0.5 * dt * dt / 9.0);
    case 3: return std::abs(dt) < 8.0 ? std::sin(2.0 * kPi * dt / 16.0) * 0.5 * (1.0 + std::cos(kPi * dt / 8.0)) * 1.4 : 0.0;
    default: return std::abs(dt) < 8.0 ? 1.2 * (1.0 - std::abs(dt) / 8.0) : 0.0;
  }
}

constexpr std::int64_t kBeatGrid = 20;

void beats_instance(std::vector<float>& x, const DomainMeta& m, std::vector<std::uint8_t>& bits, SeededRng& rng) {
  static constexpr std::array<std::array<double, 4>, 5> gains{{{1.0, 0.6, -0.4, 0.8},
                                                               {0.5, 1.0, 0.7, -0.3},
                                                               {-0.6, 0.4, 1.0, 0.5},
                                                               {0.8, -0.5, 0.3, 1.0},
                                                               {0.4, 0.9, -0.8, 0.6}}};
  const double len = static_cast<double>(m.length);
  const double base_cycles = rng.uniform(1.0, 2.0);
  const double base_phase = rng.uniform(0.0, 2.0 * kPi);
  std::vector<double> mix(static_cast<std::size_t>(m.channels * m.length), 0.0);
  for (std::int64_t ch = 0; ch < m.channels; ++ch)
    for (std::int64_t t = 0; t < m.length; ++t)
      mix[static_cast<std::size_t>(ch * m.length + t)] =
          0.3 * std::sin(2.0 * kPi * base_cycles * static_cast<double>(t) / len + base_phase + 0.7 * static_cast<double>(ch));
  // Motifs sit on distinct slots of a regular beat grid.
  std::vector<std::int64_t> slots(static_cast<std::size_t>(std::max<std::int64_t>(1, m.length / kBeatGrid)));
  for (std::size_t j = 0; j < slots.size(); ++j) slots[j] = static_cast<std::int64_t>(j);
  rng.shuffle(std::span(slots));
  std::size_t next_slot = 0;
  for (std::size_t k = 0; k < bits.size(); ++k) {
    bits[k] = rng.uniform() < 0.5 ? 1 : 0;
    if (!bits[k]) continue;
    const auto occurrences = 2 + rng.below(2);
    for (std::uint64_t o = 0; o < occurrences && next_slot < slots.size(); ++o) {
      const double center = static_cast<double>(slots[next_slot++] * kBeatGrid + kBeatGrid / 2);
      const double amp = rng.uniform(0.9, 1.1);
      for (std::int64_t t = 0; t < m.length; ++t) {
        const double dt = static_cast<double>(t) - center;
        if (std::abs(dt) > 15.0) continue;
        const double s = amp * motif_shape(k, dt);
        for (std::int64_t ch = 0; ch < m.channels; ++ch)
          mix[static_cast<std::size_t>(ch * m.length + t)] += s * gains[k][static_cast<std::size_t>(ch % 4)];
      }
    }
  }
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<float>(mix[i]);
}

std::vector<TimeSeriesInstance> generate_split(const SynthDomainSpec& spec, const std::shared_ptr<const DomainMeta>& meta,
                                               std::int64_t count, SeededRng rng) {
  const auto& m = *meta;
  std::vector<std::uint32_t> classes(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) classes[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(i % m.num_classes);
  rng.shuffle(std::span(classes));
  std::vector<TimeSeriesInstance> out;
  out.reserve(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) {
    SeededRng irng = rng.fork(static_cast<std::uint64_t>(i));
    TimeSeriesInstance inst;
    inst.domain = meta;
    inst.values.assign(static_cast<std::size_t>(m.channels * m.length), 0.0f);
    switch (spec.kind) {
      case SynthKind::motion:
        inst.label.class_index = classes[static_cast<std::size_t>(i)];
        motion_instance(inst.values, m, inst.label.class_index, irng);
        break;
      case SynthKind::waves:
        inst.label.class_index = classes[static_cast<std::size_t>(i)];
        waves_instance(inst.values, m, inst.label.class_index, irng);
        break;
      case SynthKind::beats:
        inst.label.bits.assign(static_cast<std::size_t>(m.num_classes), 0);
        beats_instance(inst.values, m, inst.label.bits, irng);
        break;
    }
    for (auto& v : inst.values) v += static_cast<float>(irng.normal(0.0, spec.noise));
    out.push_back(std::move(inst));
  }
  return out;
}

}  // namespace

SynthSpec default_synth_spec(std::int64_t train_count, std::int64_t test_count) {
  SynthSpec spec;
  spec.domains.push_back({DomainMeta{"motion", 3, 128, 4, Task::multiclass, 6}, SynthKind::motion, 0.05, train_count, test_count});
  spec.domains.push_back({DomainMeta{"waves", 2, 300, 10, Task::multiclass, 4}, SynthKind::waves, 0.05, train_count, test_count});
  spec.domains.push_back({DomainMeta{"beats", 4, 500, 20, Task::multilabel, 5}, SynthKind::beats, 0.02, train_count, test_count});
  return spec;
}

std::vector<DomainDataset> synth_corpus(const SynthSpec& spec, std::uint64_t seed) {
  require(!spec.domains.empty(), ErrorCode::InvalidArgument, "synth spec names no domains");
  std::set<std::string> names;
  for (const auto& d : spec.domains) {
    validate(d);
    require(names.insert(d.meta.name).second, ErrorCode::DuplicateDomain, "synth spec repeats domain '" + d.meta.name + "'");
  }
  const SeededRng root(seed);
  std::vector<DomainDataset> out;
  for (const auto& d : spec.domains) {
    DomainDataset ds;
    ds.meta = std::make_shared<const DomainMeta>(d.meta);
    const SeededRng domain_rng = root.fork(d.meta.name);
    ds.train = generate_split(d, ds.meta, d.train_count, domain_rng.fork("train"));
    ds.test = generate_split(d, ds.meta, d.test_count, domain_rng.fork("test"));
    out.push_back(std::move(ds));
  }
  return out;
}

}  // namespace ctn
