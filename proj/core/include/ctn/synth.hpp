#pragma once

#include <cstdint>
#include <vector>

#include "ctn/data.hpp"

namespace ctn {

/// Generator families for the desk-scale stand-in corpus.
///  - motion: multiclass; every channel mixes a class-specific fundamental
///    and its second harmonic with class-specific inter-channel phase lags.
///  - waves:  4 classes, sine / square / sawtooth / linear chirp.
///  - beats:  multilabel; each label marks whether one of five motif shapes
///    occurs (a few times, on a 20-sample beat grid) on top of a slow
///    baseline, projected onto the channels with motif-specific gains.
enum class SynthKind { motion, waves, beats };

struct SynthDomainSpec {
  DomainMeta meta;
  SynthKind kind = SynthKind::motion;
  double noise = 0.1;
  std::int64_t train_count = 600;
  std::int64_t test_count = 120;
};

struct SynthSpec {
  std::vector<SynthDomainSpec> domains;
};

/// motion (C=3, T=128, 6 classes, P=4), waves (C=2, T=300, 4 classes, P=10),
/// beats (C=4, T=500, 5 labels, P=20).
SynthSpec default_synth_spec(std::int64_t train_count = 600, std::int64_t test_count = 120);

/// Deterministic in `seed`. Train and test splits come from independent
/// streams; multiclass splits are class-balanced (counts differ by <= 1).
std::vector<DomainDataset> synth_corpus(const SynthSpec& spec, std::uint64_t seed);

}  // namespace ctn
