#pragma once

#include <algorithm>
#include <numeric>
#include <random>

#include "scatsep/audio.hpp"

namespace scatsep {

/// Synthetic two-class material for end-to-end checks.
///
/// Each class owns a grid of `notes` log-spaced frequencies in [lo, hi] and
/// an amplitude-modulation rate. A clip picks a few notes from the grid.
/// "bands": class 1 in 200-900 Hz at 4 Hz modulation, class 2 in 2-4 kHz at
/// 11 Hz. "modulation": both classes share one 300-3000 Hz grid and differ
/// only in modulation rate (3 Hz vs 12 Hz).
struct ToyClass {
  double lo_hz;
  double hi_hz;
  int notes;
  double am_hz;

  double note(int k) const { return notes == 1 ? lo_hz : lo_hz * std::pow(hi_hz / lo_hz, double(k) / (notes - 1)); }
};

inline std::pair<ToyClass, ToyClass> toy_classes(const std::string& kind) {
  if (kind == "bands") return {{200.0, 900.0, 8, 4.0}, {2000.0, 4000.0, 8, 11.0}};
  if (kind == "modulation") return {{300.0, 3000.0, 12, 3.0}, {300.0, 3000.0, 12, 12.0}};
  throw Error("toy: unknown dataset kind '" + kind + "'");
}

/// One clip: `partials` distinct notes, each with its own amplitude and
/// phase and a full-depth raised-cosine envelope at (about) the class rate.
inline AudioClip toy_clip(const ToyClass& cls, double seconds, int sample_rate, std::mt19937_64& rng,
                          int partials = 3) {
  std::uniform_real_distribution<double> phase(0.0, 2.0 * kPi), rate_jitter(0.9, 1.1), amp(0.1, 0.3);
  std::vector<int> order(static_cast<std::size_t>(cls.notes));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  AudioClip clip;
  clip.sample_rate = sample_rate;
  clip.samples.assign(static_cast<std::size_t>(seconds * sample_rate), 0.0);
  for (int p = 0; p < std::min(partials, cls.notes); ++p) {
    const double f = cls.note(order[static_cast<std::size_t>(p)]);
    const double a = amp(rng), ph = phase(rng), am = cls.am_hz * rate_jitter(rng), am_ph = phase(rng);
    for (std::size_t t = 0; t < clip.size(); ++t) {
      const double time = static_cast<double>(t) / sample_rate;
      const double env = 0.5 * (1.0 - std::cos(2.0 * kPi * am * time + am_ph));
      clip.samples[t] += a * env * std::sin(2.0 * kPi * f * time + ph);
    }
  }
  return clip;
}

struct ToyDataset {
  std::vector<AudioClip> train1, train2, test1, test2;
};

inline ToyDataset make_toy_dataset(const std::string& kind, int train_per_class, int test_per_class, double seconds,
                                   int sample_rate, std::uint64_t seed) {
  if (train_per_class < 1 || test_per_class < 0 || !(seconds > 0.0)) throw Error("toy: bad dataset sizes");
  const auto [c1, c2] = toy_classes(kind);
  std::mt19937_64 rng(seed);
  ToyDataset d;
  for (int i = 0; i < train_per_class; ++i) {
    d.train1.push_back(toy_clip(c1, seconds, sample_rate, rng));
    d.train2.push_back(toy_clip(c2, seconds, sample_rate, rng));
  }
  for (int i = 0; i < test_per_class; ++i) {
    d.test1.push_back(toy_clip(c1, seconds, sample_rate, rng));
    d.test2.push_back(toy_clip(c2, seconds, sample_rate, rng));
  }
  return d;
}

}  // namespace scatsep
