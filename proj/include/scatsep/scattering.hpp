#pragma once

#include <cstdio>
#include <map>
#include <memory>
#include <mutex>

#include "scatsep/audio.hpp"
#include "scatsep/feature_map.hpp"
#include "scatsep/filterbank.hpp"

namespace scatsep {

struct ScatteringNode {
  std::vector<double> values;
  /// Filter index chosen at each layer; the bank's band count denotes its low-pass.
  std::vector<int> path;
  int modulus_count = 0;
  bool signed_values = false;
  std::string label;
};

struct ScatteringLayer {
  int level = 1;
  int stride = 1;  // in input samples
  int sample_rate = 16000;  // of the input signal
  std::vector<ScatteringNode> nodes;

  std::size_t frames() const { return nodes.empty() ? 0 : nodes.front().values.size(); }
  double node_rate() const { return static_cast<double>(sample_rate) / stride; }
};

struct ScatteringPyramid {
  std::vector<ScatteringLayer> layers;
  int m_max = 2;
};

/// First-layer bank plus the dyadic (Q = 1) banks used between layers.
///
/// `layer2_octaves` sets how many dyadic wavelets each node meets at the next
/// layer; with one octave the operator is the plain pair {phi2, psi2}.
class ScatteringTransform {
 public:
  explicit ScatteringTransform(WaveletFilterBank first, int layer2_octaves = 11, int m_max = 2)
      : first_(std::move(first)), layer2_octaves_(layer2_octaves), m_max_(m_max) {
    if (layer2_octaves < 1) throw Error("scattering: layer-2 octaves must be >= 1");
    if (m_max < 1) throw Error("scattering: m_max must be >= 1");
  }

  const WaveletFilterBank& first_bank() const { return first_; }
  int layer2_octaves() const { return layer2_octaves_; }
  int m_max() const { return m_max_; }

  int stride(int level) const { return first_.critical_stride() << (level - 1); }

  /// Dyadic bank applied to layer `level - 1` nodes to produce layer `level`.
  const WaveletFilterBank& dyadic_bank(int level) const {
    if (level < 2) throw Error("scattering: dyadic banks start at layer 2");
    std::lock_guard<std::mutex> lock(cache_->mutex);
    auto it = cache_->banks.find(level);
    if (it == cache_->banks.end()) {
      const double rate = first_.sample_rate() / stride(level - 1);
      it = cache_->banks.emplace(level, WaveletFilterBank::dyadic(layer2_octaves_, rate)).first;
    }
    return it->second;
  }

  ScatteringLayer layer1(const AudioClip& clip) const {
    clip.validate();
    if (clip.sample_rate != static_cast<int>(first_.sample_rate())) {
      throw Error("scattering: clip rate differs from the filterbank design rate");
    }
    const auto s = to_spectral(clip.samples, clip.sample_rate, first_.time_support(),
                               static_cast<std::size_t>(first_.critical_stride()));
    const auto step = static_cast<std::size_t>(first_.critical_stride());

    ScatteringLayer layer;
    layer.level = 1;
    layer.stride = first_.critical_stride();
    layer.sample_rate = clip.sample_rate;

    ScatteringNode low;
    low.path = {static_cast<int>(first_.band_count())};
    low.signed_values = true;
    low.label = "phi1";
    for (const auto& v : subsampled_output(s, lowpass_channel(first_), step)) low.values.push_back(v.real());
    layer.nodes.push_back(std::move(low));

    for (std::size_t j = 0; j < first_.band_count(); ++j) {
      ScatteringNode node;
      node.path = {static_cast<int>(j)};
      node.modulus_count = 1;
      node.label = first_.band_label(j);
      for (const auto& v : subsampled_output(s, bandpass_channel(first_, j), step)) node.values.push_back(std::abs(v));
      layer.nodes.push_back(std::move(node));
    }
    return layer;
  }

  /// One dyadic refinement: every node is split by the dyadic bank at twice
  /// the stride. The low-pass branch is kept as is; band-pass branches take a
  /// modulus, and are dropped once the node has used up its m_max moduli.
  ScatteringLayer next_layer(const ScatteringLayer& prev) const {
    const int level = prev.level + 1;
    const auto& bank = dyadic_bank(level);
    ScatteringLayer layer;
    layer.level = level;
    layer.stride = prev.stride * 2;
    layer.sample_rate = prev.sample_rate;
    if (prev.frames() < 2) throw Error("scattering: too few frames for another layer");

    for (const auto& parent : prev.nodes) {
      const auto s = to_spectral(parent.values, bank.sample_rate(), bank.time_support(), 2);
      ScatteringNode low;
      low.path = parent.path;
      low.path.push_back(static_cast<int>(bank.band_count()));
      low.modulus_count = parent.modulus_count;
      low.signed_values = parent.signed_values;
      low.label = parent.label + "/phi";
      for (const auto& v : subsampled_output(s, lowpass_channel(bank), 2)) low.values.push_back(v.real());
      layer.nodes.push_back(std::move(low));

      if (parent.modulus_count >= m_max_) continue;
      for (std::size_t j = 0; j < bank.band_count(); ++j) {
        ScatteringNode node;
        node.path = parent.path;
        node.path.push_back(static_cast<int>(j));
        node.modulus_count = parent.modulus_count + 1;
        node.label = parent.label + "/" + bank.band_label(j);
        for (const auto& v : subsampled_output(s, bandpass_channel(bank, j), 2)) node.values.push_back(std::abs(v));
        layer.nodes.push_back(std::move(node));
      }
    }
    return layer;
  }

  ScatteringPyramid pyramid(const AudioClip& clip, int depth) const {
    if (depth < 1) throw Error("scattering: depth must be >= 1");
    if (static_cast<std::size_t>(stride(depth)) > clip.size()) {
      throw Error("scattering: depth leaves less than one frame");
    }
    ScatteringPyramid p;
    p.m_max = m_max_;
    p.layers.push_back(layer1(clip));
    for (int k = 2; k <= depth; ++k) p.layers.push_back(next_layer(p.layers.back()));
    return p;
  }

  /// Number of rows each layer will have, without running the transform.
  std::size_t layer_rows(int level) const {
    // (count of nodes, by modulus count)
    std::map<int, std::size_t> by_count{{0, 1}, {1, first_.band_count()}};
    const auto fan = static_cast<std::size_t>(layer2_octaves_);
    for (int k = 2; k <= level; ++k) {
      std::map<int, std::size_t> next;
      for (const auto& [m, n] : by_count) {
        next[m] += n;
        if (m < m_max_) next[m + 1] += n * fan;
      }
      by_count = std::move(next);
    }
    std::size_t total = 0;
    for (const auto& kv : by_count) total += kv.second;
    return total;
  }

 private:
  struct Cache {
    std::mutex mutex;
    std::map<int, WaveletFilterBank> banks;
  };

  WaveletFilterBank first_;
  int layer2_octaves_;
  int m_max_;
  std::shared_ptr<Cache> cache_ = std::make_shared<Cache>();
};

inline ScatteringLayer scatter_layer1(const AudioClip& clip, const ScatteringTransform& st) { return st.layer1(clip); }
inline ScatteringLayer scatter_layer2(const ScatteringLayer& layer1, const ScatteringTransform& st) {
  if (layer1.level != 1) throw Error("scattering: expected layer-1 nodes");
  return st.next_layer(layer1);
}
inline ScatteringPyramid scatter_pyramid(const AudioClip& clip, const ScatteringTransform& st, int depth) {
  return st.pyramid(clip, depth);
}

/// Non-negative feature map of a layer (signed low-pass rows are rectified by |.|).
inline FeatureMap to_feature_map(const ScatteringLayer& layer) {
  FeatureMap fm;
  fm.level = layer.level;
  fm.stride = layer.stride;
  fm.sample_rate = layer.sample_rate;
  fm.values.resize(static_cast<Eigen::Index>(layer.nodes.size()), static_cast<Eigen::Index>(layer.frames()));
  for (std::size_t r = 0; r < layer.nodes.size(); ++r) {
    const auto& node = layer.nodes[r];
    if (node.values.size() != layer.frames()) throw Error("scattering: ragged layer");
    for (std::size_t c = 0; c < node.values.size(); ++c) {
      fm.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = std::abs(node.values[c]);
    }
    fm.bin_labels.push_back(node.label);
  }
  return fm;
}

/// Stride-weighted energy of a layer, comparable with the input's sum of squares.
inline double layer_energy(const ScatteringLayer& layer) {
  double e = 0.0;
  for (const auto& node : layer.nodes) e += sum_squares(node.values);
  return e * layer.stride;
}

/// Stride-weighted squared distance between two layers of equal geometry.
inline double layer_distance_sq(const ScatteringLayer& a, const ScatteringLayer& b) {
  if (a.nodes.size() != b.nodes.size() || a.frames() != b.frames()) throw Error("scattering: layer shapes differ");
  double e = 0.0;
  for (std::size_t i = 0; i < a.nodes.size(); ++i) {
    for (std::size_t t = 0; t < a.nodes[i].values.size(); ++t) {
      const double d = a.nodes[i].values[t] - b.nodes[i].values[t];
      e += d * d;
    }
  }
  return e * a.stride;
}

/// Signed Haar responses of one envelope at frame n.
///
/// Rows k = 0 .. J2-1: mean(u[n .. n+2^k-1]) - mean(u[n-2^k .. n-1]).
/// Row J2: mean of u over the 2^J2 frames centred on n.
inline std::vector<std::vector<double>> haar_rows(const std::vector<double>& u, int j2) {
  if (j2 < 0) throw Error("haar: J2 must be >= 0");
  const auto n = static_cast<std::ptrdiff_t>(u.size());
  // prefix sums over the reflect-extended envelope
  const std::ptrdiff_t pad = std::ptrdiff_t{1} << j2;
  std::vector<double> prefix(static_cast<std::size_t>(n + 2 * pad + 1), 0.0);
  for (std::ptrdiff_t i = 0; i < n + 2 * pad; ++i) {
    prefix[static_cast<std::size_t>(i + 1)] =
        prefix[static_cast<std::size_t>(i)] + u[static_cast<std::size_t>(reflect_index(i - pad, n))];
  }
  auto window_mean = [&](std::ptrdiff_t from, std::ptrdiff_t len) {
    const auto a = static_cast<std::size_t>(from + pad);
    return (prefix[a + static_cast<std::size_t>(len)] - prefix[a]) / static_cast<double>(len);
  };

  std::vector<std::vector<double>> rows(static_cast<std::size_t>(j2 + 1), std::vector<double>(u.size()));
  for (int k = 0; k < j2; ++k) {
    const std::ptrdiff_t w = std::ptrdiff_t{1} << k;
    for (std::ptrdiff_t t = 0; t < n; ++t) {
      rows[static_cast<std::size_t>(k)][static_cast<std::size_t>(t)] = window_mean(t, w) - window_mean(t - w, w);
    }
  }
  const std::ptrdiff_t w = std::ptrdiff_t{1} << j2;
  for (std::ptrdiff_t t = 0; t < n; ++t) {
    rows[static_cast<std::size_t>(j2)][static_cast<std::size_t>(t)] = window_mean(t - w / 2, w);
  }
  return rows;
}

/// Haar multi-resolution features of the layer-1 nodes: (J2+1) signed rows
/// per node, kept at the layer-1 stride.
inline FeatureMap haar_features(const ScatteringLayer& layer1, int j2) {
  if (layer1.level != 1) throw Error("haar: expected layer-1 nodes");
  FeatureMap fm;
  fm.level = 1;
  fm.stride = layer1.stride;
  fm.sample_rate = layer1.sample_rate;
  fm.signed_values = true;
  const auto per_node = static_cast<Eigen::Index>(j2 + 1);
  fm.values.resize(static_cast<Eigen::Index>(layer1.nodes.size()) * per_node,
                   static_cast<Eigen::Index>(layer1.frames()));
  Eigen::Index r = 0;
  for (const auto& node : layer1.nodes) {
    const auto rows = haar_rows(node.values, j2);
    for (int k = 0; k <= j2; ++k, ++r) {
      for (std::size_t t = 0; t < node.values.size(); ++t) {
        fm.values(r, static_cast<Eigen::Index>(t)) = rows[static_cast<std::size_t>(k)][t];
      }
      char buf[32];
      std::snprintf(buf, sizeof buf, k < j2 ? "/haar%d" : "/avg%d", k < j2 ? k : j2);
      fm.bin_labels.push_back(node.label + buf);
    }
  }
  return fm;
}

}  // namespace scatsep
