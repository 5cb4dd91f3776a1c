#pragma once

#include "scatsep/scattering.hpp"
#include "scatsep/stft.hpp"

namespace scatsep {

struct MaskPair {
  Matrix m1;
  Matrix m2;
  double p = 2.0;
};

/// M_i = a_i^p / (a_1^p + a_2^p); both masks are 0.5 where both estimates vanish.
inline MaskPair soft_mask(const Matrix& a1, const Matrix& a2, double p = 2.0) {
  if (a1.rows() != a2.rows() || a1.cols() != a2.cols()) throw Error("mask: estimate shapes differ");
  if (!(p > 0.0)) throw Error("mask: exponent must be positive");
  MaskPair out{Matrix(a1.rows(), a1.cols()), Matrix(a1.rows(), a1.cols()), p};
  for (Eigen::Index c = 0; c < a1.cols(); ++c) {
    for (Eigen::Index r = 0; r < a1.rows(); ++r) {
      const double u = std::abs(a1(r, c)), v = std::abs(a2(r, c));
      const double top = std::max(u, v);
      // normalized by the larger value so large p cannot overflow
      const double e1 = top > 0.0 ? std::pow(u / top, p) : 0.0;
      const double e2 = top > 0.0 ? std::pow(v / top, p) : 0.0;
      const double den = e1 + e2;
      if (den < 1e-12) {
        out.m1(r, c) = out.m2(r, c) = 0.5;
      } else {
        out.m1(r, c) = e1 / den;
        out.m2(r, c) = e2 / den;
      }
    }
  }
  return out;
}

inline MaskPair soft_mask(const FeatureMap& a1, const FeatureMap& a2, double p = 2.0) {
  if (a1.stride != a2.stride || a1.level != a2.level) throw Error("mask: estimates on different grids");
  return soft_mask(a1.values, a2.values, p);
}

/// x_i = S^-1 { M_i o S{y} }.
inline std::pair<AudioClip, AudioClip> mask_and_invert(const AudioClip& y, const MaskPair& masks,
                                                       const StftConfig& cfg) {
  const auto spec = stft(y, cfg);
  if (masks.m1.rows() != spec.values.rows() || masks.m1.cols() != spec.values.cols() ||
      masks.m2.rows() != spec.values.rows() || masks.m2.cols() != spec.values.cols()) {
    throw Error("mask: masks do not match the STFT grid of the mixture");
  }
  auto s1 = spec, s2 = spec;
  s1.values = spec.values.cwiseProduct(masks.m1.cast<Complex>());
  s2.values = spec.values.cwiseProduct(masks.m2.cast<Complex>());
  return {istft(s1), istft(s2)};
}

namespace detail {

/// Value of a frame sequence (spacing `stride`) at padded-domain index p,
/// linearly interpolated and held constant past either end.
inline double upsample_at(const Matrix& frames, Eigen::Index row, std::ptrdiff_t t, int stride) {
  const Eigen::Index n = frames.cols();
  const double pos = static_cast<double>(t) / stride;
  if (pos <= 0.0) return frames(row, 0);
  if (pos >= static_cast<double>(n - 1)) return frames(row, n - 1);
  const auto i = static_cast<Eigen::Index>(pos);
  const double frac = pos - static_cast<double>(i);
  return (1.0 - frac) * frames(row, i) + frac * frames(row, i + 1);
}

/// Masks one channel's full-rate coefficients, adds them to both syntheses
/// and returns the masked energies inside the unpadded range.
inline std::pair<double, double> masked_split(const std::vector<Complex>& coeff, const SpectralSignal& s,
                                              const MaskPair& masks, Eigen::Index row, int stride,
                                              std::size_t channel, DualSynthesis& out1, DualSynthesis& out2) {
  std::vector<Complex> c1(coeff.size()), c2(coeff.size());
  double e1 = 0.0, e2 = 0.0;
  for (std::size_t p = 0; p < coeff.size(); ++p) {
    const auto t = static_cast<std::ptrdiff_t>(p) - static_cast<std::ptrdiff_t>(s.pad);
    const double m1 = upsample_at(masks.m1, row, t, stride);
    const double m2 = upsample_at(masks.m2, row, t, stride);
    c1[p] = coeff[p] * m1;
    c2[p] = coeff[p] * m2;
    if (t >= 0 && t < static_cast<std::ptrdiff_t>(s.length)) {
      e1 += std::norm(c1[p]);
      e2 += std::norm(c2[p]);
    }
  }
  out1.add(channel, c1);
  out2.add(channel, c2);
  return {e1, e2};
}

}  // namespace detail

struct GreedyConfig {
  double p = 2.0;
  double lp_floor = 1e-3;
};

/// Layer-1 masks (row 0 = low-pass, then bands, as in a layer-1 node set)
/// applied to the complex subbands of y, dual-frame resynthesis, and a final
/// projection onto x1 + x2 = y. The residual is shared in proportion to each
/// source's masked subband energy.
inline std::pair<AudioClip, AudioClip> invert_with_masks(const AudioClip& y, const MaskPair& masks,
                                                         const WaveletFilterBank& fb, const GreedyConfig& cfg = {}) {
  y.validate();
  const int stride = fb.critical_stride();
  const auto frames = static_cast<Eigen::Index>((y.size() + static_cast<std::size_t>(stride) - 1) /
                                                static_cast<std::size_t>(stride));
  if (masks.m1.rows() != static_cast<Eigen::Index>(fb.channel_count()) || masks.m1.cols() != frames ||
      masks.m2.rows() != masks.m1.rows() || masks.m2.cols() != frames) {
    throw Error("scattering inversion: masks do not match the layer-1 grid");
  }
  if (fb.frame_bounds().lower < 0.5 || fb.frame_bounds().upper > 1.05) {
    throw Error("scattering inversion: filterbank frame bounds out of range");
  }
  const auto s = to_spectral(y.samples, y.sample_rate, fb.time_support());
  DualSynthesis syn1(fb, s), syn2(fb, s);
  double e1 = 0.0, e2 = 0.0;
  for (std::size_t c = 0; c < fb.channel_count(); ++c) {
    const bool low = c == fb.band_count();
    const auto ch = low ? lowpass_channel(fb) : bandpass_channel(fb, c);
    const auto row = static_cast<Eigen::Index>(low ? 0 : c + 1);
    const auto [a, b] = detail::masked_split(full_rate_output(s, ch), s, masks, row, stride, c, syn1, syn2);
    e1 += a;
    e2 += b;
  }
  AudioClip x1{syn1.finish(cfg.lp_floor), y.sample_rate};
  AudioClip x2{syn2.finish(cfg.lp_floor), y.sample_rate};

  const double w1 = e1 + e2 > 0.0 ? e1 / (e1 + e2) : 0.5;
  for (std::size_t t = 0; t < y.size(); ++t) {
    const double r = y.samples[t] - x1.samples[t] - x2.samples[t];
    x1.samples[t] += w1 * r;
    x2.samples[t] = y.samples[t] - x1.samples[t];
  }
  return {x1, x2};
}

/// Source envelopes of one layer-1 node from level-2 estimates: the node's
/// dyadic subbands are masked and resynthesized with the dyadic dual.
/// Rows from `first_row` on hold this node's level-2 estimates, low-pass first.
inline std::pair<std::vector<double>, std::vector<double>> fold_node(const std::vector<double>& node,
                                                                     const WaveletFilterBank& bank,
                                                                     const MaskPair& masks2, Eigen::Index first_row,
                                                                     bool has_bands, double lp_floor) {
  const auto s = to_spectral(node, bank.sample_rate(), bank.time_support(), 2);
  DualSynthesis syn1(bank, s), syn2(bank, s);
  for (std::size_t c = 0; c < bank.channel_count(); ++c) {
    const bool low = c == bank.band_count();
    if (!low && !has_bands) continue;
    const auto ch = low ? lowpass_channel(bank) : bandpass_channel(bank, c);
    const Eigen::Index row = first_row + (low ? 0 : static_cast<Eigen::Index>(c) + 1);
    detail::masked_split(full_rate_output(s, ch), s, masks2, row, 2, c, syn1, syn2);
  }
  return {syn1.finish(lp_floor), syn2.finish(lp_floor)};
}

/// Level estimates for both sources, on the mixture's feature grid.
struct LevelEstimate {
  Matrix source1;
  Matrix source2;
};

/// Greedy top-down inversion. Level-2 estimates (when given) are turned
/// into level-1 envelopes through the dyadic decomposition of |W1 y| and
/// merged with the level-1 estimates by a geometric mean; the merged
/// level-1 magnitudes then drive invert_with_masks.
inline std::pair<AudioClip, AudioClip> greedy_scatt_inversion(const AudioClip& y,
                                                              const std::vector<LevelEstimate>& levels,
                                                              const ScatteringTransform& st,
                                                              const GreedyConfig& cfg = {}) {
  if (levels.empty()) throw Error("scattering inversion: missing level-1 estimates");
  Matrix phi1 = levels[0].source1.cwiseAbs();
  Matrix phi2 = levels[0].source2.cwiseAbs();

  if (levels.size() >= 2) {
    const auto layer1 = st.layer1(y);
    const auto& bank = st.dyadic_bank(2);
    const auto masks2 = soft_mask(levels[1].source1, levels[1].source2, cfg.p);
    const auto per_node = static_cast<Eigen::Index>(bank.channel_count());
    Eigen::Index row = 0;
    for (std::size_t i = 0; i < layer1.nodes.size(); ++i) {
      const auto& node = layer1.nodes[i];
      const bool has_bands = node.modulus_count < st.m_max();
      if (row + (has_bands ? per_node : 1) > masks2.m1.rows()) {
        throw Error("scattering inversion: level-2 estimates do not match the layer geometry");
      }
      const auto [e1, e2] = fold_node(node.values, bank, masks2, row, has_bands, cfg.lp_floor);
      for (std::size_t t = 0; t < e1.size(); ++t) {
        const auto r = static_cast<Eigen::Index>(i);
        const auto c = static_cast<Eigen::Index>(t);
        phi1(r, c) = std::sqrt(phi1(r, c) * std::abs(e1[t]));
        phi2(r, c) = std::sqrt(phi2(r, c) * std::abs(e2[t]));
      }
      row += has_bands ? per_node : 1;
    }
    if (row != masks2.m1.rows()) throw Error("scattering inversion: level-2 estimates do not match the layer geometry");
  }
  return invert_with_masks(y, soft_mask(phi1, phi2, cfg.p), st.first_bank(), cfg);
}

}  // namespace scatsep
