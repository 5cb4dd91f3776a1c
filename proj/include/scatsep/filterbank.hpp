#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "scatsep/core.hpp"
#include "scatsep/fft.hpp"

namespace scatsep {

/// Constant-Q bank of analytic Morlet wavelets plus a Gaussian low-pass.
///
/// Band-pass j is centred at f_max * 2^(-j/Q), j = 0 .. Q*J-1, with Gaussian
/// width chosen so neighbouring filters cross at half power. Each wavelet is
/// corrected to zero mean and is identically zero at negative frequencies.
/// Bands sitting in the low-pass transition are tapered by
/// sqrt(1 - |phi(centre)|^2) so the two tilings complement each other, and
/// a common gain on the band-pass filters makes the Littlewood-Paley sum
///
///   LP(f) = |phi(f)|^2 + 1/2 * sum_j (|psi_j(f)|^2 + |psi_j(-f)|^2)
///
/// peak at exactly 1, so analysis followed by modulus is non-expansive on
/// real signals while the low-pass keeps unit DC gain.
class WaveletFilterBank {
 public:
  struct Bounds {
    double lower;
    double upper;
  };

  static constexpr double kFmaxRatio = 0.4;

  /// First-layer bank. Requires 2^octaves <= sample_rate.
  static WaveletFilterBank design(int q, int octaves, double sample_rate) {
    if (q < 1) throw Error("filterbank: Q must be >= 1");
    if (octaves < 1) throw Error("filterbank: J must be >= 1");
    if (std::ldexp(1.0, octaves) > sample_rate) throw Error("filterbank: 2^J exceeds the sample rate");
    return build(q, octaves, sample_rate);
  }

  /// Q = 1 bank used between scattering layers; the rate is the node rate.
  static WaveletFilterBank dyadic(int octaves, double sample_rate) {
    if (octaves < 1) throw Error("filterbank: J must be >= 1");
    if (!(sample_rate > 0.0)) throw Error("filterbank: sample rate must be positive");
    return build(1, octaves, sample_rate);
  }

  int q() const { return q_; }
  int octaves() const { return octaves_; }
  double sample_rate() const { return fs_; }
  double f_max() const { return f_max_; }
  std::size_t band_count() const { return centers_.size(); }
  /// Band-pass filters plus the low-pass.
  std::size_t channel_count() const { return centers_.size() + 1; }
  const std::vector<double>& centers() const { return centers_; }
  int critical_stride() const { return stride_; }

  /// Half-power width of band j in Hz.
  double bandwidth(std::size_t j) const { return 2.0 * sigmas_[j] * std::sqrt(std::log(2.0)); }

  double bandpass(std::size_t j, double f) const {
    if (f <= 0.0) return 0.0;
    const double s2 = 2.0 * sigmas_[j] * sigmas_[j];
    const double d = f - centers_[j];
    return gain_ * tapers_[j] * (std::exp(-d * d / s2) - kappas_[j] * std::exp(-f * f / s2));
  }

  double lowpass(double f) const { return std::exp(-f * f / (2.0 * phi_sigma_ * phi_sigma_)); }

  double littlewood_paley(double f) const {
    const double af = std::abs(f);
    double s = 0.0;
    for (std::size_t j = 0; j < centers_.size(); ++j) {
      const double v = bandpass(j, af);
      s += v * v;
    }
    const double p = lowpass(f);
    return p * p + 0.5 * s;
  }

  /// Frequency interval [lo, hi] (Hz, lo >= 0) outside which band j is negligible.
  std::pair<double, double> band_support(std::size_t j) const {
    return {std::max(0.0, centers_[j] - kReach * sigmas_[j]), centers_[j] + kReach * sigmas_[j]};
  }
  double lowpass_support() const { return kReach * phi_sigma_; }

  /// Time support (in samples) of the longest filter; used as padding.
  std::size_t time_support() const {
    const double sigma_min = std::min(phi_sigma_, *std::min_element(sigmas_.begin(), sigmas_.end()));
    return static_cast<std::size_t>(std::ceil(4.0 * fs_ / (2.0 * kPi * sigma_min)));
  }

  /// Numerically evaluated frame bounds over [0, f_max] (low-pass included)
  /// on a dense grid.
  Bounds frame_bounds() const { return bounds_; }

  /// Frequency response of band j sampled on an n-point DFT grid.
  std::vector<double> bandpass_on_grid(std::size_t j, std::size_t n) const {
    std::vector<double> h(n);
    for (std::size_t k = 0; k < n; ++k) h[k] = bandpass(j, fft::bin_frequency(k, n, fs_));
    return h;
  }
  std::vector<double> lowpass_on_grid(std::size_t n) const {
    std::vector<double> h(n);
    for (std::size_t k = 0; k < n; ++k) h[k] = lowpass(fft::bin_frequency(k, n, fs_));
    return h;
  }

  /// Littlewood-Paley sum on an n-point DFT grid.
  std::vector<double> littlewood_paley_on_grid(std::size_t n) const {
    std::vector<double> lp(n, 0.0);
    const double df = fs_ / static_cast<double>(n);
    const auto half = static_cast<long long>(n / 2);
    for (std::size_t j = 0; j < centers_.size(); ++j) {
      const auto [lo, hi] = band_support(j);
      const long long k0 = std::max(0LL, static_cast<long long>(std::ceil(lo / df)));
      const long long k1 = std::min(half, static_cast<long long>(std::floor(hi / df)));
      for (long long k = k0; k <= k1; ++k) {
        const double v = bandpass(j, static_cast<double>(k) * df);
        const double e = 0.5 * v * v;
        lp[static_cast<std::size_t>(k)] += e;
        if (k > 0 && k < half) lp[n - static_cast<std::size_t>(k)] += e;
      }
    }
    for (std::size_t k = 0; k < n; ++k) {
      const double p = lowpass(fft::bin_frequency(k, n, fs_));
      lp[k] += p * p;
    }
    return lp;
  }

  std::string band_label(std::size_t j) const;

 private:
  static constexpr double kReach = 9.0;  // Gaussian widths kept; exp(-40.5) beyond

  static WaveletFilterBank build(int q, int octaves, double fs) {
    WaveletFilterBank fb;
    fb.q_ = q;
    fb.octaves_ = octaves;
    fb.fs_ = fs;
    fb.f_max_ = kFmaxRatio * fs;
    const int bands = q * octaves;
    const double half_step = std::exp2(0.5 / q);
    for (int j = 0; j < bands; ++j) {
      const double xi = fb.f_max_ * std::exp2(-static_cast<double>(j) / q);
      // Half power reached midway (geometrically) to each neighbour.
      const double half_width = 0.5 * xi * (half_step - 1.0 / half_step);
      const double sigma = half_width / std::sqrt(std::log(2.0));
      fb.centers_.push_back(xi);
      fb.sigmas_.push_back(sigma);
      fb.kappas_.push_back(std::exp(-xi * xi / (2.0 * sigma * sigma)));
    }
    // Low-pass at half power at the lower crossing of the last band.
    const double f_cross = fb.centers_.back() / half_step;
    fb.phi_sigma_ = f_cross / std::sqrt(std::log(2.0));
    for (double xi : fb.centers_) {
      const double p = fb.lowpass(xi);
      fb.tapers_.push_back(std::sqrt(1.0 - p * p));
    }

    fb.normalize();
    fb.stride_ = floor_pow2(fs / fb.bandwidth(0));
    if (fb.bounds_.lower < 0.5) throw Error("filterbank: parameters leave the covered band under-tiled");
    return fb;
  }

  void normalize() {
    const double nyquist = 0.5 * fs_;
    const double sigma_min = *std::min_element(sigmas_.begin(), sigmas_.end());
    const double df = std::min(sigma_min, phi_sigma_) / 16.0;
    const auto n = static_cast<std::size_t>(std::min(std::ceil(nyquist / df), 4.0e6));
    const double step = nyquist / static_cast<double>(n);

    gain_ = 1.0;
    std::vector<double> psi_sum(n + 1, 0.0);
    for (std::size_t j = 0; j < centers_.size(); ++j) {
      const auto [lo, hi] = band_support(j);
      const auto k0 = static_cast<std::size_t>(std::ceil(lo / step));
      const auto k1 = std::min(n, static_cast<std::size_t>(std::floor(hi / step)));
      for (std::size_t k = k0; k <= k1; ++k) {
        const double v = bandpass(j, static_cast<double>(k) * step);
        psi_sum[k] += v * v;
      }
    }
    double g2 = std::numeric_limits<double>::infinity();
    for (std::size_t k = 1; k <= n; ++k) {
      if (psi_sum[k] < 1e-9) continue;
      const double p = lowpass(static_cast<double>(k) * step);
      g2 = std::min(g2, (1.0 - p * p) / (0.5 * psi_sum[k]));
    }
    gain_ = std::sqrt(g2);

    bounds_ = {std::numeric_limits<double>::infinity(), 0.0};
    for (std::size_t k = 0; k <= n; ++k) {
      const double f = static_cast<double>(k) * step;
      const double p = lowpass(f);
      const double lp = p * p + 0.5 * g2 * psi_sum[k];
      bounds_.upper = std::max(bounds_.upper, lp);
      if (f <= f_max_) bounds_.lower = std::min(bounds_.lower, lp);
    }
  }

  int q_ = 1;
  int octaves_ = 1;
  double fs_ = 1.0;
  double f_max_ = 0.4;
  std::vector<double> centers_, sigmas_, kappas_, tapers_;
  double phi_sigma_ = 1.0;
  double gain_ = 1.0;
  int stride_ = 1;
  Bounds bounds_{0.0, 0.0};
};

inline std::string WaveletFilterBank::band_label(std::size_t j) const {
  char buf[64];
  std::snprintf(buf, sizeof buf, "psi%.3f", centers_[j]);
  return buf;
}

// ---------------------------------------------------------------------------
// Analysis / synthesis on reflect-padded signals, computed in the frequency
// domain. All channel outputs are aligned to original sample index 0.

/// Reflect-padded signal held as its DFT.
struct SpectralSignal {
  std::vector<Complex> spectrum;
  std::size_t length = 0;    // original samples
  std::size_t pad = 0;       // mirrored samples on each side
  std::size_t fft_size = 0;
  double sample_rate = 1.0;
};

inline SpectralSignal to_spectral(const std::vector<double>& x, double sample_rate, std::size_t pad_hint,
                                  std::size_t min_fft = 1) {
  if (x.empty()) throw Error("filterbank: empty signal");
  SpectralSignal s;
  s.length = x.size();
  s.sample_rate = sample_rate;
  const std::size_t n = x.size();
  const std::size_t padded_size = next_pow2(std::max(n + 2 * pad_hint, min_fft));
  if (n >= 2 && pad_hint >= n - 1) {
    // Filter longer than the signal: mirroring forever is periodic with
    // period 2(n-1), so a whole number of periods is exact. Zero fill would
    // leak through the slow tails of the analytic wavelets. Tiling until
    // min_fft divides the size can get large, so fall back to padding then.
    const std::size_t period = 2 * (n - 1);
    const std::size_t step = std::max<std::size_t>(min_fft, 1);
    const std::size_t tiled_size = period * (step / std::gcd(period, step));
    if (tiled_size <= padded_size) {
      s.pad = 0;
      s.fft_size = tiled_size;
      std::vector<double> tiled(s.fft_size);
      for (std::size_t i = 0; i < s.fft_size; ++i) {
        const std::size_t r = i % period;
        tiled[i] = r < n ? x[r] : x[period - r];
      }
      s.spectrum = fft::forward(tiled);
      return s;
    }
  }
  s.pad = pad_hint;
  s.fft_size = padded_size;
  auto padded = reflect_pad(x, s.pad);
  padded.resize(s.fft_size, 0.0);
  s.spectrum = fft::forward(padded);
  return s;
}

namespace detail {

/// Bins k (mod n) whose frequency lies in [lo, hi] Hz (lo may be negative).
template <typename F>
void for_bins(const SpectralSignal& s, double lo, double hi, F&& fn) {
  const double df = s.sample_rate / static_cast<double>(s.fft_size);
  const auto n = static_cast<long long>(s.fft_size);
  long long k0 = static_cast<long long>(std::ceil(lo / df));
  long long k1 = static_cast<long long>(std::floor(hi / df));
  k0 = std::max(k0, -n / 2);
  k1 = std::min(k1, n / 2 - 1);
  for (long long k = k0; k <= k1; ++k) {
    const auto idx = static_cast<std::size_t>((k % n + n) % n);
    fn(idx, static_cast<double>(k) * df);
  }
}

}  // namespace detail

/// Filter response evaluated at frequency f (Hz) and its support.
struct ChannelResponse {
  std::function<double(double)> response;
  double lo;
  double hi;
  bool real_output;  // symmetric filter: output of a real signal is real
};

inline ChannelResponse bandpass_channel(const WaveletFilterBank& fb, std::size_t j) {
  const auto [lo, hi] = fb.band_support(j);
  return {[&fb, j](double f) { return fb.bandpass(j, f); }, lo, hi, false};
}

inline ChannelResponse lowpass_channel(const WaveletFilterBank& fb) {
  const double r = fb.lowpass_support();
  return {[&fb](double f) { return fb.lowpass(f); }, -r, r, true};
}

/// Channel output sampled at original indices 0, stride, 2*stride, ...
/// The spectrum is periodized so only an fft_size/stride inverse DFT is needed.
inline std::vector<Complex> subsampled_output(const SpectralSignal& s, const ChannelResponse& ch, std::size_t stride) {
  if (stride == 0 || s.fft_size % stride != 0) throw Error("filterbank: stride must divide the FFT size");
  const std::size_t m = s.fft_size / stride;
  std::vector<Complex> periodized(m, Complex(0.0, 0.0));
  const auto n = static_cast<unsigned long long>(s.fft_size);
  detail::for_bins(s, ch.lo, ch.hi, [&](std::size_t k, double f) {
    const double h = ch.response(f);
    if (h == 0.0) return;
    const auto phase_index = (static_cast<unsigned long long>(k) * s.pad) % n;
    const Complex shift = std::polar(1.0, 2.0 * kPi * static_cast<double>(phase_index) / static_cast<double>(n));
    periodized[k % m] += s.spectrum[k] * h * shift;
  });
  auto full = fft::inverse(periodized);
  const std::size_t frames = (s.length + stride - 1) / stride;
  std::vector<Complex> out(frames);
  const double scale = 1.0 / static_cast<double>(stride);
  for (std::size_t i = 0; i < frames; ++i) out[i] = full[i] * scale;
  if (ch.real_output) {
    for (auto& v : out) v = Complex(v.real(), 0.0);
  }
  return out;
}

/// Channel output at every sample of the padded domain (length fft_size).
inline std::vector<Complex> full_rate_output(const SpectralSignal& s, const ChannelResponse& ch) {
  std::vector<Complex> spec(s.fft_size, Complex(0.0, 0.0));
  detail::for_bins(s, ch.lo, ch.hi, [&](std::size_t k, double f) { spec[k] = s.spectrum[k] * ch.response(f); });
  auto out = fft::inverse(spec);
  if (ch.real_output) {
    for (auto& v : out) v = Complex(v.real(), 0.0);
  }
  return out;
}

/// Canonical dual-frame synthesis, accumulated one channel at a time.
/// Coefficients are full-rate on the padded domain of `layout`; channel
/// indices follow the bank order with the low-pass last. Frequencies where
/// the frame sum falls below `lp_floor` are attenuated rather than amplified.
class DualSynthesis {
 public:
  DualSynthesis(const WaveletFilterBank& fb, const SpectralSignal& layout)
      : fb_(fb), layout_(layout), acc_(layout.fft_size, Complex(0.0, 0.0)) {}

  void add(std::size_t channel, const std::vector<Complex>& coefficients) {
    if (channel >= fb_.channel_count()) throw Error("synthesis: channel out of range");
    if (coefficients.size() != layout_.fft_size) throw Error("synthesis: coefficient length mismatch");
    const auto ch = channel == fb_.band_count() ? lowpass_channel(fb_) : bandpass_channel(fb_, channel);
    const auto spec = fft::forward(coefficients);
    detail::for_bins(layout_, ch.lo, ch.hi, [&](std::size_t k, double f) { acc_[k] += spec[k] * ch.response(f); });
  }

  std::vector<double> finish(double lp_floor = 1e-3) const {
    const std::size_t n = layout_.fft_size;
    const auto lp = fb_.littlewood_paley_on_grid(n);
    std::vector<Complex> acc = acc_;
    for (std::size_t k = 0; k < n; ++k) acc[k] /= std::max(lp[k], lp_floor);
    const auto time = fft::inverse(acc);
    std::vector<double> out(layout_.length);
    for (std::size_t i = 0; i < layout_.length; ++i) out[i] = time[layout_.pad + i].real();
    return out;
  }

 private:
  const WaveletFilterBank& fb_;
  const SpectralSignal& layout_;
  std::vector<Complex> acc_;
};

inline std::vector<double> synthesize(const WaveletFilterBank& fb, const SpectralSignal& layout,
                                      const std::vector<std::vector<Complex>>& coefficients,
                                      double lp_floor = 1e-3) {
  if (coefficients.size() != fb.channel_count()) throw Error("synthesis: channel count mismatch");
  DualSynthesis synth(fb, layout);
  for (std::size_t c = 0; c < coefficients.size(); ++c) synth.add(c, coefficients[c]);
  return synth.finish(lp_floor);
}

}  // namespace scatsep
