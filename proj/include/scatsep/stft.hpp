#pragma once

#include <cmath>

#include "scatsep/audio.hpp"
#include "scatsep/fft.hpp"

namespace scatsep {

/// Hann-windowed STFT at 50% overlap.
struct StftConfig {
  int window_length = 1024;
  int hop = 512;
  int fft_size = 1024;

  int bins() const { return fft_size / 2 + 1; }

  void validate() const {
    if (window_length <= 0 || window_length % 2 != 0) throw Error("stft: window length must be positive and even");
    if (hop * 2 != window_length) throw Error("stft: hop must be half the window (Hann COLA)");
    if (fft_size < window_length) throw Error("stft: fft size must be >= window length");
  }
};

struct ComplexSpectrogram {
  ComplexMatrix values;  // bins x frames
  StftConfig config;
  int sample_rate = 16000;
  std::size_t signal_length = 0;
};

/// Periodic Hann window.
inline std::vector<double> hann_window(int n) {
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) w[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * kPi * i / n);
  return w;
}

inline std::size_t stft_frame_count(std::size_t length, const StftConfig& cfg) {
  return length / static_cast<std::size_t>(cfg.hop) + 1;
}

inline ComplexSpectrogram stft(const AudioClip& clip, const StftConfig& cfg) {
  cfg.validate();
  const auto window = static_cast<std::size_t>(cfg.window_length);
  if (clip.size() < window) throw Error("stft: clip shorter than one window");
  const std::size_t half = window / 2;
  const auto padded = reflect_pad(clip.samples, half);
  const std::size_t frames = stft_frame_count(clip.size(), cfg);
  const auto w = hann_window(cfg.window_length);

  ComplexSpectrogram spec;
  spec.config = cfg;
  spec.sample_rate = clip.sample_rate;
  spec.signal_length = clip.size();
  spec.values.resize(cfg.bins(), static_cast<Eigen::Index>(frames));

  std::vector<double> frame(static_cast<std::size_t>(cfg.fft_size));
  for (std::size_t f = 0; f < frames; ++f) {
    std::fill(frame.begin(), frame.end(), 0.0);
    const std::size_t start = f * static_cast<std::size_t>(cfg.hop);
    for (std::size_t i = 0; i < window; ++i) frame[i] = padded[start + i] * w[i];
    const auto spectrum = fft::forward(frame);
    for (int b = 0; b < cfg.bins(); ++b) spec.values(b, static_cast<Eigen::Index>(f)) = spectrum[static_cast<std::size_t>(b)];
  }
  return spec;
}

/// Least-squares overlap-add inverse; exact wherever the squared windows overlap.
inline AudioClip istft(const ComplexSpectrogram& spec) {
  const auto& cfg = spec.config;
  cfg.validate();
  if (spec.values.rows() != cfg.bins()) throw Error("istft: bin count does not match config");
  const auto window = static_cast<std::size_t>(cfg.window_length);
  const auto hop = static_cast<std::size_t>(cfg.hop);
  const auto frames = static_cast<std::size_t>(spec.values.cols());
  const auto nfft = static_cast<std::size_t>(cfg.fft_size);
  const auto w = hann_window(cfg.window_length);

  const std::size_t padded_len = (frames == 0 ? 0 : (frames - 1) * hop) + window;
  std::vector<double> acc(padded_len, 0.0), norm(padded_len, 0.0);
  std::vector<Complex> full(nfft);
  for (std::size_t f = 0; f < frames; ++f) {
    for (std::size_t b = 0; b < nfft; ++b) {
      if (b <= nfft / 2) {
        full[b] = spec.values(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(f));
      } else {
        full[b] = std::conj(spec.values(static_cast<Eigen::Index>(nfft - b), static_cast<Eigen::Index>(f)));
      }
    }
    // DC and Nyquist bins of a real frame are real.
    full[0] = full[0].real();
    if (nfft % 2 == 0) full[nfft / 2] = full[nfft / 2].real();
    const auto time = fft::inverse(full);
    const std::size_t start = f * hop;
    for (std::size_t i = 0; i < window; ++i) {
      acc[start + i] += time[i].real() * w[i];
      norm[start + i] += w[i] * w[i];
    }
  }

  AudioClip out;
  out.sample_rate = spec.sample_rate;
  out.samples.assign(spec.signal_length, 0.0);
  const std::size_t half = window / 2;
  for (std::size_t t = 0; t < spec.signal_length; ++t) {
    const std::size_t p = t + half;
    if (p < padded_len && norm[p] > 1e-10) out.samples[t] = acc[p] / norm[p];
  }
  return out;
}

}  // namespace scatsep
