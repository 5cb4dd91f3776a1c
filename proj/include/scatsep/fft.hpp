#pragma once

#include <unsupported/Eigen/FFT>

#include "scatsep/core.hpp"

namespace scatsep::fft {

namespace detail {
inline Eigen::FFT<double>& engine() {
  thread_local Eigen::FFT<double> instance;
  return instance;
}
}  // namespace detail

/// Unnormalized forward DFT of a real signal (full spectrum).
inline std::vector<Complex> forward(const std::vector<double>& x) {
  std::vector<Complex> out;
  detail::engine().fwd(out, x);
  return out;
}

inline std::vector<Complex> forward(const std::vector<Complex>& x) {
  std::vector<Complex> out;
  detail::engine().fwd(out, x);
  return out;
}

/// Inverse DFT scaled by 1/N.
inline std::vector<Complex> inverse(const std::vector<Complex>& spectrum) {
  std::vector<Complex> out;
  detail::engine().inv(out, spectrum);
  return out;
}

/// Sample frequency of DFT bin k in Hz, mapped to [-fs/2, fs/2).
inline double bin_frequency(std::size_t k, std::size_t n, double sample_rate) {
  const auto half = n / 2;
  const double kk = k < half ? static_cast<double>(k)
                             : static_cast<double>(k) - static_cast<double>(n);
  return kk * sample_rate / static_cast<double>(n);
}

}  // namespace scatsep::fft
