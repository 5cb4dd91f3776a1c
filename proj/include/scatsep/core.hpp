#pragma once

#include <Eigen/Dense>

#include <complex>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace scatsep {

/// Raised for every contract violation (bad shapes, unreadable files,
/// invalid configuration). Messages are single-line diagnostics.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Matrix = Eigen::MatrixXd;
using ComplexMatrix = Eigen::MatrixXcd;
using Vector = Eigen::VectorXd;
using Complex = std::complex<double>;

inline constexpr double kPi = 3.14159265358979323846;

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

/// Largest power of two <= x (x >= 1).
inline int floor_pow2(double x) {
  int p = 1;
  while (2.0 * p <= x) p <<= 1;
  return p;
}

/// Mirror index into [0, n) without repeating the edge sample.
inline std::ptrdiff_t reflect_index(std::ptrdiff_t i, std::ptrdiff_t n) {
  if (n == 1) return 0;
  const std::ptrdiff_t period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

/// Signal extended by `pad` mirrored samples on each side.
inline std::vector<double> reflect_pad(const std::vector<double>& x, std::size_t pad) {
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  std::vector<double> out(x.size() + 2 * pad);
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(out.size()); ++i) {
    out[static_cast<std::size_t>(i)] =
        x[static_cast<std::size_t>(reflect_index(i - static_cast<std::ptrdiff_t>(pad), n))];
  }
  return out;
}

inline double sum_squares(const std::vector<double>& x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return s;
}

}  // namespace scatsep
