#pragma once

#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>

#include "scatsep/audio.hpp"

namespace scatsep {

inline constexpr double kMetricClampDb = 100.0;

/// 10 log10(num / den) clamped to +-100 dB (zero numerator -> -100, zero denominator -> +100).
inline double ratio_db(double num, double den) {
  if (!(num > 0.0)) return -kMetricClampDb;
  if (!(den > 0.0)) return kMetricClampDb;
  return std::clamp(10.0 * std::log10(num / den), -kMetricClampDb, kMetricClampDb);
}

struct Decomposition {
  std::vector<double> target, interference, artifacts;
};

/// Time-invariant (filter-free) projections of `estimate` onto the target
/// reference and onto span{s1, s2}.
inline Decomposition bss_decompose(const std::vector<double>& estimate, const std::vector<double>& s1,
                                   const std::vector<double>& s2, int target) {
  if (estimate.size() != s1.size() || s1.size() != s2.size()) throw Error("bss_eval: length mismatch");
  if (target != 0 && target != 1) throw Error("bss_eval: target index must be 0 or 1");
  const auto n = static_cast<Eigen::Index>(estimate.size());
  const Eigen::Map<const Vector> e(estimate.data(), n), a(s1.data(), n), b(s2.data(), n);
  const Eigen::Map<const Vector>& ref = target == 0 ? a : b;
  const double ref_sq = ref.squaredNorm();
  if (!(ref_sq > 0.0)) throw Error("bss_eval: zero-energy target reference");

  const Vector s_target = (ref.dot(e) / ref_sq) * ref;
  Matrix basis(n, 2);
  basis << a, b;
  const Eigen::Matrix2d gram = basis.transpose() * basis;
  const Eigen::Vector2d rhs = basis.transpose() * e;
  const Eigen::Vector2d coef = gram.completeOrthogonalDecomposition().solve(rhs);
  const Vector p_all = basis * coef;

  Decomposition d;
  d.target.assign(s_target.data(), s_target.data() + n);
  const Vector interf = p_all - s_target;
  const Vector artif = e - p_all;
  d.interference.assign(interf.data(), interf.data() + n);
  d.artifacts.assign(artif.data(), artif.data() + n);
  return d;
}

struct BssMetrics {
  double sdr = 0.0;
  double sir = 0.0;
  double sar = 0.0;
};

inline BssMetrics bss_eval(const std::vector<double>& estimate, const std::vector<double>& s1,
                           const std::vector<double>& s2, int target) {
  const auto d = bss_decompose(estimate, s1, s2, target);
  double t = 0.0, i = 0.0, a = 0.0, ia = 0.0, ti = 0.0;
  for (std::size_t k = 0; k < estimate.size(); ++k) {
    t += d.target[k] * d.target[k];
    i += d.interference[k] * d.interference[k];
    a += d.artifacts[k] * d.artifacts[k];
    const double x = d.interference[k] + d.artifacts[k];
    ia += x * x;
    const double y = d.target[k] + d.interference[k];
    ti += y * y;
  }
  return {ratio_db(t, ia), ratio_db(t, i), ratio_db(ti, a)};
}

inline BssMetrics bss_eval(const AudioClip& estimate, const AudioClip& s1, const AudioClip& s2, int target) {
  if (estimate.sample_rate != s1.sample_rate || s1.sample_rate != s2.sample_rate) {
    throw Error("bss_eval: sample rates differ");
  }
  return bss_eval(estimate.samples, s1.samples, s2.samples, target);
}

/// Both sources of one mixture.
struct MetricsRow {
  std::string name;
  BssMetrics source[2];

  BssMetrics average() const {
    return {(source[0].sdr + source[1].sdr) / 2, (source[0].sir + source[1].sir) / 2,
            (source[0].sar + source[1].sar) / 2};
  }
};

inline MetricsRow evaluate_separation(const AudioClip& x1_hat, const AudioClip& x2_hat, const AudioClip& x1,
                                      const AudioClip& x2, std::string name = {}) {
  MetricsRow row;
  row.name = std::move(name);
  row.source[0] = bss_eval(x1_hat, x1, x2, 0);
  row.source[1] = bss_eval(x2_hat, x1, x2, 1);
  return row;
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (0 for one value)
};

inline MeanStd mean_std(const std::vector<double>& v) {
  if (v.empty()) throw Error("aggregate: no rows");
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, v.size() > 1 ? std::sqrt(s / static_cast<double>(v.size() - 1)) : 0.0};
}

/// "mean [std]" with one decimal.
inline std::string format_mean_std(const MeanStd& ms) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f [%.1f]", ms.mean, ms.std);
  return buf;
}

struct MethodSummary {
  std::string method;
  std::size_t rows = 0;
  MeanStd sdr, sir, sar;
};

/// Per-method aggregate of the per-mixture averages.
inline MethodSummary aggregate(const std::string& method, const std::vector<MetricsRow>& rows) {
  if (rows.empty()) throw Error("aggregate: no rows");
  std::vector<double> sdr, sir, sar;
  for (const auto& r : rows) {
    const auto a = r.average();
    sdr.push_back(a.sdr);
    sir.push_back(a.sir);
    sar.push_back(a.sar);
  }
  return {method, rows.size(), mean_std(sdr), mean_std(sir), mean_std(sar)};
}

inline void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows) {
  out << "mixture,sdr1,sir1,sar1,sdr2,sir2,sar2,sdr,sir,sar\n";
  char buf[256];
  for (const auto& r : rows) {
    const auto a = r.average();
    std::snprintf(buf, sizeof buf, ",%.4f,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f\n", r.source[0].sdr,
                  r.source[0].sir, r.source[0].sar, r.source[1].sdr, r.source[1].sir, r.source[1].sar, a.sdr, a.sir,
                  a.sar);
    out << r.name << buf;
  }
}

inline void write_summary_csv(std::ostream& out, const std::vector<MethodSummary>& table) {
  out << "method,rows,sdr_mean,sdr_std,sir_mean,sir_std,sar_mean,sar_std\n";
  char buf[256];
  for (const auto& s : table) {
    std::snprintf(buf, sizeof buf, ",%zu,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f\n", s.rows, s.sdr.mean, s.sdr.std, s.sir.mean,
                  s.sir.std, s.sar.mean, s.sar.std);
    out << s.method << buf;
  }
}

/// Aligned text table: one method per row, SDR / SIR / SAR as "mean [std]".
inline void write_summary_table(std::ostream& out, const std::vector<MethodSummary>& table) {
  std::size_t w = 6;
  for (const auto& s : table) w = std::max(w, s.method.size());
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s  %-13s  %-13s  %-13s\n", static_cast<int>(w), "method", "SDR", "SIR", "SAR");
  out << buf;
  for (const auto& s : table) {
    std::snprintf(buf, sizeof buf, "%-*s  %-13s  %-13s  %-13s\n", static_cast<int>(w), s.method.c_str(),
                  format_mean_std(s.sdr).c_str(), format_mean_std(s.sir).c_str(), format_mean_std(s.sar).c_str());
    out << buf;
  }
}

}  // namespace scatsep
