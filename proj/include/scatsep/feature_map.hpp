#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "scatsep/core.hpp"

namespace scatsep {

/// Real time-frequency representation: rows are bins (or scattering paths),
/// columns are frames spaced `stride` samples apart.
struct FeatureMap {
  Matrix values;
  int stride = 1;
  int level = 1;
  int sample_rate = 16000;
  std::vector<std::string> bin_labels;
  /// Set for representations that keep polarity (Haar features); every
  /// other map is non-negative.
  bool signed_values = false;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index frames() const { return values.cols(); }

  void validate() const {
    if (stride <= 0) throw Error("feature map: stride must be positive");
    if (static_cast<Eigen::Index>(bin_labels.size()) != values.rows()) {
      throw Error("feature map: label count does not match rows");
    }
    if (!values.allFinite()) throw Error("feature map: non-finite value");
    if (!signed_values && values.size() > 0 && values.minCoeff() < 0.0) {
      throw Error("feature map: negative value in a non-negative map");
    }
  }
};

// Dump format: text header terminated by a `data` line, then rows*frames
// little-endian float32 values in row-major order.
//
//   SCATSEP-FEATURES 1
//   level <int>
//   rows <int>
//   frames <int>
//   stride <int>
//   sample_rate <int>
//   signed <0|1>
//   labels
//   <one label per line>
//   data

namespace detail {

inline void write_floats_row_major(std::ostream& out, const Matrix& m) {
  std::vector<char> buf(static_cast<std::size_t>(m.size()) * 4);
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const float v = static_cast<float>(m(r, c));
      std::uint32_t raw;
      std::memcpy(&raw, &v, 4);
      for (int b = 0; b < 4; ++b) buf[k++] = static_cast<char>((raw >> (8 * b)) & 0xff);
    }
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

inline Matrix read_floats_row_major(std::istream& in, Eigen::Index rows, Eigen::Index cols) {
  std::vector<unsigned char> buf(static_cast<std::size_t>(rows * cols) * 4);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(in.gcount()) != buf.size()) throw Error("dump: truncated payload");
  Matrix m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      const std::uint32_t raw = static_cast<std::uint32_t>(buf[k]) | (static_cast<std::uint32_t>(buf[k + 1]) << 8) |
                                (static_cast<std::uint32_t>(buf[k + 2]) << 16) |
                                (static_cast<std::uint32_t>(buf[k + 3]) << 24);
      k += 4;
      float v;
      std::memcpy(&v, &raw, 4);
      m(r, c) = v;
    }
  }
  return m;
}

/// Reads `key value` and checks the key.
template <typename T>
T expect_field(std::istream& in, const std::string& key) {
  std::string line;
  if (!std::getline(in, line)) throw Error("dump: missing field " + key);
  std::istringstream ss(line);
  std::string k;
  T v{};
  if (!(ss >> k >> v) || k != key) throw Error("dump: expected field " + key + ", got '" + line + "'");
  return v;
}

inline void expect_line(std::istream& in, const std::string& expected) {
  std::string line;
  if (!std::getline(in, line) || line != expected) throw Error("dump: expected '" + expected + "'");
}

}  // namespace detail

inline void write_feature_dump(std::ostream& out, const FeatureMap& fm) {
  fm.validate();
  out << "SCATSEP-FEATURES 1\n"
      << "level " << fm.level << "\n"
      << "rows " << fm.rows() << "\n"
      << "frames " << fm.frames() << "\n"
      << "stride " << fm.stride << "\n"
      << "sample_rate " << fm.sample_rate << "\n"
      << "signed " << (fm.signed_values ? 1 : 0) << "\n"
      << "labels\n";
  for (const auto& l : fm.bin_labels) out << l << "\n";
  out << "data\n";
  detail::write_floats_row_major(out, fm.values);
}

inline FeatureMap read_feature_dump(std::istream& in) {
  detail::expect_line(in, "SCATSEP-FEATURES 1");
  FeatureMap fm;
  fm.level = detail::expect_field<int>(in, "level");
  const auto rows = detail::expect_field<Eigen::Index>(in, "rows");
  const auto frames = detail::expect_field<Eigen::Index>(in, "frames");
  fm.stride = detail::expect_field<int>(in, "stride");
  fm.sample_rate = detail::expect_field<int>(in, "sample_rate");
  fm.signed_values = detail::expect_field<int>(in, "signed") != 0;
  if (rows < 0 || frames < 0) throw Error("dump: negative dimensions");
  detail::expect_line(in, "labels");
  fm.bin_labels.resize(static_cast<std::size_t>(rows));
  for (auto& l : fm.bin_labels) {
    if (!std::getline(in, l)) throw Error("dump: truncated labels");
  }
  detail::expect_line(in, "data");
  fm.values = detail::read_floats_row_major(in, rows, frames);
  fm.validate();
  return fm;
}

inline void save_feature_dump(const std::filesystem::path& path, const FeatureMap& fm) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("dump: cannot write " + path.string());
  write_feature_dump(out, fm);
}

inline FeatureMap load_feature_dump(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("dump: cannot open " + path.string());
  return read_feature_dump(in);
}

/// Returns the per-frame weights 1 / (||column|| + floor).
inline Vector frame_weights(const Matrix& values, double floor) {
  Vector w(values.cols());
  for (Eigen::Index c = 0; c < values.cols(); ++c) w(c) = 1.0 / (values.col(c).norm() + floor);
  return w;
}

}  // namespace scatsep
