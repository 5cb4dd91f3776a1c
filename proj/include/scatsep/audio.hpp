#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "scatsep/core.hpp"

namespace scatsep {

/// Mono PCM signal. Samples are nominally in [-1, 1].
struct AudioClip {
  std::vector<double> samples;
  int sample_rate = 16000;

  std::size_t size() const { return samples.size(); }
  double duration() const { return static_cast<double>(samples.size()) / sample_rate; }

  void validate() const {
    if (sample_rate <= 0) throw Error("audio: sample rate must be positive");
    for (double v : samples) {
      if (!std::isfinite(v)) throw Error("audio: non-finite sample");
    }
  }
};

inline double rms(const std::vector<double>& x) {
  if (x.empty()) return 0.0;
  return std::sqrt(sum_squares(x) / static_cast<double>(x.size()));
}

// ---------------------------------------------------------------------------
// WAV (RIFF) I/O. Reads PCM16 and float32, mono or stereo; writes float32 mono.

namespace detail {

inline std::uint16_t read_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline std::uint32_t read_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

}  // namespace detail

inline AudioClip load_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("wav: cannot open " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto* data = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t size = bytes.size();
  if (size < 12 || std::memcmp(data, "RIFF", 4) != 0 || std::memcmp(data + 8, "WAVE", 4) != 0) {
    throw Error("wav: not a RIFF/WAVE file: " + path.string());
  }

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  const unsigned char* payload = nullptr;
  std::size_t payload_size = 0;
  bool have_fmt = false;

  std::size_t pos = 12;
  while (pos + 8 <= size) {
    const unsigned char* chunk = data + pos;
    const std::uint32_t chunk_size = detail::read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    const std::size_t available = std::min<std::size_t>(chunk_size, size - body);
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (available < 16) throw Error("wav: truncated fmt chunk: " + path.string());
      format = detail::read_u16(data + body);
      channels = detail::read_u16(data + body + 2);
      rate = detail::read_u32(data + body + 4);
      bits = detail::read_u16(data + body + 14);
      if (format == 0xFFFE && available >= 26) format = detail::read_u16(data + body + 24);
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      payload = data + body;
      payload_size = available;
    }
    pos = body + chunk_size + (chunk_size & 1u);
  }
  if (!have_fmt || payload == nullptr) throw Error("wav: missing fmt or data chunk: " + path.string());
  if (channels != 1 && channels != 2) throw Error("wav: only mono or stereo supported: " + path.string());
  if (rate == 0) throw Error("wav: zero sample rate: " + path.string());

  const bool pcm16 = format == 1 && bits == 16;
  const bool float32 = format == 3 && bits == 32;
  if (!pcm16 && !float32) throw Error("wav: unsupported encoding (need PCM16 or float32): " + path.string());

  const std::size_t width = bits / 8;
  const std::size_t frames = payload_size / (width * channels);
  if (frames == 0) throw Error("wav: zero-length audio: " + path.string());

  AudioClip clip;
  clip.sample_rate = static_cast<int>(rate);
  clip.samples.resize(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const unsigned char* p = payload + (f * channels + c) * width;
      if (pcm16) {
        acc += static_cast<std::int16_t>(detail::read_u16(p)) / 32768.0;
      } else {
        const std::uint32_t raw = detail::read_u32(p);
        float v;
        std::memcpy(&v, &raw, sizeof v);
        acc += static_cast<double>(v);
      }
    }
    clip.samples[f] = channels == 2 ? 0.5 * acc : acc;
  }
  clip.validate();
  return clip;
}

inline void save_wav(const std::filesystem::path& path, const AudioClip& clip) {
  clip.validate();
  const auto n = static_cast<std::uint32_t>(clip.samples.size());
  std::string out;
  out.reserve(44 + 4 * clip.samples.size());
  out += "RIFF";
  detail::put_u32(out, 36 + 4 * n);
  out += "WAVEfmt ";
  detail::put_u32(out, 16);
  detail::put_u16(out, 3);  // IEEE float
  detail::put_u16(out, 1);
  detail::put_u32(out, static_cast<std::uint32_t>(clip.sample_rate));
  detail::put_u32(out, static_cast<std::uint32_t>(clip.sample_rate) * 4);
  detail::put_u16(out, 4);
  detail::put_u16(out, 32);
  out += "data";
  detail::put_u32(out, 4 * n);
  for (double s : clip.samples) {
    const float v = static_cast<float>(s);
    std::uint32_t raw;
    std::memcpy(&raw, &v, sizeof raw);
    detail::put_u32(out, raw);
  }
  std::ofstream file(path, std::ios::binary);
  if (!file) throw Error("wav: cannot write " + path.string());
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw Error("wav: write failed " + path.string());
}

// ---------------------------------------------------------------------------
// Band-limited resampling: Kaiser-windowed sinc, 64 taps per output phase.

struct ResamplerDesign {
  double taps_per_phase = 64.0;
  double kaiser_beta = 8.6;
  /// Cutoff as a fraction of the lower Nyquist; leaves room for the
  /// transition band so the stop band starts at the output Nyquist.
  double rolloff = 0.9;
};

inline AudioClip resample(const AudioClip& clip, int target_rate, const ResamplerDesign& design = {}) {
  if (target_rate <= 0) throw Error("resample: target rate must be positive");
  if (target_rate == clip.sample_rate) return clip;

  const double ratio = static_cast<double>(target_rate) / clip.sample_rate;
  const double scale = std::min(1.0, ratio);
  const double cutoff = 0.5 * design.rolloff * scale;  // cycles per input sample
  const double half_width = 0.5 * design.taps_per_phase / scale;
  const double i0_beta = std::cyl_bessel_i(0.0, design.kaiser_beta);
  const auto reach = static_cast<std::ptrdiff_t>(std::ceil(half_width));

  auto kernel = [&](double d) {
    const double u = d / half_width;
    if (std::abs(u) > 1.0) return 0.0;
    const double arg = 2.0 * cutoff * d;
    const double sinc = arg == 0.0 ? 1.0 : std::sin(kPi * arg) / (kPi * arg);
    return 2.0 * cutoff * sinc * std::cyl_bessel_i(0.0, design.kaiser_beta * std::sqrt(1.0 - u * u)) / i0_beta;
  };

  // Output n sits at input time n*in/out = base + p/phases; kernels repeat per phase.
  const long long g = std::gcd(static_cast<long long>(clip.sample_rate), static_cast<long long>(target_rate));
  const long long step = clip.sample_rate / g;
  const long long phases = target_rate / g;
  std::vector<std::vector<double>> table(static_cast<std::size_t>(phases));

  const auto n_in = static_cast<std::ptrdiff_t>(clip.samples.size());
  const auto n_out = static_cast<std::size_t>(std::llround(static_cast<double>(n_in) * ratio));

  AudioClip out;
  out.sample_rate = target_rate;
  out.samples.assign(n_out, 0.0);
  for (std::size_t n = 0; n < n_out; ++n) {
    const long long pos = static_cast<long long>(n) * step;
    const auto base = static_cast<std::ptrdiff_t>(pos / phases);
    const auto p = static_cast<std::size_t>(pos % phases);
    const double frac = static_cast<double>(p) / static_cast<double>(phases);
    auto& taps = table[p];
    if (taps.empty()) {
      taps.resize(static_cast<std::size_t>(2 * reach + 1));
      for (std::ptrdiff_t o = -reach; o <= reach; ++o) taps[static_cast<std::size_t>(o + reach)] = kernel(frac - static_cast<double>(o));
    }
    double acc = 0.0;
    for (std::ptrdiff_t o = -reach; o <= reach; ++o) {
      const std::ptrdiff_t k = base + o;
      if (k < 0 || k >= n_in) continue;
      acc += clip.samples[static_cast<std::size_t>(k)] * taps[static_cast<std::size_t>(o + reach)];
    }
    out.samples[n] = acc;
  }
  return out;
}

// ---------------------------------------------------------------------------
// 0 dB mixing.

struct Mixture {
  AudioClip mixture;
  AudioClip source1;
  AudioClip source2;
};

/// Truncates to the shorter clip, rescales x2 to the RMS of x1 and sums.
inline Mixture mix_at_0db(const AudioClip& x1, const AudioClip& x2) {
  if (x1.sample_rate != x2.sample_rate) throw Error("mix: sample rates differ");
  const std::size_t n = std::min(x1.size(), x2.size());
  Mixture m;
  m.source1.sample_rate = m.source2.sample_rate = m.mixture.sample_rate = x1.sample_rate;
  m.source1.samples.assign(x1.samples.begin(), x1.samples.begin() + static_cast<std::ptrdiff_t>(n));
  m.source2.samples.assign(x2.samples.begin(), x2.samples.begin() + static_cast<std::ptrdiff_t>(n));
  const double r1 = rms(m.source1.samples);
  const double r2 = rms(m.source2.samples);
  if (r1 == 0.0 || r2 == 0.0) throw Error("mix: a source is all-zero, 0 dB gain undefined");
  const double gain = r1 / r2;
  for (double& v : m.source2.samples) v *= gain;
  m.mixture.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) m.mixture.samples[i] = m.source1.samples[i] + m.source2.samples[i];
  return m;
}

// ---------------------------------------------------------------------------
// Dataset manifest: `path,label,split` per line, '#' comments allowed.

inline constexpr std::array<const char*, 2> kSourceLabels{"source1", "source2"};

struct ManifestEntry {
  std::filesystem::path path;
  std::string label;
  std::string split;
};

struct DatasetManifest {
  std::vector<ManifestEntry> entries;

  std::vector<std::filesystem::path> select(const std::string& label, const std::string& split) const {
    std::vector<std::filesystem::path> out;
    for (const auto& e : entries) {
      if (e.label == label && e.split == split) out.push_back(e.path);
    }
    return out;
  }
};

namespace detail {
inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}
}  // namespace detail

inline DatasetManifest parse_manifest(std::istream& in, const std::filesystem::path& base_dir) {
  DatasetManifest manifest;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = detail::trim(line);
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(detail::trim(field));
    if (fields.size() != 3) {
      throw Error("manifest: line " + std::to_string(line_no) + ": expected path,label,split");
    }
    ManifestEntry e;
    e.path = fields[0];
    if (e.path.is_relative()) e.path = base_dir / e.path;
    e.label = fields[1];
    e.split = fields[2];
    if (e.label != kSourceLabels[0] && e.label != kSourceLabels[1]) {
      throw Error("manifest: line " + std::to_string(line_no) + ": label must be source1 or source2");
    }
    if (e.split != "train" && e.split != "test") {
      throw Error("manifest: line " + std::to_string(line_no) + ": split must be train or test");
    }
    if (!std::filesystem::exists(e.path)) {
      throw Error("manifest: missing file " + e.path.string());
    }
    manifest.entries.push_back(std::move(e));
  }
  return manifest;
}

inline DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("manifest: cannot open " + path.string());
  return parse_manifest(in, path.parent_path());
}

}  // namespace scatsep
