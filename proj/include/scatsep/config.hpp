#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

#include "scatsep/core.hpp"

namespace scatsep {

struct FeatureSettings {
  std::string mode = "stft";  // stft | scatt1 | scatt2 | haar
  int sample_rate = 16000;
  int q = 32;
  int j1 = 5;
  int j2 = 5;
  int layer2_octaves = 11;
  int m_max = 2;
  int window = 1024;
  int hop = 512;
  int fft_size = 1024;
};

struct NmfSettings {
  int atoms = 0;  // 0: per-mode default
  double sparsity = 0.1;
  int train_iters = 200;
  int infer_iters = 100;
  double rel_tol = 1e-5;
  double mask_power = 2.0;
  // discriminative fine-tuning (off when epochs = 0)
  int finetune_epochs = 0;
  int unroll = 10;
  double finetune_step = 1e-3;
  double alpha = 1.0;
};

struct NeuralSettings {
  std::string arch = "cqt-dnn";
  double learning_rate = 0.01;
  double momentum = 0.9;
  int batch_size = 128;
  int epochs = 50;
  int branch_width = 128;
};

struct RunConfig {
  FeatureSettings features;
  NmfSettings nmf;
  NeuralSettings neural;
  std::string backend = "nmf";  // nmf | neural, used by `separate`
  std::size_t max_pairs = 0;    // 0: every cross-source pair
  std::string manifest;
  std::string model_dir;
  std::string output_dir;
  std::uint64_t seed = 1;
  int jobs = 1;

  /// Atom count actually used for the current feature mode.
  int atoms() const {
    if (nmf.atoms > 0) return nmf.atoms;
    if (features.mode == "stft") return 200;
    if (features.mode == "scatt1") return 400;
    return 1000;
  }

  void validate() const {
    static const std::set<std::string> modes{"stft", "scatt1", "scatt2", "haar"};
    if (!modes.count(features.mode)) throw Error("config: features.mode must be stft, scatt1, scatt2 or haar");
    if (features.sample_rate <= 0) throw Error("config: features.sample_rate must be positive");
    if (features.q < 1 || features.j1 < 1 || features.j2 < 0 || features.layer2_octaves < 1 || features.m_max < 1) {
      throw Error("config: invalid scattering parameters");
    }
    if (features.window <= 0 || features.hop <= 0 || features.fft_size <= 0) throw Error("config: invalid STFT sizes");
    if (nmf.atoms < 0 || nmf.train_iters < 1 || nmf.infer_iters < 1 || nmf.sparsity < 0.0 || !(nmf.rel_tol > 0.0)) {
      throw Error("config: invalid nmf settings");
    }
    if (nmf.finetune_epochs < 0 || nmf.unroll < 1 || nmf.finetune_step < 0.0 || !(nmf.mask_power > 0.0)) {
      throw Error("config: invalid nmf fine-tuning settings");
    }
    if (neural.epochs < 0 || neural.batch_size < 1 || neural.learning_rate < 0.0 || neural.momentum < 0.0 ||
        neural.momentum >= 1.0 || neural.branch_width < 1) {
      throw Error("config: invalid neural settings");
    }
    if (backend != "nmf" && backend != "neural") throw Error("config: separate.backend must be nmf or neural");
    if (jobs < 1) throw Error("config: run.jobs must be >= 1");
  }
};

namespace detail {

/// Binds `section.key` names to fields; unknown keys are an error.
class KeyTable {
 public:
  template <typename T>
  void bind(const std::string& key, T& field) {
    setters_[key] = [&field, key](const std::string& text) {
      std::istringstream ss(text);
      T v{};
      if constexpr (std::is_same_v<T, std::string>) {
        v = text;
      } else if (!(ss >> v) || !(ss >> std::ws).eof()) {
        throw Error("config: bad value '" + text + "' for " + key);
      }
      field = v;
    };
  }

  void set(const std::string& key, const std::string& value) const {
    const auto it = setters_.find(key);
    if (it == setters_.end()) throw Error("config: unknown key '" + key + "'");
    it->second(value);
  }

  bool has(const std::string& key) const { return setters_.count(key) != 0; }

 private:
  std::map<std::string, std::function<void(const std::string&)>> setters_;
};

inline KeyTable key_table(RunConfig& c) {
  KeyTable t;
  t.bind("features.mode", c.features.mode);
  t.bind("features.sample_rate", c.features.sample_rate);
  t.bind("features.q", c.features.q);
  t.bind("features.j1", c.features.j1);
  t.bind("features.j2", c.features.j2);
  t.bind("features.layer2_octaves", c.features.layer2_octaves);
  t.bind("features.m_max", c.features.m_max);
  t.bind("features.window", c.features.window);
  t.bind("features.hop", c.features.hop);
  t.bind("features.fft_size", c.features.fft_size);
  t.bind("nmf.atoms", c.nmf.atoms);
  t.bind("nmf.sparsity", c.nmf.sparsity);
  t.bind("nmf.train_iters", c.nmf.train_iters);
  t.bind("nmf.infer_iters", c.nmf.infer_iters);
  t.bind("nmf.rel_tol", c.nmf.rel_tol);
  t.bind("nmf.mask_power", c.nmf.mask_power);
  t.bind("nmf.finetune_epochs", c.nmf.finetune_epochs);
  t.bind("nmf.unroll", c.nmf.unroll);
  t.bind("nmf.finetune_step", c.nmf.finetune_step);
  t.bind("nmf.alpha", c.nmf.alpha);
  t.bind("neural.arch", c.neural.arch);
  t.bind("neural.learning_rate", c.neural.learning_rate);
  t.bind("neural.momentum", c.neural.momentum);
  t.bind("neural.batch_size", c.neural.batch_size);
  t.bind("neural.epochs", c.neural.epochs);
  t.bind("neural.branch_width", c.neural.branch_width);
  t.bind("separate.backend", c.backend);
  t.bind("data.max_pairs", c.max_pairs);
  t.bind("paths.manifest", c.manifest);
  t.bind("paths.model_dir", c.model_dir);
  t.bind("paths.output_dir", c.output_dir);
  t.bind("run.seed", c.seed);
  t.bind("run.jobs", c.jobs);
  return t;
}

}  // namespace detail

/// Applies `section.key = value` overrides (as from the command line).
inline void apply_override(RunConfig& cfg, const std::string& key, const std::string& value) {
  detail::key_table(cfg).set(key, value);
}

/// INI text with [features], [nmf], [neural], [separate], [data], [paths] and [run] sections.
inline RunConfig parse_config(std::istream& in, RunConfig cfg = {}) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw Error(std::string("config: ") + e.message() + " at line " + std::to_string(e.line()));
  }
  const auto table = detail::key_table(cfg);
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw Error("config: key '" + section + "' outside a section");
    for (const auto& [key, value] : body) table.set(section + "." + key, value.data());
  }
  return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("config: cannot open " + path.string());
  return parse_config(in);
}

}  // namespace scatsep
