#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <optional>
#include <thread>

#include "scatsep/config.hpp"
#include "scatsep/neural.hpp"
#include "scatsep/nmf.hpp"
#include "scatsep/phase.hpp"

namespace scatsep {

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. Each index writes its
/// own result slot, so output does not depend on scheduling.
template <typename F>
void parallel_for(std::size_t n, int jobs, F&& fn) {
  const auto workers = static_cast<std::size_t>(std::max(1, jobs));
  if (workers == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, n); ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

/// Deterministic cross product of two clip lists; when capped, a seeded
/// subset is kept in row-major order.
inline std::vector<std::pair<std::size_t, std::size_t>> cross_pairs(std::size_t n1, std::size_t n2,
                                                                     std::size_t max_pairs, std::uint64_t seed) {
  std::vector<std::pair<std::size_t, std::size_t>> all;
  for (std::size_t i = 0; i < n1; ++i) {
    for (std::size_t j = 0; j < n2; ++j) all.emplace_back(i, j);
  }
  if (max_pairs == 0 || max_pairs >= all.size()) return all;
  std::mt19937_64 rng(seed);
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(max_pairs);
  std::sort(all.begin(), all.end());
  return all;
}

/// Feature front-end selected by the run configuration.
class FeaturePipeline {
 public:
  explicit FeaturePipeline(const FeatureSettings& fs)
      : settings_(fs),
        stft_{fs.window, fs.hop, fs.fft_size},
        scattering_(WaveletFilterBank::design(fs.q, fs.j1, fs.sample_rate), fs.layer2_octaves, fs.m_max) {
    if (fs.mode == "stft") stft_.validate();
  }

  const FeatureSettings& settings() const { return settings_; }
  const StftConfig& stft_config() const { return stft_; }
  const ScatteringTransform& scattering() const { return scattering_; }

  int levels() const { return settings_.mode == "scatt2" ? 2 : 1; }

  /// Resamples to the configured rate when needed.
  AudioClip prepare(const AudioClip& clip) const {
    clip.validate();
    return clip.sample_rate == settings_.sample_rate ? clip : resample(clip, settings_.sample_rate);
  }

  FeatureMap stft_magnitude(const AudioClip& clip) const {
    const auto spec = stft(clip, stft_);
    FeatureMap fm;
    fm.values = spec.values.cwiseAbs();
    fm.stride = stft_.hop;
    fm.level = 1;
    fm.sample_rate = clip.sample_rate;
    for (int b = 0; b < stft_.bins(); ++b) fm.bin_labels.push_back("bin" + std::to_string(b));
    return fm;
  }

  /// Feature maps of every level for the configured mode.
  std::vector<FeatureMap> extract(const AudioClip& clip) const {
    const auto& mode = settings_.mode;
    if (mode == "stft") return {stft_magnitude(clip)};
    if (mode == "scatt1") return {to_feature_map(scattering_.layer1(clip))};
    if (mode == "scatt2") {
      const auto p = scattering_.pyramid(clip, 2);
      return {to_feature_map(p.layers[0]), to_feature_map(p.layers[1])};
    }
    if (mode == "haar") return {haar_features(scattering_.layer1(clip), settings_.j2)};
    throw Error("features: unknown mode '" + mode + "'");
  }

 private:
  FeatureSettings settings_;
  StftConfig stft_;
  ScatteringTransform scattering_;
};

// ---------------------------------------------------------------------------
// NMF back-end.

inline InferenceConfig inference_config(const RunConfig& cfg, bool training) {
  InferenceConfig ic;
  ic.max_iters = training ? cfg.nmf.train_iters : cfg.nmf.infer_iters;
  ic.rel_tol = cfg.nmf.rel_tol;
  return ic;
}

struct NmfTrainingReport {
  std::vector<ModelPair> levels;
  std::vector<std::pair<double, double>> final_objective;  // per level, per source
};

/// One dictionary per source per level from isolated source clips, with
/// optional discriminative fine-tuning on 0 dB mixtures of the same clips.
inline NmfTrainingReport train_nmf_models(const FeaturePipeline& fp, const RunConfig& cfg,
                                          const std::vector<AudioClip>& clips1, const std::vector<AudioClip>& clips2) {
  if (cfg.features.mode == "haar") throw Error("train-nmf: Haar features are signed; use stft, scatt1 or scatt2");
  if (clips1.empty() || clips2.empty()) throw Error("train-nmf: both sources need training clips");
  std::vector<std::vector<FeatureMap>> f1(clips1.size()), f2(clips2.size());
  parallel_for(clips1.size(), cfg.jobs, [&](std::size_t i) { f1[i] = fp.extract(clips1[i]); });
  parallel_for(clips2.size(), cfg.jobs, [&](std::size_t i) { f2[i] = fp.extract(clips2[i]); });

  const auto ic = inference_config(cfg, true);
  NmfTrainingReport report;
  for (int level = 0; level < fp.levels(); ++level) {
    auto collect = [level](const std::vector<std::vector<FeatureMap>>& f) {
      std::vector<FeatureMap> out;
      for (const auto& v : f) out.push_back(v[static_cast<std::size_t>(level)]);
      return out;
    };
    const std::uint64_t base = cfg.seed + 1000 * static_cast<std::uint64_t>(level);
    auto r1 = nmf_train(collect(f1), cfg.atoms(), cfg.nmf.sparsity, ic, base + 1, cfg.features.mode);
    auto r2 = nmf_train(collect(f2), cfg.atoms(), cfg.nmf.sparsity, ic, base + 2, cfg.features.mode);
    report.levels.push_back({std::move(r1.model), std::move(r2.model)});
    report.final_objective.emplace_back(r1.objective.back(), r2.objective.back());
  }

  if (cfg.nmf.finetune_epochs > 0) {
    const auto pairs = cross_pairs(clips1.size(), clips2.size(), cfg.max_pairs, cfg.seed);
    std::vector<std::vector<DiscriminativeExample>> data(static_cast<std::size_t>(fp.levels()),
                                                         std::vector<DiscriminativeExample>(pairs.size()));
    parallel_for(pairs.size(), cfg.jobs, [&](std::size_t p) {
      const auto mix = mix_at_0db(clips1[pairs[p].first], clips2[pairs[p].second]);
      const auto fy = fp.extract(mix.mixture), fa = fp.extract(mix.source1), fb = fp.extract(mix.source2);
      for (std::size_t l = 0; l < fy.size(); ++l) data[l][p] = {fy[l].values, fa[l].values, fb[l].values};
    });
    FinetuneConfig ft{cfg.nmf.alpha, cfg.nmf.unroll, cfg.nmf.finetune_step, cfg.nmf.finetune_epochs};
    for (std::size_t l = 0; l < report.levels.size(); ++l) {
      report.levels[l] = nmf_discriminative_finetune(report.levels[l], data[l], ft, inference_config(cfg, false)).models;
    }
  }
  return report;
}

/// Separation with per-level NMF estimates and the matching phase recovery.
inline std::pair<AudioClip, AudioClip> separate_nmf(const FeaturePipeline& fp, const std::vector<ModelPair>& models,
                                                    const RunConfig& cfg, const AudioClip& y) {
  const auto features = fp.extract(y);
  if (models.size() != features.size()) throw Error("separate: model levels do not match the feature mode");
  for (std::size_t l = 0; l < models.size(); ++l) {
    if (models[l].source1.descriptor.mode != fp.settings().mode) {
      throw Error("separate: models were trained on '" + models[l].source1.descriptor.mode + "' features");
    }
  }
  const auto z = nmf_infer_multires(features, models, inference_config(cfg, false), cfg.seed);
  if (fp.settings().mode == "stft") {
    const auto [a, b] = reconstruct_sources(z[0].z1, z[0].z2, models[0].source1, models[0].source2);
    return mask_and_invert(y, soft_mask(a, b, cfg.nmf.mask_power), fp.stft_config());
  }
  std::vector<LevelEstimate> levels;
  for (std::size_t l = 0; l < z.size(); ++l) {
    auto [a, b] = reconstruct_sources(z[l].z1, z[l].z2, models[l].source1, models[l].source2);
    levels.push_back({std::move(a), std::move(b)});
  }
  GreedyConfig gc;
  gc.p = cfg.nmf.mask_power;
  return greedy_scatt_inversion(y, levels, fp.scattering(), gc);
}

// ---------------------------------------------------------------------------
// Neural back-end. Networks always predict masks on the layer-1 grid.

inline Matrix network_inputs(const std::string& arch, int j2, const ScatteringLayer& l1) {
  const auto fm = to_feature_map(l1);
  if (arch == "dnn-multi") {
    const auto haar = haar_features(l1, j2);
    return build_inputs(arch, fm.values, &haar.values, j2);
  }
  return build_inputs(arch, fm.values, nullptr, j2);
}

inline TrainingSet neural_training_set(const FeaturePipeline& fp, const std::string& arch, int j2,
                                       const std::vector<Mixture>& mixtures, int jobs) {
  if (mixtures.empty()) throw Error("train-dnn: no training mixtures");
  struct Part {
    Matrix x, t1, t2;
    std::vector<Matrix> y, s1, s2;
  };
  std::vector<Part> parts(mixtures.size());
  const bool feature_mode = arch == "dnn-multi" || arch == "cnn-multi";
  parallel_for(mixtures.size(), jobs, [&](std::size_t i) {
    const auto& st = fp.scattering();
    const auto ly = st.layer1(mixtures[i].mixture);
    const Matrix a = to_feature_map(st.layer1(mixtures[i].source1)).values;
    const Matrix b = to_feature_map(st.layer1(mixtures[i].source2)).values;
    const Matrix y = to_feature_map(ly).values;
    auto& p = parts[i];
    p.x = network_inputs(arch, j2, ly);
    if (feature_mode) {
      const Vector s = input_scales(y);
      const int depth = j2;
      for (const auto& m : resolution_stack(y, depth)) p.y.push_back(m * s.asDiagonal());
      for (const auto& m : resolution_stack(a, depth)) p.s1.push_back(m * s.asDiagonal());
      for (const auto& m : resolution_stack(b, depth)) p.s2.push_back(m * s.asDiagonal());
    } else {
      auto masks = soft_mask(a, b, 2.0);
      p.t1 = std::move(masks.m1);
      p.t2 = std::move(masks.m2);
    }
  });

  auto hcat = [](const std::vector<const Matrix*>& ms) {
    Eigen::Index cols = 0;
    for (const auto* m : ms) cols += m->cols();
    Matrix out(ms.front()->rows(), cols);
    Eigen::Index at = 0;
    for (const auto* m : ms) {
      out.middleCols(at, m->cols()) = *m;
      at += m->cols();
    }
    return out;
  };
  auto gather = [&](auto member) {
    std::vector<const Matrix*> ms;
    for (const auto& p : parts) ms.push_back(&(p.*member));
    return hcat(ms);
  };
  TrainingSet set;
  set.inputs = gather(&Part::x);
  if (feature_mode) {
    for (std::size_t j = 0; j < parts.front().y.size(); ++j) {
      std::vector<const Matrix*> y, s1, s2;
      for (const auto& p : parts) {
        y.push_back(&p.y[j]);
        s1.push_back(&p.s1[j]);
        s2.push_back(&p.s2[j]);
      }
      set.mix_levels.push_back(hcat(y));
      set.source1_levels.push_back(hcat(s1));
      set.source2_levels.push_back(hcat(s2));
    }
  } else {
    set.target1 = gather(&Part::t1);
    set.target2 = gather(&Part::t2);
  }
  return set;
}

inline std::vector<Mixture> training_mixtures(const std::vector<AudioClip>& clips1, const std::vector<AudioClip>& clips2,
                                              std::size_t max_pairs, std::uint64_t seed) {
  std::vector<Mixture> out;
  for (const auto& [i, j] : cross_pairs(clips1.size(), clips2.size(), max_pairs, seed)) {
    out.push_back(mix_at_0db(clips1[i], clips2[j]));
  }
  return out;
}

inline TrainConfig train_config(const RunConfig& cfg) {
  return {cfg.neural.learning_rate, cfg.neural.momentum, cfg.neural.batch_size, cfg.neural.epochs, cfg.seed};
}

inline NetworkShape network_shape(const RunConfig& cfg) {
  auto shape = default_shape(cfg.neural.arch);
  if (cfg.neural.arch == "cnn-multi") shape.branch_width = cfg.neural.branch_width;
  return shape;
}

inline TrainResult train_network(const FeaturePipeline& fp, const RunConfig& cfg, const std::vector<Mixture>& mixtures) {
  const auto& arch = cfg.neural.arch;
  const auto bins = static_cast<Eigen::Index>(fp.scattering().first_bank().channel_count());
  auto net = build_network(arch, bins, cfg.features.j2, cfg.seed, network_shape(cfg));
  const auto data = neural_training_set(fp, arch, cfg.features.j2, mixtures, cfg.jobs);
  return train(std::move(net), data, train_config(cfg));
}

inline std::pair<AudioClip, AudioClip> separate_neural(const FeaturePipeline& fp, const MaskNetwork& net,
                                                       const AudioClip& y) {
  const auto& bank = fp.scattering().first_bank();
  if (net.bins != static_cast<Eigen::Index>(bank.channel_count())) {
    throw Error("separate: network bins do not match the layer-1 filterbank");
  }
  const auto l1 = fp.scattering().layer1(y);
  const auto x = network_inputs(net.arch, net.j2, l1);
  auto [m1, m2] = forward(net, x);
  return invert_with_masks(y, MaskPair{std::move(m1), std::move(m2), 2.0}, bank);
}

}  // namespace scatsep
