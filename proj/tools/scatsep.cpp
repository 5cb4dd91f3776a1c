// scatsep command-line driver.

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "scatsep/scatsep.hpp"

namespace fs = std::filesystem;
using namespace scatsep;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c, bool out_required) {
  cmd->add_option("--config", c.config, "INI run configuration")->check(CLI::ExistingFile);
  cmd->add_option("--set", c.overrides, "section.key=value override (repeatable)");
  cmd->add_option("--seed", c.seed, "random seed");
  cmd->add_option("--jobs", c.jobs, "worker threads");
  auto* o = cmd->add_option("--out", c.out, "output directory");
  if (out_required) o->required();
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_config(c.config);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Error("--set expects section.key=value, got '" + kv + "'");
    apply_override(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed) cfg.seed = *c.seed;
  if (c.jobs) cfg.jobs = *c.jobs;
  cfg.validate();
  return cfg;
}

std::vector<AudioClip> load_clips(const FeaturePipeline& fp, const std::vector<fs::path>& paths, int jobs) {
  std::vector<AudioClip> clips(paths.size());
  parallel_for(paths.size(), jobs, [&](std::size_t i) { clips[i] = fp.prepare(load_wav(paths[i])); });
  return clips;
}

std::pair<std::vector<AudioClip>, std::vector<AudioClip>> training_clips(const FeaturePipeline& fp,
                                                                         const RunConfig& cfg) {
  if (cfg.manifest.empty()) throw Error("paths.manifest is not set");
  const auto manifest = load_manifest(cfg.manifest);
  const auto p1 = manifest.select("source1", "train"), p2 = manifest.select("source2", "train");
  if (p1.empty()) throw Error("manifest has no train entries for source1");
  if (p2.empty()) throw Error("manifest has no train entries for source2");
  return {load_clips(fp, p1, cfg.jobs), load_clips(fp, p2, cfg.jobs)};
}

fs::path model_path(const fs::path& dir, int level, int source) {
  return dir / ("nmf_level" + std::to_string(level) + "_source" + std::to_string(source) + ".model");
}

fs::path output_dir(const Common& c, const RunConfig& cfg) {
  const fs::path out = c.out.empty() ? fs::path(cfg.output_dir) : fs::path(c.out);
  if (out.empty()) throw Error("no output directory (use --out)");
  fs::create_directories(out);
  return out;
}

// ---------------------------------------------------------------------------

int cmd_features(const Common& c, const std::vector<std::string>& inputs) {
  if (inputs.empty()) throw CLI::ValidationError("features", "no input clips given");
  const auto cfg = resolve(c);
  const FeaturePipeline fp(cfg.features);
  const auto out = output_dir(c, cfg);
  std::vector<std::vector<FeatureMap>> maps(inputs.size());
  parallel_for(inputs.size(), cfg.jobs, [&](std::size_t i) { maps[i] = fp.extract(fp.prepare(load_wav(inputs[i]))); });
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto stem = fs::path(inputs[i]).stem().string();
    for (const auto& fm : maps[i]) {
      const auto path = out / (stem + ".level" + std::to_string(fm.level) + ".feat");
      save_feature_dump(path, fm);
      std::printf("%s level=%d rows=%ld frames=%ld stride=%d\n", stem.c_str(), fm.level,
                  static_cast<long>(fm.rows()), static_cast<long>(fm.frames()), fm.stride);
    }
  }
  return 0;
}

int cmd_train_nmf(const Common& c) {
  const auto cfg = resolve(c);
  const FeaturePipeline fp(cfg.features);
  const fs::path out = c.out.empty() ? fs::path(cfg.model_dir) : fs::path(c.out);
  if (out.empty()) throw Error("no model directory (use --out or paths.model_dir)");
  const auto [clips1, clips2] = training_clips(fp, cfg);
  const auto report = train_nmf_models(fp, cfg, clips1, clips2);
  fs::create_directories(out);
  for (std::size_t l = 0; l < report.levels.size(); ++l) {
    const int level = static_cast<int>(l) + 1;
    save_nmf_model(model_path(out, level, 1), report.levels[l].source1);
    save_nmf_model(model_path(out, level, 2), report.levels[l].source2);
    std::printf("level %d: atoms=%d rows=%ld objective source1=%.6g source2=%.6g\n", level, cfg.atoms(),
                static_cast<long>(report.levels[l].source1.rows()), report.final_objective[l].first,
                report.final_objective[l].second);
  }
  return 0;
}

int cmd_train_dnn(const Common& c) {
  const auto cfg = resolve(c);
  const FeaturePipeline fp(cfg.features);
  const fs::path out = c.out.empty() ? fs::path(cfg.model_dir) : fs::path(c.out);
  if (out.empty()) throw Error("no model directory (use --out or paths.model_dir)");
  const auto [clips1, clips2] = training_clips(fp, cfg);
  const auto mixtures = training_mixtures(clips1, clips2, cfg.max_pairs, cfg.seed);
  const auto result = train_network(fp, cfg, mixtures);
  fs::create_directories(out);
  save_network(out / "network.net", result.net);
  std::ofstream loss(out / "loss.csv");
  if (!loss) throw Error("cannot write " + (out / "loss.csv").string());
  write_loss_csv(loss, result.epoch_loss);
  std::string dims = std::to_string(result.net.input_width());
  for (const auto& l : result.net.trunk) dims += "->" + std::to_string(l.out());
  std::printf("%s %s mixtures=%zu loss %.6g -> %.6g\n", result.net.arch.c_str(), dims.c_str(), mixtures.size(),
              result.initial_loss, result.final_loss);
  return 0;
}

int cmd_separate(const Common& c, const std::string& models, const std::vector<std::string>& inputs) {
  if (inputs.empty()) throw CLI::ValidationError("separate", "no mixture files given");
  const auto cfg = resolve(c);
  const FeaturePipeline fp(cfg.features);
  const auto out = output_dir(c, cfg);
  const fs::path dir = models.empty() ? fs::path(cfg.model_dir) : fs::path(models);
  if (dir.empty()) throw Error("no model directory (use --models or paths.model_dir)");

  std::vector<ModelPair> pairs;
  std::optional<MaskNetwork> net;
  if (cfg.backend == "neural") {
    net = load_network(dir / "network.net");
  } else {
    for (int level = 1; level <= fp.levels(); ++level) {
      pairs.push_back({load_nmf_model(model_path(dir, level, 1)), load_nmf_model(model_path(dir, level, 2))});
    }
  }
  parallel_for(inputs.size(), cfg.jobs, [&](std::size_t i) {
    const auto y = fp.prepare(load_wav(inputs[i]));
    const auto [x1, x2] = net ? separate_neural(fp, *net, y) : separate_nmf(fp, pairs, cfg, y);
    const fs::path p(inputs[i]);
    // mixtures laid out as <name>/mix.wav are named after their directory
    const auto stem = p.stem() == "mix" && p.has_parent_path() ? p.parent_path().filename() : p.stem();
    const auto dst = out / stem;
    fs::create_directories(dst);
    save_wav(dst / "x1.wav", x1);
    save_wav(dst / "x2.wav", x2);
  });
  std::printf("separated %zu mixture(s) into %s\n", inputs.size(), out.string().c_str());
  return 0;
}

int cmd_evaluate(const std::string& refs, const std::vector<std::string>& estimates, const std::string& out) {
  if (estimates.empty()) throw CLI::ValidationError("evaluate", "no estimate directories given");
  std::vector<MethodSummary> table;
  std::vector<std::pair<std::string, std::vector<MetricsRow>>> all;
  for (const auto& est : estimates) {
    std::vector<fs::path> stems;
    for (const auto& e : fs::directory_iterator(est)) {
      if (e.is_directory()) stems.push_back(e.path());
    }
    std::sort(stems.begin(), stems.end());
    if (stems.empty()) throw Error("no estimates under " + est);
    std::vector<MetricsRow> rows;
    for (const auto& s : stems) {
      const auto ref = fs::path(refs) / s.filename();
      if (!fs::exists(ref / "x1.wav") || !fs::exists(ref / "x2.wav")) {
        throw Error("no reference for estimate " + s.string());
      }
      auto row = evaluate_separation(load_wav(s / "x1.wav"), load_wav(s / "x2.wav"), load_wav(ref / "x1.wav"),
                                     load_wav(ref / "x2.wav"));
      row.name = s.filename().string();
      rows.push_back(row);
    }
    auto method = fs::path(est).lexically_normal().filename().string();
    if (method.empty()) method = fs::path(est).lexically_normal().parent_path().filename().string();
    table.push_back(aggregate(method, rows));
    all.emplace_back(method, std::move(rows));
  }
  write_summary_table(std::cout, table);
  if (!out.empty()) {
    fs::create_directories(out);
    std::ofstream summary(fs::path(out) / "summary.csv");
    write_summary_csv(summary, table);
    for (const auto& [method, rows] : all) {
      std::ofstream m(fs::path(out) / (method + "_metrics.csv"));
      write_metrics_csv(m, rows);
    }
    if (!summary) throw Error("cannot write reports under " + out);
  }
  return 0;
}

void write_mixture(const fs::path& dir, const Mixture& m) {
  fs::create_directories(dir);
  save_wav(dir / "mix.wav", m.mixture);
  save_wav(dir / "x1.wav", m.source1);
  save_wav(dir / "x2.wav", m.source2);
}

int cmd_mix(const std::string& a, const std::string& b, const std::string& out) {
  const auto x1 = load_wav(a);
  auto x2 = load_wav(b);
  if (x2.sample_rate != x1.sample_rate) x2 = resample(x2, x1.sample_rate);
  const auto name = fs::path(a).stem().string() + "_" + fs::path(b).stem().string();
  write_mixture(fs::path(out) / name, mix_at_0db(x1, x2));
  std::printf("%s\n", (fs::path(out) / name / "mix.wav").string().c_str());
  return 0;
}

int cmd_toy(const std::string& kind, int train, int test, double seconds, std::uint64_t seed, const std::string& out) {
  const auto data = make_toy_dataset(kind, train, test, seconds, 16000, seed);
  const fs::path root(out);
  fs::create_directories(root / "clips");
  std::ofstream manifest(root / "manifest.csv");
  auto dump = [&](const std::vector<AudioClip>& clips, const std::string& label, const std::string& split) {
    for (std::size_t i = 0; i < clips.size(); ++i) {
      const auto name = label + "_" + split + std::to_string(i) + ".wav";
      save_wav(root / "clips" / name, clips[i]);
      manifest << "clips/" << name << "," << label << "," << split << "\n";
    }
  };
  dump(data.train1, "source1", "train");
  dump(data.train2, "source2", "train");
  dump(data.test1, "source1", "test");
  dump(data.test2, "source2", "test");
  for (const auto& [i, j] : cross_pairs(data.test1.size(), data.test2.size(), 0, seed)) {
    write_mixture(root / "mixtures" / ("m" + std::to_string(i) + "_" + std::to_string(j)),
                  mix_at_0db(data.test1[i], data.test2[j]));
  }
  if (!manifest) throw Error("cannot write " + (root / "manifest.csv").string());
  std::printf("%s toy data in %s\n", kind.c_str(), out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Monaural source separation with scattering features, NMF and mask networks"};
  app.require_subcommand(1);

  Common common;
  std::vector<std::string> inputs;
  std::string models, refs, report;
  std::vector<std::string> estimates;

  auto* features = app.add_subcommand("features", "dump feature maps of WAV clips");
  add_common(features, common, true);
  features->add_option("inputs", inputs, "WAV clips");

  auto* train_nmf = app.add_subcommand("train-nmf", "train one NMF dictionary per source and level");
  add_common(train_nmf, common, false);

  auto* train_dnn = app.add_subcommand("train-dnn", "train a mask network on 0 dB training mixtures");
  add_common(train_dnn, common, false);

  auto* separate = app.add_subcommand("separate", "separate mixtures into x1.wav / x2.wav");
  add_common(separate, common, false);
  separate->add_option("--models", models, "model directory")->check(CLI::ExistingDirectory);
  separate->add_option("inputs", inputs, "mixture WAVs");

  auto* evaluate = app.add_subcommand("evaluate", "SDR/SIR/SAR of estimate directories against references");
  evaluate->add_option("--refs", refs, "reference directory (<stem>/x1.wav, x2.wav)")
      ->required()
      ->check(CLI::ExistingDirectory);
  evaluate->add_option("--out", report, "directory for CSV reports");
  evaluate->add_option("estimates", estimates, "estimate directories, one per method")->check(CLI::ExistingDirectory);

  std::string mix_a, mix_b, mix_out;
  auto* mix = app.add_subcommand("mix", "0 dB mixture of two clips (mix.wav, x1.wav, x2.wav)");
  mix->add_option("first", mix_a)->required()->check(CLI::ExistingFile);
  mix->add_option("second", mix_b)->required()->check(CLI::ExistingFile);
  mix->add_option("--out", mix_out)->required();

  std::string toy_kind = "bands", toy_out;
  int toy_train = 8, toy_test = 3;
  double toy_seconds = 1.0;
  std::uint64_t toy_seed = 1;
  auto* toy = app.add_subcommand("toy", "write a synthetic two-class dataset with a manifest");
  toy->add_option("--kind", toy_kind, "bands | modulation")->capture_default_str();
  toy->add_option("--train", toy_train, "training clips per class")->capture_default_str();
  toy->add_option("--test", toy_test, "test clips per class")->capture_default_str();
  toy->add_option("--seconds", toy_seconds, "clip length")->capture_default_str();
  toy->add_option("--seed", toy_seed)->capture_default_str();
  toy->add_option("--out", toy_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*features) return cmd_features(common, inputs);
    if (*train_nmf) return cmd_train_nmf(common);
    if (*train_dnn) return cmd_train_dnn(common);
    if (*separate) return cmd_separate(common, models, inputs);
    if (*evaluate) return cmd_evaluate(refs, estimates, report);
    if (*mix) return cmd_mix(mix_a, mix_b, mix_out);
    if (*toy) return cmd_toy(toy_kind, toy_train, toy_test, toy_seconds, toy_seed, toy_out);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "scatsep: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "scatsep: %s\n", e.what());
    return 1;
  }
  return 0;
}
