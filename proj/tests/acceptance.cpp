// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include "scatsep/scatsep.hpp"

using namespace scatsep;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

int failures = 0;

void run(int id, const std::string& name, double budget_s, const std::function<Outcome()>& fn) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = fn();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  char timing[96];
  std::snprintf(timing, sizeof timing, "%.2f s (limit %.0f s)", secs, budget_s);
  if (secs > budget_s) {
    o.pass = false;
    o.detail += "; over time";
  }
  if (!o.pass) ++failures;
  std::cout << (o.pass ? "PASS" : "FAIL") << " " << id << " " << name << ": " << o.detail << "; " << timing
            << std::endl;
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

AudioClip noise_clip(std::size_t n, std::mt19937_64& rng, double sd = 0.3) {
  std::normal_distribution<double> g(0.0, sd);
  AudioClip c;
  c.sample_rate = 16000;
  for (std::size_t i = 0; i < n; ++i) c.samples.push_back(g(rng));
  return c;
}

Matrix random_nonneg(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix m(r, c);
  for (Eigen::Index j = 0; j < c; ++j) {
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = u(rng);
  }
  return m;
}

FeatureMap as_map(const Matrix& v) {
  FeatureMap fm;
  fm.values = v;
  for (Eigen::Index r = 0; r < v.rows(); ++r) fm.bin_labels.push_back("r" + std::to_string(r));
  return fm;
}

double rel_error(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num / den);
}

// ---------------------------------------------------------------------------

Outcome stft_round_trip() {
  std::mt19937_64 rng(1);
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const auto x = noise_clip(16000, rng);
    worst = std::max(worst, rel_error(istft(stft(x, StftConfig{})).samples, x.samples));
  }
  return {worst < 1e-6, fmt("worst relative error %.2e over 10 one-second signals", worst)};
}

Outcome frame_bounds() {
  const auto fb = WaveletFilterBank::design(32, 5, 16000.0);
  double lo = 1e9, hi = 0.0;
  for (double f = 0.0; f <= fb.f_max(); f += 0.05) {
    const double v = fb.littlewood_paley(f);
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  return {lo >= 0.5 && hi <= 1.05, fmt("Littlewood-Paley sum in [%.4f, %.4f] over 0-%.0f Hz", lo, hi, fb.f_max())};
}

Outcome contraction() {
  const ScatteringTransform st(WaveletFilterBank::design(32, 5, 16000.0));
  std::mt19937_64 rng(3);
  int bad = 0;
  double worst1 = 0.0, worst2 = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto x = noise_clip(2048, rng);
    const auto y = trial % 2 ? noise_clip(2048, rng) : [&] {
      auto c = x;
      const auto d = noise_clip(2048, rng, 0.02);
      for (std::size_t i = 0; i < c.size(); ++i) c.samples[i] += d.samples[i];
      return c;
    }();
    double d0 = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) d0 += (x.samples[i] - y.samples[i]) * (x.samples[i] - y.samples[i]);
    d0 = std::sqrt(d0);
    const auto px = st.pyramid(x, 2), py = st.pyramid(y, 2);
    const double d1 = std::sqrt(layer_distance_sq(px.layers[0], py.layers[0]));
    const double d2 = std::sqrt(layer_distance_sq(px.layers[1], py.layers[1]));
    worst1 = std::max(worst1, d1 / d0);
    worst2 = std::max(worst2, d2 / d1);
    if (d1 > d0 * (1 + 1e-6) || d2 > d1 * (1 + 1e-6)) ++bad;
  }
  return {bad == 0, fmt("100 pairs, %.0f violations; max |W1| ratio %.3f, max |W2|/|W1| ratio %.3f", bad, worst1,
                        worst2)};
}

Outcome geometry() {
  const RunConfig cfg;
  const FeaturePipeline fp(cfg.features);
  const auto& st = fp.scattering();
  const auto stft_rows = fp.stft_config().bins();
  const auto r1 = static_cast<double>(st.layer_rows(1)), r2 = static_cast<double>(st.layer_rows(2));
  const bool ok = stft_rows == 513 && std::abs(r1 - 175.0) <= 17.5 && std::abs(r2 - 2000.0) <= 400.0;
  return {ok, fmt("STFT rows %.0f, layer-1 rows %.0f, layer-2 rows %.0f", stft_rows, r1, r2)};
}

Outcome nmf_properties() {
  InferenceConfig cfg;
  cfg.max_iters = 100;
  cfg.rel_tol = 1e-300;
  int bad = 0;
  for (std::uint64_t p = 0; p < 20; ++p) {
    std::mt19937_64 rng(100 + p);
    const auto v = as_map(random_nonneg(16, 50, rng));
    const auto r = nmf_train({v}, 6, p % 2 ? 0.1 : 0.0, cfg, p);
    for (std::size_t i = 1; i < r.objective.size(); ++i) bad += r.objective[i] > r.objective[i - 1] * (1 + 1e-9);
    NmfModel m2;
    m2.dictionary = random_nonneg(16, 4, rng);
    for (Eigen::Index j = 0; j < 4; ++j) m2.dictionary.col(j).normalize();
    m2.descriptor = r.model.descriptor;
    const auto z = nmf_infer_joint(v, r.model, m2, cfg, p);
    for (std::size_t i = 1; i < z.objective.size(); ++i) bad += z.objective[i] > z.objective[i - 1] * (1 + 1e-9);
  }
  std::mt19937_64 rng(7);
  const Matrix v = random_nonneg(15, 4, rng) * random_nonneg(4, 60, rng);
  InferenceConfig exact = cfg;
  exact.max_iters = 3000;
  const auto r = nmf_train({as_map(v)}, 4, 0.0, exact, 7);
  const Matrix vw = weight_frames(v, exact).second;
  const Matrix& d = r.model.dictionary;
  const Matrix z = (d.transpose() * d).ldlt().solve(d.transpose() * vw);
  const double resid = (vw - d * z).norm() / vw.norm();
  return {bad == 0 && resid < 1e-3,
          fmt("%.0f objective increases over 20 training + 20 inference runs; exact-recovery residual %.2e", bad,
              resid)};
}

double network_gradient_error(const std::string& arch, int j2, std::mt19937_64& rng) {
  auto net = build_network(arch, 4, j2, 5, {{6, 5}, 3});
  // zero biases can leave a pre-activation exactly on the ReLU kink
  std::uniform_real_distribution<double> jitter(-0.1, 0.1);
  for (auto* l : net.all_layers()) {
    for (Eigen::Index i = 0; i < l->bias.size(); ++i) l->bias(i) = jitter(rng);
  }
  TrainingSet data;
  data.inputs = random_nonneg(net.input_width(), 6, rng);
  data.target1 = random_nonneg(4, 6, rng);
  data.target2 = (Matrix::Ones(4, 6) - data.target1).eval();
  for (int j = 0; j <= j2; ++j) {
    data.source1_levels.push_back(random_nonneg(4, 6, rng));
    data.source2_levels.push_back(random_nonneg(4, 6, rng));
    data.mix_levels.push_back(data.source1_levels.back() + data.source2_levels.back());
  }
  const std::vector<Eigen::Index> all{0, 1, 2, 3, 4, 5};
  Gradients g;
  loss_and_gradient(net, data, all, &g);
  double worst = 0.0;
  auto layers = net.all_layers();
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto check = [&](double& w, double analytic) {
      const double keep = w, h = 1e-6;
      w = keep + h;
      const double up = loss_and_gradient(net, data, all, nullptr);
      w = keep - h;
      const double down = loss_and_gradient(net, data, all, nullptr);
      w = keep;
      const double fd = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(fd - analytic) / std::max(1e-7, std::abs(fd) + std::abs(analytic)));
    };
    for (Eigen::Index i = 0; i < layers[l]->weights.size(); ++i) check(layers[l]->weights.data()[i], g.weights[l].data()[i]);
    for (Eigen::Index i = 0; i < layers[l]->bias.size(); ++i) check(layers[l]->bias(i), g.bias[l](i));
  }
  return worst;
}

Outcome gradients() {
  std::mt19937_64 rng(6);
  const Matrix d1 = random_nonneg(6, 4, rng), d2 = random_nonneg(6, 4, rng);
  DiscriminativeExample ex{Matrix(), random_nonneg(6, 5, rng), random_nonneg(6, 5, rng)};
  ex.mix = ex.source1 + ex.source2;
  const Vector lambda = Vector::Constant(8, 0.1);
  InferenceConfig cfg;
  const auto r = unrolled_loss_and_gradient(d1, d2, lambda, ex, 1.0, 3, cfg);
  double unrolled = 0.0;
  for (int which = 0; which < 2; ++which) {
    for (Eigen::Index i = 0; i < 6; ++i) {
      for (Eigen::Index j = 0; j < 4; ++j) {
        Matrix a = d1, b = d2;
        Matrix& m = which == 0 ? a : b;
        const double h = 1e-5;
        m(i, j) += h;
        const double up = unrolled_loss_and_gradient(a, b, lambda, ex, 1.0, 3, cfg).loss;
        m(i, j) -= 2 * h;
        const double down = unrolled_loss_and_gradient(a, b, lambda, ex, 1.0, 3, cfg).loss;
        const double fd = (up - down) / (2 * h);
        const double an = which == 0 ? r.grad1(i, j) : r.grad2(i, j);
        unrolled = std::max(unrolled, std::abs(fd - an) / std::max(1e-7, std::max(std::abs(fd), std::abs(an))));
      }
    }
  }
  double net = 0.0;
  net = std::max(net, network_gradient_error("cqt-dnn", 0, rng));
  net = std::max(net, network_gradient_error("dnn-multi", 1, rng));
  net = std::max(net, network_gradient_error("cnn-multi", 1, rng));
  return {unrolled < 1e-4 && net < 1e-4,
          fmt("unrolled NMF max relative error %.2e; network backprop max relative error %.2e", unrolled, net)};
}

Outcome mask_algebra() {
  std::mt19937_64 rng(8);
  const auto m = soft_mask(random_nonneg(100, 80, rng), random_nonneg(100, 80, rng), 2.0);
  const double unity = (m.m1 + m.m2 - Matrix::Ones(100, 80)).cwiseAbs().maxCoeff();
  const auto y = noise_clip(16000, rng);
  const StftConfig sc;
  const auto grid = stft(y, sc).values;
  const auto sm = soft_mask(random_nonneg(grid.rows(), grid.cols(), rng), random_nonneg(grid.rows(), grid.cols(), rng));
  const auto [a, b] = mask_and_invert(y, sm, sc);
  std::vector<double> sum(y.size());
  for (std::size_t t = 0; t < y.size(); ++t) sum[t] = a.samples[t] + b.samples[t];
  const double additivity = rel_error(sum, y.samples);
  const ScatteringTransform st(WaveletFilterBank::design(32, 5, 16000.0));
  const auto p = st.pyramid(y, 2);
  const auto l1 = to_feature_map(p.layers[0]).values, l2 = to_feature_map(p.layers[1]).values;
  const std::vector<LevelEstimate> levels{
      {random_nonneg(l1.rows(), l1.cols(), rng), random_nonneg(l1.rows(), l1.cols(), rng)},
      {random_nonneg(l2.rows(), l2.cols(), rng), random_nonneg(l2.rows(), l2.cols(), rng)}};
  const auto [c, d] = greedy_scatt_inversion(y, levels, st);
  double greedy = 0.0;
  for (std::size_t t = 0; t < y.size(); ++t) greedy = std::max(greedy, std::abs(c.samples[t] + d.samples[t] - y.samples[t]));
  return {unity < 1e-12 && additivity < 1e-6 && greedy < 1e-9,
          fmt("|M1+M2-1| %.1e; STFT additivity %.1e; greedy additivity %.1e", unity, additivity, greedy)};
}

Outcome bss_oracles() {
  std::mt19937_64 rng(9);
  const auto s1 = noise_clip(16000, rng).samples;
  auto s2 = noise_clip(16000, rng).samples;
  double proj = 0.0, e1 = 0.0, e2 = 0.0;
  for (std::size_t i = 0; i < s1.size(); ++i) {
    proj += s1[i] * s2[i];
    e1 += s1[i] * s1[i];
  }
  for (std::size_t i = 0; i < s1.size(); ++i) s2[i] -= proj / e1 * s1[i];
  for (double v : s2) e2 += v * v;
  for (auto& v : s2) v *= std::sqrt(e1 / e2);  // orthogonal, equal energy
  const auto perfect = bss_eval(s1, s1, s2, 0);
  std::vector<double> half(s1.size()), est(s1.size());
  const auto extra = noise_clip(16000, rng).samples;
  for (std::size_t i = 0; i < s1.size(); ++i) {
    half[i] = 0.5 * (s1[i] + s2[i]);
    est[i] = 0.9 * s1[i] + 0.2 * s2[i] + 0.3 * extra[i];
  }
  const auto h = bss_eval(half, s1, s2, 0);
  const auto d = bss_decompose(est, s1, s2, 0);
  double energy = 0.0, parts = 0.0, ortho = 0.0, completeness = 0.0;
  double ti = 0.0, ta = 0.0, ia = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    energy += est[i] * est[i];
    parts += d.target[i] * d.target[i] + d.interference[i] * d.interference[i] + d.artifacts[i] * d.artifacts[i];
    completeness = std::max(completeness, std::abs(d.target[i] + d.interference[i] + d.artifacts[i] - est[i]));
    ti += d.target[i] * d.interference[i];
    ta += d.target[i] * d.artifacts[i];
    ia += d.interference[i] * d.artifacts[i];
  }
  ortho = (std::abs(ti) + std::abs(ta) + std::abs(ia)) / energy;
  const double conservation = std::abs(parts - energy) / energy;
  const bool ok = perfect.sdr == 100.0 && perfect.sir == 100.0 && std::abs(h.sir) <= 0.1 && ortho < 1e-6 &&
                  conservation < 1e-6 && completeness < 1e-9;
  return {ok, fmt("perfect SDR %.1f dB; half-mixture SIR %.4f dB; orthogonality %.1e; energy residual %.1e",
                  perfect.sdr, h.sir, ortho, conservation)};
}

// ---------------------------------------------------------------------------
// End-to-end runs on the synthetic toy datasets.

MethodSummary nmf_toy(const ToyDataset& ds, const std::string& mode, int atoms) {
  RunConfig cfg;
  cfg.features.mode = mode;
  cfg.nmf.atoms = atoms;
  const FeaturePipeline fp(cfg.features);
  const auto rep = train_nmf_models(fp, cfg, ds.train1, ds.train2);
  std::vector<MetricsRow> rows;
  for (const auto& [i, j] : cross_pairs(ds.test1.size(), ds.test2.size(), 0, 1)) {
    const auto m = mix_at_0db(ds.test1[i], ds.test2[j]);
    const auto [a, b] = separate_nmf(fp, rep.levels, cfg, m.mixture);
    rows.push_back(evaluate_separation(a, b, m.source1, m.source2));
  }
  return aggregate(mode + "-nmf", rows);
}

// bands toy shared by the NMF and neural checks
const ToyDataset& bands_toy() {
  static const ToyDataset ds = make_toy_dataset("bands", 24, 3, 1.0, 16000, 5);
  return ds;
}

double stft_baseline_sdr = std::numeric_limits<double>::quiet_NaN();

Outcome toy_nmf() {
  const auto bands = nmf_toy(bands_toy(), "stft", 200);
  stft_baseline_sdr = bands.sdr.mean;
  const auto mod = make_toy_dataset("modulation", 8, 3, 1.0, 16000, 5);
  const auto s1 = nmf_toy(mod, "scatt1", 40);
  const auto s2 = nmf_toy(mod, "scatt2", 40);
  const bool ok = bands.sdr.mean >= 10.0 && bands.sir.mean >= 20.0 && s2.sir.mean >= s1.sir.mean;
  std::ostringstream os;
  os << "bands STFT-NMF SDR " << format_mean_std(bands.sdr) << " SIR " << format_mean_std(bands.sir)
     << "; modulation SIR scatt1 " << format_mean_std(s1.sir) << " vs scatt2 " << format_mean_std(s2.sir);
  return {ok, os.str()};
}

Outcome toy_neural() {
  const auto& ds = bands_toy();
  RunConfig cfg;
  cfg.features.mode = "scatt1";
  cfg.neural.arch = "cqt-dnn";
  cfg.neural.learning_rate = 0.2;
  cfg.neural.epochs = 100;
  cfg.max_pairs = 96;
  const FeaturePipeline fp(cfg.features);
  const auto tr = train_network(fp, cfg, training_mixtures(ds.train1, ds.train2, cfg.max_pairs, cfg.seed));
  std::vector<MetricsRow> rows;
  for (const auto& [i, j] : cross_pairs(ds.test1.size(), ds.test2.size(), 0, 1)) {
    const auto m = mix_at_0db(ds.test1[i], ds.test2[j]);
    const auto [a, b] = separate_neural(fp, tr.net, m.mixture);
    rows.push_back(evaluate_separation(a, b, m.source1, m.source2));
  }
  const auto s = aggregate("cqt-dnn", rows);
  if (std::isnan(stft_baseline_sdr)) stft_baseline_sdr = nmf_toy(ds, "stft", 200).sdr.mean;
  const bool ok = tr.final_loss < 0.5 * tr.initial_loss && s.sdr.mean >= stft_baseline_sdr - 1.0;
  std::ostringstream os;
  os << fmt("training MSE %.4g -> %.4g; ", tr.initial_loss, tr.final_loss) << "cqt-dnn SDR "
     << format_mean_std(s.sdr) << fmt(" vs STFT-NMF baseline %.1f dB", stft_baseline_sdr);
  return {ok, os.str()};
}

Outcome determinism() {
  const auto ds = make_toy_dataset("bands", 3, 1, 0.5, 16000, 11);
  auto nmf_bytes = [&](const std::string& mode, int finetune) {
    RunConfig cfg;
    cfg.features.mode = mode;
    cfg.nmf.atoms = 10;
    cfg.nmf.train_iters = 30;
    cfg.nmf.finetune_epochs = finetune;
    cfg.nmf.unroll = 3;
    cfg.jobs = 2;
    const FeaturePipeline fp(cfg.features);
    std::ostringstream os;
    for (const auto& l : train_nmf_models(fp, cfg, ds.train1, ds.train2).levels) {
      write_nmf_model(os, l.source1);
      write_nmf_model(os, l.source2);
    }
    return os.str();
  };
  auto net_bytes = [&](const std::string& arch) {
    RunConfig cfg;
    cfg.features.mode = "scatt1";
    cfg.neural.arch = arch;
    cfg.neural.epochs = 2;
    cfg.neural.branch_width = 8;
    cfg.jobs = 2;
    const FeaturePipeline fp(cfg.features);
    std::ostringstream os;
    write_network(os, train_network(fp, cfg, training_mixtures(ds.train1, ds.train2, 0, cfg.seed)).net);
    return os.str();
  };
  int same = 0, total = 0;
  std::string which;
  auto compare = [&](const std::string& label, const std::function<std::string()>& f) {
    ++total;
    if (f() == f()) {
      ++same;
    } else {
      which += " " + label;
    }
  };
  compare("stft-nmf", [&] { return nmf_bytes("stft", 0); });
  compare("scatt2-nmf", [&] { return nmf_bytes("scatt2", 0); });
  compare("stft-nmf-finetuned", [&] { return nmf_bytes("stft", 2); });
  compare("cqt-dnn", [&] { return net_bytes("cqt-dnn"); });
  compare("cnn-multi", [&] { return net_bytes("cnn-multi"); });
  return {same == total, fmt("%.0f of %.0f training runs bit-identical on rerun", same, total) +
                             (which.empty() ? "" : "; differing:" + which)};
}

}  // namespace

int main() {
  std::cout << "scatsep acceptance" << std::endl;
  run(1, "STFT round trip", 1.0, stft_round_trip);
  run(2, "filterbank frame bounds", 5.0, frame_bounds);
  run(3, "scattering non-expansiveness and contraction", 30.0, contraction);
  run(4, "feature geometry", 1.0, geometry);
  run(5, "NMF monotonicity and exact recovery", 60.0, nmf_properties);
  run(6, "finite-difference gradients", 60.0, gradients);
  run(7, "mask algebra", 10.0, mask_algebra);
  run(8, "BSS-EVAL oracles", 10.0, bss_oracles);
  run(9, "toy NMF separation", 600.0, toy_nmf);
  run(10, "toy neural separation", 900.0, toy_neural);
  run(11, "training determinism", 600.0, determinism);
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
