#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "scatsep/feature_map.hpp"

namespace scatsep {

struct InferenceConfig {
  int max_iters = 100;
  double rel_tol = 1e-5;
  double epsilon_floor = 1e-12;
  /// Divide every frame by its L2 norm before fitting (reweighted Euclidean).
  bool frame_weighting = true;

  void validate() const {
    if (max_iters < 1) throw Error("nmf: max_iters must be >= 1");
    if (!(rel_tol > 0.0)) throw Error("nmf: rel_tol must be positive");
    if (!(epsilon_floor > 0.0)) throw Error("nmf: epsilon_floor must be positive");
  }
};

/// What a dictionary was trained on.
struct FeatureDescriptor {
  std::string mode = "stft";
  int level = 1;
  int stride = 1;
  int sample_rate = 16000;
  std::vector<std::string> labels;

  static FeatureDescriptor of(const FeatureMap& fm, const std::string& mode) {
    return {mode, fm.level, fm.stride, fm.sample_rate, fm.bin_labels};
  }

  bool operator==(const FeatureDescriptor&) const = default;
};

struct NmfModel {
  Matrix dictionary;  // m x q, non-negative, unit-norm columns
  double sparsity = 0.1;
  FeatureDescriptor descriptor;

  Eigen::Index rows() const { return dictionary.rows(); }
  Eigen::Index atoms() const { return dictionary.cols(); }

  void validate(double norm_tol = 1e-9) const {
    if (dictionary.cols() < 1) throw Error("nmf: model has no atoms");
    if (!dictionary.allFinite() || dictionary.minCoeff() < 0.0) throw Error("nmf: dictionary must be finite and >= 0");
    if (sparsity < 0.0) throw Error("nmf: sparsity must be >= 0");
    for (Eigen::Index j = 0; j < dictionary.cols(); ++j) {
      if (std::abs(dictionary.col(j).norm() - 1.0) > norm_tol) throw Error("nmf: dictionary column not unit norm");
    }
  }
};

namespace detail {

inline Matrix uniform_init(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  // (0, 1]
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c) {
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = 1.0 - u(rng);
  }
  return m;
}

/// 1/2 ||V - DZ||^2 + sum_k lambda_k ||Z_k,:||_1 using the Gram form.
inline double objective(double v_sq, const Matrix& dtv, const Matrix& dtd, const Matrix& z, const Vector& lambda) {
  const double fit = 0.5 * (v_sq - 2.0 * (z.cwiseProduct(dtv)).sum() + (z.cwiseProduct(dtd * z)).sum());
  return std::max(fit, 0.0) + lambda.dot(z.rowwise().sum());
}

inline void update_activations(const Matrix& dtv, const Matrix& dtd, Matrix& z, const Vector& lambda, double eps) {
  Matrix denom = dtd * z;
  denom.colwise() += lambda;
  z = (z.array() * dtv.array() / (denom.array() + eps)).max(eps).matrix();
}

inline void normalize_columns(Matrix& d, Matrix* z) {
  for (Eigen::Index j = 0; j < d.cols(); ++j) {
    const double n = d.col(j).norm();
    if (n <= 0.0) continue;
    d.col(j) /= n;
    if (z) z->row(j) *= n;
  }
}

}  // namespace detail

/// Frame weights (1 / (||column|| + eps)) and the weighted matrix.
inline std::pair<Vector, Matrix> weight_frames(const Matrix& v, const InferenceConfig& cfg) {
  Vector w = cfg.frame_weighting ? frame_weights(v, cfg.epsilon_floor) : Vector::Ones(v.cols());
  return {w, v * w.asDiagonal()};
}

struct NmfTrainResult {
  NmfModel model;
  std::vector<double> objective;  // per sweep, on weighted features
};

/// Alternating multiplicative updates. Each dictionary step is a convex
/// blend between the current and the multiplicative candidate, followed by
/// column renormalization; the blend is halved until the objective does
/// not rise, so the sweep objective never increases.
inline NmfTrainResult nmf_train(const std::vector<FeatureMap>& features, Eigen::Index atoms, double sparsity,
                                const InferenceConfig& cfg, std::uint64_t seed, const std::string& mode = "stft") {
  cfg.validate();
  if (features.empty()) throw Error("nmf: empty training set");
  if (atoms < 1) throw Error("nmf: atoms must be >= 1");
  if (sparsity < 0.0) throw Error("nmf: sparsity must be >= 0");
  const Eigen::Index m = features.front().rows();
  Eigen::Index n = 0;
  for (const auto& f : features) {
    if (f.rows() != m) throw Error("nmf: feature row counts differ");
    if (f.signed_values) throw Error("nmf: features must be non-negative");
    n += f.frames();
  }
  if (n == 0 || m == 0) throw Error("nmf: empty training set");
  Matrix v(m, n);
  Eigen::Index at = 0;
  for (const auto& f : features) {
    v.middleCols(at, f.frames()) = f.values;
    at += f.frames();
  }
  const Matrix vw = weight_frames(v, cfg).second;
  const double v_sq = vw.squaredNorm();
  const double eps = cfg.epsilon_floor;
  const Vector lambda = Vector::Constant(atoms, sparsity);

  std::mt19937_64 rng(seed);
  Matrix d = detail::uniform_init(m, atoms, rng);
  Matrix z = detail::uniform_init(atoms, n, rng);
  detail::normalize_columns(d, &z);

  NmfTrainResult result;
  Matrix dtv = d.transpose() * vw;
  Matrix dtd = d.transpose() * d;
  double prev = detail::objective(v_sq, dtv, dtd, z, lambda);
  result.objective.push_back(prev);

  for (int it = 0; it < cfg.max_iters; ++it) {
    detail::update_activations(dtv, dtd, z, lambda, eps);
    double current = detail::objective(v_sq, dtv, dtd, z, lambda);

    const Matrix vzt = vw * z.transpose();
    const Matrix zzt = z * z.transpose();
    const Matrix cand = (d.array() * vzt.array() / ((d * zzt).array() + eps)).max(eps).matrix();
    // Products of the blend B = D + t (C - D) follow from those of D and C,
    // and renormalizing B (scale moved into Z) leaves BZ unchanged.
    const Matrix ctv = cand.transpose() * vw;
    const Matrix ctc = cand.transpose() * cand;
    const Matrix dtc = d.transpose() * cand;
    const Vector zsum = z.rowwise().sum();
    for (double t = 1.0; t > 1e-4; t *= 0.5) {
      const Matrix btv = (1.0 - t) * dtv + t * ctv;
      const Matrix btb = (1.0 - t) * (1.0 - t) * dtd + t * (1.0 - t) * (dtc + dtc.transpose()) + t * t * ctc;
      const Vector scale = btb.diagonal().cwiseSqrt();
      const double fit = 0.5 * (v_sq - 2.0 * (z.cwiseProduct(btv)).sum() + (z.cwiseProduct(btb * z)).sum());
      const double f = std::max(fit, 0.0) + lambda.dot(scale.cwiseProduct(zsum));
      if (f <= current) {
        d = (1.0 - t) * d + t * cand;
        detail::normalize_columns(d, &z);
        dtv = d.transpose() * vw;
        dtd = d.transpose() * d;
        current = detail::objective(v_sq, dtv, dtd, z, lambda);
        break;
      }
    }
    if (!std::isfinite(current)) throw Error("nmf: objective became non-finite");
    result.objective.push_back(current);
    const double change = std::abs(prev - current) / std::max(std::abs(prev), 1e-300);
    prev = current;
    if (change < cfg.rel_tol) break;
  }
  result.model.dictionary = std::move(d);
  result.model.sparsity = sparsity;
  result.model.descriptor = FeatureDescriptor::of(features.front(), mode);
  return result;
}

struct JointActivations {
  Matrix z1;  // q1 x n
  Matrix z2;  // q2 x n
  std::vector<double> objective;
};

/// Stacked-dictionary inference with fixed dictionaries and explicit
/// initial activations on the weighted scale.
inline JointActivations nmf_infer_joint(const Matrix& mix, const NmfModel& model1, const NmfModel& model2,
                                        const InferenceConfig& cfg, Matrix z_init) {
  cfg.validate();
  if (mix.rows() != model1.rows() || mix.rows() != model2.rows()) throw Error("nmf: row dimension mismatch");
  const Eigen::Index q1 = model1.atoms(), q2 = model2.atoms();
  if (z_init.rows() != q1 + q2 || z_init.cols() != mix.cols()) throw Error("nmf: initial activation shape mismatch");
  if (mix.size() > 0 && mix.minCoeff() < 0.0) throw Error("nmf: mixture features must be non-negative");

  Matrix d(mix.rows(), q1 + q2);
  d << model1.dictionary, model2.dictionary;
  Vector lambda(q1 + q2);
  lambda << Vector::Constant(q1, model1.sparsity), Vector::Constant(q2, model2.sparsity);

  const auto [w, vw] = weight_frames(mix, cfg);
  const double v_sq = vw.squaredNorm();
  const Matrix dtv = d.transpose() * vw;
  const Matrix dtd = d.transpose() * d;
  Matrix z = std::move(z_init);

  JointActivations out;
  double prev = detail::objective(v_sq, dtv, dtd, z, lambda);
  out.objective.push_back(prev);
  for (int it = 0; it < cfg.max_iters; ++it) {
    detail::update_activations(dtv, dtd, z, lambda, cfg.epsilon_floor);
    const double current = detail::objective(v_sq, dtv, dtd, z, lambda);
    if (!std::isfinite(current)) throw Error("nmf: objective became non-finite");
    out.objective.push_back(current);
    const double change = std::abs(prev - current) / std::max(std::abs(prev), 1e-300);
    prev = current;
    if (change < cfg.rel_tol) break;
  }
  // back to the scale of the unweighted mixture
  z = z * w.cwiseInverse().asDiagonal();
  out.z1 = z.topRows(q1);
  out.z2 = z.bottomRows(q2);
  return out;
}

inline JointActivations nmf_infer_joint(const Matrix& mix, const NmfModel& model1, const NmfModel& model2,
                                        const InferenceConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return nmf_infer_joint(mix, model1, model2, cfg,
                         detail::uniform_init(model1.atoms() + model2.atoms(), mix.cols(), rng));
}

inline JointActivations nmf_infer_joint(const FeatureMap& mix, const NmfModel& model1, const NmfModel& model2,
                                        const InferenceConfig& cfg, std::uint64_t seed) {
  if (!(model1.descriptor == model2.descriptor)) throw Error("nmf: models have different feature descriptors");
  if (mix.level != model1.descriptor.level || mix.stride != model1.descriptor.stride ||
      mix.bin_labels != model1.descriptor.labels) {
    throw Error("nmf: mixture features do not match the model descriptor");
  }
  return nmf_infer_joint(mix.values, model1, model2, cfg, seed);
}

/// Source feature estimates D_i Z_i.
inline std::pair<Matrix, Matrix> reconstruct_sources(const Matrix& z1, const Matrix& z2, const NmfModel& model1,
                                                     const NmfModel& model2) {
  if (z1.rows() != model1.atoms() || z2.rows() != model2.atoms() || z1.cols() != z2.cols()) {
    throw Error("nmf: activation shape mismatch");
  }
  return {model1.dictionary * z1, model2.dictionary * z2};
}

inline std::pair<FeatureMap, FeatureMap> reconstruct_sources(const JointActivations& z, const NmfModel& model1,
                                                             const NmfModel& model2, const FeatureMap& grid) {
  auto [a, b] = reconstruct_sources(z.z1, z.z2, model1, model2);
  FeatureMap f1 = grid, f2 = grid;
  f1.values = std::move(a);
  f2.values = std::move(b);
  f1.signed_values = f2.signed_values = false;
  return {f1, f2};
}

struct ModelPair {
  NmfModel source1;
  NmfModel source2;
};

/// Independent joint inference at every level of a feature pyramid.
inline std::vector<JointActivations> nmf_infer_multires(const std::vector<FeatureMap>& levels,
                                                        const std::vector<ModelPair>& models,
                                                        const InferenceConfig& cfg, std::uint64_t seed) {
  if (models.size() < levels.size()) throw Error("nmf: missing model for a pyramid level");
  std::vector<JointActivations> out;
  for (std::size_t l = 0; l < levels.size(); ++l) {
    out.push_back(nmf_infer_joint(levels[l], models[l].source1, models[l].source2, cfg, seed + l));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Discriminative fine-tuning through K unrolled multiplicative updates.

struct DiscriminativeExample {
  Matrix mix;      // m x n, unweighted
  Matrix source1;  // ground-truth features
  Matrix source2;
};

struct UnrolledResult {
  double loss = 0.0;
  Matrix grad1;  // d loss / d D1
  Matrix grad2;
};

/// Loss 1/2||X1 - D1 Z1||^2 + alpha/2 ||X2 - D2 Z2||^2 after K updates from
/// all-ones activations (all on the mixture's frame weighting), with its
/// gradient by reverse-mode differentiation through the updates.
inline UnrolledResult unrolled_loss_and_gradient(const Matrix& d1, const Matrix& d2, const Vector& lambda,
                                                 const DiscriminativeExample& ex, double alpha, int k,
                                                 const InferenceConfig& cfg) {
  if (k < 1) throw Error("nmf: unroll depth K must be >= 1");
  const Eigen::Index q1 = d1.cols(), q = d1.cols() + d2.cols();
  if (lambda.size() != q) throw Error("nmf: lambda length mismatch");
  const double eps = cfg.epsilon_floor;
  Matrix d(d1.rows(), q);
  d << d1, d2;

  const auto [w, v] = weight_frames(ex.mix, cfg);
  const Matrix x1 = ex.source1 * w.asDiagonal();
  const Matrix x2 = ex.source2 * w.asDiagonal();
  const Matrix a = d.transpose() * v;
  const Matrix c = d.transpose() * d;

  std::vector<Matrix> zs{Matrix::Ones(q, v.cols())};
  std::vector<Matrix> bs;
  for (int i = 0; i < k; ++i) {
    Matrix b = c * zs.back();
    b.colwise() += lambda;
    b.array() += eps;
    zs.push_back((zs.back().array() * a.array() / b.array()).max(eps).matrix());
    bs.push_back(std::move(b));
  }
  const Matrix& z = zs.back();
  const Matrix r1 = d1 * z.topRows(q1) - x1;
  const Matrix r2 = d2 * z.bottomRows(q - q1) - x2;

  UnrolledResult out;
  out.loss = 0.5 * r1.squaredNorm() + 0.5 * alpha * r2.squaredNorm();

  Matrix gd = Matrix::Zero(d.rows(), q);
  gd.leftCols(q1) = r1 * z.topRows(q1).transpose();
  gd.rightCols(q - q1) = alpha * r2 * z.bottomRows(q - q1).transpose();
  Matrix gz(q, v.cols());
  gz.topRows(q1) = d1.transpose() * r1;
  gz.bottomRows(q - q1) = alpha * d2.transpose() * r2;

  Matrix ga = Matrix::Zero(q, v.cols());
  Matrix gc = Matrix::Zero(q, q);
  for (int i = k - 1; i >= 0; --i) {
    const Matrix& zi = zs[static_cast<std::size_t>(i)];
    const Matrix& b = bs[static_cast<std::size_t>(i)];
    const Matrix& znext = zs[static_cast<std::size_t>(i) + 1];
    // the floor at eps passes no gradient
    const Matrix g = (znext.array() > eps).select(gz, Matrix::Zero(q, v.cols()));
    const Matrix h = -(g.array() * zi.array() * a.array() / b.array().square()).matrix();
    ga += (g.array() * zi.array() / b.array()).matrix();
    gc += h * zi.transpose();
    gz = (g.array() * a.array() / b.array()).matrix() + c * h;
  }
  gd += v * ga.transpose() + d * (gc + gc.transpose());
  if (!gd.allFinite() || !std::isfinite(out.loss)) throw Error("nmf: non-finite unrolled gradient");
  out.grad1 = gd.leftCols(q1);
  out.grad2 = gd.rightCols(q - q1);
  return out;
}

struct FinetuneConfig {
  double alpha = 1.0;
  int unroll = 10;
  double step_size = 1e-3;
  int epochs = 20;
};

struct FinetuneResult {
  ModelPair models;
  std::vector<double> loss;  // per epoch, before the step
  double best_loss = 0.0;
};

/// Full-batch projected gradient on both dictionaries; returns the best
/// dictionaries seen.
inline FinetuneResult nmf_discriminative_finetune(const ModelPair& start, const std::vector<DiscriminativeExample>& data,
                                                  const FinetuneConfig& ft, const InferenceConfig& cfg) {
  if (ft.unroll < 1) throw Error("nmf: unroll depth K must be >= 1");
  if (ft.step_size < 0.0) throw Error("nmf: step size must be >= 0");
  if (data.empty()) throw Error("nmf: no fine-tuning data");
  Vector lambda(start.source1.atoms() + start.source2.atoms());
  lambda << Vector::Constant(start.source1.atoms(), start.source1.sparsity),
      Vector::Constant(start.source2.atoms(), start.source2.sparsity);

  auto evaluate = [&](const Matrix& d1, const Matrix& d2, Matrix* g1, Matrix* g2) {
    double loss = 0.0;
    if (g1) {
      g1->setZero(d1.rows(), d1.cols());
      g2->setZero(d2.rows(), d2.cols());
    }
    for (const auto& ex : data) {
      const auto r = unrolled_loss_and_gradient(d1, d2, lambda, ex, ft.alpha, ft.unroll, cfg);
      loss += r.loss;
      if (g1) {
        *g1 += r.grad1;
        *g2 += r.grad2;
      }
    }
    return loss;
  };

  FinetuneResult out;
  out.models = start;
  Matrix d1 = start.source1.dictionary, d2 = start.source2.dictionary;
  Matrix g1, g2;
  out.best_loss = std::numeric_limits<double>::infinity();
  for (int e = 0; e <= ft.epochs; ++e) {
    const bool last = e == ft.epochs;
    const double loss = evaluate(d1, d2, last ? nullptr : &g1, last ? nullptr : &g2);
    if (!std::isfinite(loss)) throw Error("nmf: non-finite fine-tuning loss at epoch " + std::to_string(e));
    if (loss < out.best_loss) {
      out.best_loss = loss;
      out.models.source1.dictionary = d1;
      out.models.source2.dictionary = d2;
    }
    if (last) break;
    out.loss.push_back(loss);
    if (ft.step_size == 0.0) continue;
    d1 = (d1 - ft.step_size * g1).cwiseMax(cfg.epsilon_floor);
    d2 = (d2 - ft.step_size * g2).cwiseMax(cfg.epsilon_floor);
    detail::normalize_columns(d1, nullptr);
    detail::normalize_columns(d2, nullptr);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model files: text header terminated by `data`, then m*q little-endian
// float32 values in row-major order.
//
//   SCATSEP-NMF 1
//   rows <m>
//   atoms <q>
//   sparsity <lambda>
//   mode <stft|scatt1|scatt2|...>
//   level <int>
//   stride <int>
//   sample_rate <int>
//   labels
//   <one per line>
//   data

inline void write_nmf_model(std::ostream& out, const NmfModel& model) {
  char lam[64];
  std::snprintf(lam, sizeof lam, "%.17g", model.sparsity);
  out << "SCATSEP-NMF 1\n"
      << "rows " << model.rows() << "\n"
      << "atoms " << model.atoms() << "\n"
      << "sparsity " << lam << "\n"
      << "mode " << model.descriptor.mode << "\n"
      << "level " << model.descriptor.level << "\n"
      << "stride " << model.descriptor.stride << "\n"
      << "sample_rate " << model.descriptor.sample_rate << "\n"
      << "labels\n";
  for (const auto& l : model.descriptor.labels) out << l << "\n";
  out << "data\n";
  detail::write_floats_row_major(out, model.dictionary);
}

inline NmfModel read_nmf_model(std::istream& in) {
  detail::expect_line(in, "SCATSEP-NMF 1");
  NmfModel model;
  const auto m = detail::expect_field<Eigen::Index>(in, "rows");
  const auto q = detail::expect_field<Eigen::Index>(in, "atoms");
  model.sparsity = detail::expect_field<double>(in, "sparsity");
  model.descriptor.mode = detail::expect_field<std::string>(in, "mode");
  model.descriptor.level = detail::expect_field<int>(in, "level");
  model.descriptor.stride = detail::expect_field<int>(in, "stride");
  model.descriptor.sample_rate = detail::expect_field<int>(in, "sample_rate");
  if (m < 1 || q < 1) throw Error("nmf model: bad dimensions");
  detail::expect_line(in, "labels");
  model.descriptor.labels.resize(static_cast<std::size_t>(m));
  for (auto& l : model.descriptor.labels) {
    if (!std::getline(in, l)) throw Error("nmf model: truncated labels");
  }
  detail::expect_line(in, "data");
  model.dictionary = detail::read_floats_row_major(in, m, q);
  model.validate(1e-5);  // float32 storage
  return model;
}

inline void save_nmf_model(const std::filesystem::path& path, const NmfModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("nmf model: cannot write " + path.string());
  write_nmf_model(out, model);
}

inline NmfModel load_nmf_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("nmf model: cannot open " + path.string());
  return read_nmf_model(in);
}

}  // namespace scatsep
