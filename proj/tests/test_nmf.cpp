#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "scatsep/nmf.hpp"

using namespace scatsep;

namespace {

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

NmfModel model_of(Matrix d, double sparsity, const FeatureMap& grid) {
  for (Eigen::Index j = 0; j < d.cols(); ++j) d.col(j).normalize();
  NmfModel m;
  m.dictionary = std::move(d);
  m.sparsity = sparsity;
  m.descriptor = FeatureDescriptor::of(grid, "stft");
  return m;
}

InferenceConfig plain(int iters, bool weighting = true) {
  InferenceConfig c;
  c.max_iters = iters;
  c.rel_tol = 1e-300;
  c.frame_weighting = weighting;
  return c;
}

}  // namespace

TEST(NmfTrain, ObjectiveNeverIncreases) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    const auto v = as_map(random_nonneg(12, 40, rng));
    const auto r = nmf_train({v}, 5, seed % 2 ? 0.1 : 0.0, plain(60), seed);
    for (std::size_t i = 1; i < r.objective.size(); ++i) {
      EXPECT_LE(r.objective[i], r.objective[i - 1] * (1 + 1e-9)) << "seed " << seed << " sweep " << i;
    }
  }
}

TEST(NmfTrain, UnitNormNonNegativeColumns) {
  std::mt19937_64 rng(1);
  const auto r = nmf_train({as_map(random_nonneg(20, 50, rng))}, 7, 0.1, plain(50), 3);
  EXPECT_GE(r.model.dictionary.minCoeff(), 0.0);
  for (Eigen::Index j = 0; j < 7; ++j) EXPECT_NEAR(r.model.dictionary.col(j).norm(), 1.0, 1e-9);
  EXPECT_NO_THROW(r.model.validate());
}

TEST(NmfTrain, ExactFactorizationIsRecovered) {
  std::mt19937_64 rng(2);
  const Matrix d0 = random_nonneg(15, 4, rng);
  const Matrix z0 = random_nonneg(4, 60, rng);
  const Matrix v = d0 * z0;
  auto cfg = plain(3000);
  const auto r = nmf_train({as_map(v)}, 4, 0.0, cfg, 7);
  // the fit runs on frame-normalized columns, so the residual is measured there
  const auto [w, vw] = weight_frames(v, cfg);
  (void)w;
  const Matrix d = r.model.dictionary;
  const Matrix z = (d.transpose() * d).ldlt().solve(d.transpose() * vw);
  // multiplicative updates converge slowly near the optimum; the LS residual is the real check
  EXPECT_LT(r.objective.back(), 1e-5 * vw.squaredNorm());
  EXPECT_LT((vw - d * z).norm() / vw.norm(), 1e-3);
}

TEST(NmfTrain, SingleColumnRankOne) {
  Matrix v(4, 1);
  v << 1.0, 2.0, 0.5, 3.0;
  const auto r = nmf_train({as_map(v)}, 1, 0.0, plain(200), 1);
  EXPECT_LT((r.model.dictionary.col(0) - v.col(0) / v.norm()).norm(), 1e-6);
}

TEST(NmfTrain, Errors) {
  std::mt19937_64 rng(3);
  EXPECT_THROW(nmf_train({}, 3, 0.1, plain(5), 1), Error);
  const auto a = as_map(random_nonneg(5, 10, rng));
  const auto b = as_map(random_nonneg(6, 10, rng));
  EXPECT_THROW(nmf_train({a, b}, 3, 0.1, plain(5), 1), Error);
  EXPECT_THROW(nmf_train({a}, 0, 0.1, plain(5), 1), Error);
  InferenceConfig bad;
  bad.max_iters = 0;
  EXPECT_THROW(nmf_train({a}, 3, 0.1, bad, 1), Error);
}

TEST(NmfTrain, SameSeedSameDictionary) {
  std::mt19937_64 rng(4);
  const auto v = as_map(random_nonneg(10, 30, rng));
  const auto a = nmf_train({v}, 4, 0.1, plain(30), 11), b = nmf_train({v}, 4, 0.1, plain(30), 11);
  EXPECT_EQ(a.model.dictionary, b.model.dictionary);
}

TEST(NmfInfer, ObjectiveNeverIncreases) {
  std::mt19937_64 rng(5);
  const auto grid = as_map(random_nonneg(10, 25, rng));
  const auto m1 = model_of(random_nonneg(10, 4, rng), 0.1, grid), m2 = model_of(random_nonneg(10, 3, rng), 0.1, grid);
  const auto z = nmf_infer_joint(grid, m1, m2, plain(200), 1);
  for (std::size_t i = 1; i < z.objective.size(); ++i) EXPECT_LE(z.objective[i], z.objective[i - 1] * (1 + 1e-9));
  EXPECT_GE(z.z1.minCoeff(), 0.0);
  EXPECT_GE(z.z2.minCoeff(), 0.0);
}

TEST(NmfInfer, ColumnInSpanOfOneAtomActivatesOnlyThatSource) {
  // orthogonal atoms: e0, e1 for source 1; e2, e3 for source 2
  const Matrix eye = Matrix::Identity(4, 4);
  FeatureMap mix = as_map(Matrix(4, 3));
  mix.values << 3.0, 1.0, 0.5, 0, 0, 0, 0, 0, 0, 0, 0, 0;
  const auto m1 = model_of(eye.leftCols(2), 0.0, mix), m2 = model_of(eye.rightCols(2), 0.0, mix);
  const auto z = nmf_infer_joint(mix, m1, m2, plain(500), 2);
  EXPECT_LT(z.z2.norm(), 1e-3 * z.z1.norm());
  const auto [a, b] = reconstruct_sources(z.z1, z.z2, m1, m2);
  EXPECT_LT((a + b - mix.values).norm() / mix.values.norm(), 1e-3);
}

TEST(NmfInfer, ZeroMixtureGivesZeroActivations) {
  std::mt19937_64 rng(6);
  const auto grid = as_map(Matrix::Zero(6, 5));
  const auto m1 = model_of(random_nonneg(6, 3, rng), 0.1, grid), m2 = model_of(random_nonneg(6, 3, rng), 0.1, grid);
  const auto z = nmf_infer_joint(grid, m1, m2, plain(200), 1);
  EXPECT_LT(z.z1.maxCoeff(), 1e-6);
  EXPECT_LT(z.z2.maxCoeff(), 1e-6);
}

TEST(NmfInfer, IdenticalDictionariesGiveIdenticalActivations) {
  std::mt19937_64 rng(7);
  const auto grid = as_map(random_nonneg(8, 10, rng));
  const auto m = model_of(random_nonneg(8, 3, rng), 0.1, grid);
  const auto z = nmf_infer_joint(grid.values, m, m, plain(100), Matrix::Ones(6, 10));
  EXPECT_LT((z.z1 - z.z2).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(NmfInfer, ScaleEquivarianceWithoutSparsity) {
  std::mt19937_64 rng(8);
  const Matrix v = random_nonneg(8, 6, rng);
  const auto grid = as_map(v);
  const auto m1 = model_of(random_nonneg(8, 3, rng), 0.0, grid), m2 = model_of(random_nonneg(8, 2, rng), 0.0, grid);
  for (bool weighting : {false, true}) {
    const auto cfg = plain(50, weighting);
    const Matrix init = Matrix::Ones(5, 6);
    const auto a = nmf_infer_joint(v, m1, m2, cfg, init);
    const auto b = nmf_infer_joint(3.0 * v, m1, m2, cfg, weighting ? init : Matrix(3.0 * init));
    EXPECT_LT((b.z1 - 3.0 * a.z1).norm(), 1e-9 * a.z1.norm()) << weighting;
    EXPECT_LT((b.z2 - 3.0 * a.z2).norm(), 1e-9 * std::max(a.z2.norm(), 1e-300)) << weighting;
  }
}

TEST(NmfInfer, DescriptorAndShapeChecks) {
  std::mt19937_64 rng(9);
  const auto grid = as_map(random_nonneg(6, 4, rng));
  auto m1 = model_of(random_nonneg(6, 2, rng), 0.1, grid), m2 = model_of(random_nonneg(6, 2, rng), 0.1, grid);
  auto other = grid;
  other.stride = 2;
  EXPECT_THROW(nmf_infer_joint(other, m1, m2, plain(5), 1), Error);
  m2.descriptor.mode = "scatt1";
  EXPECT_THROW(nmf_infer_joint(grid, m1, m2, plain(5), 1), Error);
  EXPECT_THROW(nmf_infer_joint(Matrix(Matrix::Ones(5, 4)), m1, m1, plain(5), 1), Error);
}

TEST(Reconstruct, ZeroAndUnitActivations) {
  std::mt19937_64 rng(10);
  const auto grid = as_map(random_nonneg(5, 3, rng));
  const auto m = model_of(random_nonneg(5, 2, rng), 0.1, grid);
  const auto [a, b] = reconstruct_sources(Matrix::Zero(2, 3), Matrix::Zero(2, 3), m, m);
  EXPECT_EQ(a.norm() + b.norm(), 0.0);
  const auto q1 = model_of(random_nonneg(5, 1, rng), 0.1, grid);
  Matrix z = Matrix::Zero(1, 3);
  z(0, 1) = 2.5;
  const auto [c, d] = reconstruct_sources(z, z, q1, q1);
  EXPECT_LT((c.col(1) - 2.5 * q1.dictionary.col(0)).norm(), 1e-12);
  EXPECT_EQ(c.col(0).norm(), 0.0);
}

TEST(NmfMultires, LevelsAreIndependent) {
  std::mt19937_64 rng(11);
  const Matrix eye = Matrix::Identity(4, 4);
  FeatureMap l1 = as_map(Matrix(4, 2));
  l1.values << 1, 2, 0, 0, 3, 1, 0, 0;
  FeatureMap l2 = as_map(Matrix::Zero(4, 1));
  l2.level = 2;
  l2.stride = 2;
  const ModelPair p1{model_of(eye.leftCols(2), 0.0, l1), model_of(eye.rightCols(2), 0.0, l1)};
  ModelPair p2{model_of(eye.leftCols(2), 0.1, l2), model_of(eye.rightCols(2), 0.1, l2)};
  const auto cfg = plain(300);
  const auto z = nmf_infer_multires({l1, l2}, {p1, p2}, cfg, 5);
  ASSERT_EQ(z.size(), 2u);
  const auto single = nmf_infer_joint(l1, p1.source1, p1.source2, cfg, 5);
  EXPECT_EQ(z[0].z1, single.z1);
  EXPECT_EQ(z[0].z2, single.z2);
  EXPECT_LT(z[1].z1.maxCoeff() + z[1].z2.maxCoeff(), 1e-6);
  const auto [a, b] = reconstruct_sources(z[0].z1, z[0].z2, p1.source1, p1.source2);
  EXPECT_LT((a + b - l1.values).norm() / l1.values.norm(), 1e-3);
  EXPECT_THROW(nmf_infer_multires({l1, l2}, {p1}, cfg, 5), Error);
}

namespace {

DiscriminativeExample toy_example(std::mt19937_64& rng) {
  DiscriminativeExample ex;
  ex.source1 = random_nonneg(6, 5, rng);
  ex.source2 = random_nonneg(6, 5, rng);
  ex.mix = ex.source1 + ex.source2;
  return ex;
}

}  // namespace

TEST(Unrolled, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(12);
  const Matrix d1 = random_nonneg(6, 4, rng), d2 = random_nonneg(6, 4, rng);
  const auto ex = toy_example(rng);
  const Vector lambda = Vector::Constant(8, 0.1);
  const auto cfg = plain(10);
  for (double alpha : {1.0, 0.0}) {
    const auto r = unrolled_loss_and_gradient(d1, d2, lambda, ex, alpha, 3, cfg);
    const double h = 1e-5;
    double worst = 0.0;
    for (int which = 0; which < 2; ++which) {
      for (Eigen::Index i = 0; i < 6; ++i) {
        for (Eigen::Index j = 0; j < 4; ++j) {
          Matrix a = d1, b = d2;
          Matrix& m = which == 0 ? a : b;
          m(i, j) += h;
          const double up = unrolled_loss_and_gradient(a, b, lambda, ex, alpha, 3, cfg).loss;
          m(i, j) -= 2 * h;
          const double down = unrolled_loss_and_gradient(a, b, lambda, ex, alpha, 3, cfg).loss;
          const double fd = (up - down) / (2 * h);
          const double an = which == 0 ? r.grad1(i, j) : r.grad2(i, j);
          worst = std::max(worst, std::abs(fd - an) / std::max(1e-6, std::max(std::abs(fd), std::abs(an))));
        }
      }
    }
    EXPECT_LT(worst, 1e-4) << "alpha " << alpha;
  }
  EXPECT_THROW(unrolled_loss_and_gradient(d1, d2, lambda, ex, 1.0, 0, cfg), Error);
}

TEST(Finetune, ZeroStepLeavesDictionariesUnchanged) {
  std::mt19937_64 rng(13);
  const auto grid = as_map(random_nonneg(6, 5, rng));
  const ModelPair start{model_of(random_nonneg(6, 3, rng), 0.1, grid), model_of(random_nonneg(6, 3, rng), 0.1, grid)};
  std::vector<DiscriminativeExample> data{toy_example(rng), toy_example(rng)};
  const auto r = nmf_discriminative_finetune(start, data, {1.0, 3, 0.0, 4}, plain(10));
  EXPECT_EQ(r.models.source1.dictionary, start.source1.dictionary);
  EXPECT_EQ(r.models.source2.dictionary, start.source2.dictionary);
}

TEST(Finetune, BestLossDoesNotExceedStart) {
  std::mt19937_64 rng(14);
  const auto grid = as_map(random_nonneg(6, 5, rng));
  const ModelPair start{model_of(random_nonneg(6, 3, rng), 0.1, grid), model_of(random_nonneg(6, 3, rng), 0.1, grid)};
  std::vector<DiscriminativeExample> data{toy_example(rng), toy_example(rng)};
  const auto r = nmf_discriminative_finetune(start, data, {1.0, 5, 1e-2, 15}, plain(10));
  ASSERT_EQ(r.loss.size(), 15u);
  EXPECT_LT(r.best_loss, r.loss.front());
  EXPECT_NO_THROW(r.models.source1.validate());
  EXPECT_NO_THROW(r.models.source2.validate());
  EXPECT_THROW(nmf_discriminative_finetune(start, data, {1.0, 0, 1e-2, 1}, plain(10)), Error);
}

TEST(NmfModelFile, RoundTrip) {
  std::mt19937_64 rng(15);
  auto grid = as_map(random_nonneg(5, 3, rng));
  grid.stride = 64;
  grid.level = 2;
  const auto m = model_of(random_nonneg(5, 3, rng), 0.1, grid);
  std::stringstream ss;
  write_nmf_model(ss, m);
  const auto back = read_nmf_model(ss);
  EXPECT_EQ(back.descriptor, m.descriptor);
  EXPECT_EQ(back.sparsity, 0.1);
  EXPECT_EQ(back.dictionary, Matrix(m.dictionary.cast<float>().cast<double>()));
  // stored values survive a second round trip exactly
  std::stringstream s2, s3;
  write_nmf_model(s2, back);
  const auto again = read_nmf_model(s2);
  write_nmf_model(s3, again);
  EXPECT_EQ(s2.str(), s3.str());
  std::stringstream junk("SCATSEP-NMF 2\n");
  EXPECT_THROW(read_nmf_model(junk), Error);
}
