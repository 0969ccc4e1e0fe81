#include <gtest/gtest.h>

#include "oracles.hpp"
#include "usqm/pca.hpp"
#include "usqm/random.hpp"

using namespace usqm;

namespace {

Eigen::MatrixXd random_samples(Rng& rng, Eigen::Index n, Eigen::Index d) {
  Eigen::MatrixXd mix(d, d);
  for (Eigen::Index i = 0; i < mix.size(); ++i) mix.data()[i] = rng.normal();
  Eigen::MatrixXd x(n, d);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
  Eigen::RowVectorXd offset(d);
  for (Eigen::Index j = 0; j < d; ++j) offset(j) = rng.uniform(-3.0, 3.0);
  return (x * mix).rowwise() + offset;
}

}  // namespace

TEST(Pca, RowsOrthonormalAndVariancesSorted) {
  Rng rng(1);
  const auto x = random_samples(rng, 200, 12);
  const auto m = fit_pca(x, 7);
  EXPECT_EQ(m.output_dim(), 7u);
  EXPECT_EQ(m.input_dim(), 12u);
  const Eigen::MatrixXd gram = m.components * m.components.transpose();
  EXPECT_LT((gram - Eigen::MatrixXd::Identity(7, 7)).cwiseAbs().maxCoeff(), 1e-8);
  for (Eigen::Index i = 1; i < 7; ++i) EXPECT_LE(m.variances(i), m.variances(i - 1));
  EXPECT_GE(m.variances.minCoeff(), 0.0);
}

TEST(Pca, ProjectedTrainingSetHasStoredDiagonalCovariance) {
  Rng rng(2);
  const auto x = random_samples(rng, 300, 10);
  const auto m = fit_pca(x, 6);
  const auto p = m.project_rows(x);
  const Eigen::RowVectorXd mu = p.colwise().mean();
  EXPECT_LT(mu.cwiseAbs().maxCoeff(), 1e-10);
  const Eigen::MatrixXd cov = (p.rowwise() - mu).transpose() * (p.rowwise() - mu) / 299.0;
  for (Eigen::Index i = 0; i < 6; ++i) {
    EXPECT_NEAR(cov(i, i), m.variances(i), 1e-6 * m.variances(i));
    for (Eigen::Index j = 0; j < i; ++j) EXPECT_NEAR(cov(i, j), 0.0, 1e-8 * m.variances(0));
  }
}

TEST(Pca, FullBasisReconstructs) {
  Rng rng(3);
  const auto x = random_samples(rng, 40, 5);
  const auto m = fit_pca(x, 5);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Eigen::VectorXd v = x.row(i).transpose();
    EXPECT_LT((m.reconstruct(m.project(v)) - v).cwiseAbs().maxCoeff(), 1e-8);
  }
}

TEST(Pca, CollinearDataHasOneNonzeroVariance) {
  Eigen::MatrixXd x(20, 3);
  const Eigen::RowVector3d dir(1.0, -2.0, 0.5), base(0.3, 0.1, -4.0);
  for (int i = 0; i < 20; ++i) x.row(i) = base + (i * 0.37 - 2.0) * dir;
  const auto m = fit_pca(x, 3);
  double t2 = 0.0;
  for (int i = 0; i < 20; ++i) t2 += std::pow(i * 0.37 - 2.0 - (19 * 0.37 / 2.0 - 2.0), 2);
  EXPECT_NEAR(m.variances(0), t2 / 19.0 * dir.squaredNorm(), 1e-10);
  EXPECT_LE(std::abs(m.variances(1)), 1e-10);
  EXPECT_LE(std::abs(m.variances(2)), 1e-10);
  EXPECT_NEAR(std::abs(m.components.row(0).dot(dir.normalized())), 1.0, 1e-10);
}

TEST(Pca, DuplicatedRowsGiveSameComponents) {
  Rng rng(4);
  const auto x = random_samples(rng, 50, 6);
  Eigen::MatrixXd xx(100, 6);
  xx << x, x;
  const auto a = fit_pca(x, 4), b = fit_pca(xx, 4);
  for (Eigen::Index i = 0; i < 4; ++i) {
    EXPECT_NEAR(std::abs(a.components.row(i).dot(b.components.row(i))), 1.0, 1e-8);
  }
}

TEST(Pca, SignConvention) {
  Rng rng(5);
  const auto m = fit_pca(random_samples(rng, 60, 8), 8);
  for (Eigen::Index i = 0; i < 8; ++i) {
    Eigen::Index arg = 0;
    m.components.row(i).cwiseAbs().maxCoeff(&arg);
    EXPECT_GT(m.components(i, arg), 0.0);
  }
}

TEST(Pca, Errors) {
  Rng rng(6);
  const auto x = random_samples(rng, 5, 8);
  EXPECT_EQ(oracle::error_kind([&] { fit_pca(x, 6); }), ErrorKind::InsufficientData);
  EXPECT_EQ(oracle::error_kind([&] { fit_pca(x, 0); }), ErrorKind::Range);
  EXPECT_EQ(oracle::error_kind([&] { fit_pca(x, 9); }), ErrorKind::Range);
  const auto m = fit_pca(x, 3);
  EXPECT_EQ(oracle::error_kind([&] { m.project(Eigen::VectorXd::Zero(7)); }), ErrorKind::Shape);
}
