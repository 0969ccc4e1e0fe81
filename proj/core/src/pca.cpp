#include "usqm/pca.hpp"

#include <Eigen/Eigenvalues>
#include <string>

#include "usqm/errors.hpp"

namespace usqm {

Eigen::VectorXd PcaModel::project(const Eigen::VectorXd& v) const {
  if (v.size() != mean.size()) fail(ErrorKind::Shape, "pca: input dimension mismatch");
  return components * (v - mean);
}

Eigen::MatrixXd PcaModel::project_rows(const Eigen::MatrixXd& samples) const {
  if (samples.cols() != mean.size()) fail(ErrorKind::Shape, "pca: input dimension mismatch");
  return (samples.rowwise() - mean.transpose()) * components.transpose();
}

Eigen::VectorXd PcaModel::reconstruct(const Eigen::VectorXd& projected) const {
  return components.transpose() * projected + mean;
}

PcaModel fit_pca(const Eigen::MatrixXd& samples, std::size_t dim) {
  const auto n = static_cast<std::size_t>(samples.rows());
  const auto d_in = static_cast<std::size_t>(samples.cols());
  if (dim == 0 || dim > d_in) {
    fail(ErrorKind::Range, "pca: output dimension " + std::to_string(dim) +
                               " must lie in [1, " + std::to_string(d_in) + "]");
  }
  if (n < dim) {
    fail(ErrorKind::InsufficientData, "pca: " + std::to_string(n) +
                                          " samples cannot support dimension " +
                                          std::to_string(dim));
  }

  PcaModel m;
  m.mean = samples.colwise().mean().transpose();
  const Eigen::MatrixXd centered = samples.rowwise() - m.mean.transpose();
  const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / denom;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) fail(ErrorKind::InternalBug, "pca: eigensolver failed");

  // Eigen returns ascending eigenvalues.
  const auto& vals = solver.eigenvalues();
  const auto& vecs = solver.eigenvectors();
  const auto k = static_cast<Eigen::Index>(dim);
  m.components.resize(k, static_cast<Eigen::Index>(d_in));
  m.variances.resize(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const Eigen::Index src = static_cast<Eigen::Index>(d_in) - 1 - i;
    Eigen::VectorXd axis = vecs.col(src);
    Eigen::Index arg = 0;
    axis.cwiseAbs().maxCoeff(&arg);
    if (axis[arg] < 0) axis = -axis;
    m.components.row(i) = axis.transpose();
    m.variances[i] = std::max(0.0, vals[src]);
  }
  return m;
}

}  // namespace usqm
