#pragma once

#include <Eigen/Dense>
#include <cstddef>

namespace usqm {

/// Principal axes of a descriptor pool. Projection centres and rotates only;
/// no whitening is applied.
struct PcaModel {
  Eigen::VectorXd mean;        // D
  Eigen::MatrixXd components;  // d x D, orthonormal rows
  Eigen::VectorXd variances;   // d, nonincreasing

  std::size_t input_dim() const noexcept { return static_cast<std::size_t>(mean.size()); }
  std::size_t output_dim() const noexcept { return static_cast<std::size_t>(components.rows()); }

  Eigen::VectorXd project(const Eigen::VectorXd& v) const;
  Eigen::MatrixXd project_rows(const Eigen::MatrixXd& samples) const;
  Eigen::VectorXd reconstruct(const Eigen::VectorXd& projected) const;
};

/// Top-`dim` eigenvectors of the sample covariance (N-1 denominator) of the
/// rows of `samples`. Each component's sign is fixed so that its
/// largest-magnitude entry is positive.
/// Throws InsufficientData when N < dim and Range when dim is 0 or exceeds D.
PcaModel fit_pca(const Eigen::MatrixXd& samples, std::size_t dim);

}  // namespace usqm
