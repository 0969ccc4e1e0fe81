#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace usqm {

inline constexpr double kVarianceFloor = 1e-6;

/// Gaussian mixture with diagonal covariances.
struct DiagGmm {
  Eigen::VectorXd weights;    // K
  Eigen::MatrixXd means;      // K x d
  Eigen::MatrixXd variances;  // K x d

  std::size_t components() const noexcept { return static_cast<std::size_t>(weights.size()); }
  std::size_t dim() const noexcept { return static_cast<std::size_t>(means.cols()); }
};

/// log p(v) via log-sum-exp over components.
double log_density(const DiagGmm& model, const Eigen::VectorXd& v);

struct GmmOptions {
  double tolerance = 1e-6;  // absolute gain in mean log-likelihood
  int max_iterations = 200;
  int restarts = 10;
  double variance_floor = kVarianceFloor;
};

struct GmmFit {
  DiagGmm model;
  std::vector<double> trace;  // mean log-likelihood per EM iteration, best restart
  int iterations = 0;
  bool converged = false;
  int reseeds = 0;  // components re-seeded after emptying, best restart
};

/// EM from k-means++ initialisations; keeps the restart with the best final
/// mean log-likelihood. Throws InsufficientData when N < K.
GmmFit fit_gmm(const Eigen::MatrixXd& samples, std::size_t components, std::uint64_t seed,
               const GmmOptions& options = {});

}  // namespace usqm
