#include "usqm/gmm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "usqm/errors.hpp"
#include "usqm/log.hpp"
#include "usqm/random.hpp"

namespace usqm {
namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

double log_sum_exp(const Eigen::VectorXd& v) {
  const double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

// log w_k + log N(v | mu_k, diag(var_k)) for every component.
Eigen::VectorXd component_log_terms(const DiagGmm& g, const Eigen::VectorXd& v) {
  const auto k = g.weights.size();
  Eigen::VectorXd out(k);
  for (Eigen::Index c = 0; c < k; ++c) {
    const auto var = g.variances.row(c).transpose().array();
    const auto diff = v.array() - g.means.row(c).transpose().array();
    const double quad = (diff.square() / var).sum();
    const double logdet = var.log().sum();
    out[c] = std::log(g.weights[c]) -
             0.5 * (static_cast<double>(v.size()) * kLog2Pi + logdet + quad);
  }
  return out;
}

struct EmState {
  DiagGmm model;
  std::vector<double> trace;
  int iterations = 0;
  bool converged = false;
  int reseeds = 0;
};

Eigen::MatrixXd kmeanspp_centers(const Eigen::MatrixXd& x, std::size_t k, Rng& rng) {
  const auto n = x.rows();
  Eigen::MatrixXd centers(static_cast<Eigen::Index>(k), x.cols());
  centers.row(0) = x.row(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n))));
  Eigen::VectorXd d2 = (x.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (std::size_t c = 1; c < k; ++c) {
    const double total = d2.sum();
    Eigen::Index pick = 0;
    if (total <= 0.0) {
      pick = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(n)));
    } else {
      double target = rng.uniform() * total;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        target -= d2[i];
        if (target < 0.0) {
          pick = i;
          break;
        }
      }
    }
    centers.row(static_cast<Eigen::Index>(c)) = x.row(pick);
    d2 = d2.cwiseMin((x.rowwise() - x.row(pick)).rowwise().squaredNorm());
  }
  return centers;
}

// M-step from responsibilities. Components with (numerically) no mass are
// re-seeded at the worst-explained sample.
void m_step(const Eigen::MatrixXd& x, const Eigen::MatrixXd& resp,
            const Eigen::VectorXd& sample_ll, const Eigen::RowVectorXd& global_var,
            double floor, EmState& st) {
  const auto n = static_cast<double>(x.rows());
  const auto k = resp.cols();
  auto& g = st.model;
  g.weights.resize(k);
  g.means.resize(k, x.cols());
  g.variances.resize(k, x.cols());
  std::vector<Eigen::Index> used;
  for (Eigen::Index c = 0; c < k; ++c) {
    const double nk = resp.col(c).sum();
    if (nk < 1e-10) {
      Eigen::Index worst = 0;
      double worst_ll = std::numeric_limits<double>::infinity();
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        if (std::find(used.begin(), used.end(), i) != used.end()) continue;
        if (sample_ll[i] < worst_ll) {
          worst_ll = sample_ll[i];
          worst = i;
        }
      }
      used.push_back(worst);
      g.weights[c] = 1.0 / n;
      g.means.row(c) = x.row(worst);
      g.variances.row(c) = global_var.cwiseMax(floor);
      ++st.reseeds;
      log_info("gmm: component " + std::to_string(c) + " emptied; re-seeded at sample " +
               std::to_string(worst));
      continue;
    }
    g.weights[c] = nk / n;
    const Eigen::RowVectorXd mu = (resp.col(c).transpose() * x) / nk;
    g.means.row(c) = mu;
    const Eigen::RowVectorXd ex2 = (resp.col(c).transpose() * x.cwiseProduct(x)) / nk;
    g.variances.row(c) = (ex2 - mu.cwiseProduct(mu)).cwiseMax(floor);
  }
  g.weights /= g.weights.sum();
}

EmState run_em(const Eigen::MatrixXd& x, std::size_t k, Rng& rng, const GmmOptions& opt,
               const Eigen::RowVectorXd& global_var) {
  const auto n = x.rows();
  EmState st;

  // Hard k-means++ assignment provides the first responsibilities.
  const Eigen::MatrixXd centers = kmeanspp_centers(x, k, rng);
  Eigen::MatrixXd resp = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(k));
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index best = 0;
    (centers.rowwise() - x.row(i)).rowwise().squaredNorm().minCoeff(&best);
    resp(i, best) = 1.0;
  }
  Eigen::VectorXd sample_ll = Eigen::VectorXd::Zero(n);
  m_step(x, resp, sample_ll, global_var, opt.variance_floor, st);

  Eigen::VectorXd terms;
  for (int it = 0; it < opt.max_iterations; ++it) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      terms = component_log_terms(st.model, x.row(i).transpose());
      const double ll = log_sum_exp(terms);
      sample_ll[i] = ll;
      total += ll;
      resp.row(i) = (terms.array() - ll).exp().transpose();
    }
    const double mean_ll = total / static_cast<double>(n);
    st.trace.push_back(mean_ll);
    st.iterations = it + 1;
    if (it > 0 && mean_ll - st.trace[st.trace.size() - 2] < opt.tolerance) {
      st.converged = true;
      break;
    }
    if (it + 1 == opt.max_iterations) break;
    m_step(x, resp, sample_ll, global_var, opt.variance_floor, st);
  }
  return st;
}

}  // namespace

double log_density(const DiagGmm& model, const Eigen::VectorXd& v) {
  if (static_cast<std::size_t>(v.size()) != model.dim()) {
    fail(ErrorKind::Shape, "gmm: vector length " + std::to_string(v.size()) +
                               " does not match model dimension " +
                               std::to_string(model.dim()));
  }
  return log_sum_exp(component_log_terms(model, v));
}

GmmFit fit_gmm(const Eigen::MatrixXd& samples, std::size_t components, std::uint64_t seed,
               const GmmOptions& options) {
  if (components == 0) fail(ErrorKind::Range, "gmm: need at least one component");
  if (static_cast<std::size_t>(samples.rows()) < components) {
    fail(ErrorKind::InsufficientData, "gmm: " + std::to_string(samples.rows()) +
                                          " samples for " + std::to_string(components) +
                                          " components");
  }
  const Eigen::RowVectorXd mu = samples.colwise().mean();
  const Eigen::RowVectorXd global_var =
      (samples.rowwise() - mu).cwiseAbs2().colwise().mean();

  const int restarts = std::max(1, options.restarts);
  EmState best;
  bool have_best = false;
  for (int r = 0; r < restarts; ++r) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
    EmState st = run_em(samples, components, rng, options, global_var);
    if (!have_best || st.trace.back() > best.trace.back()) {
      best = std::move(st);
      have_best = true;
    }
  }
  GmmFit fit;
  fit.model = std::move(best.model);
  fit.trace = std::move(best.trace);
  fit.iterations = best.iterations;
  fit.converged = best.converged;
  fit.reseeds = best.reseeds;
  return fit;
}

}  // namespace usqm
