#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

namespace usqm {

/// Fractional ranks (1-based); tied values share the mean of their ranks.
std::vector<double> fractional_ranks(std::span<const double> values);

/// Pearson correlation of tie-averaged ranks.
/// Throws UndefinedStatistic for constant input, Shape for length mismatch or n < 2.
double spearman(std::span<const double> a, std::span<const double> b);

/// Kendall tau-b over all pairs.
double kendall_tau(std::span<const double> a, std::span<const double> b);

/// Kendall's W with tie correction. `rankings[j][i]` is judge j's score for item i;
/// scores are converted to fractional ranks per judge.
double kendall_w(const std::vector<std::vector<double>>& rankings);

/// Linear-interpolation quantile, inclusive method (type 7).
double quantile(std::span<const double> values, double p);
double iqr(std::span<const double> values);

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

Interval wilson_ci(std::size_t successes, std::size_t n, double level = 0.95);

/// Exact two-sided binomial test: sum of the probabilities of every outcome
/// no more likely than the observed one. Evaluated in log space.
double binomial_test_two_sided(std::size_t successes, std::size_t n, double p0 = 0.5);

}  // namespace usqm
