#include "usqm/evalstats.hpp"

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "usqm/errors.hpp"

namespace usqm {
namespace {

void check_pair(std::span<const double> a, std::span<const double> b, const char* what) {
  if (a.size() != b.size()) {
    fail(ErrorKind::Shape, std::string(what) + ": inputs differ in length (" +
                               std::to_string(a.size()) + " vs " + std::to_string(b.size()) +
                               ")");
  }
  if (a.size() < 2) fail(ErrorKind::Shape, std::string(what) + ": need at least 2 observations");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!std::isfinite(a[i]) || !std::isfinite(b[i])) {
      fail(ErrorKind::UndefinedStatistic, std::string(what) + ": non-finite input");
    }
  }
}

double log_binom_pmf(std::size_t k, std::size_t n, double p) {
  const double kk = static_cast<double>(k);
  const double nn = static_cast<double>(n);
  double out = std::lgamma(nn + 1.0) - std::lgamma(kk + 1.0) - std::lgamma(nn - kk + 1.0);
  if (k > 0) out += kk * std::log(p);
  if (k < n) out += (nn - kk) * std::log1p(-p);
  return out;
}

}  // namespace

std::vector<double> fractional_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i + 1;
    while (j < n && values[order[j]] == values[order[i]]) ++j;
    // Positions i..j-1 (0-based) share ranks i+1..j.
    const double shared = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = shared;
    i = j;
  }
  return ranks;
}

double spearman(std::span<const double> a, std::span<const double> b) {
  check_pair(a, b, "spearman");
  const auto ra = fractional_ranks(a);
  const auto rb = fractional_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    const double da = ra[i] - ma;
    const double db = rb[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) {
    fail(ErrorKind::UndefinedStatistic, "spearman: an input is constant");
  }
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

double kendall_tau(std::span<const double> a, std::span<const double> b) {
  check_pair(a, b, "kendall_tau");
  long long concordant = 0, discordant = 0, tied_a = 0, tied_b = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      const double da = a[i] - a[j];
      const double db = b[i] - b[j];
      if (da == 0.0 && db == 0.0) continue;
      if (da == 0.0) {
        ++tied_a;
      } else if (db == 0.0) {
        ++tied_b;
      } else if ((da > 0.0) == (db > 0.0)) {
        ++concordant;
      } else {
        ++discordant;
      }
    }
  }
  const double n_a = static_cast<double>(concordant + discordant + tied_b);  // untied in a
  const double n_b = static_cast<double>(concordant + discordant + tied_a);  // untied in b
  if (n_a == 0.0 || n_b == 0.0) {
    fail(ErrorKind::UndefinedStatistic, "kendall_tau: all pairs tied in an input");
  }
  return std::clamp(static_cast<double>(concordant - discordant) / std::sqrt(n_a * n_b), -1.0,
                    1.0);
}

double kendall_w(const std::vector<std::vector<double>>& rankings) {
  const std::size_t m = rankings.size();
  if (m < 2) fail(ErrorKind::Shape, "kendall_w: need at least 2 rankings");
  const std::size_t n = rankings.front().size();
  if (n < 2) fail(ErrorKind::Shape, "kendall_w: need at least 2 items");
  std::vector<double> rank_sums(n, 0.0);
  double tie_term = 0.0;
  for (const auto& judge : rankings) {
    if (judge.size() != n) fail(ErrorKind::Shape, "kendall_w: rankings differ in length");
    const auto r = fractional_ranks(judge);
    for (std::size_t i = 0; i < n; ++i) rank_sums[i] += r[i];
    // Sum of (t^3 - t) over tie groups of this judge.
    std::vector<double> sorted(judge);
    std::sort(sorted.begin(), sorted.end());
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i + 1;
      while (j < n && sorted[j] == sorted[i]) ++j;
      const double t = static_cast<double>(j - i);
      tie_term += t * t * t - t;
      i = j;
    }
  }
  const double mm = static_cast<double>(m);
  const double nn = static_cast<double>(n);
  const double mean_sum = mm * (nn + 1.0) / 2.0;
  double s = 0.0;
  for (double rs : rank_sums) s += (rs - mean_sum) * (rs - mean_sum);
  const double denom = mm * mm * (nn * nn * nn - nn) - mm * tie_term;
  if (denom <= 0.0) fail(ErrorKind::UndefinedStatistic, "kendall_w: every ranking is fully tied");
  return std::clamp(12.0 * s / denom, 0.0, 1.0);
}

double quantile(std::span<const double> values, double p) {
  if (values.empty()) fail(ErrorKind::Shape, "quantile: empty input");
  if (p < 0.0 || p > 1.0) fail(ErrorKind::Range, "quantile: p outside [0, 1]");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  const double h = p * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

double iqr(std::span<const double> values) {
  return quantile(values, 0.75) - quantile(values, 0.25);
}

Interval wilson_ci(std::size_t successes, std::size_t n, double level) {
  if (n == 0) fail(ErrorKind::Range, "wilson_ci: n must be >= 1");
  if (successes > n) fail(ErrorKind::Range, "wilson_ci: successes exceed n");
  if (!(level > 0.0 && level < 1.0)) fail(ErrorKind::Range, "wilson_ci: level outside (0, 1)");
  const boost::math::normal_distribution<double> std_normal;
  const double z = boost::math::quantile(std_normal, 0.5 + level / 2.0);
  const double nn = static_cast<double>(n);
  const double phat = static_cast<double>(successes) / nn;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / nn;
  const double centre = (phat + z2 / (2.0 * nn)) / denom;
  const double half = z * std::sqrt(phat * (1.0 - phat) / nn + z2 / (4.0 * nn * nn)) / denom;
  Interval ci{std::max(0.0, centre - half), std::min(1.0, centre + half)};
  if (successes == 0) ci.lo = 0.0;
  if (successes == n) ci.hi = 1.0;
  return ci;
}

double binomial_test_two_sided(std::size_t successes, std::size_t n, double p0) {
  if (n == 0) fail(ErrorKind::Range, "binomial test: n must be >= 1");
  if (successes > n) fail(ErrorKind::Range, "binomial test: successes exceed n");
  if (!(p0 > 0.0 && p0 < 1.0)) fail(ErrorKind::Range, "binomial test: p0 outside (0, 1)");
  const double observed = log_binom_pmf(successes, n, p0);
  // Relative slack so outcomes equal to the observed one up to rounding count.
  const double cutoff = observed + 1e-7;
  std::vector<double> terms;
  for (std::size_t k = 0; k <= n; ++k) {
    const double lp = log_binom_pmf(k, n, p0);
    if (lp <= cutoff) terms.push_back(lp);
  }
  const double m = *std::max_element(terms.begin(), terms.end());
  double acc = 0.0;
  for (double t : terms) acc += std::exp(t - m);
  return std::min(1.0, std::exp(m + std::log(acc)));
}

}  // namespace usqm
