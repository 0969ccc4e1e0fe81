#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "usqm/evalstats.hpp"
#include "usqm/random.hpp"

using namespace usqm;

namespace {

std::vector<double> small_ints(Rng& rng, std::size_t n, int levels) {
  std::vector<double> v(n);
  for (auto& x : v) x = static_cast<double>(rng.below(static_cast<std::uint64_t>(levels)));
  return v;
}

bool has_two_values(const std::vector<double>& v) {
  return std::any_of(v.begin(), v.end(), [&](double x) { return x != v[0]; });
}

std::vector<double> monotone_map(const std::vector<double>& v) {
  std::vector<double> out;
  for (double x : v) out.push_back(std::exp(0.3 * x) - 7.0 + x * x * x);
  return out;
}

}  // namespace

TEST(Ranks, TiesShareMeanRank) {
  const std::vector<double> v{10, 20, 20, 5, 20};
  EXPECT_EQ(fractional_ranks(v), (std::vector<double>{2, 4, 4, 1, 4}));
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const auto a = small_ints(rng, 1 + rng.below(10), 4);
    EXPECT_EQ(fractional_ranks(a), oracle::ranks(a));
  }
}

TEST(Spearman, Examples) {
  const std::vector<double> a{1, 2, 3, 4, 5}, rev{5, 4, 3, 2, 1};
  EXPECT_DOUBLE_EQ(spearman(a, a), 1.0);
  EXPECT_DOUBLE_EQ(spearman(a, rev), -1.0);
}

TEST(Spearman, MatchesOracleWithTies) {
  Rng rng(2);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng.below(7);
    const auto a = small_ints(rng, n, 5), b = small_ints(rng, n, 5);
    if (!has_two_values(a) || !has_two_values(b)) continue;
    EXPECT_NEAR(spearman(a, b), oracle::spearman(a, b), 1e-12);
  }
}

TEST(KendallTau, Examples) {
  const std::vector<double> a{1, 2, 3};
  EXPECT_DOUBLE_EQ(kendall_tau(a, a), 1.0);
  EXPECT_NEAR(kendall_tau(a, std::vector<double>{1, 3, 2}), 1.0 / 3.0, 1e-15);
}

TEST(KendallTau, MatchesPairCountingOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng.below(7);
    const auto a = small_ints(rng, n, 4), b = small_ints(rng, n, 4);
    if (!has_two_values(a) || !has_two_values(b)) continue;
    EXPECT_NEAR(kendall_tau(a, b), oracle::kendall_tau_b(a, b), 1e-12);
  }
}

TEST(RankCorrelations, InvariantUnderMonotoneMaps) {
  Rng rng(4);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 3 + rng.below(6);
    const auto a = small_ints(rng, n, 6), b = small_ints(rng, n, 6);
    if (!has_two_values(a) || !has_two_values(b)) continue;
    EXPECT_NEAR(spearman(monotone_map(a), b), spearman(a, b), 1e-12);
    EXPECT_NEAR(kendall_tau(a, monotone_map(b)), kendall_tau(a, b), 1e-12);
  }
}

TEST(RankCorrelations, UndefinedAndShapeErrors) {
  const std::vector<double> c{2, 2, 2}, a{1, 2, 3};
  EXPECT_EQ(oracle::error_kind([&] { spearman(c, a); }), ErrorKind::UndefinedStatistic);
  EXPECT_EQ(oracle::error_kind([&] { kendall_tau(a, c); }), ErrorKind::UndefinedStatistic);
  EXPECT_EQ(oracle::error_kind([&] { spearman(a, std::vector<double>{1, 2}); }), ErrorKind::Shape);
  EXPECT_EQ(oracle::error_kind([&] { kendall_tau(std::vector<double>{1}, std::vector<double>{1}); }),
            ErrorKind::Shape);
}

TEST(KendallW, Examples) {
  const std::vector<double> r{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(kendall_w({r, r, r}), 1.0);
  EXPECT_DOUBLE_EQ(kendall_w({r, {4, 3, 2, 1}}), 0.0);
  EXPECT_EQ(oracle::error_kind([] { kendall_w({{1.0}, {1.0}}); }), ErrorKind::Shape);
  EXPECT_EQ(oracle::error_kind([] { kendall_w({{1.0, 2.0}}); }), ErrorKind::Shape);
}

TEST(KendallW, MatchesOracle) {
  Rng rng(5);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t m = 2 + rng.below(4), n = 2 + rng.below(7);
    std::vector<std::vector<double>> judges;
    for (std::size_t j = 0; j < m; ++j) judges.push_back(small_ints(rng, n, 4));
    const double expected = oracle::kendall_w(judges);
    if (!std::isfinite(expected)) continue;
    const double w = kendall_w(judges);
    EXPECT_NEAR(w, expected, 1e-12);
    EXPECT_GE(w, -1e-12);
    EXPECT_LE(w, 1.0 + 1e-12);
  }
}

TEST(Quantile, InclusiveMethod) {
  const std::vector<double> v{4, 1, 3, 2};
  EXPECT_DOUBLE_EQ(quantile(v, 0.25), 1.75);
  EXPECT_DOUBLE_EQ(quantile(v, 0.75), 3.25);
  EXPECT_DOUBLE_EQ(iqr(v), 1.5);
  EXPECT_DOUBLE_EQ(quantile(v, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(quantile(v, 1.0), 4.0);
  EXPECT_DOUBLE_EQ(iqr(std::vector<double>{7, 7, 7}), 0.0);
  EXPECT_DOUBLE_EQ(iqr(std::vector<double>{3.0}), 0.0);
}

TEST(Quantile, ShiftInvariantIqr) {
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> v(1 + rng.below(20));
    for (auto& x : v) x = rng.uniform(-5, 5);
    auto shifted = v;
    for (auto& x : shifted) x += 3.25;
    EXPECT_NEAR(iqr(shifted), iqr(v), 1e-12);
  }
}

TEST(Wilson, PublishedInterval) {
  const auto ci = wilson_ci(393, 540);
  EXPECT_NEAR(ci.lo, 0.689, 0.001);
  EXPECT_NEAR(ci.hi, 0.764, 0.001);
}

TEST(Wilson, MatchesClosedForm) {
  const double z = 1.959963984540054;
  Rng rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.below(1000);
    const std::size_t k = rng.below(n + 1);
    const double p = static_cast<double>(k) / n;
    const double denom = 1 + z * z / n;
    const double centre = (p + z * z / (2.0 * n)) / denom;
    const double half = z * std::sqrt(p * (1 - p) / n + z * z / (4.0 * n * n)) / denom;
    const auto ci = wilson_ci(k, n);
    EXPECT_NEAR(ci.lo, std::max(0.0, centre - half), 1e-9);
    EXPECT_NEAR(ci.hi, std::min(1.0, centre + half), 1e-9);
  }
}

TEST(Wilson, Edges) {
  EXPECT_EQ(wilson_ci(0, 20).lo, 0.0);
  EXPECT_GT(wilson_ci(0, 20).hi, 0.0);
  EXPECT_EQ(wilson_ci(20, 20).hi, 1.0);
  EXPECT_EQ(oracle::error_kind([] { wilson_ci(5, 4); }), ErrorKind::Range);
  EXPECT_EQ(oracle::error_kind([] { wilson_ci(0, 0); }), ErrorKind::Range);
}

TEST(Wilson, WidthShrinksWithN) {
  double prev = 1.0;
  for (std::size_t n : {10u, 40u, 160u, 640u, 2560u}) {
    const auto ci = wilson_ci(n * 7 / 10, n);
    EXPECT_LT(ci.hi - ci.lo, prev);
    prev = ci.hi - ci.lo;
  }
}

TEST(Binomial, PublishedSignificance) {
  EXPECT_LT(binomial_test_two_sided(393, 540), 1e-20);
  EXPECT_GT(binomial_test_two_sided(393, 540), 0.0);
}

TEST(Binomial, ModalOutcomeIsOne) {
  for (std::size_t n : {2u, 10u, 540u}) EXPECT_NEAR(binomial_test_two_sided(n / 2, n), 1.0, 1e-12);
}

TEST(Binomial, MatchesEnumerationOracle) {
  for (std::size_t n = 1; n <= 12; ++n) {
    for (std::size_t k = 0; k <= n; ++k) {
      for (double p0 : {0.5, 0.3, 0.85}) {
        EXPECT_NEAR(binomial_test_two_sided(k, n, p0), oracle::binomial_two_sided(k, n, p0), 1e-12)
            << k << "/" << n << " p0=" << p0;
      }
    }
  }
}

TEST(Binomial, MatchesOracleOnLargerN) {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 13 + rng.below(200);
    const std::size_t k = rng.below(n + 1);
    const double expected = oracle::binomial_two_sided(k, n, 0.5);
    EXPECT_NEAR(binomial_test_two_sided(k, n), expected, 1e-10 * std::max(1.0, expected));
  }
}

TEST(Binomial, Errors) {
  EXPECT_EQ(oracle::error_kind([] { binomial_test_two_sided(3, 2); }), ErrorKind::Range);
  EXPECT_EQ(oracle::error_kind([] { binomial_test_two_sided(1, 2, 0.0); }), ErrorKind::Range);
  EXPECT_EQ(oracle::error_kind([] { binomial_test_two_sided(1, 2, 1.0); }), ErrorKind::Range);
}
