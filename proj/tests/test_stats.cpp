#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "routescope/stats.hpp"

using namespace routescope;

namespace {

// P(T > t) by composite Simpson integration of the Student t density on
// [0, t], using P(T > t) = 1/2 - integral.
double t_upper_tail_oracle(double t, double df) {
  const double c = std::exp(std::lgamma((df + 1) / 2) - std::lgamma(df / 2)) / std::sqrt(df * M_PI);
  auto pdf = [&](double x) { return c * std::pow(1 + x * x / df, -(df + 1) / 2); };
  const int n = 200000;
  const double h = t / n;
  double s = pdf(0) + pdf(t);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4 : 2) * pdf(i * h);
  return 0.5 - s * h / 3;
}

// Exhaustive sign-flip enumeration written independently of the library.
double permutation_oracle(const std::vector<double>& d) {
  const std::size_t n = d.size();
  double obs = 0;
  for (double x : d) obs += x;
  std::size_t count = 0, total = std::size_t{1} << n;
  for (std::size_t mask = 0; mask < total; ++mask) {
    double s = 0;
    for (std::size_t i = 0; i < n; ++i) s += (mask & (std::size_t{1} << i)) ? -d[i] : d[i];
    if (s >= obs - 1e-9) ++count;
  }
  return static_cast<double>(count + 1) / static_cast<double>(total + 1);
}

}  // namespace

TEST(PairedT, OneTwoThreeMatchesIntegrationOracle) {
  const std::vector<double> d{1, 2, 3};
  const auto r = stats::paired_t_one_sided(d);
  EXPECT_NEAR(r.statistic, 2.0 * std::sqrt(3.0), 1e-12);
  EXPECT_NEAR(r.p_value, t_upper_tail_oracle(r.statistic, 2), 1e-6);
  EXPECT_NEAR(r.p_value, 0.0371, 5e-5);
}

TEST(PairedT, NegatedDiffsGiveComplement) {
  const std::vector<double> d{-1, -2, -3};
  const auto r = stats::paired_t_one_sided(d);
  EXPECT_NEAR(r.p_value, 1.0 - t_upper_tail_oracle(2.0 * std::sqrt(3.0), 2), 1e-6);
  EXPECT_NEAR(r.p_value, 0.9629, 5e-5);
}

TEST(PairedT, ZeroDiffsAreDegenerate) {
  const std::vector<double> d{0, 0, 0, 0};
  const auto r = stats::paired_t_one_sided(d);
  EXPECT_TRUE(r.degenerate);
  EXPECT_EQ(r.p_value, 0.5);
  EXPECT_EQ(r.statistic, 0.0);
}

TEST(PairedT, AgreesWithOracleAcrossDegreesOfFreedom) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal(0.3, 1.0);
  for (int n : {2, 3, 5, 10, 30, 100}) {
    std::vector<double> d(n);
    for (auto& x : d) x = normal(rng);
    const auto r = stats::paired_t_one_sided(d);
    const double oracle = r.statistic >= 0 ? t_upper_tail_oracle(r.statistic, n - 1)
                                           : 1.0 - t_upper_tail_oracle(-r.statistic, n - 1);
    EXPECT_NEAR(r.p_value, oracle, 1e-6) << "n=" << n;
    const auto two = stats::paired_t_test(d, true);
    EXPECT_NEAR(two.p_value, 2 * std::min(oracle, 1 - oracle), 2e-6);
  }
}

TEST(PairedT, RejectsTooFewOrNonFinite) {
  EXPECT_THROW(stats::paired_t_one_sided(std::vector<double>{1.0}), ValidationError);
  EXPECT_THROW(stats::paired_t_one_sided(std::vector<double>{1.0, NAN}), ValidationError);
}

TEST(Permutation, HandEnumeratedValues) {
  EXPECT_DOUBLE_EQ(stats::sign_flip_permutation(std::vector<double>{1.0}).p_value, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(stats::sign_flip_permutation(std::vector<double>(10, 1.0)).p_value, 2.0 / 1025.0);
  EXPECT_DOUBLE_EQ(stats::sign_flip_permutation(std::vector<double>(6, 0.0)).p_value, 1.0);
}

TEST(Permutation, MatchesExhaustiveOracleUpToTwelve) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> normal(0.2, 1.0);
  for (int n = 1; n <= 12; ++n)
    for (int rep = 0; rep < 5; ++rep) {
      std::vector<double> d(n);
      for (auto& x : d) x = std::round(normal(rng) * 4) / 4;  // ties on purpose
      const auto r = stats::sign_flip_permutation(d);
      EXPECT_TRUE(r.exact);
      EXPECT_DOUBLE_EQ(r.p_value, permutation_oracle(d)) << "n=" << n;
    }
}

TEST(Permutation, MonteCarloIndependentOfThreads) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal(0.1, 1.0);
  std::vector<double> d(40);
  for (auto& x : d) x = normal(rng);
  stats::PermutationOptions opt;
  opt.n_resamples = 20000;
  opt.seed = 17;
  const auto one = stats::sign_flip_permutation(d, opt);
  opt.threads = 4;
  const auto four = stats::sign_flip_permutation(d, opt);
  EXPECT_FALSE(one.exact);
  EXPECT_EQ(one.p_value, four.p_value);
  EXPECT_EQ(one.n_resamples, 20000u);
}

TEST(Permutation, MonteCarloApproximatesExact) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> normal(0.3, 1.0);
  std::vector<double> d(16);
  for (auto& x : d) x = normal(rng);
  const double exact = stats::sign_flip_permutation(d).p_value;
  stats::PermutationOptions opt;
  opt.exact_max_n = 0;
  opt.n_resamples = 200000;
  const double mc = stats::sign_flip_permutation(d, opt).p_value;
  EXPECT_NEAR(mc, exact, 4 * std::sqrt(exact * (1 - exact) / opt.n_resamples) + 1e-5);
}

TEST(Summary, MeanSdAndKs) {
  const std::vector<double> x{1, 2, 3, 4};
  EXPECT_DOUBLE_EQ(stats::mean(x), 2.5);
  EXPECT_DOUBLE_EQ(stats::sample_sd(x), std::sqrt(5.0 / 3.0));
  EXPECT_DOUBLE_EQ(stats::standard_error(x), std::sqrt(5.0 / 3.0) / 2.0);
  EXPECT_NEAR(stats::ks_distance_uniform({0.5}), 0.5, 1e-15);
  std::vector<double> grid;
  for (int i = 0; i < 1000; ++i) grid.push_back((i + 0.5) / 1000);
  EXPECT_NEAR(stats::ks_distance_uniform(grid), 0.0005, 1e-12);
}

TEST(IncompleteBeta, KnownValues) {
  EXPECT_NEAR(stats::incomplete_beta(1, 1, 0.3), 0.3, 1e-14);
  EXPECT_NEAR(stats::incomplete_beta(2, 3, 0.4), 0.5248, 1e-12);
  EXPECT_NEAR(stats::incomplete_beta(0.5, 0.5, 0.5), 0.5, 1e-12);
}
