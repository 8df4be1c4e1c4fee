#include <numeric>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "routescope/overlap.hpp"

using namespace routescope;

namespace {

// Exact fraction for oracle arithmetic.
struct Frac {
  long long num, den;
  Frac(long long n, long long d = 1) : num(n), den(d) {
    if (den < 0) num = -num, den = -den;
    const long long g = std::gcd(num < 0 ? -num : num, den);
    if (g > 1) num /= g, den /= g;
  }
  friend Frac operator-(Frac a, Frac b) { return {a.num * b.den - b.num * a.den, a.den * b.den}; }
  friend Frac operator+(Frac a, Frac b) { return {a.num * b.den + b.num * a.den, a.den * b.den}; }
  friend Frac operator*(Frac a, Frac b) { return {a.num * b.num, a.den * b.den}; }
  friend Frac operator/(Frac a, Frac b) { return {a.num * b.den, a.den * b.num}; }
  friend bool operator==(Frac a, Frac b) { return a.num == b.num && a.den == b.den; }
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
};

std::vector<ExpertId> draw_subset(std::mt19937_64& rng, int k, int n) {
  // Partial Fisher-Yates over 0..n-1.
  std::vector<ExpertId> all(n);
  std::iota(all.begin(), all.end(), 0);
  for (int i = 0; i < k; ++i) {
    std::uniform_int_distribution<int> pick(i, n - 1);
    std::swap(all[i], all[pick(rng)]);
  }
  all.resize(k);
  return all;
}

RoutingTrace two_layer_trace(std::vector<std::vector<ExpertId>> last_token_sets) {
  RoutingTrace t;
  t.meta = {"toy", 16, 3, 1, {0, 1}, ""};
  t.example_id = "x";
  t.prompt_text = "a b";
  t.target_span = {1, 1};
  for (int l = 0; l < 2; ++l)
    t.layers[l] = {TokenRouting{0, "a", {13, 14, 15}, std::nullopt, std::nullopt},
                   TokenRouting{1, "b", last_token_sets[l], std::nullopt, std::nullopt}};
  return t;
}

}  // namespace

TEST(OverlapCount, IntersectionSize) {
  const std::vector<ExpertId> a{1, 3, 5}, b{1, 2, 5};
  EXPECT_EQ(overlap_count(a, b), 2);
  EXPECT_EQ(overlap_count(a, a), 3);
}

TEST(ExpectedOverlap, ClosedFormAndDegenerateCase) {
  EXPECT_DOUBLE_EQ(expected_overlap(2, 8), 0.5);
  EXPECT_DOUBLE_EQ(expected_overlap(8, 256), 0.25);
  EXPECT_DOUBLE_EQ(expected_overlap(5, 5), 5.0);
  EXPECT_THROW(expected_overlap(0, 8), ValidationError);
  EXPECT_THROW(expected_overlap(9, 8), ValidationError);
}

// Independent uniform k-subsets share k^2/N experts on average.
TEST(ExpectedOverlap, MonteCarloOracle) {
  std::mt19937_64 rng(99);
  for (auto [k, n] : {std::pair{2, 8}, std::pair{8, 256}, std::pair{6, 64}}) {
    const int draws = 200000;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < draws; ++i) {
      const double o = overlap_count(draw_subset(rng, k, n), draw_subset(rng, k, n));
      sum += o;
      sum2 += o * o;
    }
    const double m = sum / draws;
    const double se = std::sqrt((sum2 / draws - m * m) / draws);
    EXPECT_NEAR(m, expected_overlap(k, n), 3.0 * se) << k << "/" << n;
  }
}

TEST(NormalizedScore, Anchors) {
  for (auto [k, n] : {std::pair{8, 256}, std::pair{6, 64}, std::pair{2, 8}, std::pair{1, 16},
                      std::pair{1, 128}}) {
    EXPECT_EQ(normalized_score(k, k, n).score, 1.0);
    EXPECT_EQ(normalized_score(static_cast<double>(k) * k / n, k, n).score, 0.0);
  }
}

TEST(NormalizedScore, WorkedValueIsElevenThirtyFirsts) {
  const Frac exact = (Frac(3) - Frac(64, 256)) / (Frac(8) - Frac(64, 256));
  EXPECT_EQ(exact, Frac(11, 31));
  const Frac kappa = (Frac(3, 8) - Frac(8, 256)) / (Frac(1) - Frac(8, 256));
  EXPECT_EQ(kappa, Frac(11, 31));
  const auto s = normalized_score(3, 8, 256);
  EXPECT_DOUBLE_EQ(s.score, 11.0 / 31.0);
  EXPECT_DOUBLE_EQ(s.p_observed, 3.0 / 8.0);
  EXPECT_DOUBLE_EQ(s.p_expected, 1.0 / 32.0);
}

TEST(NormalizedScore, KappaIdentityOnRandomInputs) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 10000; ++i) {
    const int n = std::uniform_int_distribution<int>(2, 512)(rng);
    const int k = std::uniform_int_distribution<int>(1, n - 1)(rng);
    const int o = std::uniform_int_distribution<int>(0, k)(rng);
    const double po = static_cast<double>(o) / k, pe = static_cast<double>(k) / n;
    const double kappa = (po - pe) / (1.0 - pe);
    const double e = static_cast<double>(k) * k / n;
    const double centered = (o - e) / (k - e);
    const double s = normalized_score(o, k, n).score;
    EXPECT_NEAR(s, kappa, 1e-13 * std::max(1.0, std::abs(kappa)));
    EXPECT_NEAR(s, centered, 1e-13 * std::max(1.0, std::abs(centered)));
  }
}

// Score of the mean overlap equals the mean of the scores.
TEST(NormalizedScore, AveragingCommutes) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = std::uniform_int_distribution<int>(2, 300)(rng);
    const int k = std::uniform_int_distribution<int>(1, n - 1)(rng);
    const int m = std::uniform_int_distribution<int>(1, 40)(rng);
    std::vector<int> os(m);
    for (auto& o : os) o = std::uniform_int_distribution<int>(0, k)(rng);
    const long long sum = std::accumulate(os.begin(), os.end(), 0LL);
    const Frac kk(k), nn(n);
    const Frac lhs = (Frac(sum, m) * nn - kk * kk) / (kk * (nn - kk));
    Frac rhs(0);
    for (int o : os) rhs = rhs + (Frac(o) * nn - kk * kk) / (kk * (nn - kk));
    rhs = rhs / Frac(m);
    ASSERT_EQ(lhs, rhs);
    double mean_scores = 0.0;
    for (int o : os) mean_scores += normalized_score(o, k, n).score;
    mean_scores /= m;
    const double score_of_mean = normalized_score(static_cast<double>(sum) / m, k, n).score;
    EXPECT_NEAR(score_of_mean, lhs.value(), 1e-12);
    EXPECT_NEAR(mean_scores, lhs.value(), 1e-12);
  }
}

TEST(NormalizedScore, RejectsDegenerateAndOutOfRange) {
  EXPECT_THROW(normalized_score(4, 4, 4), ValidationError);
  EXPECT_THROW(normalized_score(5, 4, 16), ValidationError);
  EXPECT_THROW(normalized_score(-1, 4, 16), ValidationError);
}

TEST(PairLayerScores, IdenticalTracesScoreOne) {
  const auto t = two_layer_trace({{1, 2, 3}, {4, 5, 6}});
  for (const auto& l : pair_layer_scores(t, t)) EXPECT_EQ(l.score.score, 1.0);
}

TEST(PairLayerScores, SingleTokenSpanReducesToScoreOfCount) {
  const auto a = two_layer_trace({{1, 2, 3}, {4, 5, 6}});
  const auto b = two_layer_trace({{1, 2, 7}, {8, 9, 10}});
  const auto ls = pair_layer_scores(a, b, SpanPolicy::mean_over_span);
  ASSERT_EQ(ls.size(), 2u);
  EXPECT_EQ(ls[0].overlap, 2.0);
  EXPECT_DOUBLE_EQ(ls[0].score.score, normalized_score(2, 3, 16).score);
  EXPECT_DOUBLE_EQ(ls[1].score.score, normalized_score(0, 3, 16).score);
}

TEST(PairLayerScores, MeanOverSpanAveragesPositions) {
  auto a = two_layer_trace({{1, 2, 3}, {4, 5, 6}});
  auto b = two_layer_trace({{1, 2, 7}, {4, 5, 6}});
  a.target_span = b.target_span = {0, 1};
  const auto last = pair_layer_scores(a, b, SpanPolicy::last_token);
  const auto mean = pair_layer_scores(a, b, SpanPolicy::mean_over_span);
  EXPECT_EQ(last[0].overlap, 2.0);
  EXPECT_EQ(mean[0].overlap, 2.5);
}

TEST(PairLayerScores, MismatchedModelsRejected) {
  const auto a = two_layer_trace({{1, 2, 3}, {4, 5, 6}});
  auto b = a;
  b.meta.total_experts = 32;
  EXPECT_THROW(pair_layer_scores(a, b), ValidationError);
}

TEST(SpanPolicyNames, RoundTrip) {
  for (auto p : {SpanPolicy::last_token, SpanPolicy::mean_over_span})
    EXPECT_EQ(parse_span_policy(to_string(p)), p);
  EXPECT_THROW(parse_span_policy("first"), ValidationError);
}

TEST(OverlapReport, CsvRoundTripIsLossless) {
  std::vector<OverlapReportRow> rows{{0, "same_sense", 0.1 + 0.2, 0.25, 1.0 / 3.0, 7, 1e-9, 0.5},
                                     {1, "different_sense", 0.0, 0.25, -1.0 / 31.0, 7, 0.0, 0.0}};
  std::stringstream ss;
  write_overlap_report(ss, rows);
  EXPECT_EQ(ss.str().substr(0, ss.str().find('\n')),
            "layer,condition,mean_o,expected_o,mean_score,n_pairs,se_o,se_score");
  EXPECT_EQ(read_overlap_report(ss), rows);
}
