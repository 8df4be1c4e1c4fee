#pragma once

// Significance tests for paired differences (meaning-preserving minus
// meaning-changing): a one-sided paired t-test and a sign-flip permutation
// test.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string_view>
#include <thread>
#include <vector>

#include "routescope/errors.hpp"

namespace routescope::stats {

inline double mean(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

// Sample standard deviation (n - 1 denominator); 0 for n < 2.
inline double sample_sd(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

inline double standard_error(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  return sample_sd(xs) / std::sqrt(static_cast<double>(xs.size()));
}

namespace detail {

// Continued fraction for the incomplete beta function, evaluated with the
// modified Lentz method.
inline double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 10000;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) return h;
  }
  throw Error("incomplete beta continued fraction did not converge");
}

}  // namespace detail

// Regularized incomplete beta I_x(a, b).
inline double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0 && b > 0.0)) throw ValidationError("beta", "", "shape parameters must be positive");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                           a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * detail::beta_continued_fraction(b, a, 1.0 - x) / b;
}

// P(T > t) for Student's t with `df` degrees of freedom.
inline double student_t_upper_tail(double t, double df) {
  if (std::isinf(t)) return t > 0 ? 0.0 : 1.0;
  const double half_tail = 0.5 * incomplete_beta(0.5 * df, 0.5, df / (df + t * t));
  return t >= 0.0 ? half_tail : 1.0 - half_tail;
}

inline double student_t_cdf(double t, double df) { return 1.0 - student_t_upper_tail(t, df); }

enum class Method { t_paired_one_sided, t_paired_two_sided, sign_flip_permutation };

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::t_paired_one_sided: return "t_paired_one_sided";
    case Method::t_paired_two_sided: return "t_paired_two_sided";
    case Method::sign_flip_permutation: return "sign_flip_permutation";
  }
  return "?";
}

struct TestResult {
  double statistic = 0.0;
  double p_value = 1.0;
  std::size_t n = 0;
  Method method = Method::t_paired_one_sided;
  bool degenerate = false;  // zero-variance t-test
  bool exact = false;       // permutation p from full enumeration
  std::size_t n_resamples = 0;
};

// Paired t-test on differences. The one-sided alternative is mean > 0.
// Zero variance is reported as degenerate with p = 0, 0.5 or 1 by the sign of
// the mean (halved/doubled accordingly for two-sided).
inline TestResult paired_t_test(std::span<const double> diffs, bool two_sided = false) {
  TestResult r;
  r.n = diffs.size();
  r.method = two_sided ? Method::t_paired_two_sided : Method::t_paired_one_sided;
  if (diffs.size() < 2) throw ValidationError("diffs", "", "paired t-test needs n >= 2");
  for (double d : diffs)
    if (!std::isfinite(d)) throw ValidationError("diffs", "", "differences must be finite");
  const double m = mean(diffs);
  const auto [lo, hi] = std::minmax_element(diffs.begin(), diffs.end());
  if (*lo == *hi) {
    r.degenerate = true;
    const double inf = std::numeric_limits<double>::infinity();
    if (m > 0) r.statistic = inf, r.p_value = 0.0;
    else if (m < 0) r.statistic = -inf, r.p_value = two_sided ? 0.0 : 1.0;
    else r.statistic = 0.0, r.p_value = two_sided ? 1.0 : 0.5;
    return r;
  }
  const double n = static_cast<double>(diffs.size());
  r.statistic = m / (sample_sd(diffs) / std::sqrt(n));
  const double df = n - 1.0;
  if (two_sided)
    r.p_value = incomplete_beta(0.5 * df, 0.5, df / (df + r.statistic * r.statistic));
  else
    r.p_value = student_t_upper_tail(r.statistic, df);
  return r;
}

inline TestResult paired_t_one_sided(std::span<const double> diffs) {
  return paired_t_test(diffs, false);
}

struct PermutationOptions {
  std::size_t n_resamples = 10000;
  std::uint64_t seed = 0;
  // Enumerate all 2^n sign patterns when n <= exact_max_n.
  int exact_max_n = 20;
  int threads = 1;
};

namespace detail {

inline constexpr std::size_t kResampleChunk = 4096;

inline double signed_sum(std::span<const double> d, std::uint64_t flips) {
  double s = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) s += ((flips >> i) & 1u) ? -d[i] : d[i];
  return s;
}

inline double signed_sum(std::span<const double> d, std::mt19937_64& rng) {
  double s = 0.0;
  std::uint64_t bits = 0;
  int left = 0;
  for (double x : d) {
    if (left == 0) bits = rng(), left = 64;
    s += (bits & 1u) ? -x : x;
    bits >>= 1;
    --left;
  }
  return s;
}

}  // namespace detail

// Sign-flip permutation test for mean > 0. Counts sign patterns whose mean is
// at least the observed one (the identity pattern included) and returns
// (1 + count) / (1 + patterns). Exact when 2^n patterns are enumerable;
// otherwise Monte Carlo over fixed-size chunks, each seeded from (seed,
// chunk index), so the result does not depend on the thread count.
inline TestResult sign_flip_permutation(std::span<const double> diffs,
                                        const PermutationOptions& opt = {}) {
  if (diffs.empty()) throw ValidationError("diffs", "", "permutation test needs n >= 1");
  for (double d : diffs)
    if (!std::isfinite(d)) throw ValidationError("diffs", "", "differences must be finite");
  TestResult r;
  r.n = diffs.size();
  r.method = Method::sign_flip_permutation;
  const double observed = detail::signed_sum(diffs, std::uint64_t{0});
  r.statistic = observed / static_cast<double>(diffs.size());
  double scale = 0.0;
  for (double d : diffs) scale += std::fabs(d);
  const double threshold = observed - 1e-12 * scale;

  const bool exact = static_cast<int>(diffs.size()) <= std::min(opt.exact_max_n, 62);
  std::size_t count = 0, total = 0;
  if (exact) {
    total = std::size_t{1} << diffs.size();
    for (std::uint64_t flips = 0; flips < total; ++flips)
      if (detail::signed_sum(diffs, flips) >= threshold) ++count;
    r.exact = true;
  } else {
    if (opt.n_resamples < 1) throw ValidationError("n_resamples", "", "need at least one resample");
    total = opt.n_resamples;
    const std::size_t n_chunks = (total + detail::kResampleChunk - 1) / detail::kResampleChunk;
    std::vector<std::size_t> chunk_counts(n_chunks, 0);
    auto run_chunk = [&](std::size_t c) {
      std::seed_seq seq{static_cast<std::uint32_t>(opt.seed), static_cast<std::uint32_t>(opt.seed >> 32),
                        static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(c >> 32)};
      std::mt19937_64 rng(seq);
      const std::size_t begin = c * detail::kResampleChunk;
      const std::size_t end = std::min(total, begin + detail::kResampleChunk);
      std::size_t hits = 0;
      for (std::size_t i = begin; i < end; ++i)
        if (detail::signed_sum(diffs, rng) >= threshold) ++hits;
      chunk_counts[c] = hits;
    };
    const int workers = std::max(1, std::min<int>(opt.threads, static_cast<int>(n_chunks)));
    if (workers == 1) {
      for (std::size_t c = 0; c < n_chunks; ++c) run_chunk(c);
    } else {
      std::vector<std::jthread> pool;
      for (int w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
          for (std::size_t c = w; c < n_chunks; c += workers) run_chunk(c);
        });
    }
    count = std::accumulate(chunk_counts.begin(), chunk_counts.end(), std::size_t{0});
  }
  r.n_resamples = total;
  r.p_value = static_cast<double>(1 + count) / static_cast<double>(1 + total);
  return r;
}

// Kolmogorov-Smirnov distance between the empirical CDF of `ps` and U(0, 1).
inline double ks_distance_uniform(std::vector<double> ps) {
  if (ps.empty()) return 0.0;
  std::sort(ps.begin(), ps.end());
  const double n = static_cast<double>(ps.size());
  double d = 0.0;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    d = std::max(d, (i + 1) / n - ps[i]);
    d = std::max(d, ps[i] - i / n);
  }
  return d;
}

}  // namespace routescope::stats
