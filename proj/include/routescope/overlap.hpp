#pragma once

// Expert-overlap counting, the uniform-routing baseline and the
// chance-corrected overlap score.
//
// Two independent uniform draws of k experts out of N share k*k/N experts on
// average, so the score (o - k^2/N) / (k - k^2/N) is 0 at chance and 1 when
// the routed sets coincide. It equals Cohen's kappa (P_o - P_e) / (1 - P_e)
// with P_o = o/k and P_e = k/N. Shared experts are never part of o, k or N.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "routescope/errors.hpp"
#include "routescope/trace_model.hpp"

namespace routescope {

inline int overlap_count(std::span<const ExpertId> a, std::span<const ExpertId> b) {
  if (a.size() != b.size())
    throw ValidationError("routed_experts", "", "expert sets differ in size");
  std::vector<ExpertId> x(a.begin(), a.end()), y(b.begin(), b.end());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  int n = 0;
  auto i = x.begin(), j = y.begin();
  while (i != x.end() && j != y.end()) {
    if (*i < *j) ++i;
    else if (*j < *i) ++j;
    else { ++n; ++i; ++j; }
  }
  return n;
}

inline void check_kn(int k, int n_experts) {
  if (k < 1 || n_experts < 1 || k > n_experts)
    throw ValidationError("routed_active", "", "need 1 <= k <= N");
}

inline double expected_overlap(int k, int n_experts) {
  check_kn(k, n_experts);
  return static_cast<double>(k) * k / n_experts;
}

struct NormalizedScore {
  double score = 0.0;
  double p_observed = 0.0;  // o / k
  double p_expected = 0.0;  // k / N
};

// Accepts fractional o (averaged overlaps). Computed as
// (o*N - k^2) / (k*(N - k)) so that o = k and o = k^2/N map to exactly 1 and
// 0 whenever the inputs are exactly representable.
inline NormalizedScore normalized_score(double o, int k, int n_experts) {
  check_kn(k, n_experts);
  if (k == n_experts)
    throw ValidationError("routed_active", "",
                          "degenerate baseline: k = N makes expected overlap equal k");
  if (!(o >= 0.0 && o <= k))
    throw ValidationError("overlap", "", "overlap must lie in [0, k]");
  const double kk = static_cast<double>(k);
  const double nn = static_cast<double>(n_experts);
  return {(o * nn - kk * kk) / (kk * (nn - kk)), o / kk, kk / nn};
}

enum class SpanPolicy {
  last_token,      // compare the final token of each target span
  mean_over_span,  // average position-wise overlaps; needs equal span lengths
};

inline std::string_view to_string(SpanPolicy p) {
  return p == SpanPolicy::last_token ? "last-token" : "mean-over-span";
}

inline SpanPolicy parse_span_policy(std::string_view s) {
  if (s == "last-token") return SpanPolicy::last_token;
  if (s == "mean-over-span") return SpanPolicy::mean_over_span;
  throw ValidationError("span_policy", "", "unknown span policy '" + std::string(s) + "'");
}

struct LayerScore {
  int layer = 0;
  double overlap = 0.0;  // possibly fractional under mean-over-span
  NormalizedScore score;
};

// Per-layer overlap between the target spans of two traces of the same
// model. Mean-over-span falls back to last-token when span lengths differ.
inline std::vector<LayerScore> pair_layer_scores(const RoutingTrace& a, const RoutingTrace& b,
                                                 SpanPolicy policy = SpanPolicy::last_token) {
  if (!(a.meta == b.meta))
    throw ValidationError("meta", a.example_id, "traces come from different models");
  if (a.target_span.size() < 1 || b.target_span.size() < 1)
    throw ValidationError("target_span", a.example_id, "empty target span");
  const int k = a.meta.routed_active, n = a.meta.total_experts;
  const bool use_mean =
      policy == SpanPolicy::mean_over_span && a.target_span.size() == b.target_span.size();
  std::vector<LayerScore> out;
  out.reserve(a.layers.size());
  for (const auto& [layer, toks_a] : a.layers) {
    const auto& toks_b = b.at_layer(layer);
    double o = 0.0;
    if (use_mean) {
      const int len = a.target_span.size();
      int total = 0;
      for (int i = 0; i < len; ++i)
        total += overlap_count(toks_a.at(a.target_span.first + i).routed_experts,
                               toks_b.at(b.target_span.first + i).routed_experts);
      o = static_cast<double>(total) / len;
    } else {
      o = overlap_count(toks_a.at(a.target_span.last).routed_experts,
                        toks_b.at(b.target_span.last).routed_experts);
    }
    out.push_back({layer, o, normalized_score(o, k, n)});
  }
  if (b.layers.size() != a.layers.size())
    throw ValidationError("layers", b.example_id, "traces cover different layer sets");
  return out;
}

// One row of the layer-wise overlap export.
struct OverlapReportRow {
  int layer = 0;
  std::string condition;
  double mean_o = 0.0;
  double expected_o = 0.0;
  double mean_score = 0.0;
  std::size_t n_pairs = 0;
  double se_o = 0.0;
  double se_score = 0.0;

  bool operator==(const OverlapReportRow&) const = default;
};

inline constexpr const char* kOverlapReportHeader =
    "layer,condition,mean_o,expected_o,mean_score,n_pairs,se_o,se_score";

inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_overlap_report(std::ostream& out, const std::vector<OverlapReportRow>& rows) {
  out << kOverlapReportHeader << '\n';
  for (const auto& r : rows) {
    out << r.layer << ',' << r.condition << ',' << format_real(r.mean_o) << ','
        << format_real(r.expected_o) << ',' << format_real(r.mean_score) << ',' << r.n_pairs
        << ',' << format_real(r.se_o) << ',' << format_real(r.se_score) << '\n';
  }
}

inline std::vector<OverlapReportRow> read_overlap_report(std::istream& in) {
  std::vector<OverlapReportRow> rows;
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) return rows;
  ++line_no;
  if (line.rfind("layer,condition,mean_o,expected_o,mean_score,n_pairs", 0) != 0)
    throw ParseError(1, 0, "not an overlap report (unexpected header)");
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    while (true) {
      auto pos = line.find(',', start);
      f.push_back(line.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
      if (pos == std::string::npos) break;
      start = pos + 1;
    }
    if (f.size() < 6) throw ParseError(line_no, 0, "too few columns");
    try {
      OverlapReportRow r;
      r.layer = std::stoi(f[0]);
      r.condition = f[1];
      r.mean_o = std::stod(f[2]);
      r.expected_o = std::stod(f[3]);
      r.mean_score = std::stod(f[4]);
      r.n_pairs = std::stoul(f[5]);
      if (f.size() > 7) {
        r.se_o = std::stod(f[6]);
        r.se_score = std::stod(f[7]);
      }
      rows.push_back(std::move(r));
    } catch (const std::logic_error&) {
      throw ParseError(line_no, 0, "non-numeric field");
    }
  }
  return rows;
}

}  // namespace routescope
