#pragma once

// The two paired probing experiments: same-sense vs different-sense contexts
// sharing a target word, and meaning-preserving vs meaning-changing
// substitutions in a fixed context.

#include <algorithm>
#include <deque>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "routescope/datasets.hpp"
#include "routescope/errors.hpp"
#include "routescope/overlap.hpp"
#include "routescope/stats.hpp"
#include "routescope/trace_model.hpp"

namespace routescope {

// Score of one trace-pair comparison at every layer.
struct Comparison {
  std::string condition;
  std::vector<LayerScore> layers;

  double mean_score() const {
    double s = 0.0;
    for (const auto& l : layers) s += l.score.score;
    return layers.empty() ? 0.0 : s / static_cast<double>(layers.size());
  }
};

struct ExperimentUnit {
  std::string record_id;
  std::string target_word;
  std::vector<Comparison> comparisons;  // one for wic, two for swords
};

struct PairedExperiment {
  ExperimentKind kind = ExperimentKind::wic;
  ModelMeta meta;
  std::vector<ExperimentUnit> units;
};

struct LayerEffect {
  int layer = 0;
  double mean_condition1 = 0.0;
  double mean_condition2 = 0.0;
  double difference = 0.0;
};

// condition1 is the meaning-preserving condition.
struct TreatmentEffect {
  std::string condition1;
  std::string condition2;
  std::vector<LayerEffect> per_layer;
  double overall = 0.0;
  std::size_t n_units = 0;
  std::size_t n_condition1 = 0;
  std::size_t n_condition2 = 0;
};

// Paired per-unit differences (condition1 minus condition2) feeding the
// significance tests. For wic, a "unit" is a same-sense pair matched with a
// different-sense pair sharing its target word.
struct PairedDifferences {
  std::vector<std::string> unit_ids;
  std::vector<double> layer_mean;
  std::map<int, std::vector<double>> per_layer;
};

struct ExperimentResult {
  PairedExperiment experiment;
  TreatmentEffect effect;
  PairedDifferences diffs;
  std::size_t n_input = 0;
  std::size_t n_retained = 0;
  std::size_t n_dropped = 0;
  std::size_t n_unmatched = 0;  // wic units without a partner of the other label
  std::vector<SkippedEntry> dropped;
};

struct ExperimentOptions {
  SpanPolicy span_policy = SpanPolicy::last_token;
};

namespace condition {
inline constexpr const char* same_sense = "same_sense";
inline constexpr const char* different_sense = "different_sense";
inline constexpr const char* equivalent = "equivalent";
inline constexpr const char* different = "different";
}  // namespace condition

class TraceIndex {
 public:
  explicit TraceIndex(const std::vector<RoutingTrace>& traces) {
    for (const auto& t : traces) {
      if (!meta_) meta_ = t.meta;
      else if (!(*meta_ == t.meta))
        throw ValidationError("meta", t.example_id, "corpus mixes traces from different models");
      if (!index_.emplace(std::make_pair(t.example_id, t.side), &t).second)
        throw ValidationError("example_id", trace_key(t), "duplicate trace");
    }
  }

  const RoutingTrace* find(const std::string& id, Side side) const {
    auto it = index_.find({id, side});
    return it == index_.end() ? nullptr : it->second;
  }
  const std::optional<ModelMeta>& meta() const { return meta_; }

 private:
  std::map<std::pair<std::string, Side>, const RoutingTrace*> index_;
  std::optional<ModelMeta> meta_;
};

namespace detail {

inline TreatmentEffect summarize(const PairedExperiment& exp, const char* c1, const char* c2) {
  TreatmentEffect eff;
  eff.condition1 = c1;
  eff.condition2 = c2;
  eff.n_units = exp.units.size();
  std::map<int, std::pair<double, std::size_t>> sum1, sum2;
  for (const auto& u : exp.units) {
    for (const auto& c : u.comparisons) {
      const bool first = c.condition == c1;
      (first ? eff.n_condition1 : eff.n_condition2) += 1;
      for (const auto& l : c.layers) {
        auto& acc = first ? sum1[l.layer] : sum2[l.layer];
        acc.first += l.score.score;
        acc.second += 1;
      }
    }
  }
  for (int layer : exp.meta.moe_layers) {
    auto a = sum1.find(layer), b = sum2.find(layer);
    if (a == sum1.end() || b == sum2.end()) continue;
    LayerEffect le;
    le.layer = layer;
    le.mean_condition1 = a->second.first / static_cast<double>(a->second.second);
    le.mean_condition2 = b->second.first / static_cast<double>(b->second.second);
    le.difference = le.mean_condition1 - le.mean_condition2;
    eff.per_layer.push_back(le);
  }
  for (const auto& le : eff.per_layer) eff.overall += le.difference;
  if (!eff.per_layer.empty()) eff.overall /= static_cast<double>(eff.per_layer.size());
  return eff;
}

inline void add_diff(PairedDifferences& d, std::string id, const Comparison& c1, const Comparison& c2) {
  d.unit_ids.push_back(std::move(id));
  d.layer_mean.push_back(c1.mean_score() - c2.mean_score());
  for (std::size_t i = 0; i < c1.layers.size(); ++i)
    d.per_layer[c1.layers[i].layer].push_back(c1.layers[i].score.score - c2.layers[i].score.score);
}

inline std::vector<const DatasetRecord*> sorted_records(const std::vector<DatasetRecord>& records,
                                                        ExperimentKind kind) {
  std::vector<const DatasetRecord*> out;
  for (const auto& r : records)
    if (r.kind() == kind) out.push_back(&r);
  std::stable_sort(out.begin(), out.end(), [](auto* a, auto* b) { return a->record_id < b->record_id; });
  return out;
}

}  // namespace detail

// Units are processed in record-id order so every output is independent of
// input ordering. Records without both traces are dropped and reported.
inline ExperimentResult run_wic(const std::vector<DatasetRecord>& records,
                                const std::vector<RoutingTrace>& traces,
                                const ExperimentOptions& opt = {}) {
  const TraceIndex index(traces);
  ExperimentResult res;
  res.experiment.kind = ExperimentKind::wic;
  if (index.meta()) res.experiment.meta = *index.meta();
  std::size_t row = 0;
  for (const DatasetRecord* r : detail::sorted_records(records, ExperimentKind::wic)) {
    ++row;
    ++res.n_input;
    const auto* a = index.find(r->record_id, Side::A);
    const auto* b = index.find(r->record_id, Side::B);
    if (!a || !b) {
      res.dropped.push_back({row, r->record_id, !a ? "missing trace A" : "missing trace B"});
      continue;
    }
    ExperimentUnit unit{r->record_id, r->target_word, {}};
    unit.comparisons.push_back({r->wic().label == SenseLabel::same_sense ? condition::same_sense
                                                                         : condition::different_sense,
                                pair_layer_scores(*a, *b, opt.span_policy)});
    res.experiment.units.push_back(std::move(unit));
  }
  res.n_retained = res.experiment.units.size();
  res.n_dropped = res.dropped.size();
  res.effect = detail::summarize(res.experiment, condition::same_sense, condition::different_sense);

  // Pair the i-th same-sense unit of each target word with its i-th
  // different-sense unit.
  std::map<std::string, std::pair<std::deque<const ExperimentUnit*>, std::deque<const ExperimentUnit*>>> queues;
  for (const auto& u : res.experiment.units) {
    auto it = queues.try_emplace(u.target_word).first;
    (u.comparisons[0].condition == condition::same_sense ? it->second.first : it->second.second)
        .push_back(&u);
  }
  std::vector<std::tuple<std::string, const ExperimentUnit*, const ExperimentUnit*>> matched;
  for (auto& [word, q] : queues) {
    while (!q.first.empty() && !q.second.empty()) {
      matched.emplace_back(q.first.front()->record_id, q.first.front(), q.second.front());
      q.first.pop_front();
      q.second.pop_front();
    }
    res.n_unmatched += q.first.size() + q.second.size();
  }
  std::sort(matched.begin(), matched.end(),
            [](const auto& x, const auto& y) { return std::get<0>(x) < std::get<0>(y); });
  for (const auto& [_, same, diff] : matched)
    detail::add_diff(res.diffs, same->record_id + "|" + diff->record_id, same->comparisons[0],
                     diff->comparisons[0]);
  return res;
}

inline ExperimentResult run_swords(const std::vector<DatasetRecord>& records,
                                   const std::vector<RoutingTrace>& traces,
                                   const ExperimentOptions& opt = {}) {
  const TraceIndex index(traces);
  ExperimentResult res;
  res.experiment.kind = ExperimentKind::swords;
  if (index.meta()) res.experiment.meta = *index.meta();
  std::size_t row = 0;
  for (const DatasetRecord* r : detail::sorted_records(records, ExperimentKind::swords)) {
    ++row;
    ++res.n_input;
    const auto* o = index.find(r->record_id, Side::original);
    const auto* e = index.find(r->record_id, Side::equivalent);
    const auto* d = index.find(r->record_id, Side::different);
    if (!o || !e || !d) {
      res.dropped.push_back({row, r->record_id, "incomplete triple"});
      continue;
    }
    ExperimentUnit unit{r->record_id, r->target_word, {}};
    unit.comparisons.push_back({condition::equivalent, pair_layer_scores(*o, *e, opt.span_policy)});
    unit.comparisons.push_back({condition::different, pair_layer_scores(*o, *d, opt.span_policy)});
    detail::add_diff(res.diffs, r->record_id, unit.comparisons[0], unit.comparisons[1]);
    res.experiment.units.push_back(std::move(unit));
  }
  res.n_retained = res.experiment.units.size();
  res.n_dropped = res.dropped.size();
  res.effect = detail::summarize(res.experiment, condition::equivalent, condition::different);
  return res;
}

// Per-layer, per-condition means with standard errors over units. Rows are
// ordered by layer, then by condition (meaning-preserving first).
inline std::vector<OverlapReportRow> layerwise_report(const PairedExperiment& exp) {
  std::vector<OverlapReportRow> rows;
  if (exp.units.empty()) return rows;
  const std::vector<std::string> conds =
      exp.kind == ExperimentKind::wic
          ? std::vector<std::string>{condition::same_sense, condition::different_sense}
          : std::vector<std::string>{condition::equivalent, condition::different};
  const int k = exp.meta.routed_active, n = exp.meta.total_experts;
  for (std::size_t li = 0; li < exp.meta.moe_layers.size(); ++li) {
    const int layer = exp.meta.moe_layers[li];
    for (const auto& cond : conds) {
      std::vector<double> os, scores;
      for (const auto& u : exp.units)
        for (const auto& c : u.comparisons) {
          if (c.condition != cond) continue;
          for (const auto& l : c.layers)
            if (l.layer == layer) {
              os.push_back(l.overlap);
              scores.push_back(l.score.score);
            }
        }
      if (os.empty()) continue;
      OverlapReportRow row;
      row.layer = layer;
      row.condition = cond;
      row.mean_o = stats::mean(os);
      row.expected_o = expected_overlap(k, n);
      row.mean_score = stats::mean(scores);
      row.n_pairs = os.size();
      row.se_o = stats::standard_error(os);
      row.se_score = stats::standard_error(scores);
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

// Two-series view of a report: one row per layer with both condition values
// and their difference. `value` is "mean_score" or "mean_o".
struct PlotRow {
  int layer = 0;
  double series1 = 0.0;
  double series2 = 0.0;
};

struct PlotSeries {
  std::string name1, name2;
  std::vector<PlotRow> rows;
};

inline PlotSeries plot_series(const std::vector<OverlapReportRow>& report,
                              const std::string& value = "mean_score") {
  if (value != "mean_score" && value != "mean_o")
    throw ValidationError("value", "", "plot value must be mean_score or mean_o");
  PlotSeries out;
  std::map<int, std::map<std::string, double>> by_layer;
  for (const auto& r : report) {
    if (out.name1.empty()) out.name1 = r.condition;
    else if (out.name2.empty() && r.condition != out.name1) out.name2 = r.condition;
    by_layer[r.layer][r.condition] = value == "mean_o" ? r.mean_o : r.mean_score;
  }
  for (const auto& [layer, vals] : by_layer) {
    auto a = vals.find(out.name1), b = vals.find(out.name2);
    if (a == vals.end() || b == vals.end()) continue;
    out.rows.push_back({layer, a->second, b->second});
  }
  return out;
}

inline void write_plot_series(std::ostream& out, const PlotSeries& s) {
  out << "layer," << s.name1 << ',' << s.name2 << ",difference\n";
  for (const auto& r : s.rows)
    out << r.layer << ',' << format_real(r.series1) << ',' << format_real(r.series2) << ','
        << format_real(r.series1 - r.series2) << '\n';
}

inline void write_diffs(std::ostream& out, const PairedDifferences& d,
                        std::optional<int> layer = std::nullopt) {
  out << "unit,diff\n";
  const auto& values = layer ? d.per_layer.at(*layer) : d.layer_mean;
  for (std::size_t i = 0; i < values.size(); ++i)
    out << d.unit_ids[i] << ',' << format_real(values[i]) << '\n';
}

// Reads the "diff" column (or the last column when absent) of a CSV file.
inline std::vector<double> read_diffs(std::istream& in) {
  std::vector<double> out;
  std::string line;
  std::size_t line_no = 0;
  int col = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = text::split(line, ',');
    if (col < 0) {
      auto it = std::find(f.begin(), f.end(), "diff");
      if (it != f.end()) {
        col = static_cast<int>(it - f.begin());
        continue;
      }
      col = static_cast<int>(f.size()) - 1;
    }
    if (static_cast<int>(f.size()) <= col) throw ParseError(line_no, 0, "missing diff column");
    try {
      out.push_back(std::stod(f[col]));
    } catch (const std::logic_error&) {
      throw ParseError(line_no, 0, "non-numeric diff '" + f[col] + "'");
    }
  }
  return out;
}

}  // namespace routescope
