#pragma once

// Feature atlas: for one SAE feature, the tokens that activate it most and
// the experts those tokens are routed to at the SAE's layer. Experts that
// appear in the top list of at least half of the rows are marked.

#include <algorithm>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "routescope/errors.hpp"
#include "routescope/overlap.hpp"
#include "routescope/sae.hpp"
#include "routescope/trace_model.hpp"

namespace routescope::atlas {

enum class Aggregation {
  instances,  // expert counts over every occurrence of the token
  types,      // one routing set per token type: its peak-activating occurrence
};

struct AtlasOptions {
  int layer = 0;
  std::size_t top_m = 10;
  std::size_t top_experts = 5;
  double mark_fraction = 0.5;
  Aggregation aggregation = Aggregation::instances;
};

struct ExpertCount {
  ExpertId expert = 0;
  std::size_t count = 0;
  bool operator==(const ExpertCount&) const = default;
};

struct AtlasRow {
  std::string token;
  double sae_value = 0.0;  // max activation over the token's occurrences
  std::vector<ExpertCount> top_experts;
  std::vector<bool> marked;
  bool operator==(const AtlasRow&) const = default;
};

struct FeatureAtlas {
  int feature = 0;
  int layer = 0;
  std::vector<AtlasRow> rows;
  bool operator==(const FeatureAtlas&) const = default;

  std::vector<ExpertId> marked_experts() const {
    std::vector<ExpertId> out;
    for (const auto& r : rows)
      for (std::size_t i = 0; i < r.top_experts.size(); ++i)
        if (r.marked[i]) out.push_back(r.top_experts[i].expert);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }
};

// Token occurrences at one layer that carry activations.
struct TokenTable {
  std::vector<std::string> text;
  std::vector<const std::vector<ExpertId>*> experts;
  sae::Matrix activations;  // d x M
};

inline TokenTable collect_tokens(const std::vector<RoutingTrace>& corpus, int layer) {
  TokenTable t;
  std::vector<const std::vector<double>*> acts;
  for (const auto& tr : corpus) {
    auto it = tr.layers.find(layer);
    if (it == tr.layers.end()) continue;
    for (const auto& tok : it->second) {
      if (!tok.activation) continue;
      t.text.push_back(tok.token_text);
      t.experts.push_back(&tok.routed_experts);
      acts.push_back(&*tok.activation);
    }
  }
  if (acts.empty())
    throw ValidationError("activation", "", "no activations recorded at layer " + std::to_string(layer));
  const auto d = static_cast<Eigen::Index>(acts.front()->size());
  t.activations.resize(d, static_cast<Eigen::Index>(acts.size()));
  for (std::size_t i = 0; i < acts.size(); ++i) {
    if (static_cast<Eigen::Index>(acts[i]->size()) != d)
      throw ValidationError("activation", "", "activation dimension varies across tokens");
    for (Eigen::Index r = 0; r < d; ++r) t.activations(r, static_cast<Eigen::Index>(i)) = (*acts[i])[r];
  }
  return t;
}

// Expert occurrence counts, highest first, ties to the lower expert ID.
inline std::vector<ExpertCount> top_experts(const std::vector<const std::vector<ExpertId>*>& sets,
                                            std::size_t limit) {
  std::map<ExpertId, std::size_t> counts;
  for (const auto* s : sets)
    for (ExpertId e : *s) ++counts[e];
  std::vector<ExpertCount> out;
  for (const auto& [e, c] : counts) out.push_back({e, c});
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.count > b.count; });
  if (out.size() > limit) out.resize(limit);
  return out;
}

inline FeatureAtlas build_atlas(const sae::SaeModel& model, const TokenTable& table, int feature,
                                const AtlasOptions& opt) {
  if (feature < 0 || feature >= model.width())
    throw ValidationError("feature", "", "feature index out of range");
  if (table.activations.rows() != model.input_dim())
    throw ValidationError("activation", "", "activation dimension differs from SAE input");
  const Eigen::VectorXd values =
      ((model.w_enc.row(feature) * table.activations).array() + model.b_enc[feature]).cwiseMax(0.0);

  struct Group {
    double peak = 0.0;
    std::size_t peak_index = 0;
    std::vector<std::size_t> members;
  };
  std::map<std::string, Group> groups;
  for (std::size_t i = 0; i < table.text.size(); ++i) {
    auto& g = groups[table.text[i]];
    const double v = values[static_cast<Eigen::Index>(i)];
    if (g.members.empty() || v > g.peak) g.peak = v, g.peak_index = i;
    g.members.push_back(i);
  }
  std::vector<std::pair<std::string, const Group*>> ranked;
  for (const auto& [text, g] : groups)
    if (g.peak > 0.0) ranked.emplace_back(text, &g);
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second->peak > b.second->peak; });
  if (ranked.size() > opt.top_m) ranked.resize(opt.top_m);

  FeatureAtlas out;
  out.feature = feature;
  out.layer = opt.layer;
  std::map<ExpertId, std::size_t> row_hits;
  for (const auto& [text, g] : ranked) {
    std::vector<const std::vector<ExpertId>*> sets;
    if (opt.aggregation == Aggregation::types) sets.push_back(table.experts[g->peak_index]);
    else
      for (std::size_t i : g->members) sets.push_back(table.experts[i]);
    AtlasRow row{text, g->peak, top_experts(sets, opt.top_experts), {}};
    for (const auto& ec : row.top_experts) ++row_hits[ec.expert];
    out.rows.push_back(std::move(row));
  }
  const double need = opt.mark_fraction * static_cast<double>(out.rows.size());
  for (auto& row : out.rows) {
    row.marked.clear();
    for (const auto& ec : row.top_experts)
      row.marked.push_back(static_cast<double>(row_hits[ec.expert]) >= need);
  }
  return out;
}

inline FeatureAtlas build_atlas(const sae::SaeModel& model, const std::vector<RoutingTrace>& corpus,
                                int feature, const AtlasOptions& opt) {
  return build_atlas(model, collect_tokens(corpus, opt.layer), feature, opt);
}

// Feature with the highest mean activation over occurrences of `token`; ties
// go to the lower index.
inline int top_feature_for_token(const sae::SaeModel& model, const TokenTable& table,
                                 const std::string& token) {
  std::vector<Eigen::Index> cols;
  for (std::size_t i = 0; i < table.text.size(); ++i)
    if (table.text[i] == token) cols.push_back(static_cast<Eigen::Index>(i));
  if (cols.empty()) throw ValidationError("token", token, "token does not occur at this layer");
  sae::Matrix x(table.activations.rows(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < cols.size(); ++i) x.col(static_cast<Eigen::Index>(i)) = table.activations.col(cols[i]);
  const Eigen::VectorXd mean_z = sae::encode(model, x).rowwise().mean();
  Eigen::Index best = 0;
  for (Eigen::Index j = 1; j < mean_z.size(); ++j)
    if (mean_z[j] > mean_z[best]) best = j;
  return static_cast<int>(best);
}

inline void write_atlas_csv(std::ostream& out, const FeatureAtlas& a) {
  out << "feature,layer,token,sae_value,top_experts,expert_counts,marked\n";
  for (const auto& r : a.rows) {
    std::string experts, counts, marks;
    for (std::size_t i = 0; i < r.top_experts.size(); ++i) {
      const char* sep = i ? " " : "";
      experts += sep + std::to_string(r.top_experts[i].expert);
      counts += sep + std::to_string(r.top_experts[i].count);
      marks += sep + std::string(r.marked[i] ? "1" : "0");
    }
    std::string token = r.token;
    if (token.find_first_of(",\"") != std::string::npos) {
      std::string q = "\"";
      for (char c : token) q += c == '"' ? std::string("\"\"") : std::string(1, c);
      token = q + "\"";
    }
    out << a.feature << ',' << a.layer << ',' << token << ',' << format_real(r.sae_value) << ','
        << experts << ',' << counts << ',' << marks << '\n';
  }
}

}  // namespace routescope::atlas
