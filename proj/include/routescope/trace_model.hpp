#pragma once

// Core data model for router traces: model metadata, per-token routing
// decisions and the per-prompt trace that carries them.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "routescope/errors.hpp"

namespace routescope {

using ExpertId = std::int32_t;

// Routing configuration of one MoE model. `total_experts` and
// `routed_active` describe the routed pool only; shared experts run on every
// token and are tracked separately so they never enter overlap statistics.
struct ModelMeta {
  std::string model_id;
  int total_experts = 0;   // N
  int routed_active = 0;   // k
  int shared_experts = 0;  // s
  std::vector<int> moe_layers;
  std::string vocab_note;

  bool operator==(const ModelMeta&) const = default;

  bool has_layer(int layer) const {
    return std::binary_search(moe_layers.begin(), moe_layers.end(), layer);
  }
};

inline void validate(const ModelMeta& meta) {
  const std::string& id = meta.model_id;
  if (meta.total_experts < 1)
    throw ValidationError("total_experts", id, "total_experts must be positive");
  if (meta.routed_active < 1 || meta.routed_active > meta.total_experts)
    throw ValidationError("routed_active", id, "routed_active must satisfy 1 <= k <= N");
  if (meta.shared_experts < 0)
    throw ValidationError("shared_experts", id, "shared_experts must be non-negative");
  if (meta.moe_layers.empty())
    throw ValidationError("moe_layers", id, "moe_layers must be non-empty");
  for (std::size_t i = 1; i < meta.moe_layers.size(); ++i) {
    if (meta.moe_layers[i] <= meta.moe_layers[i - 1])
      throw ValidationError("moe_layers", id, "moe_layers must be strictly increasing");
  }
}

// Router decision for one token at one layer. Expert IDs keep the order the
// router emitted them in; overlap is computed on the set.
struct TokenRouting {
  int token_index = 0;
  std::string token_text;
  std::vector<ExpertId> routed_experts;
  std::optional<std::vector<double>> gate_weights;
  std::optional<std::vector<double>> activation;

  bool operator==(const TokenRouting&) const = default;
};

enum class Side { A, B, original, equivalent, different };

inline std::string_view to_string(Side side) {
  switch (side) {
    case Side::A: return "A";
    case Side::B: return "B";
    case Side::original: return "original";
    case Side::equivalent: return "equivalent";
    case Side::different: return "different";
  }
  return "?";
}

inline std::optional<Side> parse_side(std::string_view text) {
  for (Side s : {Side::A, Side::B, Side::original, Side::equivalent, Side::different})
    if (to_string(s) == text) return s;
  return std::nullopt;
}

// Inclusive token-index range.
struct TokenSpan {
  int first = 0;
  int last = 0;

  int size() const { return last - first + 1; }
  bool operator==(const TokenSpan&) const = default;
};

struct RoutingTrace {
  ModelMeta meta;
  std::string example_id;
  Side side = Side::A;
  std::map<int, std::vector<TokenRouting>> layers;
  std::string prompt_text;
  TokenSpan target_span;

  bool operator==(const RoutingTrace&) const = default;

  std::size_t token_count() const {
    return layers.empty() ? 0 : layers.begin()->second.size();
  }
  const std::vector<TokenRouting>& at_layer(int layer) const {
    auto it = layers.find(layer);
    if (it == layers.end())
      throw ValidationError("layers", example_id,
                            "trace has no layer " + std::to_string(layer));
    return it->second;
  }
};

inline std::string trace_key(const RoutingTrace& t) {
  return t.example_id + "/" + std::string(to_string(t.side));
}

inline void validate(const TokenRouting& tok, const ModelMeta& meta,
                     const std::string& record) {
  const auto k = static_cast<std::size_t>(meta.routed_active);
  if (tok.routed_experts.size() != k)
    throw SchemaError("routed_experts", record,
                      "token " + std::to_string(tok.token_index) + " has " +
                          std::to_string(tok.routed_experts.size()) +
                          " routed experts, meta declares k=" + std::to_string(k));
  std::vector<ExpertId> sorted = tok.routed_experts;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw ValidationError("routed_experts", record, "routed_experts not distinct");
  if (sorted.front() < 0 || sorted.back() >= meta.total_experts)
    throw ValidationError("routed_experts", record, "expert id out of range [0, N)");
  if (tok.gate_weights) {
    if (tok.gate_weights->size() != k)
      throw ValidationError("gate_weights", record,
                            "gate_weights length differs from routed_experts");
    for (double w : *tok.gate_weights)
      if (!(w >= 0.0))
        throw ValidationError("gate_weights", record, "gate weight must be >= 0");
  }
  if (tok.activation) {
    for (double v : *tok.activation)
      if (!std::isfinite(v))
        throw ValidationError("activation", record, "activation value not finite");
  }
}

// Checks every RoutingTrace invariant; throws on the first violation.
inline void validate(const RoutingTrace& trace) {
  const std::string& rec = trace.example_id;
  validate(trace.meta);
  if (trace.layers.empty())
    throw ValidationError("layers", rec, "trace has no layers");
  const std::size_t n_tokens = trace.layers.begin()->second.size();
  std::optional<std::size_t> act_dim;
  for (const auto& [layer, tokens] : trace.layers) {
    if (!trace.meta.has_layer(layer))
      throw SchemaError("layers", rec,
                        "layer " + std::to_string(layer) + " not in meta.moe_layers");
    if (tokens.size() != n_tokens)
      throw ValidationError("layers", rec, "token lists differ in length across layers");
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (tokens[i].token_index != static_cast<int>(i))
        throw ValidationError("token_index", rec, "token indices must be 0..T-1 in order");
      validate(tokens[i], trace.meta, rec);
      if (tokens[i].activation) {
        if (act_dim && *act_dim != tokens[i].activation->size())
          throw ValidationError("activation", rec, "activation dimension varies");
        act_dim = tokens[i].activation->size();
      }
    }
  }
  if (n_tokens == 0) throw ValidationError("layers", rec, "trace has no tokens");
  const auto& sp = trace.target_span;
  if (sp.first < 0 || sp.last < sp.first || sp.last >= static_cast<int>(n_tokens))
    throw ValidationError("target_span", rec, "target_span outside token range");
}

}  // namespace routescope
