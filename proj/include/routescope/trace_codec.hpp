#pragma once

// Line-delimited JSON codec for routing traces.
//
// Each trace is one header line followed by one line per (layer, token),
// layer-major in ascending layer order:
//
//   {"type":"trace","schema_version":1,"example_id":...,"side":...,
//    "prompt_text":...,"target_span":[first,last],"n_tokens":T,
//    "layers":[...],"meta":{...}}
//   {"type":"token","layer":l,"index":i,"text":...,"experts":[...],
//    "gate_weights":[...]?,"activation":[...]?}
//
// A corpus file is a plain concatenation of traces.

#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "routescope/errors.hpp"
#include "routescope/trace_model.hpp"

namespace routescope {

inline constexpr int kTraceSchemaVersion = 1;

namespace detail {

using ojson = nlohmann::ordered_json;

inline ojson meta_to_json(const ModelMeta& m) {
  ojson j;
  j["model_id"] = m.model_id;
  j["total_experts"] = m.total_experts;
  j["routed_active"] = m.routed_active;
  j["shared_experts"] = m.shared_experts;
  j["moe_layers"] = m.moe_layers;
  j["vocab_note"] = m.vocab_note;
  return j;
}

template <typename T>
T required(const nlohmann::json& j, const char* key, std::size_t line, std::size_t offset) {
  auto it = j.find(key);
  if (it == j.end())
    throw ParseError(line, offset, std::string("missing field '") + key + "'");
  try {
    return it->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ParseError(line, offset, std::string("field '") + key + "' has wrong type");
  }
}

inline ModelMeta meta_from_json(const nlohmann::json& j, std::size_t line, std::size_t off) {
  if (!j.is_object()) throw ParseError(line, off, "meta must be an object");
  ModelMeta m;
  m.model_id = required<std::string>(j, "model_id", line, off);
  m.total_experts = required<int>(j, "total_experts", line, off);
  m.routed_active = required<int>(j, "routed_active", line, off);
  m.shared_experts = required<int>(j, "shared_experts", line, off);
  m.moe_layers = required<std::vector<int>>(j, "moe_layers", line, off);
  if (auto it = j.find("vocab_note"); it != j.end() && it->is_string())
    m.vocab_note = it->get<std::string>();
  return m;
}

}  // namespace detail

// Writes one trace. Validates first; the output for equal traces is
// byte-identical.
inline void write_trace(std::ostream& out, const RoutingTrace& trace) {
  validate(trace);
  using detail::ojson;
  ojson head;
  head["type"] = "trace";
  head["schema_version"] = kTraceSchemaVersion;
  head["example_id"] = trace.example_id;
  head["side"] = std::string(to_string(trace.side));
  head["prompt_text"] = trace.prompt_text;
  head["target_span"] = {trace.target_span.first, trace.target_span.last};
  head["n_tokens"] = trace.token_count();
  ojson layers = ojson::array();
  for (const auto& [layer, _] : trace.layers) layers.push_back(layer);
  head["layers"] = std::move(layers);
  head["meta"] = detail::meta_to_json(trace.meta);
  out << head.dump() << '\n';

  for (const auto& [layer, tokens] : trace.layers) {
    for (const auto& tok : tokens) {
      ojson line;
      line["type"] = "token";
      line["layer"] = layer;
      line["index"] = tok.token_index;
      line["text"] = tok.token_text;
      line["experts"] = tok.routed_experts;
      if (tok.gate_weights) line["gate_weights"] = *tok.gate_weights;
      if (tok.activation) line["activation"] = *tok.activation;
      out << line.dump() << '\n';
    }
  }
}

inline std::string encode_trace(const RoutingTrace& trace) {
  std::ostringstream os;
  write_trace(os, trace);
  return os.str();
}

// Streaming reader over a corpus. Tracks line numbers and byte offsets so
// every error points at the offending line.
class TraceReader {
 public:
  explicit TraceReader(std::istream& in) : in_(in) {}

  // Returns the next trace, or nullopt at clean end of input.
  std::optional<RoutingTrace> next() {
    std::size_t head_line = 0, head_off = 0;
    std::optional<nlohmann::json> head = next_json(head_line, head_off);
    if (!head) return std::nullopt;
    if (head->value("type", "") != "trace")
      throw ParseError(head_line, head_off, "expected a trace header record");
    auto it = head->find("schema_version");
    if (it == head->end())
      throw ParseError(head_line, head_off, "missing mandatory field 'schema_version'");
    if (!it->is_number_integer() || it->get<int>() != kTraceSchemaVersion)
      throw SchemaError("schema_version", "",
                        "unsupported schema_version " + it->dump() + " at line " +
                            std::to_string(head_line));

    RoutingTrace trace;
    trace.example_id = detail::required<std::string>(*head, "example_id", head_line, head_off);
    const auto side_text = detail::required<std::string>(*head, "side", head_line, head_off);
    auto side = parse_side(side_text);
    if (!side) throw ParseError(head_line, head_off, "unknown side '" + side_text + "'");
    trace.side = *side;
    trace.prompt_text = detail::required<std::string>(*head, "prompt_text", head_line, head_off);
    const auto span = detail::required<std::vector<int>>(*head, "target_span", head_line, head_off);
    if (span.size() != 2) throw ParseError(head_line, head_off, "target_span must have two entries");
    trace.target_span = {span[0], span[1]};
    const auto n_tokens = detail::required<std::size_t>(*head, "n_tokens", head_line, head_off);
    const auto layers = detail::required<std::vector<int>>(*head, "layers", head_line, head_off);
    auto meta_it = head->find("meta");
    if (meta_it == head->end()) throw ParseError(head_line, head_off, "missing field 'meta'");
    trace.meta = detail::meta_from_json(*meta_it, head_line, head_off);
    validate(trace.meta);

    const std::string& rec = trace.example_id;
    for (int layer : layers) {
      auto& tokens = trace.layers[layer];
      tokens.reserve(n_tokens);
      for (std::size_t i = 0; i < n_tokens; ++i) {
        std::size_t ln = 0, off = 0;
        auto j = next_json(ln, off);
        if (!j) throw ParseError(line_no_ + 1, offset_, "unexpected end of input inside trace '" + rec + "'");
        if (j->value("type", "") != "token")
          throw ParseError(ln, off, "expected a token record");
        const int got_layer = detail::required<int>(*j, "layer", ln, off);
        const int got_index = detail::required<int>(*j, "index", ln, off);
        if (got_layer != layer || got_index != static_cast<int>(i))
          throw ParseError(ln, off, "token record out of order: expected layer " +
                                        std::to_string(layer) + " index " + std::to_string(i));
        TokenRouting tok;
        tok.token_index = got_index;
        tok.token_text = detail::required<std::string>(*j, "text", ln, off);
        tok.routed_experts = detail::required<std::vector<ExpertId>>(*j, "experts", ln, off);
        if (j->contains("gate_weights"))
          tok.gate_weights = detail::required<std::vector<double>>(*j, "gate_weights", ln, off);
        if (j->contains("activation"))
          tok.activation = detail::required<std::vector<double>>(*j, "activation", ln, off);
        try {
          validate(tok, trace.meta, rec);
        } catch (const SchemaError& e) {
          throw SchemaError(e.field(), rec, std::string(e.what()) + " at line " + std::to_string(ln));
        }
        tokens.push_back(std::move(tok));
      }
    }
    validate(trace);
    return trace;
  }

  std::size_t line() const { return line_no_; }

 private:
  // Reads the next non-blank line and parses it; nullopt at end of input.
  std::optional<nlohmann::json> next_json(std::size_t& line_no, std::size_t& offset) {
    std::string text;
    while (true) {
      const std::size_t start = offset_;
      if (!std::getline(in_, text)) return std::nullopt;
      ++line_no_;
      offset_ += text.size() + (in_.eof() ? 0 : 1);
      if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
      line_no = line_no_;
      offset = start;
      try {
        return nlohmann::json::parse(text);
      } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(line_no, offset, std::string("malformed record: ") + e.what());
      }
    }
  }

  std::istream& in_;
  std::size_t line_no_ = 0;
  std::size_t offset_ = 0;
};

// Decodes exactly one trace; trailing records are an error.
inline RoutingTrace decode_trace(const std::string& bytes) {
  std::istringstream is(bytes);
  TraceReader reader(is);
  auto trace = reader.next();
  if (!trace) throw ParseError(1, 0, "empty input");
  if (reader.next()) throw ParseError(reader.line(), 0, "more than one trace in input");
  return *std::move(trace);
}

inline std::vector<RoutingTrace> read_corpus(std::istream& in) {
  std::vector<RoutingTrace> out;
  TraceReader reader(in);
  while (auto t = reader.next()) out.push_back(*std::move(t));
  return out;
}

inline void write_corpus(std::ostream& out, const std::vector<RoutingTrace>& traces) {
  for (const auto& t : traces) write_trace(out, t);
}

}  // namespace routescope
