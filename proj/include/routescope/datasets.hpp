#pragma once

// Dataset records for the two probing protocols, their importers, the
// prompt templates, and the records JSONL format.

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "routescope/errors.hpp"
#include "routescope/trace_model.hpp"

namespace routescope {

// Half-open character range [begin, end).
struct CharSpan {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool operator==(const CharSpan&) const = default;
};

enum class SenseLabel { same_sense, different_sense };

inline std::string_view to_string(SenseLabel l) {
  return l == SenseLabel::same_sense ? "same_sense" : "different_sense";
}

enum class ExperimentKind { wic, swords };

inline std::string_view to_string(ExperimentKind k) {
  return k == ExperimentKind::wic ? "wic" : "swords";
}

// Same target word in two contexts.
struct WicPair {
  std::string context_a;
  std::string context_b;
  CharSpan span_a;
  CharSpan span_b;
  SenseLabel label = SenseLabel::same_sense;

  bool operator==(const WicPair&) const = default;
};

// One context rendered three ways: with the original word, with a
// meaning-preserving substitute and with a meaning-changing one.
struct SwordsTriple {
  std::string equivalent_word;
  std::string different_word;
  std::string context_original;
  std::string context_equivalent;
  std::string context_different;
  CharSpan span_original;
  CharSpan span_equivalent;
  CharSpan span_different;

  bool operator==(const SwordsTriple&) const = default;
};

struct DatasetRecord {
  std::string record_id;
  std::string target_word;
  std::variant<WicPair, SwordsTriple> body;
  // Optional ground-truth sense id of the target on each side; present on
  // synthetic records and consumed by the simulator.
  std::map<Side, int> target_senses;

  bool operator==(const DatasetRecord&) const = default;

  ExperimentKind kind() const {
    return std::holds_alternative<WicPair>(body) ? ExperimentKind::wic : ExperimentKind::swords;
  }
  const WicPair& wic() const { return std::get<WicPair>(body); }
  const SwordsTriple& swords() const { return std::get<SwordsTriple>(body); }
};

inline std::vector<Side> sides_of(const DatasetRecord& r) {
  if (r.kind() == ExperimentKind::wic) return {Side::A, Side::B};
  return {Side::original, Side::equivalent, Side::different};
}

inline const std::string& context_of(const DatasetRecord& r, Side side) {
  if (r.kind() == ExperimentKind::wic) {
    if (side == Side::A) return r.wic().context_a;
    if (side == Side::B) return r.wic().context_b;
  } else {
    if (side == Side::original) return r.swords().context_original;
    if (side == Side::equivalent) return r.swords().context_equivalent;
    if (side == Side::different) return r.swords().context_different;
  }
  throw ValidationError("side", r.record_id, "side does not belong to this record kind");
}

// The word a prompt asks about on the given side.
inline const std::string& word_of(const DatasetRecord& r, Side side) {
  if (r.kind() == ExperimentKind::swords) {
    if (side == Side::equivalent) return r.swords().equivalent_word;
    if (side == Side::different) return r.swords().different_word;
  }
  return r.target_word;
}

namespace text {

inline std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline bool iequals(std::string_view a, std::string_view b) { return lower(a) == lower(b); }

// Surface form at explicit offsets may be an inflection of the lemma; accept
// when they share a prefix covering all but the last two characters of the
// shorter form.
inline bool lemma_match(std::string_view lemma, std::string_view surface) {
  const std::string a = lower(lemma), b = lower(surface);
  if (a == b) return true;
  std::size_t common = 0;
  while (common < a.size() && common < b.size() && a[common] == b[common]) ++common;
  const std::size_t shorter = std::min(a.size(), b.size());
  const std::size_t need = shorter > 2 ? shorter - 2 : 1;
  return common >= std::max<std::size_t>(need, 1);
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.emplace_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::vector<std::string> split_ws(std::string_view s) {
  std::vector<std::string> out;
  std::istringstream is{std::string(s)};
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

// Character span of the i-th space-separated word.
inline std::optional<CharSpan> word_span(std::string_view s, std::size_t index) {
  std::size_t i = 0, pos = 0;
  while (pos < s.size()) {
    while (pos < s.size() && s[pos] == ' ') ++pos;
    if (pos >= s.size()) break;
    std::size_t end = pos;
    while (end < s.size() && s[end] != ' ') ++end;
    if (i == index) return CharSpan{pos, end};
    ++i;
    pos = end;
  }
  return std::nullopt;
}

}  // namespace text

// Builds a WiC record, checking that both spans cover the target word.
inline DatasetRecord make_wic_record(std::string record_id, std::string target_word,
                                     WicPair pair) {
  if (target_word.empty()) throw ValidationError("target_word", record_id, "empty target word");
  auto check = [&](const std::string& ctx, const CharSpan& sp, const char* field) {
    if (sp.end <= sp.begin || sp.end > ctx.size())
      throw ValidationError(field, record_id, "offset outside the sentence");
    if (!text::lemma_match(target_word, std::string_view(ctx).substr(sp.begin, sp.size())))
      throw ValidationError(field, record_id, "offset does not cover the target word");
  };
  check(pair.context_a, pair.span_a, "span_A");
  check(pair.context_b, pair.span_b, "span_B");
  return DatasetRecord{std::move(record_id), std::move(target_word), std::move(pair), {}};
}

// Builds a SWORDS record and checks that the three contexts differ only at
// the substitution site.
inline DatasetRecord make_swords_record(std::string record_id, std::string target_word,
                                        SwordsTriple t) {
  if (target_word.empty() || t.equivalent_word.empty() || t.different_word.empty())
    throw ValidationError("target_word", record_id, "empty target or substitute word");
  const auto& o = t.context_original;
  if (t.span_original.end > o.size() || t.span_original.end <= t.span_original.begin)
    throw ValidationError("span_original", record_id, "offset outside the sentence");
  auto same_frame = [&](const std::string& c, const CharSpan& sp) {
    return sp.begin == t.span_original.begin && sp.end <= c.size() &&
           c.compare(0, sp.begin, o, 0, sp.begin) == 0 &&
           c.substr(sp.end) == o.substr(t.span_original.end);
  };
  if (!same_frame(t.context_equivalent, t.span_equivalent) ||
      !same_frame(t.context_different, t.span_different))
    throw ValidationError("context", record_id,
                          "rendered sentences differ outside the substitution site");
  return DatasetRecord{std::move(record_id), std::move(target_word), std::move(t), {}};
}

// ---------------------------------------------------------------------------
// Importers

struct SkippedEntry {
  std::size_t row = 0;  // 1-based input row
  std::string id;
  std::string reason;
};

struct ImportResult {
  std::vector<DatasetRecord> records;
  std::vector<SkippedEntry> skipped;
  std::size_t n_input = 0;
};

enum class WicOffsetMode {
  word_index,  // "i-j": space-separated word indices into sentence A and B
  char_range,  // "b1:e1-b2:e2": half-open character ranges
};

struct WicColumns {
  int target = 0;
  int offsets = 2;
  int context_a = 3;
  int context_b = 4;
  WicOffsetMode mode = WicOffsetMode::word_index;
};

inline std::optional<SenseLabel> parse_wic_label(std::string_view raw) {
  const std::string s = text::lower(raw);
  if (s == "t" || s == "true" || s == "1" || s == "same_sense") return SenseLabel::same_sense;
  if (s == "f" || s == "false" || s == "0" || s == "different_sense")
    return SenseLabel::different_sense;
  return std::nullopt;
}

// Imports WiC rows (tab-separated) with a parallel label stream. Rows whose
// offsets do not cover the target word are skipped and reported.
inline ImportResult import_wic(std::istream& rows, std::istream& labels,
                               const WicColumns& cols = {}) {
  ImportResult result;
  std::string line, label_line;
  std::size_t row = 0;
  while (std::getline(rows, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++row;
    ++result.n_input;
    char id_buf[32];
    std::snprintf(id_buf, sizeof id_buf, "wic-%06zu", row);
    const std::string id = id_buf;
    if (!std::getline(labels, label_line))
      throw ValidationError("labels", id, "label stream shorter than row stream");
    if (!label_line.empty() && label_line.back() == '\r') label_line.pop_back();
    auto skip = [&](std::string reason) { result.skipped.push_back({row, id, std::move(reason)}); };

    const auto fields = text::split(line, '\t');
    const int need = std::max({cols.target, cols.offsets, cols.context_a, cols.context_b});
    if (static_cast<int>(fields.size()) <= need) {
      skip("too few columns");
      continue;
    }
    const auto label = parse_wic_label(label_line);
    if (!label) {
      skip("unrecognized label '" + label_line + "'");
      continue;
    }
    WicPair pair;
    pair.context_a = fields[cols.context_a];
    pair.context_b = fields[cols.context_b];
    pair.label = *label;
    const auto offs = text::split(fields[cols.offsets], '-');
    if (offs.size() != 2) {
      skip("malformed offsets '" + fields[cols.offsets] + "'");
      continue;
    }
    try {
      if (cols.mode == WicOffsetMode::word_index) {
        auto a = text::word_span(pair.context_a, std::stoul(offs[0]));
        auto b = text::word_span(pair.context_b, std::stoul(offs[1]));
        if (!a || !b) {
          skip("offset past sentence end");
          continue;
        }
        pair.span_a = *a;
        pair.span_b = *b;
      } else {
        auto parse_range = [](const std::string& s) {
          const auto p = text::split(s, ':');
          if (p.size() != 2) throw std::invalid_argument("range");
          return CharSpan{std::stoul(p[0]), std::stoul(p[1])};
        };
        pair.span_a = parse_range(offs[0]);
        pair.span_b = parse_range(offs[1]);
      }
    } catch (const std::logic_error&) {
      skip("malformed offsets '" + fields[cols.offsets] + "'");
      continue;
    }
    try {
      result.records.push_back(make_wic_record(id, text::lower(fields[cols.target]), std::move(pair)));
    } catch (const ValidationError& e) {
      skip(e.what());
    }
  }
  return result;
}

struct Substitute {
  std::string word;
  double score = 0.0;  // acceptability in [0, 1]
};

// Flat view of one lexical-substitution target.
struct SwordsEntry {
  std::string id;
  std::string context;
  std::string target;
  std::size_t offset = 0;  // character offset of target in context
  std::vector<Substitute> substitutes;
};

struct SwordsThresholds {
  double equivalent_min = 0.5;
  double different_max = 0.1;
};

namespace skip_reason {
inline constexpr const char* bad_offset = "bad-offset";
inline constexpr const char* degenerate = "degenerate-substitute";
inline constexpr const char* no_equivalent = "no-equivalent-substitute";
inline constexpr const char* no_different = "no-different-substitute";
}  // namespace skip_reason

namespace detail {

// Re-cases `word` to follow the capitalization of `like`'s first letter.
inline std::string match_case(const std::string& word, std::string_view like) {
  std::string out = word;
  if (!out.empty() && !like.empty() && std::isupper(static_cast<unsigned char>(like[0])))
    out[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(out[0])));
  return out;
}

}  // namespace detail

// Builds (original, equivalent, different) triples. The equivalent
// substitute is the highest-scoring one at or above `equivalent_min`; the
// different substitute is the lowest-scoring one at or below
// `different_max`. Ties go to the lexicographically smaller word.
inline ImportResult import_swords_triples(const std::vector<SwordsEntry>& entries,
                                          const SwordsThresholds& th = {}) {
  ImportResult result;
  std::size_t row = 0;
  for (const auto& e : entries) {
    ++row;
    ++result.n_input;
    auto skip = [&](const char* reason) { result.skipped.push_back({row, e.id, reason}); };
    const std::string target = text::lower(e.target);
    if (target.empty() || e.offset + e.target.size() > e.context.size() ||
        !text::iequals(std::string_view(e.context).substr(e.offset, e.target.size()), e.target)) {
      skip(skip_reason::bad_offset);
      continue;
    }
    bool dropped_degenerate = false;
    const Substitute* best_equiv = nullptr;
    const Substitute* best_diff = nullptr;
    for (const auto& s : e.substitutes) {
      if (text::iequals(s.word, target) || s.word.empty()) {
        dropped_degenerate = true;
        continue;
      }
      if (s.score >= th.equivalent_min &&
          (!best_equiv || s.score > best_equiv->score ||
           (s.score == best_equiv->score && s.word < best_equiv->word)))
        best_equiv = &s;
      if (s.score <= th.different_max &&
          (!best_diff || s.score < best_diff->score ||
           (s.score == best_diff->score && s.word < best_diff->word)))
        best_diff = &s;
    }
    if (!best_equiv || !best_diff) {
      if (dropped_degenerate) skip(skip_reason::degenerate);
      else skip(best_equiv ? skip_reason::no_different : skip_reason::no_equivalent);
      continue;
    }
    const std::string surface = e.context.substr(e.offset, e.target.size());
    auto substitute = [&](const std::string& word) {
      return e.context.substr(0, e.offset) + detail::match_case(word, surface) +
             e.context.substr(e.offset + e.target.size());
    };
    SwordsTriple t;
    t.equivalent_word = text::lower(best_equiv->word);
    t.different_word = text::lower(best_diff->word);
    t.context_original = e.context;
    t.context_equivalent = substitute(t.equivalent_word);
    t.context_different = substitute(t.different_word);
    t.span_original = {e.offset, e.offset + e.target.size()};
    t.span_equivalent = {e.offset, e.offset + t.equivalent_word.size()};
    t.span_different = {e.offset, e.offset + t.different_word.size()};
    result.records.push_back(make_swords_record(e.id, target, std::move(t)));
  }
  return result;
}

// Reads the benchmark's native JSON layout:
//   contexts:          {cid: {"context": text}}
//   targets:           {tid: {"context_id", "target", "offset"}}
//   substitutes:       {sid: {"target_id", "substitute"}}
//   substitute_labels: {sid: ["TRUE", "FALSE", ...]}
// A substitute's score is the fraction of labels beginning with "TRUE".
// Entries come out ordered by target id.
inline std::vector<SwordsEntry> swords_entries_from_native(const nlohmann::json& doc) {
  std::map<std::string, SwordsEntry> by_target;
  const auto& contexts = doc.at("contexts");
  for (const auto& [tid, t] : doc.at("targets").items()) {
    SwordsEntry e;
    e.id = tid;
    e.context = contexts.at(t.at("context_id").get<std::string>()).at("context").get<std::string>();
    e.target = t.at("target").get<std::string>();
    e.offset = t.at("offset").get<std::size_t>();
    by_target.emplace(tid, std::move(e));
  }
  const nlohmann::json empty = nlohmann::json::object();
  const auto& labels = doc.contains("substitute_labels") ? doc.at("substitute_labels") : empty;
  for (const auto& [sid, s] : doc.at("substitutes").items()) {
    auto it = by_target.find(s.at("target_id").get<std::string>());
    if (it == by_target.end()) continue;
    double score = 0.0;
    if (auto l = labels.find(sid); l != labels.end() && !l->empty()) {
      std::size_t yes = 0;
      for (const auto& v : *l)
        if (v.get<std::string>().rfind("TRUE", 0) == 0) ++yes;
      score = static_cast<double>(yes) / static_cast<double>(l->size());
    }
    it->second.substitutes.push_back({s.at("substitute").get<std::string>(), score});
  }
  std::vector<SwordsEntry> out;
  out.reserve(by_target.size());
  for (auto& [_, e] : by_target) out.push_back(std::move(e));
  return out;
}

// ---------------------------------------------------------------------------
// Prompt templates

enum class PromptMode { standard, reasoning };

struct RenderedPrompt {
  std::string text;
  CharSpan target;  // final occurrence of the word in `text`
};

// Places the context before the instruction. The word is mentioned twice in
// the instruction; the returned span is the final (assistant-side) mention.
inline RenderedPrompt render_prompt(std::string_view context, std::string_view word,
                                    PromptMode mode) {
  if (word.empty()) throw ValidationError("target_word", "", "empty target word");
  std::string out;
  out.reserve(context.size() + 2 * word.size() + 128);
  out += context;
  if (!out.empty()) out += ' ';
  out += "<user> Please define ";
  out += word;
  out += " in this context <assistant> ";
  if (mode == PromptMode::standard)
    out += "Sure! Here is the definition of the word ";
  else
    out += "<think> Okay, so I need to figure out the meaning of the word ";
  out += word;
  const auto pos = out.rfind(word);
  if (pos == std::string::npos || pos + word.size() != out.size())
    throw Error("internal: target word missing from rendered prompt");
  return {std::move(out), {pos, pos + word.size()}};
}

inline RenderedPrompt render_prompt(const DatasetRecord& r, Side side, PromptMode mode) {
  return render_prompt(context_of(r, side), word_of(r, side), mode);
}

// ---------------------------------------------------------------------------
// Records JSONL: one DatasetRecord per line.

inline nlohmann::ordered_json record_to_json(const DatasetRecord& r) {
  nlohmann::ordered_json j;
  j["record_id"] = r.record_id;
  j["kind"] = std::string(to_string(r.kind()));
  j["target_word"] = r.target_word;
  auto span = [](const CharSpan& s) { return nlohmann::ordered_json::array({s.begin, s.end}); };
  if (r.kind() == ExperimentKind::wic) {
    const auto& w = r.wic();
    j["label"] = std::string(to_string(w.label));
    j["context_A"] = w.context_a;
    j["context_B"] = w.context_b;
    j["span_A"] = span(w.span_a);
    j["span_B"] = span(w.span_b);
  } else {
    const auto& s = r.swords();
    j["equivalent_word"] = s.equivalent_word;
    j["different_word"] = s.different_word;
    j["context_original"] = s.context_original;
    j["context_equivalent"] = s.context_equivalent;
    j["context_different"] = s.context_different;
    j["span_original"] = span(s.span_original);
    j["span_equivalent"] = span(s.span_equivalent);
    j["span_different"] = span(s.span_different);
  }
  if (!r.target_senses.empty()) {
    nlohmann::ordered_json senses;
    for (const auto& [side, sense] : r.target_senses) senses[std::string(to_string(side))] = sense;
    j["senses"] = std::move(senses);
  }
  return j;
}

inline DatasetRecord record_from_json(const nlohmann::json& j) {
  const auto id = j.at("record_id").get<std::string>();
  const auto kind = j.at("kind").get<std::string>();
  auto span = [&](const char* key) {
    const auto v = j.at(key).get<std::vector<std::size_t>>();
    if (v.size() != 2) throw ValidationError(key, id, "span must have two entries");
    return CharSpan{v[0], v[1]};
  };
  DatasetRecord r;
  if (kind == "wic") {
    WicPair w;
    const auto label = parse_wic_label(j.at("label").get<std::string>());
    if (!label) throw ValidationError("label", id, "unknown label");
    w.label = *label;
    w.context_a = j.at("context_A").get<std::string>();
    w.context_b = j.at("context_B").get<std::string>();
    w.span_a = span("span_A");
    w.span_b = span("span_B");
    r = make_wic_record(id, j.at("target_word").get<std::string>(), std::move(w));
  } else if (kind == "swords") {
    SwordsTriple s;
    s.equivalent_word = j.at("equivalent_word").get<std::string>();
    s.different_word = j.at("different_word").get<std::string>();
    s.context_original = j.at("context_original").get<std::string>();
    s.context_equivalent = j.at("context_equivalent").get<std::string>();
    s.context_different = j.at("context_different").get<std::string>();
    s.span_original = span("span_original");
    s.span_equivalent = span("span_equivalent");
    s.span_different = span("span_different");
    r = make_swords_record(id, j.at("target_word").get<std::string>(), std::move(s));
  } else {
    throw ValidationError("kind", id, "unknown record kind '" + kind + "'");
  }
  if (auto it = j.find("senses"); it != j.end()) {
    for (const auto& [side_text, sense] : it->items()) {
      auto side = parse_side(side_text);
      if (!side) throw ValidationError("senses", id, "unknown side '" + side_text + "'");
      r.target_senses[*side] = sense.get<int>();
    }
  }
  return r;
}

inline void write_records(std::ostream& out, const std::vector<DatasetRecord>& records) {
  for (const auto& r : records) out << record_to_json(r).dump() << '\n';
}

inline std::vector<DatasetRecord> read_records(std::istream& in) {
  std::vector<DatasetRecord> out;
  std::string line;
  std::size_t line_no = 0, offset = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t start = offset;
    offset += line.size() + 1;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, start, e.what());
    } catch (const ValidationError& e) {
      throw ParseError(line_no, start, e.what());
    }
  }
  return out;
}

}  // namespace routescope
