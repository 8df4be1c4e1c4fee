#pragma once

// Ground-truth router simulator. Router logits for expert e at layer l are
//
//   beta_sem[l] * sense_affinity[l][sense][e]
//     + beta_tok[l] * token_affinity[l][token][e]
//     + (1 - beta_sem[l] - beta_tok[l]) * noise_temp * gumbel
//
// and the top-k logits (ties to the lower expert ID) are the routed experts.
// With both couplings at zero the router is a uniform random k-subset.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "routescope/datasets.hpp"
#include "routescope/errors.hpp"
#include "routescope/trace_model.hpp"

namespace routescope::synthetic {

enum class SenseSupport {
  dense,     // every sense has Gaussian affinity to every expert
  disjoint,  // each sense prefers its own block of experts
};

struct SimConfig {
  std::string model_id = "synthetic";
  int total_experts = 64;
  int routed_active = 6;
  int shared_experts = 0;
  int n_layers = 4;
  int dim = 32;
  // Either one value (all layers) or one per layer.
  std::vector<double> beta_semantic{0.5};
  std::vector<double> beta_token{0.0};
  double noise_temp = 1.0;
  std::uint64_t seed = 1;
  int vocab_size = 512;
  int n_senses = 32;
  SenseSupport support = SenseSupport::dense;
  double sense_embedding_scale = 3.0;
  double token_embedding_scale = 1.0;
  double activation_noise = 0.05;
  bool emit_activations = false;
  bool emit_gate_weights = false;
  PromptMode prompt_mode = PromptMode::standard;

  double beta_sem_at(int layer) const {
    return beta_semantic.size() == 1 ? beta_semantic[0] : beta_semantic.at(layer);
  }
  double beta_tok_at(int layer) const {
    return beta_token.size() == 1 ? beta_token[0] : beta_token.at(layer);
  }
};

inline void validate(const SimConfig& c) {
  auto fail = [](const char* field, const std::string& what) {
    throw ValidationError(field, "sim-config", what);
  };
  if (c.total_experts < 1) fail("total_experts", "must be positive");
  if (c.routed_active < 1 || c.routed_active > c.total_experts) fail("routed_active", "need 1 <= k <= N");
  if (c.shared_experts < 0) fail("shared_experts", "must be non-negative");
  if (c.n_layers < 1) fail("n_layers", "must be positive");
  if (c.dim < 1) fail("dim", "must be positive");
  if (c.n_senses < 1) fail("n_senses", "must be positive");
  if (!(c.noise_temp >= 0.0)) fail("noise_temp", "must be non-negative");
  if (!(c.activation_noise >= 0.0)) fail("activation_noise", "must be non-negative");
  const auto L = static_cast<std::size_t>(c.n_layers);
  for (const auto* v : {&c.beta_semantic, &c.beta_token})
    if (v->size() != 1 && v->size() != L)
      fail("beta", "per-layer betas need one value or one per layer");
  for (int l = 0; l < c.n_layers; ++l) {
    const double bs = c.beta_sem_at(l), bt = c.beta_tok_at(l);
    if (bs < 0.0 || bs > 1.0 || bt < 0.0 || bt > 1.0) fail("beta", "betas must lie in [0, 1]");
    if (bs + bt > 1.0 + 1e-12) fail("beta", "beta_semantic + beta_token must not exceed 1");
  }
  if (c.support == SenseSupport::disjoint && c.n_senses * c.routed_active > c.total_experts)
    fail("support", "disjoint support needs n_senses * k <= N");
}

// Returns a copy with per-layer (beta_semantic, beta_token) pairs.
inline SimConfig ramp_profile(SimConfig config, const std::vector<std::pair<double, double>>& betas) {
  if (betas.size() != static_cast<std::size_t>(config.n_layers))
    throw ValidationError("beta", "sim-config", "need exactly one beta pair per layer");
  config.beta_semantic.clear();
  config.beta_token.clear();
  for (const auto& [bs, bt] : betas) {
    config.beta_semantic.push_back(bs);
    config.beta_token.push_back(bt);
  }
  validate(config);
  return config;
}

// Maps whitespace-separated words to token ids. Template words take the
// reserved ids [0, R); content words spelled "w<id>" with R <= id < vocab map
// to themselves; anything else is hashed into the content range.
class Vocabulary {
 public:
  explicit Vocabulary(int vocab_size) : vocab_size_(vocab_size) {
    std::set<std::string> words;
    for (auto mode : {PromptMode::standard, PromptMode::reasoning})
      for (auto& w : text::split_ws(render_prompt("", "\x01", mode).text))
        if (w != "\x01") words.insert(w);
    int id = 0;
    for (const auto& w : words) reserved_.emplace(w, id++);
    if (vocab_size_ <= static_cast<int>(reserved_.size()) + 1)
      throw ValidationError("vocab_size", "sim-config", "vocabulary too small for template words");
  }

  int size() const { return vocab_size_; }
  int first_content_id() const { return static_cast<int>(reserved_.size()); }
  int content_size() const { return vocab_size_ - first_content_id(); }

  static std::string word(int id) { return "w" + std::to_string(id); }

  int id(std::string_view w) const {
    if (auto it = reserved_.find(std::string(w)); it != reserved_.end()) return it->second;
    if (w.size() > 1 && w[0] == 'w' &&
        std::all_of(w.begin() + 1, w.end(), [](char c) { return c >= '0' && c <= '9'; }) &&
        w.size() < 10) {
      const int v = std::stoi(std::string(w.substr(1)));
      if (v >= first_content_id() && v < vocab_size_) return v;
    }
    std::uint64_t h = 1469598103934665603ull;  // FNV-1a
    for (unsigned char c : w) h = (h ^ c) * 1099511628211ull;
    return first_content_id() + static_cast<int>(h % static_cast<std::uint64_t>(content_size()));
  }

 private:
  int vocab_size_;
  std::map<std::string, int> reserved_;
};

namespace detail {

inline double uniform_open(std::mt19937_64& rng) {
  // (0, 1) from the top 53 bits
  return (static_cast<double>(rng() >> 11) + 0.5) * 0x1.0p-53;
}

inline double gumbel(std::mt19937_64& rng) { return -std::log(-std::log(uniform_open(rng))); }

inline double normal(std::mt19937_64& rng) {
  // Box-Muller; one draw per call keeps the stream layout simple.
  const double u1 = uniform_open(rng), u2 = uniform_open(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

inline std::uint64_t hash_string(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) h = (h ^ c) * 1099511628211ull;
  return h;
}

inline std::mt19937_64 stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32)};
  return std::mt19937_64(seq);
}

}  // namespace detail

// Affinities and embeddings drawn once from the config seed.
class SimWorld {
 public:
  explicit SimWorld(const SimConfig& config) : config_(config), vocab_(config.vocab_size) {
    validate(config_);
    const int L = config_.n_layers, N = config_.total_experts, S = config_.n_senses,
              V = config_.vocab_size, d = config_.dim;
    auto rng = detail::stream(config_.seed, 0x5eed);
    sense_affinity_.resize(static_cast<std::size_t>(L) * S * N);
    token_affinity_.resize(static_cast<std::size_t>(L) * V * N);
    const int block = config_.support == SenseSupport::disjoint ? N / S : 0;
    for (int l = 0; l < L; ++l)
      for (int s = 0; s < S; ++s)
        for (int e = 0; e < N; ++e) {
          double v = detail::normal(rng);
          if (block > 0) v = 0.25 * v + ((e / block == s) ? 4.0 : 0.0);
          sense_affinity_[(static_cast<std::size_t>(l) * S + s) * N + e] = v;
        }
    for (auto& v : token_affinity_) v = detail::normal(rng);
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    sense_embedding_.resize(static_cast<std::size_t>(S) * d);
    token_embedding_.resize(static_cast<std::size_t>(V) * d);
    for (auto& v : sense_embedding_) v = detail::normal(rng) * inv_sqrt_d * config_.sense_embedding_scale;
    for (auto& v : token_embedding_) v = detail::normal(rng) * inv_sqrt_d * config_.token_embedding_scale;
  }

  const SimConfig& config() const { return config_; }
  const Vocabulary& vocabulary() const { return vocab_; }

  ModelMeta meta() const {
    ModelMeta m;
    m.model_id = config_.model_id;
    m.total_experts = config_.total_experts;
    m.routed_active = config_.routed_active;
    m.shared_experts = config_.shared_experts;
    m.moe_layers.resize(config_.n_layers);
    std::iota(m.moe_layers.begin(), m.moe_layers.end(), 0);
    m.vocab_note = "synthetic whitespace tokens; content words w<id>, vocab_size=" +
                   std::to_string(config_.vocab_size);
    return m;
  }

  // Top-k routing for one token; `rng` supplies the Gumbel noise.
  std::vector<ExpertId> route(int layer, int token, int sense, std::mt19937_64& rng,
                              std::vector<double>* gates = nullptr) const {
    const int N = config_.total_experts, k = config_.routed_active;
    const double bs = config_.beta_sem_at(layer), bt = config_.beta_tok_at(layer);
    const double wn = std::max(0.0, 1.0 - bs - bt) * config_.noise_temp;
    const double* sa = &sense_affinity_[(static_cast<std::size_t>(layer) * config_.n_senses + sense) * N];
    const double* ta = &token_affinity_[(static_cast<std::size_t>(layer) * config_.vocab_size + token) * N];
    std::vector<double> logits(N);
    for (int e = 0; e < N; ++e) {
      const double g = detail::gumbel(rng);  // drawn unconditionally: common random numbers
      logits[e] = bs * sa[e] + bt * ta[e] + wn * g;
    }
    std::vector<ExpertId> order(N);
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + k, order.end(), [&](ExpertId a, ExpertId b) {
      return logits[a] > logits[b] || (logits[a] == logits[b] && a < b);
    });
    order.resize(k);
    if (gates) {
      const double mx = logits[order[0]];
      double z = 0.0;
      for (double v : logits) z += std::exp(v - mx);
      gates->clear();
      for (ExpertId e : order) gates->push_back(std::exp(logits[e] - mx) / z);
    }
    return order;
  }

  std::vector<double> activation(int token, int sense, std::mt19937_64& rng) const {
    const int d = config_.dim;
    std::vector<double> x(d);
    const double* se = &sense_embedding_[static_cast<std::size_t>(sense) * d];
    const double* te = &token_embedding_[static_cast<std::size_t>(token) * d];
    for (int i = 0; i < d; ++i) x[i] = se[i] + te[i] + config_.activation_noise * detail::normal(rng);
    return x;
  }

  const double* sense_embedding(int sense) const {
    return &sense_embedding_[static_cast<std::size_t>(sense) * config_.dim];
  }

  int default_sense(int token) const { return token % config_.n_senses; }

 private:
  SimConfig config_;
  Vocabulary vocab_;
  std::vector<double> sense_affinity_;
  std::vector<double> token_affinity_;
  std::vector<double> sense_embedding_;
  std::vector<double> token_embedding_;
};

// Routes one rendered side of a record. Tokens equal to the side's word carry
// the record's target sense for that side; all others their default sense.
inline RoutingTrace simulate_side(const SimWorld& world, const DatasetRecord& record, Side side) {
  const SimConfig& cfg = world.config();
  const auto prompt = render_prompt(record, side, cfg.prompt_mode);
  const auto words = text::split_ws(prompt.text);
  const std::string& word = word_of(record, side);
  const auto target_words = text::split_ws(word);

  RoutingTrace trace;
  trace.meta = world.meta();
  trace.example_id = record.record_id;
  trace.side = side;
  trace.prompt_text = prompt.text;
  const int T = static_cast<int>(words.size());
  trace.target_span = {T - static_cast<int>(target_words.size()), T - 1};

  std::vector<int> ids(T), senses(T);
  const auto sense_it = record.target_senses.find(side);
  for (int i = 0; i < T; ++i) {
    ids[i] = world.vocabulary().id(words[i]);
    const bool is_target =
        std::find(target_words.begin(), target_words.end(), words[i]) != target_words.end();
    senses[i] = (is_target && sense_it != record.target_senses.end())
                    ? sense_it->second % cfg.n_senses
                    : world.default_sense(ids[i]);
  }

  auto rng = detail::stream(cfg.seed, detail::hash_string(record.record_id),
                            static_cast<std::uint64_t>(side) + 1);
  for (int l = 0; l < cfg.n_layers; ++l) {
    auto& tokens = trace.layers[l];
    tokens.reserve(T);
    for (int i = 0; i < T; ++i) {
      TokenRouting tok;
      tok.token_index = i;
      tok.token_text = words[i];
      std::vector<double> gates;
      tok.routed_experts = world.route(l, ids[i], senses[i], rng, cfg.emit_gate_weights ? &gates : nullptr);
      if (cfg.emit_gate_weights) tok.gate_weights = std::move(gates);
      if (cfg.emit_activations) tok.activation = world.activation(ids[i], senses[i], rng);
      tokens.push_back(std::move(tok));
    }
  }
  return trace;
}

// Simulates every side of every record. Output is ordered by record_id, then
// side; each (record, side) draws from its own seeded stream so the result
// is independent of `threads`.
inline std::vector<RoutingTrace> simulate_corpus(const SimWorld& world,
                                                 const std::vector<DatasetRecord>& records,
                                                 int threads = 1) {
  std::vector<const DatasetRecord*> order;
  order.reserve(records.size());
  for (const auto& r : records) order.push_back(&r);
  std::stable_sort(order.begin(), order.end(),
                   [](auto* a, auto* b) { return a->record_id < b->record_id; });
  for (std::size_t i = 1; i < order.size(); ++i)
    if (order[i]->record_id == order[i - 1]->record_id)
      throw ValidationError("record_id", order[i]->record_id, "duplicate record id");

  std::vector<std::vector<RoutingTrace>> per_record(order.size());
  auto work = [&](std::size_t i) {
    for (Side s : sides_of(*order[i])) per_record[i].push_back(simulate_side(world, *order[i], s));
  };
  const int workers = std::max(1, std::min<int>(threads, static_cast<int>(order.size())));
  if (workers == 1) {
    for (std::size_t i = 0; i < order.size(); ++i) work(i);
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < order.size(); i += workers) work(i);
      });
  }
  std::vector<RoutingTrace> out;
  for (auto& v : per_record)
    for (auto& t : v) out.push_back(std::move(t));
  return out;
}

inline std::vector<RoutingTrace> simulate_corpus(const SimConfig& config,
                                                 const std::vector<DatasetRecord>& records,
                                                 int threads = 1) {
  return simulate_corpus(SimWorld(config), records, threads);
}

// ---------------------------------------------------------------------------
// Synthetic record corpora

struct RecordSpec {
  int n_units = 100;
  int context_len = 4;  // context words besides the target
  std::uint64_t seed = 7;
};

namespace detail {

inline int draw(std::mt19937_64& rng, int lo, int hi) {  // [lo, hi)
  return lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo));
}

// Context of random content words with `target` at a random position.
inline std::pair<std::string, CharSpan> make_context(std::mt19937_64& rng, const Vocabulary& v,
                                                     int context_len, const std::string& target,
                                                     const std::set<std::string>& avoid) {
  const int pos = draw(rng, 0, context_len + 1);
  std::string out;
  CharSpan span;
  for (int i = 0; i <= context_len; ++i) {
    if (!out.empty()) out += ' ';
    if (i == pos) {
      span = {out.size(), out.size() + target.size()};
      out += target;
      continue;
    }
    std::string w;
    do w = Vocabulary::word(draw(rng, v.first_content_id(), v.size()));
    while (avoid.count(w));
    out += w;
  }
  return {out, span};
}

inline int other_sense(std::mt19937_64& rng, int n_senses, int not_this) {
  if (n_senses < 2) throw ValidationError("n_senses", "sim-config", "need at least two senses");
  int s = draw(rng, 0, n_senses - 1);
  return s >= not_this ? s + 1 : s;
}

}  // namespace detail

// WiC-style units in couples that share a target word: one same-sense pair
// and one different-sense pair per couple.
inline std::vector<DatasetRecord> make_wic_records(const SimConfig& config, const RecordSpec& spec) {
  const Vocabulary vocab(config.vocab_size);
  auto rng = detail::stream(spec.seed, 0x1c);
  std::vector<DatasetRecord> out;
  out.reserve(spec.n_units);
  std::string target;
  int base_sense = 0;
  for (int u = 0; u < spec.n_units; ++u) {
    if (u % 2 == 0) {
      target = Vocabulary::word(detail::draw(rng, vocab.first_content_id(), vocab.size()));
      base_sense = detail::draw(rng, 0, config.n_senses);
    }
    const bool same = u % 2 == 0;
    const std::set<std::string> avoid{target};
    auto [ca, sa] = detail::make_context(rng, vocab, spec.context_len, target, avoid);
    auto [cb, sb] = detail::make_context(rng, vocab, spec.context_len, target, avoid);
    WicPair pair{ca, cb, sa, sb, same ? SenseLabel::same_sense : SenseLabel::different_sense};
    char id[32];
    std::snprintf(id, sizeof id, "wic-%06d", u);
    auto rec = make_wic_record(id, target, std::move(pair));
    rec.target_senses[Side::A] = base_sense;
    rec.target_senses[Side::B] = same ? base_sense : detail::other_sense(rng, config.n_senses, base_sense);
    out.push_back(std::move(rec));
  }
  return out;
}

// SWORDS-style triples: the equivalent substitute keeps the original sense
// under a different token; the different substitute changes both.
inline std::vector<DatasetRecord> make_swords_records(const SimConfig& config, const RecordSpec& spec) {
  const Vocabulary vocab(config.vocab_size);
  if (vocab.content_size() < 3)
    throw ValidationError("vocab_size", "sim-config", "need at least three content words");
  auto rng = detail::stream(spec.seed, 0x5d);
  std::vector<DatasetRecord> out;
  out.reserve(spec.n_units);
  auto draw_word = [&] { return Vocabulary::word(detail::draw(rng, vocab.first_content_id(), vocab.size())); };
  for (int u = 0; u < spec.n_units; ++u) {
    const std::string original = draw_word();
    std::string equivalent, different;
    do equivalent = draw_word(); while (equivalent == original);
    do different = draw_word(); while (different == original || different == equivalent);
    const int sense = detail::draw(rng, 0, config.n_senses);
    const int other = detail::other_sense(rng, config.n_senses, sense);
    const std::set<std::string> avoid{original, equivalent, different};
    auto [ctx, span] = detail::make_context(rng, vocab, spec.context_len, original, avoid);
    auto substitute = [&](const std::string& w) {
      return ctx.substr(0, span.begin) + w + ctx.substr(span.end);
    };
    SwordsTriple t;
    t.equivalent_word = equivalent;
    t.different_word = different;
    t.context_original = ctx;
    t.context_equivalent = substitute(equivalent);
    t.context_different = substitute(different);
    t.span_original = span;
    t.span_equivalent = {span.begin, span.begin + equivalent.size()};
    t.span_different = {span.begin, span.begin + different.size()};
    char id[32];
    std::snprintf(id, sizeof id, "swords-%06d", u);
    auto rec = make_swords_record(id, original, std::move(t));
    rec.target_senses[Side::original] = sense;
    rec.target_senses[Side::equivalent] = sense;
    rec.target_senses[Side::different] = other;
    out.push_back(std::move(rec));
  }
  return out;
}

}  // namespace routescope::synthetic
