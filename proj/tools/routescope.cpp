// routescope: command-line front end. Every run writes its outputs plus one
// manifest (resolved options, seed, input and output digests) that `replay`
// can re-execute and check byte for byte.

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "routescope/routescope.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace routescope;

namespace {

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw Error("sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open '" + p.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("read failed on '" + p.string() + "'");
  return ss.str();
}

void write_file(const fs::path& p, const std::string& bytes) {
  std::error_code ec;
  if (p.has_parent_path()) fs::create_directories(p.parent_path(), ec);
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + p.string() + "' for writing");
  out << bytes;
  out.flush();
  if (!out) throw IoError("write failed on '" + p.string() + "'");
}

struct FileDigest {
  std::string path;
  std::string sha256;
};

// Tracks what a run reads and writes. Relative output paths resolve against
// the output directory; input paths are taken as given.
struct RunContext {
  fs::path out_dir = ".";
  std::uint64_t seed = 0;
  int threads = 1;
  std::vector<FileDigest> inputs;
  std::vector<FileDigest> outputs;

  std::string input(const std::string& path) {
    std::string bytes = read_file(path);
    inputs.push_back({path, sha256_hex(bytes)});
    return bytes;
  }

  fs::path resolve(const std::string& declared) const {
    const fs::path p(declared);
    return p.is_absolute() ? p : out_dir / p;
  }

  void output(const std::string& declared, const std::string& bytes) {
    write_file(resolve(declared), bytes);
    outputs.push_back({declared, sha256_hex(bytes)});
  }
};

std::vector<DatasetRecord> parse_records(const std::string& bytes) {
  std::istringstream in(bytes);
  return read_records(in);
}

std::vector<RoutingTrace> parse_traces(const std::string& bytes) {
  std::istringstream in(bytes);
  return read_corpus(in);
}

PromptMode parse_prompt_mode(const std::string& s) {
  if (s == "standard") return PromptMode::standard;
  if (s == "reasoning") return PromptMode::reasoning;
  throw ValidationError("prompt-mode", "", "prompt mode must be standard or reasoning");
}

// ---------------------------------------------------------------------------
// Option sets. Each serializes to the manifest's config snapshot.

struct SimOptions {
  std::string records;
  std::string out = "corpus.traces.jsonl";
  std::string model_id = "synthetic";
  int total_experts = 64;
  int routed_active = 6;
  int shared_experts = 0;
  int layers = 4;
  int dim = 32;
  std::vector<double> beta_semantic{0.5};
  std::vector<double> beta_token{0.0};
  double noise_temp = 1.0;
  int vocab_size = 512;
  int senses = 32;
  std::string support = "dense";
  double sense_scale = 3.0;
  double token_scale = 1.0;
  double activation_noise = 0.05;
  bool activations = false;
  bool gate_weights = false;
  std::string prompt_mode = "standard";
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SimOptions, records, out, model_id, total_experts,
                                                routed_active, shared_experts, layers, dim,
                                                beta_semantic, beta_token, noise_temp, vocab_size,
                                                senses, support, sense_scale, token_scale,
                                                activation_noise, activations, gate_weights,
                                                prompt_mode)

struct RecordOptions {
  std::string kind = "wic";
  int units = 100;
  int context_len = 4;
  int vocab_size = 512;
  int senses = 32;
  std::string out = "records.jsonl";
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RecordOptions, kind, units, context_len, vocab_size,
                                                senses, out)

struct ExperimentCliOptions {
  std::string kind;
  std::string records;
  std::string traces;
  std::string span_policy = "last-token";
  std::string out = "report.csv";
  std::string diffs;
  int diffs_layer = -1;
  std::string summary;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ExperimentCliOptions, kind, records, traces,
                                                span_policy, out, diffs, diffs_layer, summary)

struct StatsOptions {
  std::string diffs;
  std::string method = "t";
  double alpha = 0.001;
  bool two_sided = false;
  std::size_t resamples = 10000;
  int exact_max_n = 20;
  std::string out;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(StatsOptions, diffs, method, alpha, two_sided,
                                                resamples, exact_max_n, out)

struct SaeOptions {
  std::string traces;
  int layer = 0;
  int width = 28672;
  double lambda = 5.0;
  std::size_t steps = 30000;
  std::size_t batch = 4096;
  double lr = 5e-5;
  std::size_t reset_interval = 1000;
  std::size_t dead_window = 1000;
  std::size_t log_interval = 1000;
  std::string out = "sae.json";
  std::string log;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SaeOptions, traces, layer, width, lambda, steps,
                                                batch, lr, reset_interval, dead_window,
                                                log_interval, out, log)

struct AtlasCliOptions {
  std::string checkpoint;
  std::string traces;
  int layer = 0;
  int feature = -1;
  std::string token;
  std::size_t top_m = 10;
  std::size_t top_experts = 5;
  double mark_fraction = 0.5;
  std::string aggregate = "instances";
  std::string out = "atlas.csv";
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AtlasCliOptions, checkpoint, traces, layer, feature,
                                                token, top_m, top_experts, mark_fraction,
                                                aggregate, out)

struct PlotOptions {
  std::string report;
  std::string value = "mean_score";
  std::string out = "plot.csv";
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(PlotOptions, report, value, out)

struct ImportOptions {
  std::string kind;
  std::string rows;
  std::string labels;
  std::string offset_mode = "word_index";
  int col_target = 0;
  int col_offsets = 2;
  int col_a = 3;
  int col_b = 4;
  std::string input;
  double equivalent_threshold = 0.5;
  double different_threshold = 0.1;
  std::string out = "records.jsonl";
  std::string skipped;
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ImportOptions, kind, rows, labels, offset_mode,
                                                col_target, col_offsets, col_a, col_b, input,
                                                equivalent_threshold, different_threshold, out,
                                                skipped)

struct RenderOptions {
  std::string records;
  std::string prompt_mode = "standard";
  std::string out = "prompts.jsonl";
};
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RenderOptions, records, prompt_mode, out)

// ---------------------------------------------------------------------------
// Commands

void run_simulate(const SimOptions& o, RunContext& ctx) {
  synthetic::SimConfig c;
  c.model_id = o.model_id;
  c.total_experts = o.total_experts;
  c.routed_active = o.routed_active;
  c.shared_experts = o.shared_experts;
  c.n_layers = o.layers;
  c.dim = o.dim;
  c.beta_semantic = o.beta_semantic;
  c.beta_token = o.beta_token;
  c.noise_temp = o.noise_temp;
  c.seed = ctx.seed;
  c.vocab_size = o.vocab_size;
  c.n_senses = o.senses;
  if (o.support == "dense") c.support = synthetic::SenseSupport::dense;
  else if (o.support == "disjoint") c.support = synthetic::SenseSupport::disjoint;
  else throw ValidationError("support", "", "support must be dense or disjoint");
  c.sense_embedding_scale = o.sense_scale;
  c.token_embedding_scale = o.token_scale;
  c.activation_noise = o.activation_noise;
  c.emit_activations = o.activations;
  c.emit_gate_weights = o.gate_weights;
  c.prompt_mode = parse_prompt_mode(o.prompt_mode);
  const auto records = parse_records(ctx.input(o.records));
  const auto corpus = synthetic::simulate_corpus(c, records, ctx.threads);
  std::ostringstream out;
  write_corpus(out, corpus);
  ctx.output(o.out, out.str());
  std::cerr << "simulated " << corpus.size() << " traces from " << records.size() << " records\n";
}

void run_records(const RecordOptions& o, RunContext& ctx) {
  synthetic::SimConfig c;
  c.vocab_size = o.vocab_size;
  c.n_senses = o.senses;
  const synthetic::RecordSpec spec{o.units, o.context_len, ctx.seed};
  if (o.units < 0 || o.context_len < 0) throw ValidationError("units", "", "counts must be non-negative");
  std::vector<DatasetRecord> records;
  if (o.kind == "wic") records = synthetic::make_wic_records(c, spec);
  else if (o.kind == "swords") records = synthetic::make_swords_records(c, spec);
  else throw ValidationError("kind", "", "kind must be wic or swords");
  std::ostringstream out;
  write_records(out, records);
  ctx.output(o.out, out.str());
}

void run_experiment(const ExperimentCliOptions& o, RunContext& ctx) {
  const auto records = parse_records(ctx.input(o.records));
  const auto traces = parse_traces(ctx.input(o.traces));
  ExperimentOptions opt;
  opt.span_policy = parse_span_policy(o.span_policy);
  ExperimentResult res;
  if (o.kind == "wic") res = run_wic(records, traces, opt);
  else if (o.kind == "swords") res = run_swords(records, traces, opt);
  else throw ValidationError("kind", "", "experiment must be wic or swords");

  std::ostringstream report;
  write_overlap_report(report, layerwise_report(res.experiment));
  ctx.output(o.out, report.str());
  if (!o.diffs.empty()) {
    std::ostringstream d;
    std::optional<int> layer;
    if (o.diffs_layer >= 0) {
      if (!res.diffs.per_layer.count(o.diffs_layer))
        throw ValidationError("diffs-layer", "", "layer not present in the traces");
      layer = o.diffs_layer;
    }
    write_diffs(d, res.diffs, layer);
    ctx.output(o.diffs, d.str());
  }
  if (!o.summary.empty()) {
    json s;
    s["experiment"] = o.kind;
    s["condition1"] = res.effect.condition1;
    s["condition2"] = res.effect.condition2;
    s["overall_difference"] = res.effect.overall;
    json layers = json::array();
    for (const auto& l : res.effect.per_layer)
      layers.push_back({{"layer", l.layer},
                        {"mean_condition1", l.mean_condition1},
                        {"mean_condition2", l.mean_condition2},
                        {"difference", l.difference}});
    s["per_layer"] = layers;
    s["n_input"] = res.n_input;
    s["n_retained"] = res.n_retained;
    s["n_dropped"] = res.n_dropped;
    s["n_unmatched"] = res.n_unmatched;
    s["n_paired_units"] = res.diffs.layer_mean.size();
    json dropped = json::array();
    for (const auto& d : res.dropped) dropped.push_back({{"record_id", d.id}, {"reason", d.reason}});
    s["dropped"] = dropped;
    ctx.output(o.summary, s.dump(2) + "\n");
  }
  std::cerr << o.kind << ": " << res.n_input << " records, " << res.n_retained << " retained, "
            << res.n_dropped << " dropped\n";
  for (const auto& d : res.dropped) std::cerr << "  dropped " << d.id << ": " << d.reason << '\n';
}

void run_stats(const StatsOptions& o, RunContext& ctx) {
  std::istringstream in(ctx.input(o.diffs));
  const auto diffs = read_diffs(in);
  if (!(o.alpha > 0.0 && o.alpha < 1.0)) throw ValidationError("alpha", "", "alpha must lie in (0, 1)");
  stats::TestResult r;
  std::string method;
  if (o.method == "t") {
    r = stats::paired_t_test(diffs, o.two_sided);
    method = std::string(stats::to_string(r.method));
  } else if (o.method == "perm") {
    if (o.two_sided) throw ValidationError("two-sided", "", "the permutation test is one-sided");
    stats::PermutationOptions p;
    p.n_resamples = o.resamples;
    p.seed = ctx.seed;
    p.exact_max_n = o.exact_max_n;
    p.threads = ctx.threads;
    r = stats::sign_flip_permutation(diffs, p);
    method = std::string(stats::to_string(r.method));
  } else {
    throw ValidationError("method", "", "method must be t or perm");
  }
  json line;
  line["method"] = method;
  line["n"] = r.n;
  if (std::isfinite(r.statistic)) line["statistic"] = r.statistic;
  else line["statistic"] = r.statistic > 0 ? "inf" : "-inf";
  line["p"] = r.p_value;
  line["alpha"] = o.alpha;
  line["decision"] = r.p_value < o.alpha ? "reject" : "retain";
  if (r.degenerate) line["degenerate"] = true;
  if (r.method == stats::Method::sign_flip_permutation) {
    line["exact"] = r.exact;
    line["patterns"] = r.n_resamples;
  }
  const std::string text = line.dump() + "\n";
  std::cout << text;
  if (!o.out.empty()) ctx.output(o.out, text);
}

void run_sae(const SaeOptions& o, RunContext& ctx) {
  const auto traces = parse_traces(ctx.input(o.traces));
  const auto table = atlas::collect_tokens(traces, o.layer);
  auto model = sae::make_sae(static_cast<int>(table.activations.rows()), o.width, o.lambda, ctx.seed);
  sae::TrainConfig cfg;
  cfg.steps = o.steps;
  cfg.batch_size = o.batch;
  cfg.learning_rate = o.lr;
  cfg.dead_reset_interval = o.reset_interval;
  cfg.dead_window = o.dead_window;
  cfg.log_interval = o.log_interval;
  cfg.seed = ctx.seed;
  const auto res = sae::sae_train(table.activations, std::move(model), cfg);
  std::ostringstream ck;
  sae::save(ck, res.model);
  ctx.output(o.out, ck.str());
  if (!o.log.empty()) {
    std::ostringstream log;
    log << "step,mean_loss,mean_l0,dead,resets\n";
    for (const auto& e : res.log)
      log << e.step << ',' << format_real(e.mean_loss) << ',' << format_real(e.mean_l0) << ','
          << e.dead << ',' << e.resets << '\n';
    ctx.output(o.log, log.str());
  }
  const auto& last = res.log.back();
  std::cerr << "trained " << res.model.steps_trained << " steps on " << table.activations.cols()
            << " tokens; final loss " << last.mean_loss << ", L0 " << last.mean_l0 << ", resets "
            << res.total_resets << '\n';
}

void run_atlas(const AtlasCliOptions& o, RunContext& ctx) {
  std::istringstream ck(ctx.input(o.checkpoint));
  const auto model = sae::load(ck);
  const auto traces = parse_traces(ctx.input(o.traces));
  const auto table = atlas::collect_tokens(traces, o.layer);
  atlas::AtlasOptions opt;
  opt.layer = o.layer;
  opt.top_m = o.top_m;
  opt.top_experts = o.top_experts;
  opt.mark_fraction = o.mark_fraction;
  if (o.aggregate == "instances") opt.aggregation = atlas::Aggregation::instances;
  else if (o.aggregate == "types") opt.aggregation = atlas::Aggregation::types;
  else throw ValidationError("aggregate", "", "aggregate must be instances or types");
  int feature = o.feature;
  if (!o.token.empty()) feature = atlas::top_feature_for_token(model, table, o.token);
  if (feature < 0) throw ValidationError("feature", "", "give --feature or --token");
  std::ostringstream out;
  atlas::write_atlas_csv(out, atlas::build_atlas(model, table, feature, opt));
  ctx.output(o.out, out.str());
}

void run_plotdata(const PlotOptions& o, RunContext& ctx) {
  std::istringstream in(ctx.input(o.report));
  const auto series = plot_series(read_overlap_report(in), o.value);
  std::ostringstream out;
  write_plot_series(out, series);
  ctx.output(o.out, out.str());
}

void write_skipped(RunContext& ctx, const std::string& path, const ImportResult& res) {
  std::cerr << "imported " << res.records.size() << " of " << res.n_input << " entries, skipped "
            << res.skipped.size() << '\n';
  std::map<std::string, std::size_t> by_reason;
  for (const auto& s : res.skipped) ++by_reason[s.reason];
  for (const auto& [reason, n] : by_reason) std::cerr << "  " << n << " x " << reason << '\n';
  if (path.empty()) return;
  std::ostringstream out;
  for (const auto& s : res.skipped)
    out << json{{"row", s.row}, {"id", s.id}, {"reason", s.reason}}.dump() << '\n';
  ctx.output(path, out.str());
}

void run_import(const ImportOptions& o, RunContext& ctx) {
  ImportResult res;
  if (o.kind == "wic") {
    WicColumns cols{o.col_target, o.col_offsets, o.col_a, o.col_b, WicOffsetMode::word_index};
    if (o.offset_mode == "char_range") cols.mode = WicOffsetMode::char_range;
    else if (o.offset_mode != "word_index")
      throw ValidationError("offset-mode", "", "offset mode must be word_index or char_range");
    std::istringstream rows(ctx.input(o.rows)), labels(ctx.input(o.labels));
    res = import_wic(rows, labels, cols);
  } else if (o.kind == "swords") {
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(ctx.input(o.input));
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(1, e.byte, e.what());
    }
    res = import_swords_triples(swords_entries_from_native(doc),
                                {o.equivalent_threshold, o.different_threshold});
  } else {
    throw ValidationError("kind", "", "import kind must be wic or swords");
  }
  std::ostringstream out;
  write_records(out, res.records);
  ctx.output(o.out, out.str());
  write_skipped(ctx, o.skipped, res);
}

void run_render(const RenderOptions& o, RunContext& ctx) {
  const auto records = parse_records(ctx.input(o.records));
  const auto mode = parse_prompt_mode(o.prompt_mode);
  std::ostringstream out;
  for (const auto& r : records)
    for (Side s : sides_of(r)) {
      const auto p = render_prompt(r, s, mode);
      json line;
      line["record_id"] = r.record_id;
      line["side"] = std::string(to_string(s));
      line["text"] = p.text;
      line["target_begin"] = p.target.begin;
      line["target_end"] = p.target.end;
      out << line.dump() << '\n';
    }
  ctx.output(o.out, out.str());
}

// ---------------------------------------------------------------------------
// Command registry and manifests

struct CommandBase {
  virtual ~CommandBase() = default;
  virtual json config() const = 0;
  virtual void load(const json& j) = 0;
  virtual void run(RunContext& ctx) const = 0;
  virtual std::string primary_output() const = 0;
};

template <typename Opts>
struct Command : CommandBase {
  Opts opts;
  void (*fn)(const Opts&, RunContext&);
  explicit Command(void (*f)(const Opts&, RunContext&)) : fn(f) {}
  json config() const override { return json::parse(nlohmann::json(opts).dump()); }
  void load(const json& j) override { opts = nlohmann::json::parse(j.dump()).get<Opts>(); }
  void run(RunContext& ctx) const override { fn(opts, ctx); }
  std::string primary_output() const override { return opts.out; }
};

struct Registry {
  std::map<std::string, std::unique_ptr<CommandBase>> commands;

  template <typename Opts>
  Opts& add(const std::string& name, void (*f)(const Opts&, RunContext&)) {
    auto cmd = std::make_unique<Command<Opts>>(f);
    Opts& ref = cmd->opts;
    commands.emplace(name, std::move(cmd));
    return ref;
  }
};

fs::path manifest_path(const RunContext& ctx, const std::string& name, const CommandBase& cmd) {
  const std::string out = cmd.primary_output();
  if (!out.empty()) return fs::path(ctx.resolve(out).string() + ".manifest.json");
  return ctx.out_dir / (name + ".manifest.json");
}

json digests(const std::vector<FileDigest>& files) {
  json a = json::array();
  for (const auto& f : files) a.push_back({{"path", f.path}, {"sha256", f.sha256}});
  return a;
}

json execute(const std::string& name, const CommandBase& cmd, RunContext& ctx,
             const std::string& config_file) {
  cmd.run(ctx);
  json m;
  m["tool"] = "routescope";
  m["version"] = ROUTESCOPE_VERSION;
  m["subcommand"] = name;
  m["seed"] = ctx.seed;
  m["threads"] = ctx.threads;
  m["out_dir"] = ctx.out_dir.string();
  m["config"] = cmd.config();
  if (!config_file.empty()) m["config_file"] = {{"path", config_file}, {"sha256", sha256_hex(read_file(config_file))}};
  m["inputs"] = digests(ctx.inputs);
  m["outputs"] = digests(ctx.outputs);
  write_file(manifest_path(ctx, name, cmd), m.dump(2) + "\n");
  return m;
}

int replay(Registry& reg, const std::string& manifest_file, const std::string& out_dir_flag,
           int threads) {
  json m;
  try {
    m = json::parse(read_file(manifest_file));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(1, e.byte, e.what());
  }
  std::string name;
  RunContext ctx;
  json recorded;
  try {
    if (m.at("tool") != "routescope") throw SchemaError("tool", manifest_file, "not a routescope manifest");
    name = m.at("subcommand").get<std::string>();
    ctx.seed = m.at("seed").get<std::uint64_t>();
    ctx.out_dir = out_dir_flag.empty() ? m.at("out_dir").get<std::string>() : out_dir_flag;
    recorded = m.at("outputs");
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("manifest", manifest_file, e.what());
  }
  ctx.threads = threads;
  auto it = reg.commands.find(name);
  if (it == reg.commands.end()) throw SchemaError("subcommand", manifest_file, "unknown subcommand '" + name + "'");
  try {
    it->second->load(m.at("config"));
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError("config", manifest_file, e.what());
  }
  for (const auto& in : m.at("inputs")) {
    const std::string path = in.at("path").get<std::string>();
    if (sha256_hex(read_file(path)) != in.at("sha256").get<std::string>())
      throw ValidationError("inputs", path, "input changed since the manifest was written");
  }
  execute(name, *it->second, ctx, "");
  bool match = ctx.outputs.size() == recorded.size();
  json report = json::array();
  for (std::size_t i = 0; i < ctx.outputs.size(); ++i) {
    const bool same = i < recorded.size() && recorded[i].at("path") == ctx.outputs[i].path &&
                      recorded[i].at("sha256") == ctx.outputs[i].sha256;
    match = match && same;
    report.push_back({{"path", ctx.outputs[i].path}, {"sha256", ctx.outputs[i].sha256}, {"match", same}});
  }
  std::cout << json{{"subcommand", name}, {"match", match}, {"outputs", report}}.dump() << '\n';
  return match ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"routescope: expert-routing overlap analysis"};
  app.set_version_flag("--version", std::string(ROUTESCOPE_VERSION));
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);
  app.set_config("--config", "", "TOML file supplying option values (flags take precedence)");
  app.get_config_ptr()->check(CLI::ExistingFile);

  std::uint64_t seed = 0;
  int threads = 0;
  std::string out_dir = ".";
  app.add_option("--seed", seed, "Random seed")->capture_default_str();
  app.add_option("--threads", threads, "Worker cap (0 = hardware concurrency)")->capture_default_str();
  app.add_option("--out-dir", out_dir, "Directory for relative output paths")->capture_default_str();

  Registry reg;

  auto* sim = app.add_subcommand("simulate", "Route records through the ground-truth simulator");
  {
    auto& o = reg.add<SimOptions>("simulate", run_simulate);
    sim->add_option("--records", o.records, "Records JSONL")->required();
    sim->add_option("--out", o.out, "Trace corpus to write")->capture_default_str();
    sim->add_option("--model-id", o.model_id)->capture_default_str();
    sim->add_option("--total-experts", o.total_experts, "Routed experts N")->capture_default_str();
    sim->add_option("--routed-active", o.routed_active, "Experts per token k")->capture_default_str();
    sim->add_option("--shared-experts", o.shared_experts)->capture_default_str();
    sim->add_option("--layers", o.layers, "Number of MoE layers")->capture_default_str();
    sim->add_option("--dim", o.dim, "Activation dimension")->capture_default_str();
    sim->add_option("--beta-semantic", o.beta_semantic, "One value or one per layer")->delimiter(',');
    sim->add_option("--beta-token", o.beta_token, "One value or one per layer")->delimiter(',');
    sim->add_option("--noise-temp", o.noise_temp)->capture_default_str();
    sim->add_option("--vocab-size", o.vocab_size)->capture_default_str();
    sim->add_option("--senses", o.senses)->capture_default_str();
    sim->add_option("--support", o.support, "dense or disjoint")->capture_default_str();
    sim->add_option("--sense-scale", o.sense_scale)->capture_default_str();
    sim->add_option("--token-scale", o.token_scale)->capture_default_str();
    sim->add_option("--activation-noise", o.activation_noise)->capture_default_str();
    sim->add_flag("--activations", o.activations, "Record activation vectors");
    sim->add_flag("--gate-weights", o.gate_weights, "Record gate weights");
    sim->add_option("--prompt-mode", o.prompt_mode, "standard or reasoning")->capture_default_str();
  }

  auto* rec = app.add_subcommand("synth-records", "Generate synthetic WiC or SWORDS records");
  {
    auto& o = reg.add<RecordOptions>("synth-records", run_records);
    rec->add_option("--kind", o.kind, "wic or swords")->capture_default_str();
    rec->add_option("--units", o.units)->capture_default_str();
    rec->add_option("--context-len", o.context_len)->capture_default_str();
    rec->add_option("--vocab-size", o.vocab_size)->capture_default_str();
    rec->add_option("--senses", o.senses)->capture_default_str();
    rec->add_option("--out", o.out)->capture_default_str();
  }

  auto* exp = app.add_subcommand("experiment", "Run the WiC or SWORDS overlap experiment");
  {
    auto& o = reg.add<ExperimentCliOptions>("experiment", run_experiment);
    exp->add_option("kind", o.kind, "wic or swords")->required()->check(CLI::IsMember({"wic", "swords"}));
    exp->add_option("--records", o.records)->required();
    exp->add_option("--traces", o.traces)->required();
    exp->add_option("--span-policy", o.span_policy, "last-token or mean-over-span")->capture_default_str();
    exp->add_option("--out", o.out, "Layer-wise report CSV")->capture_default_str();
    exp->add_option("--diffs", o.diffs, "Paired differences CSV");
    exp->add_option("--diffs-layer", o.diffs_layer, "Differences at one layer instead of the layer mean");
    exp->add_option("--summary", o.summary, "Treatment-effect JSON");
  }

  auto* st = app.add_subcommand("stats", "Significance test on paired differences");
  {
    auto& o = reg.add<StatsOptions>("stats", run_stats);
    st->add_option("--diffs", o.diffs)->required();
    st->add_option("--method", o.method, "t or perm")->capture_default_str();
    st->add_option("--alpha", o.alpha)->capture_default_str();
    st->add_flag("--two-sided", o.two_sided);
    st->add_option("--resamples", o.resamples)->capture_default_str();
    st->add_option("--exact-max-n", o.exact_max_n)->capture_default_str();
    st->add_option("--out", o.out, "Also write the result line here");
  }

  auto* sa = app.add_subcommand("sae", "Train a sparse autoencoder on recorded activations");
  {
    auto& o = reg.add<SaeOptions>("sae", run_sae);
    sa->add_option("--traces", o.traces)->required();
    sa->add_option("--layer", o.layer)->capture_default_str();
    sa->add_option("--width", o.width)->capture_default_str();
    sa->add_option("--lambda", o.lambda)->capture_default_str();
    sa->add_option("--steps", o.steps)->capture_default_str();
    sa->add_option("--batch", o.batch)->capture_default_str();
    sa->add_option("--lr", o.lr)->capture_default_str();
    sa->add_option("--reset-interval", o.reset_interval)->capture_default_str();
    sa->add_option("--dead-window", o.dead_window)->capture_default_str();
    sa->add_option("--log-interval", o.log_interval)->capture_default_str();
    sa->add_option("--out", o.out, "Checkpoint JSON")->capture_default_str();
    sa->add_option("--log", o.log, "Training log CSV");
  }

  auto* at = app.add_subcommand("atlas", "Token and expert atlas for one SAE feature");
  {
    auto& o = reg.add<AtlasCliOptions>("atlas", run_atlas);
    at->add_option("--checkpoint", o.checkpoint)->required();
    at->add_option("--traces", o.traces)->required();
    at->add_option("--layer", o.layer)->capture_default_str();
    at->add_option("--feature", o.feature);
    at->add_option("--token", o.token, "Use the feature most active on this token");
    at->add_option("--top-m", o.top_m)->capture_default_str();
    at->add_option("--top-experts", o.top_experts)->capture_default_str();
    at->add_option("--mark-fraction", o.mark_fraction)->capture_default_str();
    at->add_option("--aggregate", o.aggregate, "instances or types")->capture_default_str();
    at->add_option("--out", o.out)->capture_default_str();
  }

  auto* pl = app.add_subcommand("plotdata", "Per-layer two-series CSV from a report");
  {
    auto& o = reg.add<PlotOptions>("plotdata", run_plotdata);
    pl->add_option("--report", o.report)->required();
    pl->add_option("--value", o.value, "mean_score or mean_o")->capture_default_str();
    pl->add_option("--out", o.out)->capture_default_str();
  }

  auto* im = app.add_subcommand("import", "Convert WiC TSV or SWORDS JSON into records");
  {
    auto& o = reg.add<ImportOptions>("import", run_import);
    im->add_option("kind", o.kind, "wic or swords")->required()->check(CLI::IsMember({"wic", "swords"}));
    im->add_option("--rows", o.rows, "WiC data TSV");
    im->add_option("--labels", o.labels, "WiC gold labels");
    im->add_option("--offset-mode", o.offset_mode, "word_index or char_range")->capture_default_str();
    im->add_option("--col-target", o.col_target)->capture_default_str();
    im->add_option("--col-offsets", o.col_offsets)->capture_default_str();
    im->add_option("--col-a", o.col_a)->capture_default_str();
    im->add_option("--col-b", o.col_b)->capture_default_str();
    im->add_option("--input", o.input, "SWORDS JSON");
    im->add_option("--equivalent-threshold", o.equivalent_threshold)->capture_default_str();
    im->add_option("--different-threshold", o.different_threshold)->capture_default_str();
    im->add_option("--out", o.out)->capture_default_str();
    im->add_option("--skipped", o.skipped, "Skipped-entry log JSONL");
  }

  auto* rd = app.add_subcommand("render", "Render the probing prompts for each record side");
  {
    auto& o = reg.add<RenderOptions>("render", run_render);
    rd->add_option("--records", o.records)->required();
    rd->add_option("--prompt-mode", o.prompt_mode)->capture_default_str();
    rd->add_option("--out", o.out)->capture_default_str();
  }

  std::string manifest_file;
  auto* rp = app.add_subcommand("replay", "Re-run a manifest and compare output digests");
  rp->add_option("--manifest", manifest_file)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  const int n_threads =
      threads > 0 ? threads : std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
  try {
    if (rp->parsed()) {
      const bool explicit_dir = app.get_option("--out-dir")->count() > 0;
      return replay(reg, manifest_file, explicit_dir ? out_dir : "", n_threads);
    }
    const std::string name = app.get_subcommands().front()->get_name();
    RunContext ctx;
    ctx.out_dir = out_dir;
    ctx.seed = seed;
    ctx.threads = n_threads;
    const auto* config_opt = app.get_config_ptr();
    const std::string config_file = config_opt->count() > 0 ? config_opt->as<std::string>() : "";
    execute(name, *reg.commands.at(name), ctx, config_file);
    return 0;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
