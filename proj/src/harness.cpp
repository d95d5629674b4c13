#include "nbs/harness.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "nbs/errors.h"
#include "nbs/uai.h"

namespace nbs {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::vector<VariableId> all_or(std::span<const VariableId> vars, std::size_t n) {
  if (!vars.empty()) return {vars.begin(), vars.end()};
  std::vector<VariableId> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<VariableId>(i);
  return out;
}

bool file_exists(const std::string& path) {
  std::error_code ec;
  return fs::is_regular_file(path, ec);
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory '" + dir + "': " + ec.message());
}

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

json stats_json(const MoveStats& s) {
  return {{"proposed", s.proposed},
          {"accepted", s.accepted},
          {"flagged", s.flagged},
          {"acceptance_rate", s.acceptance_rate()}};
}

SamplerKind sampler_from(const ConfigReader& r, const std::string& key, const std::string& name) {
  try {
    return parse_sampler_kind(name);
  } catch (const ConfigError& e) {
    r.fail(key, e.what());
  }
}

CptDistribution cpt_from(const ConfigReader& r, const CptDistribution& base) {
  CptDistribution d = base;
  d.p_determ = r.get_double("p_determ", base.p_determ);
  d.alpha = r.get_doubles("alpha", base.alpha);
  if (!(d.p_determ >= 0.0 && d.p_determ <= 1.0)) r.fail("p_determ", "must lie in [0, 1]");
  if (d.alpha.size() < 2) r.fail("alpha", "needs at least two entries");
  for (double a : d.alpha) {
    if (!(a > 0.0)) r.fail("alpha", "entries must be positive");
  }
  return d;
}

}  // namespace

double marginal_error(const MarginalTable& est, const MarginalTable& truth,
                      std::span<const VariableId> vars) {
  if (est.size() != truth.size()) {
    throw PreconditionError("marginal tables cover different variable sets");
  }
  const auto ids = all_or(vars, truth.size());
  if (ids.empty()) return 0.0;
  double total = 0.0;
  for (VariableId v : ids) {
    if (v >= truth.size()) throw PreconditionError("variable " + std::to_string(v) + " out of range");
    const auto& p = est[v];
    const auto& t = truth[v];
    if (p.size() != t.size()) {
      throw PreconditionError("variable " + std::to_string(v) + " has mismatched cardinalities");
    }
    if (t.size() == 2) {
      total += std::abs(p[1] - t[1]);
    } else {
      double tv = 0.0;
      for (std::size_t s = 0; s < t.size(); ++s) tv += std::abs(p[s] - t[s]);
      total += 0.5 * tv;
    }
  }
  return std::clamp(total / static_cast<double>(ids.size()), 0.0, 1.0);
}

bool has_multistate(const MarginalTable& truth, std::span<const VariableId> vars) {
  for (VariableId v : all_or(vars, truth.size())) {
    if (truth[v].size() > 2) return true;
  }
  return false;
}

double error_integral(std::span<const ErrorPoint> series, IntegralAxis axis, double cap) {
  if (series.empty()) throw PreconditionError("empty error series");
  const auto x_of = [axis](const ErrorPoint& p) {
    return axis == IntegralAxis::epochs ? static_cast<double>(p.epoch)
                                        : static_cast<double>(p.wall_ns) * 1e-9;
  };
  if (cap < x_of(series.front())) throw PreconditionError("integral cap lies before the first sample");
  double area = 0.0;
  for (std::size_t i = 1; i < series.size(); ++i) {
    const double x0 = x_of(series[i - 1]);
    const double x1 = x_of(series[i]);
    const double y0 = series[i - 1].error;
    const double y1 = series[i].error;
    if (x1 <= cap) {
      area += 0.5 * (y0 + y1) * (x1 - x0);
      continue;
    }
    if (x1 > x0) {
      const double yc = y0 + (y1 - y0) * (cap - x0) / (x1 - x0);
      area += 0.5 * (y0 + yc) * (cap - x0);
    }
    break;
  }
  return area;
}

ConfigReader::ConfigReader(const nlohmann::json& node, std::string source, std::string path)
    : node_(&node), source_(std::move(source)), path_(std::move(path)) {}

std::string ConfigReader::where(const std::string& key) const {
  return source_ + ": " + (key.empty() ? path_ : path_ + "." + key);
}

void ConfigReader::fail(const std::string& key, const std::string& problem) const {
  throw ConfigError(where(key) + ": " + problem);
}

bool ConfigReader::has(const std::string& key) const {
  return node_->is_object() && node_->contains(key) && !(*node_)[key].is_null();
}

const nlohmann::json& ConfigReader::field(const std::string& key) const {
  if (!node_->is_object()) fail("", "expected an object");
  const auto it = node_->find(key);
  if (it == node_->end()) fail(key, "missing required field");
  return *it;
}

ConfigReader ConfigReader::child(const std::string& key) const {
  return ConfigReader(field(key), source_, path_ + "." + key);
}

ConfigReader ConfigReader::element(std::size_t i) const {
  if (!node_->is_array() || i >= node_->size()) fail("", "expected an array with element " + std::to_string(i));
  return ConfigReader((*node_)[i], source_, path_ + "[" + std::to_string(i) + "]");
}

std::size_t ConfigReader::size() const { return node_->size(); }

std::vector<std::string> ConfigReader::keys() const {
  std::vector<std::string> out;
  if (node_->is_object()) {
    for (auto it = node_->begin(); it != node_->end(); ++it) out.push_back(it.key());
  }
  return out;
}

std::string ConfigReader::get_string(const std::string& key, std::optional<std::string> fallback) const {
  if (!has(key)) {
    if (fallback) return *fallback;
    field(key);
  }
  const auto& f = field(key);
  if (!f.is_string()) fail(key, "expected a string");
  return f.get<std::string>();
}

double ConfigReader::get_double(const std::string& key, std::optional<double> fallback) const {
  if (!has(key)) {
    if (fallback) return *fallback;
    field(key);
  }
  const auto& f = field(key);
  if (!f.is_number()) fail(key, "expected a number");
  const double v = f.get<double>();
  if (!std::isfinite(v)) fail(key, "expected a finite number");
  return v;
}

long long ConfigReader::get_int(const std::string& key, std::optional<long long> fallback) const {
  if (!has(key)) {
    if (fallback) return *fallback;
    field(key);
  }
  const auto& f = field(key);
  if (!f.is_number_integer()) fail(key, "expected an integer");
  return f.get<long long>();
}

std::uint64_t ConfigReader::get_uint(const std::string& key, std::optional<std::uint64_t> fallback) const {
  if (!has(key)) {
    if (fallback) return *fallback;
    field(key);
  }
  const auto& f = field(key);
  if (!f.is_number_integer() || f.get<long long>() < 0) fail(key, "expected a non-negative integer");
  return f.get<std::uint64_t>();
}

bool ConfigReader::get_bool(const std::string& key, std::optional<bool> fallback) const {
  if (!has(key)) {
    if (fallback) return *fallback;
    field(key);
  }
  const auto& f = field(key);
  if (!f.is_boolean()) fail(key, "expected true or false");
  return f.get<bool>();
}

std::vector<double> ConfigReader::get_doubles(const std::string& key,
                                              std::optional<std::vector<double>> fallback) const {
  if (!has(key)) {
    if (fallback) return *fallback;
    field(key);
  }
  const auto& f = field(key);
  if (!f.is_array()) fail(key, "expected an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (!f[i].is_number()) fail(key + "[" + std::to_string(i) + "]", "expected a number");
    out.push_back(f[i].get<double>());
  }
  return out;
}

std::vector<std::uint64_t> ConfigReader::get_uints(const std::string& key,
                                                   std::optional<std::vector<std::uint64_t>> fallback) const {
  if (!has(key)) {
    if (fallback) return *fallback;
    field(key);
  }
  const auto& f = field(key);
  if (!f.is_array()) fail(key, "expected an array of non-negative integers");
  std::vector<std::uint64_t> out;
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (!f[i].is_number_integer() || f[i].get<long long>() < 0) fail(key + "[" + std::to_string(i) + "]", "expected a non-negative integer");
    out.push_back(f[i].get<std::uint64_t>());
  }
  return out;
}

std::vector<std::string> ConfigReader::get_strings(const std::string& key,
                                                   std::optional<std::vector<std::string>> fallback) const {
  if (!has(key)) {
    if (fallback) return *fallback;
    field(key);
  }
  const auto& f = field(key);
  if (f.is_string()) return {f.get<std::string>()};
  if (!f.is_array()) fail(key, "expected an array of strings");
  std::vector<std::string> out;
  for (std::size_t i = 0; i < f.size(); ++i) {
    if (!f[i].is_string()) fail(key + "[" + std::to_string(i) + "]", "expected a string");
    out.push_back(f[i].get<std::string>());
  }
  return out;
}

void ConfigReader::only(std::initializer_list<const char*> allowed) const {
  if (!node_->is_object()) fail("", "expected an object");
  for (const auto& k : keys()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; })) {
      fail(k, "unknown field");
    }
  }
}

nlohmann::json read_json_file(const std::string& path) {
  const std::string text = read_text_file(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path + ": invalid JSON at byte " + std::to_string(e.byte) + ": " + e.what());
  }
}

GeneratorSpec GeneratorSpec::from_config(const ConfigReader& r) {
  r.only({"kind", "rows", "cols", "length", "cardinality", "span", "p_determ", "alpha",
          "log_scale", "seed"});
  GeneratorSpec g;
  g.kind = r.get_string("kind", g.kind);
  if (g.kind != "grid" && g.kind != "pairwise-chain" && g.kind != "directed-chain") {
    r.fail("kind", "expected grid, pairwise-chain or directed-chain");
  }
  g.rows = static_cast<int>(r.get_int("rows", g.rows));
  g.cols = static_cast<int>(r.get_int("cols", g.cols));
  g.length = static_cast<int>(r.get_int("length", g.length));
  g.cardinality = static_cast<int>(r.get_int("cardinality", g.cardinality));
  g.span = static_cast<int>(r.get_int("span", g.span));
  g.cpt = cpt_from(r, g.cpt);
  g.potential.log_scale = r.get_double("log_scale", g.potential.log_scale);
  g.seed = r.get_uint("seed", g.seed);
  if (g.rows < 1 || g.cols < 1) r.fail("rows", "grid dimensions must be positive");
  if (g.length < 1) r.fail("length", "must be positive");
  if (g.cardinality < 2) r.fail("cardinality", "must be at least 2");
  if (g.span < 1) r.fail("span", "must be positive");
  if (g.kind == "grid" && g.cardinality != 2) r.fail("cardinality", "grids are binary");
  if (g.cpt.alpha.size() != static_cast<std::size_t>(g.cardinality)) {
    if (r.has("alpha")) r.fail("alpha", "needs one entry per state");
    g.cpt.alpha.assign(static_cast<std::size_t>(g.cardinality), g.cpt.alpha.front());
  }
  return g;
}

nlohmann::json GeneratorSpec::to_json() const {
  return {{"kind", kind},       {"rows", rows},         {"cols", cols},
          {"length", length},   {"cardinality", cardinality}, {"span", span},
          {"p_determ", cpt.p_determ}, {"alpha", cpt.alpha}, {"log_scale", potential.log_scale},
          {"seed", seed}};
}

DiscreteModel generate_model(const GeneratorSpec& spec) {
  Rng rng(spec.seed, 0);
  if (spec.kind == "grid") return random_grid(spec.rows, spec.cols, spec.cpt, rng);
  if (spec.kind == "pairwise-chain") {
    return random_pairwise_chain(spec.length, spec.cardinality, spec.potential, rng);
  }
  if (spec.kind == "directed-chain") {
    return random_directed_chain(spec.length, spec.cardinality, spec.span, spec.cpt, rng);
  }
  throw ConfigError("unknown generator kind '" + spec.kind + "'");
}

std::optional<GridLayout> generated_layout(const GeneratorSpec& spec) {
  if (spec.kind != "grid") return std::nullopt;
  return GridLayout::dense(spec.rows, spec.cols);
}

PartialAssignment resolve_evidence(const EvidenceSpec& spec, const DiscreteModel& model) {
  PartialAssignment out;
  if (!spec.file.empty()) out = read_evidence_file(spec.file);
  if (spec.random_count > 0) {
    Rng rng(spec.seed, 1);
    for (const auto& [v, s] : random_evidence(model, spec.random_count, rng)) out[v] = s;
  }
  for (const auto& [v, s] : spec.fixed) out[v] = s;
  model.check_partial(out);
  return out;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& doc, const std::string& source) {
  const ConfigReader r(doc, source);
  r.only({"model", "evidence", "truth", "samplers", "mix_ratio", "epochs", "wall_cap_secs", "seeds",
          "motifs", "proposals", "virtual_boundary", "eval_every", "epoch_cap", "time_cap_secs",
          "burn_in", "record_moves", "out_dir"});
  ExperimentConfig c;
  c.source = source;
  const ConfigReader m = r.child("model");
  m.only({"file", "generator"});
  if (m.has("file") == m.has("generator")) m.fail("", "give exactly one of file or generator");
  if (m.has("file")) {
    c.model_file = m.get_string("file");
  } else {
    c.generator = GeneratorSpec::from_config(m.child("generator"));
  }
  if (r.has("evidence")) {
    const ConfigReader e = r.child("evidence");
    e.only({"file", "random", "seed", "assign"});
    c.evidence.file = e.get_string("file", "");
    const long long count = e.get_int("random", 0);
    if (count < 0) e.fail("random", "must be non-negative");
    c.evidence.random_count = static_cast<std::size_t>(count);
    c.evidence.seed = e.get_uint("seed", 0);
    if (e.has("assign")) {
      const ConfigReader a = e.child("assign");
      if (!a.is_object()) a.fail("", "expected an object of variable -> state");
      for (const auto& key : a.keys()) {
        char* end = nullptr;
        const unsigned long v = std::strtoul(key.c_str(), &end, 10);
        if (key.empty() || *end != '\0') a.fail(key, "variable ids must be integers");
        const long long s = a.get_int(key);
        if (s < 0) a.fail(key, "states must be non-negative");
        c.evidence.fixed[static_cast<VariableId>(v)] = static_cast<int>(s);
      }
    }
  }
  c.truth_file = r.get_string("truth", "");
  c.samplers.clear();
  const auto names = r.get_strings("samplers", std::vector<std::string>{"gibbs"});
  for (std::size_t i = 0; i < names.size(); ++i) {
    c.samplers.push_back(sampler_from(r, "samplers[" + std::to_string(i) + "]", names[i]));
  }
  c.mix_ratio = r.get_double("mix_ratio", c.mix_ratio);
  if (!(c.mix_ratio >= 0.0 && c.mix_ratio <= 1.0)) r.fail("mix_ratio", "must lie in [0, 1]");
  c.epochs = r.get_int("epochs", c.epochs);
  if (c.epochs < 0) r.fail("epochs", "must be non-negative");
  c.wall_cap_secs = r.get_double("wall_cap_secs", c.wall_cap_secs);
  if (c.wall_cap_secs < 0.0) r.fail("wall_cap_secs", "must be non-negative");
  c.seeds = r.get_uints("seeds", c.seeds);
  if (c.seeds.empty()) r.fail("seeds", "needs at least one seed");
  c.motifs = r.get_strings("motifs", std::vector<std::string>{});
  for (std::size_t i = 0; i < c.motifs.size(); ++i) {
    try {
      motif_by_name(c.motifs[i]);
    } catch (const ConfigError& e) {
      r.fail("motifs[" + std::to_string(i) + "]", e.what());
    }
  }
  if (r.has("proposals")) {
    const ConfigReader p = r.child("proposals");
    if (!p.is_object()) p.fail("", "expected an object of motif name -> params file");
    for (const auto& key : p.keys()) {
      c.proposals[key] = p.get_string(key);
      if (std::find(c.motifs.begin(), c.motifs.end(), key) == c.motifs.end()) c.motifs.push_back(key);
    }
  }
  c.virtual_boundary = r.get_bool("virtual_boundary", c.virtual_boundary);
  c.eval_every = r.get_int("eval_every", c.eval_every);
  if (c.eval_every < 1) r.fail("eval_every", "must be positive");
  c.epoch_cap = r.get_double("epoch_cap", c.epoch_cap);
  c.time_cap_secs = r.get_double("time_cap_secs", c.time_cap_secs);
  if (c.epoch_cap < 0.0) r.fail("epoch_cap", "must be non-negative");
  if (c.time_cap_secs < 0.0) r.fail("time_cap_secs", "must be non-negative");
  c.burn_in = r.get_double("burn_in", c.burn_in);
  if (!(c.burn_in >= 0.0 && c.burn_in < 1.0)) r.fail("burn_in", "must lie in [0, 1)");
  c.record_moves = r.get_bool("record_moves", c.record_moves);
  c.out_dir = r.get_string("out_dir", c.out_dir);
  return c;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  return from_json(read_json_file(path), path);
}

nlohmann::json ExperimentConfig::to_json() const {
  json j;
  if (generator) {
    j["model"] = {{"generator", generator->to_json()}};
  } else {
    j["model"] = {{"file", model_file}};
  }
  json assign = json::object();
  for (const auto& [v, s] : evidence.fixed) assign[std::to_string(v)] = s;
  j["evidence"] = {{"file", evidence.file},
                   {"random", evidence.random_count},
                   {"seed", evidence.seed},
                   {"assign", assign}};
  j["truth"] = truth_file;
  json samplers_json = json::array();
  for (SamplerKind k : samplers) samplers_json.push_back(sampler_kind_name(k));
  j["samplers"] = samplers_json;
  j["mix_ratio"] = mix_ratio;
  j["epochs"] = epochs;
  j["wall_cap_secs"] = wall_cap_secs;
  j["seeds"] = seeds;
  j["motifs"] = motifs;
  j["proposals"] = proposals;
  j["virtual_boundary"] = virtual_boundary;
  j["eval_every"] = eval_every;
  j["epoch_cap"] = epoch_cap;
  j["time_cap_secs"] = time_cap_secs;
  j["burn_in"] = burn_in;
  j["record_moves"] = record_moves;
  j["out_dir"] = out_dir;
  return j;
}

void ExperimentConfig::validate() const {
  const ConfigReader r(json::object(), source);
  if (!generator && !file_exists(model_file)) r.fail("model.file", "file '" + model_file + "' does not exist");
  if (!evidence.file.empty() && !file_exists(evidence.file)) {
    r.fail("evidence.file", "file '" + evidence.file + "' does not exist");
  }
  if (!truth_file.empty() && !file_exists(truth_file)) r.fail("truth", "file '" + truth_file + "' does not exist");
  for (const auto& [name, path] : proposals) {
    if (!file_exists(path)) r.fail("proposals." + name, "file '" + path + "' does not exist");
  }
  if (epochs == 0 && wall_cap_secs == 0.0) r.fail("epochs", "give epochs or a wall-clock cap");
  for (SamplerKind k : samplers) {
    if (k == SamplerKind::gibbs) continue;
    if (motifs.empty()) r.fail("motifs", std::string("sampler '") + sampler_kind_name(k) + "' needs motifs");
    if (k == SamplerKind::block_exact) continue;
    for (const auto& name : motifs) {
      if (!proposals.count(name)) {
        r.fail("proposals", std::string("sampler '") + sampler_kind_name(k) +
                                "' needs trained params for motif '" + name + "'");
      }
    }
  }
}

LoadedExperiment load_experiment(const ExperimentConfig& config) {
  config.validate();
  LoadedExperiment x;
  if (config.generator) {
    x.model = generate_model(*config.generator);
    x.layout = generated_layout(*config.generator);
  } else {
    x.model = read_uai_file(config.model_file);
  }
  x.evidence = resolve_evidence(config.evidence, x.model);
  if (!config.truth_file.empty()) {
    x.truth = parse_mar(read_text_file(config.truth_file));
    if (x.truth.size() != x.model.num_variables()) {
      throw ConfigError(config.source + ": $.truth: marginals cover " + std::to_string(x.truth.size()) +
                        " variables, the model has " + std::to_string(x.model.num_variables()));
    }
  } else {
    x.truth = variable_elimination_marginals(x.model, x.evidence);
  }
  for (const auto& name : config.motifs) x.motifs.push_back(motif_by_name(name));
  for (const auto& [name, path] : config.proposals) {
    x.library.add(motif_by_name(name), std::make_shared<const MdnParams>(load_params(path)));
  }
  return x;
}

RunResult run_with_error_series(const DiscreteModel& model, const PartialAssignment& evidence,
                                const MarginalTable& truth, const ProposalLibrary& library,
                                std::span<const Motif> motifs, const std::optional<GridLayout>& layout,
                                const RunSpec& spec) {
  if (spec.eval_every < 1) throw PreconditionError("eval_every must be positive");
  DetectOptions detect;
  detect.virtual_boundary = spec.virtual_boundary;
  detect.layout = layout;
  const double ratio = spec.sampler == SamplerKind::mixed ? spec.mix_ratio : 1.0;
  const SamplerSchedule schedule = build_schedule(model, evidence, motifs, spec.sampler, ratio, detect);

  RunResult out;
  out.spec = spec;
  out.blocks = schedule.instantiations.size();
  const std::vector<VariableId>& latent = schedule.latent;
  InferenceOptions opts;
  opts.epochs = spec.epochs;
  opts.wall_cap_secs = spec.wall_cap_secs;
  opts.record_moves = spec.record_moves;
  opts.on_epoch = [&](const EpochInfo& info) {
    if (info.epoch == 1) {
      MarginalTable first;
      first.probs.resize(info.trace->cardinalities.size());
      for (std::size_t v = 0; v < first.probs.size(); ++v) {
        first.probs[v].assign(static_cast<std::size_t>(info.trace->cardinalities[v]), 0.0);
        first.probs[v][static_cast<std::size_t>(info.trace->initial_state[v])] = 1.0;
      }
      out.series.push_back({0, 0, marginal_error(first, truth, latent)});
    }
    if (info.epoch % spec.eval_every == 0) {
      out.series.push_back({info.epoch, info.wall_ns,
                            marginal_error(info.trace->current_marginals(), truth, latent)});
    }
  };
  out.trace = run_inference(model, evidence, library, schedule, Rng(spec.seed, 0), opts);
  out.estimate = out.trace.current_marginals();
  out.final_error = marginal_error(out.estimate, truth, latent);
  if (out.series.empty()) {
    out.series.push_back({0, 0, out.final_error});
  } else if (out.series.back().epoch != out.trace.epochs) {
    out.series.push_back({out.trace.epochs, out.trace.wall_ns, out.final_error});
  }
  return out;
}

RunSummary summarize_run(const RunResult& run, double epoch_cap, double time_cap_secs) {
  RunSummary s;
  s.sampler = sampler_kind_name(run.spec.sampler);
  s.seed = run.spec.seed;
  s.mix_ratio = run.spec.sampler == SamplerKind::mixed ? run.spec.mix_ratio : 1.0;
  if (run.spec.sampler == SamplerKind::gibbs) s.mix_ratio = 0.0;
  s.epochs = run.trace.epochs;
  s.wall_ns = run.trace.wall_ns;
  s.blocks = run.blocks;
  s.final_error = run.final_error;
  s.epoch_integral = error_integral(run.series, IntegralAxis::epochs,
                                    epoch_cap > 0.0 ? epoch_cap : static_cast<double>(run.trace.epochs));
  s.time_integral = error_integral(run.series, IntegralAxis::time,
                                   time_cap_secs > 0.0 ? time_cap_secs
                                                       : static_cast<double>(run.trace.wall_ns) * 1e-9);
  s.single = run.trace.single;
  s.neural = run.trace.neural;
  s.exact_block = run.trace.exact_block;
  s.series = run.series;
  return s;
}

std::string series_csv(std::span<const ErrorPoint> series) {
  std::string out = "epoch,wall_ns,marginal_error\n";
  char buf[96];
  for (const auto& p : series) {
    std::snprintf(buf, sizeof(buf), "%lld,%lld,%.17g\n", p.epoch, static_cast<long long>(p.wall_ns), p.error);
    out += buf;
  }
  return out;
}

nlohmann::json EvalReport::to_json(bool include_timing) const {
  json j;
  j["config"] = config;
  j["multistate_error"] = multistate;
  j["error_metric"] = multistate ? "mean total variation per variable" : "mean absolute deviation of P(X=1)";
  j["epoch_cap"] = epoch_cap;
  if (include_timing) j["time_cap_secs"] = time_cap_secs;
  json runs_json = json::array();
  for (const auto& r : runs) {
    json x = {{"sampler", r.sampler},
              {"seed", r.seed},
              {"mix_ratio", r.mix_ratio},
              {"epochs", r.epochs},
              {"blocks", r.blocks},
              {"final_error", r.final_error},
              {"epoch_integral", r.epoch_integral},
              {"acceptance",
               {{"single", stats_json(r.single)},
                {"neural", stats_json(r.neural)},
                {"exact_block", stats_json(r.exact_block)}}}};
    if (include_timing) {
      x["wall_ns"] = r.wall_ns;
      x["time_integral"] = r.time_integral;
    }
    runs_json.push_back(std::move(x));
  }
  j["runs"] = runs_json;
  return j;
}

EvalReport run_experiment(const ExperimentConfig& config) {
  const LoadedExperiment x = load_experiment(config);
  ensure_dir(config.out_dir);
  std::vector<VariableId> latent;
  for (std::size_t v = 0; v < x.model.num_variables(); ++v) {
    if (!x.evidence.count(static_cast<VariableId>(v))) latent.push_back(static_cast<VariableId>(v));
  }
  EvalReport report;
  report.config = config.to_json();
  report.multistate = has_multistate(x.truth, latent);
  report.epoch_cap = config.epoch_cap;
  report.time_cap_secs = config.time_cap_secs > 0.0 ? config.time_cap_secs : config.wall_cap_secs;
  if (config.truth_file.empty()) write_text_file(join(config.out_dir, "truth.MAR"), serialize_mar(x.truth));

  for (SamplerKind kind : config.samplers) {
    for (std::uint64_t seed : config.seeds) {
      RunSpec spec;
      spec.sampler = kind;
      spec.mix_ratio = config.mix_ratio;
      spec.seed = seed;
      spec.epochs = config.epochs > 0 ? config.epochs : std::numeric_limits<long long>::max();
      spec.wall_cap_secs = config.wall_cap_secs;
      spec.eval_every = config.eval_every;
      spec.record_moves = config.record_moves;
      spec.virtual_boundary = config.virtual_boundary;
      RunResult run = run_with_error_series(x.model, x.evidence, x.truth, x.library, x.motifs, x.layout, spec);
      if (config.burn_in > 0.0) {
        run.estimate = estimate_marginals(run.trace, config.burn_in);
        run.final_error = marginal_error(run.estimate, x.truth, latent);
      }
      const std::string stem = std::string(sampler_kind_name(kind)) + "_seed" + std::to_string(seed);
      write_text_file(join(config.out_dir, stem + ".series.csv"), series_csv(run.series));
      write_text_file(join(config.out_dir, stem + ".MAR"), serialize_mar(run.estimate));
      if (config.record_moves) write_text_file(join(config.out_dir, stem + ".moves.csv"), run.trace.moves_csv());
      report.runs.push_back(summarize_run(run, config.epoch_cap, report.time_cap_secs));
    }
  }
  write_text_file(join(config.out_dir, "report.json"), report.to_json(false).dump(2) + "\n");
  write_text_file(join(config.out_dir, "timing.json"), report.to_json(true).dump(2) + "\n");
  return report;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& doc, const std::string& source) {
  const ConfigReader r(doc, source);
  r.only({"motif", "p_determ", "alpha", "log_scale", "lambda", "optimizer", "seed", "eval_every",
          "eval_instantiations", "gmm", "out"});
  TrainConfig c;
  c.source = source;
  c.motif = r.get_string("motif", c.motif);
  Motif motif;
  try {
    motif = motif_by_name(c.motif);
  } catch (const ConfigError& e) {
    r.fail("motif", e.what());
  }
  c.cpt = cpt_from(r, c.cpt);
  const int card = motif.b_cards.empty() ? 2 : motif.b_cards.front();
  if (c.cpt.alpha.size() != static_cast<std::size_t>(card)) {
    if (r.has("alpha")) r.fail("alpha", "needs one entry per state of the motif's variables");
    c.cpt.alpha.assign(static_cast<std::size_t>(card), c.cpt.alpha.front());
  }
  c.potential.log_scale = r.get_double("log_scale", c.potential.log_scale);
  c.lambda = r.get_double("lambda", c.lambda);
  if (!(c.lambda > 0.0)) r.fail("lambda", "must be positive");
  if (r.has("optimizer")) {
    const ConfigReader o = r.child("optimizer");
    o.only({"kind", "learning_rate", "beta1", "beta2", "epsilon", "batch_size", "steps",
            "divergence_threshold", "final_lr_fraction"});
    const std::string kind = o.get_string("kind", "adam");
    if (kind == "adam") {
      c.optimizer.kind = OptimizerConfig::Kind::adam;
    } else if (kind == "sgd") {
      c.optimizer.kind = OptimizerConfig::Kind::sgd;
    } else {
      o.fail("kind", "expected adam or sgd");
    }
    c.optimizer.learning_rate = o.get_double("learning_rate", c.optimizer.learning_rate);
    c.optimizer.beta1 = o.get_double("beta1", c.optimizer.beta1);
    c.optimizer.beta2 = o.get_double("beta2", c.optimizer.beta2);
    c.optimizer.epsilon = o.get_double("epsilon", c.optimizer.epsilon);
    c.optimizer.batch_size = o.get_uint("batch_size", c.optimizer.batch_size);
    c.optimizer.steps = o.get_uint("steps", c.optimizer.steps);
    c.optimizer.divergence_threshold = o.get_double("divergence_threshold", c.optimizer.divergence_threshold);
    c.optimizer.final_lr_fraction = o.get_double("final_lr_fraction", c.optimizer.final_lr_fraction);
    if (!(c.optimizer.final_lr_fraction >= 0.0 && c.optimizer.final_lr_fraction <= 1.0)) {
      o.fail("final_lr_fraction", "must lie in [0, 1]");
    }
    if (c.optimizer.learning_rate < 0.0) o.fail("learning_rate", "must be non-negative");
    if (c.optimizer.batch_size == 0) o.fail("batch_size", "must be positive");
  }
  c.seed = r.get_uint("seed", c.seed);
  c.eval_every = r.get_uint("eval_every", c.eval_every);
  c.eval_instantiations = r.get_uint("eval_instantiations", c.eval_instantiations);
  if (r.has("gmm")) {
    const ConfigReader g = r.child("gmm");
    g.only({"m", "n", "sigma2_mu", "sigma2", "d"});
    c.gmm.m = static_cast<int>(g.get_int("m", c.gmm.m));
    c.gmm.n = static_cast<int>(g.get_int("n", c.gmm.n));
    c.gmm.sigma2_mu = g.get_double("sigma2_mu", c.gmm.sigma2_mu);
    c.gmm.sigma2 = g.get_double("sigma2", c.gmm.sigma2);
    c.gmm.d = static_cast<int>(g.get_int("d", c.gmm.d));
    try {
      c.gmm.validate();
    } catch (const ConfigError& e) {
      g.fail("", e.what());
    }
  }
  c.out = r.get_string("out", c.out);
  return c;
}

nlohmann::json TrainConfig::to_json() const {
  return {{"motif", motif},
          {"p_determ", cpt.p_determ},
          {"alpha", cpt.alpha},
          {"log_scale", potential.log_scale},
          {"lambda", lambda},
          {"optimizer",
           {{"kind", optimizer.kind == OptimizerConfig::Kind::adam ? "adam" : "sgd"},
            {"learning_rate", optimizer.learning_rate},
            {"beta1", optimizer.beta1},
            {"beta2", optimizer.beta2},
            {"epsilon", optimizer.epsilon},
            {"batch_size", optimizer.batch_size},
            {"steps", optimizer.steps},
            {"divergence_threshold", optimizer.divergence_threshold},
            {"final_lr_fraction", optimizer.final_lr_fraction}}},
          {"seed", seed},
          {"eval_every", eval_every},
          {"eval_instantiations", eval_instantiations},
          {"gmm",
           {{"m", gmm.m}, {"n", gmm.n}, {"sigma2_mu", gmm.sigma2_mu}, {"sigma2", gmm.sigma2}, {"d", gmm.d}}},
          {"out", out}};
}

TrainJob make_train_job(const TrainConfig& config) {
  TrainJob job;
  job.dist.motif = motif_by_name(config.motif);
  job.dist.cpt = config.cpt;
  job.dist.potential = config.potential;
  job.config = job.dist.motif.mdn_config(config.lambda);
  job.optimizer = config.optimizer;
  job.seed = config.seed;
  job.eval_every = config.eval_every;
  job.eval_instantiations = config.eval_instantiations;
  return job;
}

void run_train(const TrainConfig& config) {
  const fs::path parent = fs::path(config.out).parent_path();
  if (!parent.empty()) ensure_dir(parent.string());
  if (motif_by_name(config.motif).kind == MotifKind::gmm_pair) {
    GmmTrainingJob job;
    job.spec = config.gmm;
    const Motif motif = gmm_motif(config.gmm);
    job.config = MdnConfig::sized(motif.input_dim, motif.heads, motif.n_mixtures, motif.encoding, config.lambda);
    job.optimizer = config.optimizer;
    job.seed = config.seed;
    std::vector<double> losses;
    const MdnParams params = train_gmm_proposal(job, &losses);
    save_params(config.out, params);
    json j = config.to_json();
    j["encoding"] = motif.encoding;
    j["samples"] = config.optimizer.steps * config.optimizer.batch_size;
    j["loss_curve"] = losses;
    j["final_loss"] = losses.empty() ? 0.0 : losses.back();
    write_text_file(config.out + ".json", j.dump(2) + "\n");
    TrainReport report;
    report.loss_curve = losses;
    write_text_file(config.out + ".loss.csv", report.loss_curve_csv());
    return;
  }
  const TrainJob job = make_train_job(config);
  const auto [params, report] = train_proposal(job);
  write_training_outputs(config.out, params, job, report);
}

GmmExperimentConfig GmmExperimentConfig::from_json(const nlohmann::json& doc, const std::string& source) {
  const ConfigReader r(doc, source);
  r.only({"spec", "data", "sampler", "steps", "initial_active", "seeds", "params", "out_dir"});
  GmmExperimentConfig c;
  c.source = source;
  if (r.has("spec")) {
    const ConfigReader g = r.child("spec");
    g.only({"m", "n", "sigma2_mu", "sigma2", "d"});
    c.spec.m = static_cast<int>(g.get_int("m", c.spec.m));
    c.spec.n = static_cast<int>(g.get_int("n", c.spec.n));
    c.spec.sigma2_mu = g.get_double("sigma2_mu", c.spec.sigma2_mu);
    c.spec.sigma2 = g.get_double("sigma2", c.spec.sigma2);
    c.spec.d = static_cast<int>(g.get_int("d", c.spec.d));
    try {
      c.spec.validate();
    } catch (const ConfigError& e) {
      g.fail("", e.what());
    }
  }
  if (r.has("data")) {
    const ConfigReader d = r.child("data");
    d.only({"file", "clusters", "separation", "seed"});
    c.data_file = d.get_string("file", "");
    c.clusters = static_cast<int>(d.get_int("clusters", c.clusters));
    c.separation = d.get_double("separation", c.separation);
    c.data_seed = d.get_uint("seed", c.data_seed);
    if (c.clusters < 1) d.fail("clusters", "must be positive");
  }
  c.sampler = r.get_string("sampler", c.sampler);
  if (c.sampler != "neural" && c.sampler != "gibbs") r.fail("sampler", "expected neural or gibbs");
  c.steps = r.get_int("steps", c.steps);
  if (c.steps < 0) r.fail("steps", "must be non-negative");
  if (r.has("initial_active")) {
    c.initial_active.clear();
    for (double v : r.get_doubles("initial_active")) c.initial_active.push_back(static_cast<int>(v));
  }
  for (std::size_t i = 0; i < c.initial_active.size(); ++i) {
    if (c.initial_active[i] < 1 || c.initial_active[i] > c.spec.m) {
      r.fail("initial_active[" + std::to_string(i) + "]", "must lie in [1, m]");
    }
  }
  c.seeds = r.get_uints("seeds", c.seeds);
  if (c.seeds.empty()) r.fail("seeds", "needs at least one seed");
  c.params = r.get_string("params", "");
  c.out_dir = r.get_string("out_dir", c.out_dir);
  return c;
}

nlohmann::json GmmExperimentConfig::to_json() const {
  return {{"spec", {{"m", spec.m}, {"n", spec.n}, {"sigma2_mu", spec.sigma2_mu}, {"sigma2", spec.sigma2}, {"d", spec.d}}},
          {"data", {{"file", data_file}, {"clusters", clusters}, {"separation", separation}, {"seed", data_seed}}},
          {"sampler", sampler},
          {"steps", steps},
          {"initial_active", initial_active},
          {"seeds", seeds},
          {"params", params},
          {"out_dir", out_dir}};
}

void GmmExperimentConfig::validate() const {
  const ConfigReader r(json::object(), source);
  if (!data_file.empty() && !file_exists(data_file)) r.fail("data.file", "file '" + data_file + "' does not exist");
  if (sampler == "neural") {
    if (params.empty()) r.fail("params", "the neural sampler needs trained params");
    if (!file_exists(params)) r.fail("params", "file '" + params + "' does not exist");
  }
}

GmmData gmm_experiment_data(const GmmExperimentConfig& config) {
  if (!config.data_file.empty()) {
    GmmData x = read_points_csv(config.data_file);
    if (x.cols() != config.spec.d) {
      throw ConfigError(config.source + ": $.data.file: points have " + std::to_string(x.cols()) +
                        " columns, spec.d is " + std::to_string(config.spec.d));
    }
    return x;
  }
  if (config.spec.d != 2) throw ConfigError(config.source + ": $.spec.d: synthetic data is 2-dimensional");
  Rng rng(config.data_seed, 0);
  return generate_cluster_data(config.spec.n, config.clusters, config.separation, config.spec.sigma2, rng);
}

std::vector<GmmRunSummary> run_gmm_experiment(const GmmExperimentConfig& config) {
  config.validate();
  ensure_dir(config.out_dir);
  const GmmData x = gmm_experiment_data(config);
  GmmSpec spec = config.spec;
  spec.n = static_cast<int>(x.rows());
  std::optional<MdnParams> params;
  if (config.sampler == "neural") params = load_params(config.params);
  const GmmSamplerKind kind = config.sampler == "neural" ? GmmSamplerKind::neural : GmmSamplerKind::gibbs;
  write_text_file(join(config.out_dir, "points.csv"), points_to_csv(x));

  std::vector<GmmRunSummary> out;
  json runs = json::array();
  for (std::uint64_t seed : config.seeds) {
    for (int active : config.initial_active) {
      Rng init(seed, static_cast<std::uint64_t>(active));
      GmmState state = initialize_gmm_state(spec, x, active, init);
      const GmmRunResult run =
          run_gmm_chain(spec, x, std::move(state), kind, config.steps, Rng(seed, 100 + static_cast<std::uint64_t>(active)),
                        params ? &*params : nullptr);
      GmmRunSummary s;
      s.seed = seed;
      s.initial_active = active;
      s.distinct_active = distinct_active_counts(run.trace);
      s.active_changes = active_count_changes(run.trace);
      s.final_active = run.final_state.active_count();
      s.proposed = run.proposed;
      s.accepted = run.accepted;
      const std::string stem = config.sampler + "_seed" + std::to_string(seed) + "_M" + std::to_string(active);
      write_text_file(join(config.out_dir, stem + ".trace.csv"), gmm_trace_csv(run.trace));
      runs.push_back({{"seed", seed},
                      {"initial_active", active},
                      {"distinct_active", s.distinct_active},
                      {"active_changes", s.active_changes},
                      {"final_active", s.final_active},
                      {"proposed", s.proposed},
                      {"accepted", s.accepted}});
      out.push_back(s);
    }
  }
  const json report = {{"config", config.to_json()}, {"runs", runs}};
  write_text_file(join(config.out_dir, "gmm_report.json"), report.dump(2) + "\n");
  return out;
}

}  // namespace nbs
