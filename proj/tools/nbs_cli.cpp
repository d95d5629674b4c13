#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "nbs/errors.h"
#include "nbs/harness.h"
#include "nbs/oracle.h"
#include "nbs/trainer.h"
#include "nbs/uai.h"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace nbs;

namespace {

std::string in_dir(const std::string& dir, const std::string& name) {
  fs::create_directories(dir);
  return (fs::path(dir) / name).string();
}

struct GenOptions {
  std::string config;
  std::string kind = "grid";
  int rows = 8;
  int cols = 8;
  int length = 30;
  int cardinality = 2;
  int span = 1;
  double p_determ = 0.5;
  std::optional<std::uint64_t> seed;
  std::size_t evidence = 0;
  int n = 60;
  int clusters = 3;
  double separation = 3.0;
  double sigma2 = 0.1;
  std::string out = "model";
};

int gen_model(const GenOptions& o, const CLI::App& cmd) {
  if (o.kind == "gmm") {
    const std::uint64_t seed = o.seed.value_or(0);
    Rng rng(seed, 0);
    const GmmData x = generate_cluster_data(o.n, o.clusters, o.separation, o.sigma2, rng);
    const std::string path = in_dir(o.out, "points.csv");
    write_text_file(path, points_to_csv(x));
    std::cout << "wrote " << path << "\n";
    return 0;
  }
  json doc = json::object();
  if (!o.config.empty()) doc = read_json_file(o.config);
  const std::string source = o.config.empty() ? "<flags>" : o.config;
  std::size_t evidence = o.evidence;
  if (doc.contains("evidence")) {
    const ConfigReader r(doc, source);
    evidence = static_cast<std::size_t>(r.get_uint("evidence"));
    doc.erase("evidence");
  }
  const auto set = [&](const char* flag, const char* key, auto value) {
    if (cmd.count(flag) > 0 || !doc.contains(key)) doc[key] = value;
  };
  set("--kind", "kind", o.kind);
  set("--rows", "rows", o.rows);
  set("--cols", "cols", o.cols);
  set("--length", "length", o.length);
  set("--cardinality", "cardinality", o.cardinality);
  set("--span", "span", o.span);
  set("--p-determ", "p_determ", o.p_determ);
  if (o.seed) doc["seed"] = *o.seed;
  const GeneratorSpec spec = GeneratorSpec::from_config(ConfigReader(doc, source));
  const DiscreteModel model = generate_model(spec);
  const std::string model_path = in_dir(o.out, "model.uai");
  write_text_file(model_path, serialize_uai(model));
  json meta = spec.to_json();
  meta["evidence"] = evidence;
  write_text_file(in_dir(o.out, "model.json"), meta.dump(2) + "\n");
  std::cout << "wrote " << model_path << "\n";
  if (evidence > 0) {
    EvidenceSpec e;
    e.random_count = evidence;
    e.seed = spec.seed;
    const std::string ev_path = model_path + ".evid";
    write_text_file(ev_path, serialize_uai_evidence(resolve_evidence(e, model)));
    std::cout << "wrote " << ev_path << "\n";
  }
  return 0;
}

int oracle(const std::string& model_path, const std::string& evidence_path, const std::string& method,
           const std::string& out) {
  const DiscreteModel model = read_uai_file(model_path);
  const PartialAssignment evidence = evidence_path.empty() ? PartialAssignment{} : read_evidence_file(evidence_path);
  const MarginalTable m = method == "enum" ? enumerate_marginals(model, evidence)
                                           : variable_elimination_marginals(model, evidence);
  const std::string stem = fs::path(model_path).stem().string();
  const std::string mar = in_dir(out, stem + ".MAR");
  write_text_file(mar, serialize_mar(m));
  write_text_file(in_dir(out, stem + ".marginals.csv"), serialize_marginals_csv(m));
  std::cout << "wrote " << mar << "\n";
  return 0;
}

int train(const std::string& config, std::optional<std::uint64_t> seed, const std::string& out,
          std::optional<std::size_t> steps) {
  TrainConfig c = TrainConfig::from_json(read_json_file(config), config);
  if (seed) c.seed = *seed;
  if (!out.empty()) c.out = out;
  if (steps) c.optimizer.steps = *steps;
  run_train(c);
  std::cout << "wrote " << c.out << "\n";
  return 0;
}

int eval_kl(const std::string& params_path, std::string motif_name, double p_determ, std::size_t n,
            std::uint64_t seed, std::size_t bins, double hi, const std::string& out) {
  const MdnParams params = load_params(params_path);
  if (motif_name.empty()) {
    for (const auto& name : motif_names()) {
      if (motif_by_name(name).encoding == params.config.encoding) motif_name = name;
    }
    if (motif_name.empty()) throw ConfigError("no registered motif uses encoding '" + params.config.encoding + "'");
  }
  InstantiationDistribution dist;
  dist.motif = motif_by_name(motif_name);
  dist.cpt.p_determ = p_determ;
  dist.cpt.alpha.assign(static_cast<std::size_t>(dist.motif.b_cards.front()), 0.5);
  const KlSummary kl = evaluate_kl(params, dist, n, seed);
  const Histogram h = make_histogram(kl.values, bins, 0.0, hi);
  std::string values = "instantiation,kl\n";
  char buf[64];
  for (std::size_t i = 0; i < kl.values.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", i, kl.values[i]);
    values += buf;
  }
  write_text_file(in_dir(out, "kl.csv"), values);
  std::string hist = "lo,hi,count\n";
  for (std::size_t b = 0; b < h.counts.size(); ++b) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%zu\n", h.edges[b], h.edges[b + 1], h.counts[b]);
    hist += buf;
  }
  write_text_file(in_dir(out, "kl_hist.csv"), hist);
  const json summary = {{"params", params_path}, {"motif", motif_name}, {"p_determ", p_determ},
                        {"alpha", dist.cpt.alpha}, {"instantiations", n}, {"seed", seed},
                        {"median", kl.median}, {"mean", kl.mean}, {"p90", kl.p90},
                        {"fraction_le_1", kl.fraction_at_most(1.0)}};
  write_text_file(in_dir(out, "kl_summary.json"), summary.dump(2) + "\n");
  std::printf("median KL %.4f  mean %.4f  p90 %.4f  <=1 nat %.3f\n", kl.median, kl.mean, kl.p90,
              kl.fraction_at_most(1.0));
  return 0;
}

struct SampleOverrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<double> wall_cap;
  std::optional<long long> epochs;
  std::string sampler;
  std::optional<double> mix_ratio;
};

int sample(const SampleOverrides& o) {
  json doc = read_json_file(o.config);
  if (o.seed) doc["seeds"] = json::array({*o.seed});
  if (!o.out.empty()) doc["out_dir"] = o.out;
  if (o.wall_cap) doc["wall_cap_secs"] = *o.wall_cap;
  if (o.epochs) doc["epochs"] = *o.epochs;
  if (!o.sampler.empty()) doc["samplers"] = json::array({o.sampler});
  if (o.mix_ratio) doc["mix_ratio"] = *o.mix_ratio;
  const ExperimentConfig c = ExperimentConfig::from_json(doc, o.config);
  const EvalReport report = run_experiment(c);
  for (const auto& r : report.runs) {
    std::printf("%-12s seed %-6llu epochs %-9lld final_error %.5f  epoch_integral %.4f  time_integral %.4f\n",
                r.sampler.c_str(), static_cast<unsigned long long>(r.seed), r.epochs, r.final_error,
                r.epoch_integral, r.time_integral);
  }
  std::cout << "wrote " << (fs::path(c.out_dir) / "report.json").string() << "\n";
  return 0;
}

int gmm_sample(const std::string& config, std::optional<std::uint64_t> seed, const std::string& out,
               std::optional<long long> steps) {
  json doc = read_json_file(config);
  if (seed) doc["seeds"] = json::array({*seed});
  if (!out.empty()) doc["out_dir"] = out;
  if (steps) doc["steps"] = *steps;
  const GmmExperimentConfig c = GmmExperimentConfig::from_json(doc, config);
  for (const auto& r : run_gmm_experiment(c)) {
    std::printf("seed %-6llu M0 %d  distinct M %zu  changes %zu  final M %d  accepted %llu/%llu\n",
                static_cast<unsigned long long>(r.seed), r.initial_active, r.distinct_active,
                r.active_changes, r.final_active, static_cast<unsigned long long>(r.accepted),
                static_cast<unsigned long long>(r.proposed));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural block proposals for MCMC on discrete graphical models"};
  app.require_subcommand(1);

  GenOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-model", "Write a random grid/chain model or synthetic GMM data");
  gen_cmd->add_option("--config", gen.config, "Generator JSON");
  gen_cmd->add_option("--kind", gen.kind, "grid | pairwise-chain | directed-chain | gmm")
      ->check(CLI::IsMember({"grid", "pairwise-chain", "directed-chain", "gmm"}));
  gen_cmd->add_option("--rows", gen.rows);
  gen_cmd->add_option("--cols", gen.cols);
  gen_cmd->add_option("--length", gen.length);
  gen_cmd->add_option("--cardinality", gen.cardinality);
  gen_cmd->add_option("--span", gen.span);
  gen_cmd->add_option("--p-determ", gen.p_determ);
  gen_cmd->add_option("--seed", gen.seed);
  gen_cmd->add_option("--evidence", gen.evidence, "Number of random evidence variables");
  gen_cmd->add_option("--n", gen.n, "GMM points");
  gen_cmd->add_option("--clusters", gen.clusters);
  gen_cmd->add_option("--separation", gen.separation);
  gen_cmd->add_option("--sigma2", gen.sigma2);
  gen_cmd->add_option("--out", gen.out, "Output directory");

  std::string model_path, evidence_path, method = "ve", oracle_out = "oracle";
  auto* oracle_cmd = app.add_subcommand("oracle", "Exact marginals (.MAR and CSV)");
  oracle_cmd->add_option("--model", model_path)->required();
  oracle_cmd->add_option("--evidence", evidence_path);
  oracle_cmd->add_option("--method", method)->check(CLI::IsMember({"ve", "enum"}));
  oracle_cmd->add_option("--out", oracle_out, "Output directory");

  std::string train_config, train_out;
  std::optional<std::uint64_t> train_seed;
  std::optional<std::size_t> train_steps;
  auto* train_cmd = app.add_subcommand("train", "Train a block proposal");
  train_cmd->add_option("--config", train_config)->required();
  train_cmd->add_option("--seed", train_seed);
  train_cmd->add_option("--out", train_out, "Params file");
  train_cmd->add_option("--steps", train_steps);

  std::string kl_params, kl_motif, kl_out = "kl";
  double kl_p_determ = 0.05, kl_hi = 5.0;
  std::size_t kl_n = 1000, kl_bins = 25;
  std::uint64_t kl_seed = 0;
  auto* kl_cmd = app.add_subcommand("eval-kl", "KL(p||q) over held-out instantiations");
  kl_cmd->add_option("--params", kl_params)->required();
  kl_cmd->add_option("--motif", kl_motif, "Defaults to the motif matching the params encoding");
  kl_cmd->add_option("--p-determ", kl_p_determ);
  kl_cmd->add_option("--n", kl_n);
  kl_cmd->add_option("--seed", kl_seed);
  kl_cmd->add_option("--bins", kl_bins);
  kl_cmd->add_option("--max-kl", kl_hi, "Histogram upper edge");
  kl_cmd->add_option("--out", kl_out, "Output directory");

  SampleOverrides so;
  auto* sample_cmd = app.add_subcommand("sample", "Run samplers and report errors against the oracle");
  sample_cmd->add_option("--config", so.config)->required();
  sample_cmd->add_option("--seed", so.seed);
  sample_cmd->add_option("--out", so.out, "Output directory");
  sample_cmd->add_option("--wall-cap-secs", so.wall_cap);
  sample_cmd->add_option("--epochs", so.epochs);
  sample_cmd->add_option("--sampler", so.sampler)->check(CLI::IsMember({"gibbs", "block-exact", "neural", "mixed"}));
  sample_cmd->add_option("--mix-ratio", so.mix_ratio);

  auto* gmm_cmd = app.add_subcommand("gmm", "Open-universe GMM experiments");
  gmm_cmd->require_subcommand(1);
  std::string gmm_config, gmm_out;
  std::optional<std::uint64_t> gmm_seed;
  std::optional<long long> gmm_steps;
  auto* gmm_train = gmm_cmd->add_subcommand("train", "Train the pair proposal (train config with motif gmm-pair)");
  gmm_train->add_option("--config", gmm_config)->required();
  gmm_train->add_option("--seed", gmm_seed);
  gmm_train->add_option("--out", gmm_out, "Params file");
  gmm_train->add_option("--steps", gmm_steps);
  auto* gmm_sample_cmd = gmm_cmd->add_subcommand("sample", "Run chains and write M traces");
  gmm_sample_cmd->add_option("--config", gmm_config)->required();
  gmm_sample_cmd->add_option("--seed", gmm_seed);
  gmm_sample_cmd->add_option("--out", gmm_out, "Output directory");
  gmm_sample_cmd->add_option("--steps", gmm_steps);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen_cmd) return gen_model(gen, *gen_cmd);
    if (*oracle_cmd) return oracle(model_path, evidence_path, method, oracle_out);
    if (*train_cmd) return train(train_config, train_seed, train_out, train_steps);
    if (*kl_cmd) return eval_kl(kl_params, kl_motif, kl_p_determ, kl_n, kl_seed, kl_bins, kl_hi, kl_out);
    if (*sample_cmd) return sample(so);
    if (*gmm_train) {
      TrainConfig c = TrainConfig::from_json(read_json_file(gmm_config), gmm_config);
      if (c.motif != "gmm-pair") throw ConfigError(gmm_config + ": $.motif: gmm train needs motif gmm-pair");
      if (gmm_seed) c.seed = *gmm_seed;
      if (!gmm_out.empty()) c.out = gmm_out;
      if (gmm_steps) c.optimizer.steps = static_cast<std::size_t>(*gmm_steps);
      run_train(c);
      std::cout << "wrote " << c.out << "\n";
      return 0;
    }
    if (*gmm_sample_cmd) return gmm_sample(gmm_config, gmm_seed, gmm_out, gmm_steps);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
