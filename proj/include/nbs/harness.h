#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "nbs/block_sampler.h"
#include "nbs/gmm.h"
#include "nbs/model.h"
#include "nbs/motifs.h"
#include "nbs/oracle.h"
#include "nbs/trainer.h"

namespace nbs {

// Mean over `vars` of |P̂(X=1) - P(X=1)| for binary variables; variables
// with more states contribute their total variation distance instead. An
// empty `vars` means every variable. Throws PreconditionError when the
// tables disagree on variables or cardinalities.
double marginal_error(const MarginalTable& est, const MarginalTable& truth,
                      std::span<const VariableId> vars = {});
bool has_multistate(const MarginalTable& truth, std::span<const VariableId> vars = {});

struct ErrorPoint {
  long long epoch = 0;
  std::int64_t wall_ns = 0;
  double error = 0.0;
};

enum class IntegralAxis { epochs, time };

// Trapezoidal area under the error curve against epochs or seconds, from the
// first point up to `cap` (linearly interpolated inside the crossing segment,
// or the last point if the series ends first). Throws PreconditionError for
// an empty series or a cap before the first point.
double error_integral(std::span<const ErrorPoint> series, IntegralAxis axis, double cap);

// Reads a JSON document field by field, reporting failures as
// "<source>: <json path>: <problem>".
class ConfigReader {
 public:
  ConfigReader(const nlohmann::json& node, std::string source, std::string path = "$");

  bool has(const std::string& key) const;
  ConfigReader child(const std::string& key) const;
  ConfigReader element(std::size_t i) const;
  std::size_t size() const;
  std::vector<std::string> keys() const;
  bool is_object() const { return node_->is_object(); }
  bool is_array() const { return node_->is_array(); }

  std::string get_string(const std::string& key, std::optional<std::string> fallback = {}) const;
  double get_double(const std::string& key, std::optional<double> fallback = {}) const;
  long long get_int(const std::string& key, std::optional<long long> fallback = {}) const;
  std::uint64_t get_uint(const std::string& key, std::optional<std::uint64_t> fallback = {}) const;
  bool get_bool(const std::string& key, std::optional<bool> fallback = {}) const;
  std::vector<double> get_doubles(const std::string& key, std::optional<std::vector<double>> fallback = {}) const;
  std::vector<std::uint64_t> get_uints(const std::string& key,
                                       std::optional<std::vector<std::uint64_t>> fallback = {}) const;
  std::vector<std::string> get_strings(const std::string& key,
                                       std::optional<std::vector<std::string>> fallback = {}) const;

  // Throws ConfigError for keys outside `allowed`.
  void only(std::initializer_list<const char*> allowed) const;
  [[noreturn]] void fail(const std::string& key, const std::string& problem) const;
  std::string where(const std::string& key) const;

 private:
  const nlohmann::json& field(const std::string& key) const;

  const nlohmann::json* node_;
  std::string source_;
  std::string path_;
};

nlohmann::json read_json_file(const std::string& path);

// Random model generators addressable from configs.
struct GeneratorSpec {
  std::string kind = "grid";  // grid | pairwise-chain | directed-chain
  int rows = 8;
  int cols = 8;
  int length = 30;
  int cardinality = 2;
  int span = 1;
  CptDistribution cpt;
  PotentialDistribution potential;
  std::uint64_t seed = 0;

  static GeneratorSpec from_config(const ConfigReader& r);
  nlohmann::json to_json() const;
};

DiscreteModel generate_model(const GeneratorSpec& spec);
// Layout for generated grids; nullopt for other kinds.
std::optional<GridLayout> generated_layout(const GeneratorSpec& spec);

struct EvidenceSpec {
  std::string file;
  std::size_t random_count = 0;
  std::uint64_t seed = 0;
  PartialAssignment fixed;
};

PartialAssignment resolve_evidence(const EvidenceSpec& spec, const DiscreteModel& model);

// One sampling experiment: a model, evidence, samplers and seeds.
struct ExperimentConfig {
  std::string source = "<config>";
  std::string model_file;
  std::optional<GeneratorSpec> generator;
  EvidenceSpec evidence;
  std::string truth_file;
  std::vector<SamplerKind> samplers{SamplerKind::gibbs};
  double mix_ratio = 0.5;
  long long epochs = 1000;
  double wall_cap_secs = 0.0;
  std::vector<std::uint64_t> seeds{0};
  std::vector<std::string> motifs;
  std::map<std::string, std::string> proposals;  // motif name -> params file
  bool virtual_boundary = true;
  long long eval_every = 1;
  double epoch_cap = 0.0;  // 0: all epochs
  double time_cap_secs = 0.0;  // 0: wall cap, else the whole run
  double burn_in = 0.0;
  bool record_moves = false;
  std::string out_dir = "out";

  static ExperimentConfig from_json(const nlohmann::json& doc, const std::string& source);
  static ExperimentConfig from_file(const std::string& path);
  nlohmann::json to_json() const;
  // Throws ConfigError for missing artifacts or inconsistent settings.
  void validate() const;
};

struct LoadedExperiment {
  DiscreteModel model;
  PartialAssignment evidence;
  std::optional<GridLayout> layout;
  MarginalTable truth;
  ProposalLibrary library;
  std::vector<Motif> motifs;
};

LoadedExperiment load_experiment(const ExperimentConfig& config);

struct RunSpec {
  SamplerKind sampler = SamplerKind::gibbs;
  double mix_ratio = 0.5;
  std::uint64_t seed = 0;
  long long epochs = 1000;
  double wall_cap_secs = 0.0;
  long long eval_every = 1;
  bool record_moves = false;
  bool virtual_boundary = true;
};

struct RunResult {
  RunSpec spec;
  std::vector<ErrorPoint> series;
  Trace trace;
  MarginalTable estimate;
  double final_error = 0.0;
  std::size_t blocks = 0;
};

// Runs one chain and records the running-estimate error against `truth`
// over the latent variables every `eval_every` epochs (plus the initial
// state and the final epoch).
RunResult run_with_error_series(const DiscreteModel& model, const PartialAssignment& evidence,
                                const MarginalTable& truth, const ProposalLibrary& library,
                                std::span<const Motif> motifs, const std::optional<GridLayout>& layout,
                                const RunSpec& spec);

struct RunSummary {
  std::string sampler;
  std::uint64_t seed = 0;
  double mix_ratio = 0.0;
  long long epochs = 0;
  std::int64_t wall_ns = 0;
  std::size_t blocks = 0;
  double final_error = 0.0;
  double epoch_integral = 0.0;
  double time_integral = 0.0;
  MoveStats single;
  MoveStats neural;
  MoveStats exact_block;
  std::vector<ErrorPoint> series;
};

struct EvalReport {
  nlohmann::json config;
  bool multistate = false;
  double epoch_cap = 0.0;
  double time_cap_secs = 0.0;
  std::vector<RunSummary> runs;

  // Wall-clock fields are omitted when include_timing is false.
  nlohmann::json to_json(bool include_timing = true) const;
};

RunSummary summarize_run(const RunResult& run, double epoch_cap, double time_cap_secs);
std::string series_csv(std::span<const ErrorPoint> series);

// Runs every (sampler, seed) cell of the experiment and writes report.json,
// per-run series CSVs and .MAR estimates into the output directory.
EvalReport run_experiment(const ExperimentConfig& config);

// Training configuration for the `train` subcommand.
struct TrainConfig {
  std::string source = "<config>";
  std::string motif = "grid9";
  CptDistribution cpt;
  PotentialDistribution potential;
  double lambda = 4.0;
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;
  std::size_t eval_every = 0;
  std::size_t eval_instantiations = 100;
  GmmSpec gmm;
  std::string out = "params.bin";

  static TrainConfig from_json(const nlohmann::json& doc, const std::string& source);
  nlohmann::json to_json() const;
};

TrainJob make_train_job(const TrainConfig& config);
// Trains and writes params, the JSON report and the loss curve.
void run_train(const TrainConfig& config);

// GMM experiment driver: synthetic or file data, one chain per
// (seed, initial M) pair.
struct GmmExperimentConfig {
  std::string source = "<config>";
  GmmSpec spec;
  std::string data_file;
  int clusters = 3;
  double separation = 3.0;
  std::uint64_t data_seed = 0;
  std::string sampler = "neural";
  long long steps = 10000;
  std::vector<int> initial_active{1, 2, 3, 4, 5, 6, 7, 8};
  std::vector<std::uint64_t> seeds{0};
  std::string params;
  std::string out_dir = "out";

  static GmmExperimentConfig from_json(const nlohmann::json& doc, const std::string& source);
  nlohmann::json to_json() const;
  void validate() const;
};

struct GmmRunSummary {
  std::uint64_t seed = 0;
  int initial_active = 0;
  std::size_t distinct_active = 0;
  std::size_t active_changes = 0;
  int final_active = 0;
  std::uint64_t proposed = 0;
  std::uint64_t accepted = 0;
};

GmmData gmm_experiment_data(const GmmExperimentConfig& config);
std::vector<GmmRunSummary> run_gmm_experiment(const GmmExperimentConfig& config);

}  // namespace nbs
