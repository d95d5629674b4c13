#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "nbs/mdn.h"
#include "nbs/motifs.h"

namespace nbs {

struct TrainJob {
  InstantiationDistribution dist;
  MdnConfig config;
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;
  // Held-out KL evaluation every `eval_every` steps (0 disables) over
  // `eval_instantiations` fresh draws.
  std::size_t eval_every = 0;
  std::size_t eval_instantiations = 100;
  // When set, training draws come from this model's own instantiations and
  // prior instead of from `dist`.
  std::shared_ptr<const DiscreteModel> host;
  std::vector<MotifInstantiation> host_instantiations;

  // Throws ConfigError when the config does not match the motif.
  void validate() const;
};

struct KlSummary {
  std::vector<double> values;
  double median = 0.0;
  double mean = 0.0;
  double p90 = 0.0;

  static KlSummary of(std::vector<double> values);
  double fraction_at_most(double threshold) const;
};

struct Histogram {
  std::vector<double> edges;
  std::vector<std::size_t> counts;
};
// Equal-width bins over [lo, hi]; values beyond hi land in the last bin.
Histogram make_histogram(std::span<const double> values, std::size_t bins, double lo, double hi);

struct TrainReport {
  std::vector<double> loss_curve;
  std::vector<std::pair<std::size_t, KlSummary>> evaluations;
  double wall_seconds = 0.0;
  std::size_t samples = 0;
  std::uint64_t seed = 0;

  std::string to_json(const TrainJob& job) const;
  std::string loss_curve_csv() const;
};

struct TrainingExample {
  std::vector<double> input;
  std::vector<double> target;
};

// One draw of (instantiation, prior state) turned into (input, target).
TrainingExample make_training_example(const TrainJob& job, Rng& rng);

std::pair<MdnParams, TrainReport> train_proposal(const TrainJob& job);

// log q over every block assignment (row-major, last role fastest) given
// a network input.
using BlockProposalTable = std::function<std::vector<double>(std::span<const double> input)>;
BlockProposalTable mdn_block_table(const MdnParams& params, const Motif& motif);

// KL(p || q) between the exact block conditional and the proposal, one
// value per fresh instantiation with a prior-sampled conditioning state.
KlSummary evaluate_kl(const BlockProposalTable& proposal, const InstantiationDistribution& dist,
                      std::size_t n_instantiations, std::uint64_t seed);
KlSummary evaluate_kl(const MdnParams& params, const InstantiationDistribution& dist,
                      std::size_t n_instantiations, std::uint64_t seed);

// Writes params, params.json (training metadata) and the loss curve CSV.
void write_training_outputs(const std::string& params_path, const MdnParams& params,
                            const TrainJob& job, const TrainReport& report);

}  // namespace nbs
