#include "nbs/trainer.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

#include "json.hpp"

#include "nbs/errors.h"
#include "nbs/oracle.h"
#include "nbs/uai.h"

namespace nbs {
namespace {

constexpr std::uint64_t kInitStream = 0;
constexpr std::uint64_t kSampleStream = 1;
constexpr std::uint64_t kEvalStream = 2;

Assignment prior_draw(const DiscreteModel& model, Rng& rng) {
  return model.is_directed() ? sample_prior(model, rng) : sample_exact(model, {}, rng);
}

TrainingExample example_from(const Motif& motif, const MotifInstantiation& inst,
                             const Assignment& state) {
  TrainingExample ex;
  ex.input = encode_input(motif, inst, state);
  ex.target.reserve(inst.b_vars.size());
  for (VariableId v : inst.b_vars) ex.target.push_back(static_cast<double>(state[v]));
  return ex;
}

double kl_from_tables(std::span<const double> log_p, std::span<const double> log_q) {
  double kl = 0.0;
  for (std::size_t i = 0; i < log_p.size(); ++i) {
    if (log_p[i] == -std::numeric_limits<double>::infinity()) continue;
    kl += std::exp(log_p[i]) * (log_p[i] - log_q[i]);
  }
  return std::max(kl, 0.0);
}

const char* optimizer_name(OptimizerConfig::Kind k) {
  return k == OptimizerConfig::Kind::adam ? "adam" : "sgd";
}

}  // namespace

void TrainJob::validate() const {
  config.validate();
  const Motif& m = dist.motif;
  if (config.input_dim != m.input_dim) {
    throw ConfigError("network input_dim " + std::to_string(config.input_dim) +
                      " does not match motif '" + m.name + "' (" + std::to_string(m.input_dim) + ")");
  }
  if (config.heads != m.heads) throw ConfigError("network heads do not match the motif");
  if (config.encoding != m.encoding) throw ConfigError("network encoding does not match the motif");
  if (optimizer.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (host && host_instantiations.empty()) {
    throw ConfigError("host training needs at least one instantiation");
  }
  dist.cpt.validate();
}

KlSummary KlSummary::of(std::vector<double> values) {
  KlSummary s;
  s.values = std::move(values);
  if (s.values.empty()) return s;
  std::vector<double> sorted = s.values;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  s.median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  double total = 0.0;
  for (double x : sorted) total += x;
  s.mean = total / static_cast<double>(n);
  s.p90 = sorted[std::min(n - 1, static_cast<std::size_t>(std::ceil(0.9 * static_cast<double>(n))) - 1)];
  return s;
}

double KlSummary::fraction_at_most(double threshold) const {
  if (values.empty()) return 0.0;
  std::size_t count = 0;
  for (double x : values) count += x <= threshold ? 1 : 0;
  return static_cast<double>(count) / static_cast<double>(values.size());
}

Histogram make_histogram(std::span<const double> values, std::size_t bins, double lo, double hi) {
  if (bins == 0 || !(hi > lo)) throw PreconditionError("invalid histogram range");
  Histogram h;
  h.counts.assign(bins, 0);
  for (std::size_t i = 0; i <= bins; ++i) {
    h.edges.push_back(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins));
  }
  for (double x : values) {
    const double t = (x - lo) / (hi - lo) * static_cast<double>(bins);
    const auto b = t <= 0.0 ? 0 : std::min(bins - 1, static_cast<std::size_t>(t));
    ++h.counts[b];
  }
  return h;
}

TrainingExample make_training_example(const TrainJob& job, Rng& rng) {
  const Motif& motif = job.dist.motif;
  if (job.host) {
    const auto& inst = job.host_instantiations[rng.below(job.host_instantiations.size())];
    return example_from(motif, inst, prior_draw(*job.host, rng));
  }
  const SampledInstantiation s = sample_instantiation(job.dist, rng);
  return example_from(motif, s.inst, prior_draw(s.fragment, rng));
}

std::pair<MdnParams, TrainReport> train_proposal(const TrainJob& job) {
  job.validate();
  const auto start = std::chrono::steady_clock::now();
  Rng init_rng(job.seed, kInitStream);
  MdnParams params = MdnParams::initialize(job.config, init_rng);
  const Rng sample_base(job.seed, kSampleStream);
  const std::size_t bs = job.optimizer.batch_size;

  TrainReport report;
  report.seed = job.seed;
  report.samples = job.optimizer.steps * bs;

  const BatchSource source = [&](std::size_t step, Batch& batch) {
    for (std::size_t j = 0; j < bs; ++j) {
      // One stream per sample index keeps batches independent of how they
      // are produced.
      Rng rng = sample_base.split(step * bs + j);
      const TrainingExample ex = make_training_example(job, rng);
      const auto col = static_cast<Eigen::Index>(j);
      for (std::size_t i = 0; i < ex.input.size(); ++i) {
        batch.inputs(static_cast<Eigen::Index>(i), col) = ex.input[i];
      }
      for (std::size_t i = 0; i < ex.target.size(); ++i) {
        batch.targets(static_cast<Eigen::Index>(i), col) = ex.target[i];
      }
    }
  };
  const StepCallback on_step = [&](std::size_t step, double loss, const MdnParams& current) {
    report.loss_curve.push_back(loss);
    if (job.eval_every > 0 && (step + 1) % job.eval_every == 0) {
      report.evaluations.emplace_back(
          step + 1, evaluate_kl(current, job.dist, job.eval_instantiations, job.seed));
    }
  };
  params = optimize(std::move(params), source, job.optimizer, on_step);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {std::move(params), std::move(report)};
}

BlockProposalTable mdn_block_table(const MdnParams& params, const Motif& motif) {
  if (params.config.encoding != motif.encoding) {
    throw VersionError("params were trained for encoding '" + params.config.encoding +
                       "', motif uses '" + motif.encoding + "'");
  }
  std::vector<int> cards = motif.b_cards;
  return [&params, cards](std::span<const double> input) {
    const MixtureProposal q = forward(params, input);
    std::size_t total = 1;
    for (int c : cards) total *= static_cast<std::size_t>(c);
    std::vector<double> out(total);
    std::vector<double> target(cards.size());
    for (std::size_t idx = 0; idx < total; ++idx) {
      std::size_t rem = idx;
      for (std::size_t i = cards.size(); i-- > 0;) {
        target[i] = static_cast<double>(rem % static_cast<std::size_t>(cards[i]));
        rem /= static_cast<std::size_t>(cards[i]);
      }
      out[idx] = log_density(q, target);
    }
    return out;
  };
}

KlSummary evaluate_kl(const BlockProposalTable& proposal, const InstantiationDistribution& dist,
                      std::size_t n_instantiations, std::uint64_t seed) {
  const Rng base(seed, kEvalStream);
  std::vector<double> values;
  values.reserve(n_instantiations);
  for (std::size_t i = 0; i < n_instantiations; ++i) {
    Rng rng = base.split(i);
    const SampledInstantiation s = sample_instantiation(dist, rng);
    const Assignment state = prior_draw(s.fragment, rng);
    const BlockConditional p = exact_block_conditional(s.fragment, s.inst.b_vars, state);
    const auto input = encode_input(dist.motif, s.inst, state);
    const auto log_q = proposal(input);
    values.push_back(kl_from_tables(p.log_table, log_q));
  }
  return KlSummary::of(std::move(values));
}

KlSummary evaluate_kl(const MdnParams& params, const InstantiationDistribution& dist,
                      std::size_t n_instantiations, std::uint64_t seed) {
  return evaluate_kl(mdn_block_table(params, dist.motif), dist, n_instantiations, seed);
}

std::string TrainReport::to_json(const TrainJob& job) const {
  nlohmann::json j;
  j["seed"] = seed;
  j["motif"] = job.dist.motif.name;
  j["encoding"] = job.config.encoding;
  j["steps"] = job.optimizer.steps;
  j["batch_size"] = job.optimizer.batch_size;
  j["samples"] = samples;
  j["optimizer"] = optimizer_name(job.optimizer.kind);
  j["learning_rate"] = job.optimizer.learning_rate;
  j["final_lr_fraction"] = job.optimizer.final_lr_fraction;
  j["p_determ"] = job.dist.cpt.p_determ;
  j["alpha"] = job.dist.cpt.alpha;
  j["network"] = {{"input_dim", job.config.input_dim},
                  {"hidden_dims", job.config.hidden_dims},
                  {"output_dim", job.config.output_dim()},
                  {"n_mixtures", job.config.n_mixtures},
                  {"variance_floor", job.config.variance_floor}};
  j["loss_curve"] = loss_curve;
  j["final_loss"] = loss_curve.empty() ? 0.0 : loss_curve.back();
  nlohmann::json evals = nlohmann::json::array();
  for (const auto& [step, kl] : evaluations) {
    evals.push_back({{"step", step},
                     {"median_kl", kl.median},
                     {"mean_kl", kl.mean},
                     {"p90_kl", kl.p90},
                     {"fraction_le_1", kl.fraction_at_most(1.0)}});
  }
  j["evaluations"] = evals;
  j["wall_seconds"] = wall_seconds;
  return j.dump(2);
}

std::string TrainReport::loss_curve_csv() const {
  std::string out = "step,loss\n";
  char buf[64];
  for (std::size_t i = 0; i < loss_curve.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", i, loss_curve[i]);
    out += buf;
  }
  return out;
}

void write_training_outputs(const std::string& params_path, const MdnParams& params,
                            const TrainJob& job, const TrainReport& report) {
  save_params(params_path, params);
  write_text_file(params_path + ".json", report.to_json(job));
  write_text_file(params_path + ".loss.csv", report.loss_curve_csv());
}

}  // namespace nbs
