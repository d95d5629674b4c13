#include "nbs/samplers.h"

#include <cmath>
#include <limits>
#include <string>

#include "nbs/errors.h"
#include "nbs/oracle.h"

namespace nbs {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr int kInitAttempts = 100;

}  // namespace

std::vector<VariableId> ChainState::latent_variables() const {
  std::vector<VariableId> out;
  for (std::size_t v = 0; v < observed.size(); ++v) {
    if (!observed[v]) out.push_back(static_cast<VariableId>(v));
  }
  return out;
}

ChainState initialize_chain(const DiscreteModel& model,
                            const PartialAssignment& evidence, Rng rng) {
  model.check_partial(evidence);
  ChainState state;
  state.observed.assign(model.num_variables(), 0);
  for (const auto& [v, s] : evidence) state.observed[v] = 1;
  for (int attempt = 0; attempt < kInitAttempts; ++attempt) {
    Assignment a;
    if (model.is_directed()) {
      a = sample_prior_clamped(model, evidence, rng);
    } else {
      a.assign(model.num_variables(), 0);
      for (std::size_t v = 0; v < a.size(); ++v) {
        const auto id = static_cast<VariableId>(v);
        auto it = evidence.find(id);
        a[v] = it != evidence.end()
                   ? it->second
                   : static_cast<int>(rng.below(static_cast<std::uint64_t>(model.cardinality(id))));
      }
    }
    if (!log_joint(model, a).is_zero()) {
      state.assignment = std::move(a);
      state.rng = rng;
      return state;
    }
  }
  throw InitializationError("no state with nonzero probability found in " +
                            std::to_string(kInitAttempts) + " draws");
}

std::vector<double> gibbs_log_weights(const DiscreteModel& model,
                                      const Assignment& state, VariableId v) {
  Assignment a = state;
  const int card = model.cardinality(v);
  std::vector<double> lw(static_cast<std::size_t>(card));
  const auto fs = model.factors_of(v);
  for (int s = 0; s < card; ++s) {
    a[v] = s;
    lw[static_cast<std::size_t>(s)] = log_factor_product(model, fs, a);
  }
  return lw;
}

void gibbs_update(const DiscreteModel& model, ChainState& state, VariableId v) {
  // Inline variant of gibbs_log_weights that avoids copying the state.
  const int card = model.cardinality(v);
  double lw[64];
  std::vector<double> heap;
  double* weights = lw;
  if (card > 64) {
    heap.resize(static_cast<std::size_t>(card));
    weights = heap.data();
  }
  const int saved = state.assignment[v];
  const auto fs = model.factors_of(v);
  for (int s = 0; s < card; ++s) {
    state.assignment[v] = s;
    weights[s] = log_factor_product(model, fs, state.assignment);
  }
  const int pick = sample_log_categorical(
      std::span<const double>(weights, static_cast<std::size_t>(card)), state.rng);
  if (pick < 0) {
    state.assignment[v] = saved;
    throw InconsistencyError("variable " + std::to_string(v) +
                             " has a full conditional with zero support");
  }
  state.assignment[v] = pick;
}

void gibbs_sweep(const DiscreteModel& model, ChainState& state,
                 std::span<const VariableId> schedule) {
  for (VariableId v : schedule) {
    model.check_variable(v);
    if (state.observed[v]) {
      throw PreconditionError("scheduled variable " + std::to_string(v) +
                              " is evidence");
    }
    gibbs_update(model, state, v);
  }
}

ProposalOutcome mh_step(const DiscreteModel& model, ChainState& state,
                        std::span<const VariableId> block,
                        const ProposalSampler& propose,
                        const ProposalDensity& density) {
  ProposalOutcome out;
  for (VariableId v : block) {
    model.check_variable(v);
    if (state.observed[v]) {
      throw PreconditionError("block variable " + std::to_string(v) + " is evidence");
    }
  }
  out.proposed = propose(state.assignment, state.rng);
  if (out.proposed.size() != block.size()) {
    throw PreconditionError("proposal size does not match the block");
  }
  std::vector<int> current(block.size());
  for (std::size_t i = 0; i < block.size(); ++i) current[i] = state.assignment[block[i]];

  Assignment next = state.assignment;
  for (std::size_t i = 0; i < block.size(); ++i) {
    const int s = out.proposed[i];
    if (s < 0 || s >= model.cardinality(block[i])) {
      throw DomainError("proposed state out of range");
    }
    next[block[i]] = s;
  }
  out.log_q_forward = density(state.assignment, out.proposed);
  out.log_q_reverse = density(next, current);

  // Only factors touching the block change between x and x'.
  const auto touching = factors_touching(model, block);
  const double lp_cur = log_factor_product(model, touching, state.assignment);
  const double lp_new = log_factor_product(model, touching, next);

  const double u = state.rng.uniform();
  if (!std::isfinite(out.log_q_forward) || std::isnan(out.log_q_reverse) ||
      out.log_q_reverse == std::numeric_limits<double>::infinity()) {
    out.flagged = true;
    out.log_alpha = LogProb::zero();
    return out;
  }
  if (lp_new == kNegInf || out.log_q_reverse == kNegInf) {
    out.log_alpha = LogProb::zero();
  } else if (lp_cur == kNegInf) {
    // Leaving a zero-probability initial state is always accepted.
    out.log_alpha = LogProb::one();
  } else {
    const double ratio =
        (lp_new + out.log_q_reverse) - (lp_cur + out.log_q_forward);
    out.log_alpha = LogProb(std::min(0.0, ratio));
  }
  if (!out.log_alpha.is_zero() && std::log(u) < out.log_alpha.value()) {
    out.accepted = true;
    state.assignment = std::move(next);
  }
  return out;
}

void exact_block_gibbs_step(const DiscreteModel& model,
                            std::span<const VariableId> block, ChainState& state) {
  for (VariableId v : block) {
    model.check_variable(v);
    if (state.observed[v]) {
      throw PreconditionError("block variable " + std::to_string(v) + " is evidence");
    }
  }
  const BlockConditional cond = exact_block_conditional(model, block, state.assignment);
  const int pick = sample_log_categorical(cond.log_table, state.rng);
  const auto states = cond.states_of(static_cast<std::size_t>(pick));
  for (std::size_t i = 0; i < block.size(); ++i) state.assignment[block[i]] = states[i];
}

}  // namespace nbs
