#pragma once

#include <functional>
#include <span>
#include <vector>

#include "nbs/log_prob.h"
#include "nbs/model.h"
#include "nbs/rng.h"

namespace nbs {

// One MCMC chain. The model is never owned; chains share nothing mutable.
struct ChainState {
  Assignment assignment;
  // Nonzero for evidence variables, which are never resampled.
  std::vector<char> observed;
  long long epoch = 0;
  Rng rng;

  std::vector<VariableId> latent_variables() const;
};

// Record of one Metropolis-Hastings proposal.
struct ProposalOutcome {
  std::vector<int> proposed;
  double log_q_forward = 0.0;
  double log_q_reverse = 0.0;
  // min(0, [log p(x') + log q(x | x')] - [log p(x) + log q(x' | x)]).
  LogProb log_alpha = LogProb::one();
  bool accepted = false;
  // Set when the proposal density was NaN or infinite; the step is rejected.
  bool flagged = false;
};

// Draws new block values given the current full state.
using ProposalSampler = std::function<std::vector<int>(const Assignment&, Rng&)>;
// log q(block values `to` | state `from`).
using ProposalDensity =
    std::function<double(const Assignment& from, std::span<const int> to)>;

// Evidence clamped, latent variables drawn ancestrally for directed models
// and uniformly otherwise; states with zero joint are redrawn up to 100
// times before InitializationError.
ChainState initialize_chain(const DiscreteModel& model,
                            const PartialAssignment& evidence, Rng rng);

// Log weights of every state of v given the rest of the state (up to a
// constant).
std::vector<double> gibbs_log_weights(const DiscreteModel& model,
                                      const Assignment& state, VariableId v);

// Resamples v from its full conditional.
void gibbs_update(const DiscreteModel& model, ChainState& state, VariableId v);

// Resamples each scheduled variable in order. Scheduled variables must be
// latent.
void gibbs_sweep(const DiscreteModel& model, ChainState& state,
                 std::span<const VariableId> schedule);

// Generic MH kernel over `block`. On rejection the state is left
// bit-identical.
ProposalOutcome mh_step(const DiscreteModel& model, ChainState& state,
                        std::span<const VariableId> block,
                        const ProposalSampler& propose,
                        const ProposalDensity& density);

// Joint draw of the block from its exact conditional; always accepted.
void exact_block_gibbs_step(const DiscreteModel& model,
                            std::span<const VariableId> block,
                            ChainState& state);

}  // namespace nbs
