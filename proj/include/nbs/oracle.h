#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "nbs/model.h"
#include "nbs/rng.h"

namespace nbs {

// Per-variable posterior marginals. Each row sums to 1.
struct MarginalTable {
  std::vector<std::vector<double>> probs;

  std::size_t size() const { return probs.size(); }
  const std::vector<double>& operator[](std::size_t v) const { return probs[v]; }
};

// Exact joint distribution over a block given its conditioning values.
// `table` and `log_table` are row-major in block order, last variable
// fastest.
struct BlockConditional {
  std::vector<VariableId> block;
  std::vector<int> cardinalities;
  std::vector<double> table;
  std::vector<double> log_table;

  std::size_t index_of(std::span<const int> states) const;
  std::vector<int> states_of(std::size_t index) const;
};

// Sum of log2(cardinality) over the given variables.
double binary_dims(const DiscreteModel& model, std::span<const VariableId> vars);

// Brute-force enumeration over every latent assignment.
// Throws SizeGuardError when the latent variables exceed `max_dims`
// binary-equivalent dimensions, InconsistencyError when the evidence has
// zero probability.
MarginalTable enumerate_marginals(const DiscreteModel& model,
                                  const PartialAssignment& evidence,
                                  double max_dims = 24.0);

// Min-fill elimination order over `vars`, ties broken by lowest id.
std::vector<VariableId> min_fill_order(const DiscreteModel& model,
                                       std::span<const VariableId> vars);

struct EliminationOptions {
  // Explicit order; must list every latent variable. Empty means min-fill.
  std::vector<VariableId> order;
  // Largest intermediate factor allowed, in table entries.
  std::size_t max_factor_entries = std::size_t{1} << 24;
};

// Log-space variable elimination, one elimination pass per query variable.
// Throws ResourceError when an intermediate factor exceeds the cap.
MarginalTable variable_elimination_marginals(const DiscreteModel& model,
                                             const PartialAssignment& evidence,
                                             const EliminationOptions& options = {});

// p(block | conditioning). The conditioning must assign the Markov blanket
// of the block; values outside block and blanket are ignored. Throws
// SizeGuardError beyond 16 binary-equivalent block dimensions.
BlockConditional exact_block_conditional(const DiscreteModel& model,
                                         std::span<const VariableId> block,
                                         const PartialAssignment& conditioning);

// Same, reading the conditioning values from a full state.
BlockConditional exact_block_conditional(const DiscreteModel& model,
                                         std::span<const VariableId> block,
                                         const Assignment& state);

// Exact posterior draw by enumeration (same guard as enumerate_marginals).
Assignment sample_exact(const DiscreteModel& model,
                        const PartialAssignment& evidence, Rng& rng,
                        double max_dims = 20.0);

}  // namespace nbs
