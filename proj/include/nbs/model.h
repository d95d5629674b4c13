#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <vector>

#include "nbs/log_prob.h"
#include "nbs/rng.h"

namespace nbs {

using VariableId = std::uint32_t;

// One state index per variable.
using Assignment = std::vector<int>;
// Observed or conditioning values for a subset of variables.
using PartialAssignment = std::map<VariableId, int>;

// Dense table over the joint states of `scope`, row-major in scope order
// (the last scope variable varies fastest). For a CPT the scope is
// (parents..., child), so each run of card(child) entries is one row.
struct FactorTable {
  std::vector<VariableId> scope;
  std::vector<double> values;
};

enum class ModelKind { directed, undirected };

// Factor graph or Bayesian network over discrete variables. Immutable after
// construction; safe to share across threads.
class DiscreteModel {
 public:
  DiscreteModel() = default;

  // One CPT per variable, in any order, each with scope (parents..., self).
  // Rows must sum to 1 within 1e-9 and the parent graph must be acyclic.
  static DiscreteModel directed(std::vector<int> cardinalities,
                                std::vector<FactorTable> cpts);
  static DiscreteModel undirected(std::vector<int> cardinalities,
                                  std::vector<FactorTable> factors);

  std::size_t num_variables() const { return cardinalities_.size(); }
  int cardinality(VariableId v) const { return cardinalities_[v]; }
  std::span<const int> cardinalities() const { return cardinalities_; }
  ModelKind kind() const { return kind_; }
  bool is_directed() const { return kind_ == ModelKind::directed; }

  std::span<const FactorTable> factors() const { return factors_; }
  const FactorTable& factor(std::size_t f) const { return factors_[f]; }
  // Indices of factors whose scope contains v, ascending.
  std::span<const std::size_t> factors_of(VariableId v) const {
    return factors_of_[v];
  }

  // Directed models only.
  std::span<const VariableId> parents(VariableId v) const { return parents_[v]; }
  std::span<const VariableId> children(VariableId v) const {
    return children_[v];
  }
  std::size_t cpt_of(VariableId v) const { return cpt_of_[v]; }
  std::span<const VariableId> topological_order() const { return topo_; }

  // Offset of the entry selected by a full assignment.
  std::size_t table_index(std::size_t f, const Assignment& a) const {
    std::size_t idx = 0;
    const auto& scope = factors_[f].scope;
    const auto& stride = strides_[f];
    for (std::size_t i = 0; i < scope.size(); ++i) {
      idx += static_cast<std::size_t>(a[scope[i]]) * stride[i];
    }
    return idx;
  }
  std::span<const std::size_t> strides(std::size_t f) const {
    return strides_[f];
  }
  // log of the factor entry; -inf encodes a zero entry.
  double log_entry(std::size_t f, const Assignment& a) const {
    return log_values_[f][table_index(f, a)];
  }
  std::span<const double> log_table(std::size_t f) const {
    return log_values_[f];
  }

  // Throws DomainError for ids outside [0, num_variables).
  void check_variable(VariableId v) const;
  // Throws DomainError unless a is a full, in-range assignment.
  void check_assignment(const Assignment& a) const;
  void check_partial(const PartialAssignment& a) const;

 private:
  void index_factors();

  ModelKind kind_ = ModelKind::undirected;
  std::vector<int> cardinalities_;
  std::vector<FactorTable> factors_;
  std::vector<std::vector<std::size_t>> strides_;
  std::vector<std::vector<double>> log_values_;
  std::vector<std::vector<std::size_t>> factors_of_;
  std::vector<std::vector<VariableId>> parents_;
  std::vector<std::vector<VariableId>> children_;
  std::vector<std::size_t> cpt_of_;
  std::vector<VariableId> topo_;
};

// Smallest set S, disjoint from block, that separates block from the rest
// of the model: every variable sharing a factor with the block. For
// directed models this is parents, children and co-parents. Sorted.
std::vector<VariableId> markov_blanket(const DiscreteModel& model,
                                       std::span<const VariableId> block);

// Sum of log factor entries; LogProb::zero() if any entry is zero.
LogProb log_joint(const DiscreteModel& model, const Assignment& a);

// log of the product of the given factors at a.
double log_factor_product(const DiscreteModel& model,
                          std::span<const std::size_t> factor_ids,
                          const Assignment& a);

// Factors whose scope intersects block, ascending and deduplicated.
std::vector<std::size_t> factors_touching(const DiscreteModel& model,
                                          std::span<const VariableId> block);

// Ancestral draw in topological order. Directed models only.
Assignment sample_prior(const DiscreteModel& model, Rng& rng);

// Ancestral draw with the given variables clamped.
Assignment sample_prior_clamped(const DiscreteModel& model,
                                const PartialAssignment& clamp, Rng& rng);

}  // namespace nbs
