#include "nbs/model.h"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <string>

#include "nbs/errors.h"

namespace nbs {
namespace {

std::size_t table_size(const std::vector<int>& cards,
                       const std::vector<VariableId>& scope) {
  std::size_t size = 1;
  for (VariableId v : scope) size *= static_cast<std::size_t>(cards[v]);
  return size;
}

void check_factor_shape(const std::vector<int>& cards, const FactorTable& f,
                        std::size_t index) {
  for (VariableId v : f.scope) {
    if (v >= cards.size()) {
      throw DomainError("factor " + std::to_string(index) +
                        " references unknown variable " + std::to_string(v));
    }
  }
  auto sorted = f.scope;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw DomainError("factor " + std::to_string(index) +
                      " repeats a variable in its scope");
  }
  if (f.values.size() != table_size(cards, f.scope)) {
    throw DomainError("factor " + std::to_string(index) + " has " +
                      std::to_string(f.values.size()) + " entries, expected " +
                      std::to_string(table_size(cards, f.scope)));
  }
  for (double x : f.values) {
    if (!(x >= 0.0) || !std::isfinite(x)) {
      throw DomainError("factor " + std::to_string(index) +
                        " has a negative or non-finite entry");
    }
  }
}

}  // namespace

DiscreteModel DiscreteModel::directed(std::vector<int> cardinalities,
                                      std::vector<FactorTable> cpts) {
  DiscreteModel m;
  m.kind_ = ModelKind::directed;
  for (int c : cardinalities) {
    if (c < 2) throw DomainError("variable cardinality must be at least 2");
  }
  const std::size_t n = cardinalities.size();
  if (cpts.size() != n) {
    throw DomainError("directed model needs exactly one CPT per variable");
  }
  m.cardinalities_ = std::move(cardinalities);
  m.cpt_of_.assign(n, std::numeric_limits<std::size_t>::max());
  m.parents_.assign(n, {});
  m.children_.assign(n, {});
  for (std::size_t f = 0; f < cpts.size(); ++f) {
    check_factor_shape(m.cardinalities_, cpts[f], f);
    if (cpts[f].scope.empty()) throw DomainError("CPT with empty scope");
    const VariableId child = cpts[f].scope.back();
    if (m.cpt_of_[child] != std::numeric_limits<std::size_t>::max()) {
      throw DomainError("variable " + std::to_string(child) +
                        " has more than one CPT");
    }
    m.cpt_of_[child] = f;
    m.parents_[child].assign(cpts[f].scope.begin(), cpts[f].scope.end() - 1);
    const std::size_t card = static_cast<std::size_t>(m.cardinalities_[child]);
    for (std::size_t row = 0; row < cpts[f].values.size(); row += card) {
      double sum = 0.0;
      for (std::size_t k = 0; k < card; ++k) sum += cpts[f].values[row + k];
      if (std::abs(sum - 1.0) > 1e-9) {
        throw DomainError("CPT of variable " + std::to_string(child) +
                          " has a row summing to " + std::to_string(sum));
      }
    }
  }
  for (std::size_t v = 0; v < n; ++v) {
    for (VariableId p : m.parents_[v]) {
      m.children_[p].push_back(static_cast<VariableId>(v));
    }
  }
  // Kahn's algorithm, smallest id first for a deterministic order.
  std::vector<std::size_t> indegree(n);
  for (std::size_t v = 0; v < n; ++v) indegree[v] = m.parents_[v].size();
  std::vector<VariableId> ready;
  for (std::size_t v = 0; v < n; ++v) {
    if (indegree[v] == 0) ready.push_back(static_cast<VariableId>(v));
  }
  std::make_heap(ready.begin(), ready.end(), std::greater<>());
  while (!ready.empty()) {
    std::pop_heap(ready.begin(), ready.end(), std::greater<>());
    const VariableId v = ready.back();
    ready.pop_back();
    m.topo_.push_back(v);
    for (VariableId c : m.children_[v]) {
      if (--indegree[c] == 0) {
        ready.push_back(c);
        std::push_heap(ready.begin(), ready.end(), std::greater<>());
      }
    }
  }
  if (m.topo_.size() != n) throw DomainError("directed model has a cycle");
  m.factors_ = std::move(cpts);
  m.index_factors();
  return m;
}

DiscreteModel DiscreteModel::undirected(std::vector<int> cardinalities,
                                        std::vector<FactorTable> factors) {
  DiscreteModel m;
  m.kind_ = ModelKind::undirected;
  for (int c : cardinalities) {
    if (c < 2) throw DomainError("variable cardinality must be at least 2");
  }
  for (std::size_t f = 0; f < factors.size(); ++f) {
    check_factor_shape(cardinalities, factors[f], f);
  }
  m.cardinalities_ = std::move(cardinalities);
  m.factors_ = std::move(factors);
  const std::size_t n = m.cardinalities_.size();
  m.parents_.assign(n, {});
  m.children_.assign(n, {});
  m.index_factors();
  return m;
}

void DiscreteModel::index_factors() {
  const std::size_t n = cardinalities_.size();
  factors_of_.assign(n, {});
  strides_.resize(factors_.size());
  log_values_.resize(factors_.size());
  for (std::size_t f = 0; f < factors_.size(); ++f) {
    const auto& scope = factors_[f].scope;
    auto& stride = strides_[f];
    stride.assign(scope.size(), 1);
    for (std::size_t i = scope.size(); i-- > 1;) {
      stride[i - 1] = stride[i] * static_cast<std::size_t>(cardinalities_[scope[i]]);
    }
    auto& logs = log_values_[f];
    logs.resize(factors_[f].values.size());
    for (std::size_t i = 0; i < logs.size(); ++i) {
      const double x = factors_[f].values[i];
      logs[i] = x > 0.0 ? std::log(x) : -std::numeric_limits<double>::infinity();
    }
    for (VariableId v : scope) factors_of_[v].push_back(f);
  }
}

void DiscreteModel::check_variable(VariableId v) const {
  if (v >= num_variables()) {
    throw DomainError("unknown variable " + std::to_string(v));
  }
}

void DiscreteModel::check_assignment(const Assignment& a) const {
  if (a.size() != num_variables()) {
    throw PreconditionError("assignment covers " + std::to_string(a.size()) +
                            " of " + std::to_string(num_variables()) +
                            " variables");
  }
  for (std::size_t v = 0; v < a.size(); ++v) {
    if (a[v] < 0 || a[v] >= cardinalities_[v]) {
      throw DomainError("state " + std::to_string(a[v]) +
                        " out of range for variable " + std::to_string(v));
    }
  }
}

void DiscreteModel::check_partial(const PartialAssignment& a) const {
  for (const auto& [v, s] : a) {
    check_variable(v);
    if (s < 0 || s >= cardinalities_[v]) {
      throw DomainError("state " + std::to_string(s) +
                        " out of range for variable " + std::to_string(v));
    }
  }
}

std::vector<std::size_t> factors_touching(const DiscreteModel& model,
                                          std::span<const VariableId> block) {
  std::vector<std::size_t> out;
  for (VariableId v : block) {
    model.check_variable(v);
    auto fs = model.factors_of(v);
    out.insert(out.end(), fs.begin(), fs.end());
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<VariableId> markov_blanket(const DiscreteModel& model,
                                       std::span<const VariableId> block) {
  std::vector<char> in_block(model.num_variables(), 0);
  for (VariableId v : block) {
    model.check_variable(v);
    in_block[v] = 1;
  }
  std::vector<char> in_blanket(model.num_variables(), 0);
  for (std::size_t f : factors_touching(model, block)) {
    for (VariableId u : model.factor(f).scope) {
      if (!in_block[u]) in_blanket[u] = 1;
    }
  }
  std::vector<VariableId> out;
  for (std::size_t v = 0; v < in_blanket.size(); ++v) {
    if (in_blanket[v]) out.push_back(static_cast<VariableId>(v));
  }
  return out;
}

double log_factor_product(const DiscreteModel& model,
                          std::span<const std::size_t> factor_ids,
                          const Assignment& a) {
  double total = 0.0;
  for (std::size_t f : factor_ids) {
    const double x = model.log_entry(f, a);
    if (x == -std::numeric_limits<double>::infinity()) return x;
    total += x;
  }
  return total;
}

LogProb log_joint(const DiscreteModel& model, const Assignment& a) {
  model.check_assignment(a);
  LogProb total = LogProb::one();
  for (std::size_t f = 0; f < model.factors().size(); ++f) {
    total *= LogProb(model.log_entry(f, a));
    if (total.is_zero()) break;
  }
  return total;
}

Assignment sample_prior(const DiscreteModel& model, Rng& rng) {
  return sample_prior_clamped(model, {}, rng);
}

Assignment sample_prior_clamped(const DiscreteModel& model,
                                const PartialAssignment& clamp, Rng& rng) {
  if (!model.is_directed()) {
    throw UnsupportedError("ancestral sampling requires a directed model");
  }
  model.check_partial(clamp);
  Assignment a(model.num_variables(), 0);
  for (VariableId v : model.topological_order()) {
    if (auto it = clamp.find(v); it != clamp.end()) {
      a[v] = it->second;
      continue;
    }
    const std::size_t f = model.cpt_of(v);
    a[v] = 0;
    const std::size_t row = model.table_index(f, a);
    const int card = model.cardinality(v);
    const auto& values = model.factor(f).values;
    const double u = rng.uniform();
    double acc = 0.0;
    int pick = card - 1;
    for (int k = 0; k < card; ++k) {
      acc += values[row + static_cast<std::size_t>(k)];
      if (u < acc) {
        pick = k;
        break;
      }
    }
    // Rounding can leave acc slightly below 1; never land on a zero entry.
    while (pick > 0 && values[row + static_cast<std::size_t>(pick)] == 0.0) --pick;
    a[v] = pick;
  }
  return a;
}

}  // namespace nbs
