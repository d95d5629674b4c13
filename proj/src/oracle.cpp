#include "nbs/oracle.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <string>

#include "nbs/errors.h"
#include "nbs/log_prob.h"

namespace nbs {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::vector<VariableId> latent_variables(const DiscreteModel& model,
                                         const PartialAssignment& evidence) {
  std::vector<VariableId> out;
  for (std::size_t v = 0; v < model.num_variables(); ++v) {
    if (!evidence.count(static_cast<VariableId>(v))) {
      out.push_back(static_cast<VariableId>(v));
    }
  }
  return out;
}

// Advances `a` over the variables in `vars` like an odometer, last fastest.
// Returns false after the final assignment.
bool next_assignment(const DiscreteModel& model, std::span<const VariableId> vars,
                     Assignment& a) {
  for (std::size_t i = vars.size(); i-- > 0;) {
    const VariableId v = vars[i];
    if (++a[v] < model.cardinality(v)) return true;
    a[v] = 0;
  }
  return false;
}

void normalize_log(std::vector<double>& logs, std::vector<double>& probs) {
  const double total = log_sum_exp(logs);
  probs.resize(logs.size());
  for (std::size_t i = 0; i < logs.size(); ++i) {
    if (logs[i] == kNegInf) {
      probs[i] = 0.0;
    } else {
      logs[i] -= total;
      probs[i] = std::exp(logs[i]);
    }
  }
}

// Factor over a sorted scope with log-space entries.
struct LogFactor {
  std::vector<VariableId> scope;
  std::vector<std::size_t> strides;
  std::vector<double> logv;
};

std::vector<std::size_t> strides_for(const DiscreteModel& model,
                                     const std::vector<VariableId>& scope) {
  std::vector<std::size_t> s(scope.size(), 1);
  for (std::size_t i = scope.size(); i-- > 1;) {
    s[i - 1] = s[i] * static_cast<std::size_t>(model.cardinality(scope[i]));
  }
  return s;
}

std::size_t entries_for(const DiscreteModel& model,
                        const std::vector<VariableId>& scope) {
  std::size_t n = 1;
  for (VariableId v : scope) n *= static_cast<std::size_t>(model.cardinality(v));
  return n;
}

// Restricts a model factor to the evidence and re-expresses it over its
// sorted latent scope.
LogFactor reduce_factor(const DiscreteModel& model, std::size_t f,
                        const PartialAssignment& evidence) {
  const auto& scope = model.factor(f).scope;
  LogFactor out;
  for (VariableId v : scope) {
    if (!evidence.count(v)) out.scope.push_back(v);
  }
  std::sort(out.scope.begin(), out.scope.end());
  out.strides = strides_for(model, out.scope);
  out.logv.assign(entries_for(model, out.scope), kNegInf);
  Assignment a(model.num_variables(), 0);
  for (const auto& [v, s] : evidence) a[v] = s;
  const auto table = model.log_table(f);
  std::size_t idx = 0;
  do {
    out.logv[idx++] = table[model.table_index(f, a)];
  } while (next_assignment(model, out.scope, a));
  return out;
}

// Multiplies `factors` and sums out `var`, all in log space.
LogFactor multiply_and_sum_out(const DiscreteModel& model,
                               const std::vector<const LogFactor*>& factors,
                               VariableId var, std::size_t cap) {
  std::vector<VariableId> joint;
  for (const LogFactor* f : factors) {
    joint.insert(joint.end(), f->scope.begin(), f->scope.end());
  }
  std::sort(joint.begin(), joint.end());
  joint.erase(std::unique(joint.begin(), joint.end()), joint.end());
  const std::size_t joint_size = entries_for(model, joint);
  if (joint_size > cap) {
    throw ResourceError("intermediate factor with " + std::to_string(joint_size) +
                        " entries exceeds cap of " + std::to_string(cap));
  }
  LogFactor out;
  for (VariableId v : joint) {
    if (v != var) out.scope.push_back(v);
  }
  out.strides = strides_for(model, out.scope);
  out.logv.assign(entries_for(model, out.scope), kNegInf);

  // Strides of each input factor expressed over the joint scope.
  std::vector<std::vector<std::size_t>> in_strides(factors.size());
  for (std::size_t k = 0; k < factors.size(); ++k) {
    in_strides[k].assign(joint.size(), 0);
    for (std::size_t i = 0; i < factors[k]->scope.size(); ++i) {
      const auto pos = std::lower_bound(joint.begin(), joint.end(),
                                        factors[k]->scope[i]) - joint.begin();
      in_strides[k][static_cast<std::size_t>(pos)] = factors[k]->strides[i];
    }
  }
  std::vector<std::size_t> out_strides(joint.size(), 0);
  for (std::size_t i = 0, j = 0; i < joint.size(); ++i) {
    if (joint[i] != var) out_strides[i] = out.strides[j++];
  }

  // First pass collects the per-output maximum, second pass sums shifted
  // exponentials.
  std::vector<int> states(joint.size(), 0);
  std::vector<double> values(joint_size);
  std::vector<std::size_t> out_index(joint_size);
  for (std::size_t e = 0; e < joint_size; ++e) {
    double lv = 0.0;
    std::size_t oi = 0;
    for (std::size_t i = 0; i < joint.size(); ++i) {
      oi += static_cast<std::size_t>(states[i]) * out_strides[i];
    }
    for (std::size_t k = 0; k < factors.size() && lv != kNegInf; ++k) {
      std::size_t fi = 0;
      for (std::size_t i = 0; i < joint.size(); ++i) {
        fi += static_cast<std::size_t>(states[i]) * in_strides[k][i];
      }
      const double x = factors[k]->logv[fi];
      lv = x == kNegInf ? kNegInf : lv + x;
    }
    values[e] = lv;
    out_index[e] = oi;
    out.logv[oi] = std::max(out.logv[oi], lv);
    for (std::size_t i = joint.size(); i-- > 0;) {
      if (++states[i] < model.cardinality(joint[i])) break;
      states[i] = 0;
    }
  }
  std::vector<double> sums(out.logv.size(), 0.0);
  for (std::size_t e = 0; e < joint_size; ++e) {
    const double peak = out.logv[out_index[e]];
    if (values[e] != kNegInf) sums[out_index[e]] += std::exp(values[e] - peak);
  }
  for (std::size_t o = 0; o < out.logv.size(); ++o) {
    if (out.logv[o] != kNegInf) out.logv[o] += std::log(sums[o]);
  }
  return out;
}

std::vector<double> query_marginal(const DiscreteModel& model,
                                   std::vector<LogFactor> factors,
                                   std::span<const VariableId> order,
                                   VariableId query, std::size_t cap) {
  for (VariableId x : order) {
    if (x == query) continue;
    std::vector<const LogFactor*> involved;
    std::vector<LogFactor> rest;
    rest.reserve(factors.size());
    for (auto& f : factors) {
      if (std::binary_search(f.scope.begin(), f.scope.end(), x)) {
        involved.push_back(&f);
      }
    }
    if (involved.empty()) continue;
    LogFactor merged = multiply_and_sum_out(model, involved, x, cap);
    for (auto& f : factors) {
      if (!std::binary_search(f.scope.begin(), f.scope.end(), x)) {
        rest.push_back(std::move(f));
      }
    }
    rest.push_back(std::move(merged));
    factors = std::move(rest);
  }
  const int card = model.cardinality(query);
  std::vector<double> logs(static_cast<std::size_t>(card), 0.0);
  for (const auto& f : factors) {
    if (f.scope.empty()) {
      for (auto& l : logs) l = (l == kNegInf || f.logv[0] == kNegInf) ? kNegInf : l + f.logv[0];
    } else {
      // Only the query can remain once everything else is eliminated.
      for (int s = 0; s < card; ++s) {
        const double x = f.logv[static_cast<std::size_t>(s)];
        auto& l = logs[static_cast<std::size_t>(s)];
        l = (l == kNegInf || x == kNegInf) ? kNegInf : l + x;
      }
    }
  }
  if (log_sum_exp(logs) == kNegInf) {
    throw InconsistencyError("evidence has zero probability");
  }
  std::vector<double> probs;
  normalize_log(logs, probs);
  return probs;
}

}  // namespace

std::size_t BlockConditional::index_of(std::span<const int> states) const {
  std::size_t idx = 0;
  for (std::size_t i = 0; i < states.size(); ++i) {
    idx = idx * static_cast<std::size_t>(cardinalities[i]) +
          static_cast<std::size_t>(states[i]);
  }
  return idx;
}

std::vector<int> BlockConditional::states_of(std::size_t index) const {
  std::vector<int> states(cardinalities.size());
  for (std::size_t i = cardinalities.size(); i-- > 0;) {
    const auto c = static_cast<std::size_t>(cardinalities[i]);
    states[i] = static_cast<int>(index % c);
    index /= c;
  }
  return states;
}

double binary_dims(const DiscreteModel& model, std::span<const VariableId> vars) {
  double dims = 0.0;
  for (VariableId v : vars) dims += std::log2(static_cast<double>(model.cardinality(v)));
  return dims;
}

MarginalTable enumerate_marginals(const DiscreteModel& model,
                                  const PartialAssignment& evidence,
                                  double max_dims) {
  model.check_partial(evidence);
  const auto latent = latent_variables(model, evidence);
  const double dims = binary_dims(model, latent);
  if (dims > max_dims + 1e-9) {
    throw SizeGuardError("enumeration over " + std::to_string(dims) +
                         " binary dimensions exceeds guard of " +
                         std::to_string(max_dims));
  }
  std::vector<std::vector<double>> acc(model.num_variables());
  for (std::size_t v = 0; v < acc.size(); ++v) {
    acc[v].assign(static_cast<std::size_t>(model.cardinality(static_cast<VariableId>(v))), 0.0);
  }
  Assignment a(model.num_variables(), 0);
  for (const auto& [v, s] : evidence) a[v] = s;
  double peak = kNegInf;
  do {
    double lw = 0.0;
    for (std::size_t f = 0; f < model.factors().size() && lw != kNegInf; ++f) {
      const double x = model.log_entry(f, a);
      lw = x == kNegInf ? kNegInf : lw + x;
    }
    if (lw == kNegInf) continue;
    if (lw > peak) {
      // Rescale the running sums to the new maximum.
      const double scale = peak == kNegInf ? 0.0 : std::exp(peak - lw);
      for (auto& row : acc) {
        for (auto& x : row) x *= scale;
      }
      peak = lw;
    }
    const double w = std::exp(lw - peak);
    for (std::size_t v = 0; v < acc.size(); ++v) {
      acc[v][static_cast<std::size_t>(a[v])] += w;
    }
  } while (next_assignment(model, latent, a));
  if (peak == kNegInf) throw InconsistencyError("evidence has zero probability");
  MarginalTable out;
  out.probs = std::move(acc);
  for (auto& row : out.probs) {
    double total = 0.0;
    for (double x : row) total += x;
    for (auto& x : row) x /= total;
  }
  return out;
}

std::vector<VariableId> min_fill_order(const DiscreteModel& model,
                                       std::span<const VariableId> vars) {
  const std::size_t n = model.num_variables();
  std::vector<std::set<VariableId>> adj(n);
  std::vector<char> active(n, 0);
  for (VariableId v : vars) active[v] = 1;
  for (const auto& f : model.factors()) {
    for (VariableId a : f.scope) {
      for (VariableId b : f.scope) {
        if (a != b && active[a] && active[b]) adj[a].insert(b);
      }
    }
  }
  std::vector<VariableId> order;
  std::vector<char> remaining = active;
  for (std::size_t step = 0; step < vars.size(); ++step) {
    VariableId best = 0;
    std::size_t best_fill = std::numeric_limits<std::size_t>::max();
    for (std::size_t v = 0; v < n; ++v) {
      if (!remaining[v]) continue;
      std::size_t fill = 0;
      for (auto i = adj[v].begin(); i != adj[v].end(); ++i) {
        for (auto j = std::next(i); j != adj[v].end(); ++j) {
          if (!adj[*i].count(*j)) ++fill;
        }
      }
      if (fill < best_fill) {
        best_fill = fill;
        best = static_cast<VariableId>(v);
      }
    }
    for (VariableId a : adj[best]) {
      for (VariableId b : adj[best]) {
        if (a != b) adj[a].insert(b);
      }
      adj[a].erase(best);
    }
    adj[best].clear();
    remaining[best] = 0;
    order.push_back(best);
  }
  return order;
}

MarginalTable variable_elimination_marginals(const DiscreteModel& model,
                                             const PartialAssignment& evidence,
                                             const EliminationOptions& options) {
  model.check_partial(evidence);
  const auto latent = latent_variables(model, evidence);
  std::vector<VariableId> order = options.order;
  if (order.empty()) {
    order = min_fill_order(model, latent);
  } else {
    std::vector<char> seen(model.num_variables(), 0);
    for (VariableId v : order) {
      model.check_variable(v);
      seen[v] = 1;
    }
    for (VariableId v : latent) {
      if (!seen[v]) {
        throw PreconditionError("elimination order misses variable " +
                                std::to_string(v));
      }
    }
  }
  std::vector<LogFactor> reduced;
  reduced.reserve(model.factors().size());
  for (std::size_t f = 0; f < model.factors().size(); ++f) {
    reduced.push_back(reduce_factor(model, f, evidence));
  }
  // Constant factors (fully observed scopes) can zero out the evidence.
  for (const auto& f : reduced) {
    if (f.scope.empty() && f.logv[0] == kNegInf) {
      throw InconsistencyError("evidence has zero probability");
    }
  }
  MarginalTable out;
  out.probs.resize(model.num_variables());
  for (std::size_t v = 0; v < model.num_variables(); ++v) {
    const auto id = static_cast<VariableId>(v);
    if (auto it = evidence.find(id); it != evidence.end()) {
      out.probs[v].assign(static_cast<std::size_t>(model.cardinality(id)), 0.0);
      out.probs[v][static_cast<std::size_t>(it->second)] = 1.0;
      continue;
    }
    std::vector<VariableId> local_order;
    for (VariableId x : order) {
      if (!evidence.count(x)) local_order.push_back(x);
    }
    out.probs[v] = query_marginal(model, reduced, local_order, id,
                                  options.max_factor_entries);
  }
  if (latent.empty()) {
    Assignment a(model.num_variables(), 0);
    for (const auto& [v, s] : evidence) a[v] = s;
    if (log_joint(model, a).is_zero()) {
      throw InconsistencyError("evidence has zero probability");
    }
  }
  return out;
}

BlockConditional exact_block_conditional(const DiscreteModel& model,
                                         std::span<const VariableId> block,
                                         const PartialAssignment& conditioning) {
  model.check_partial(conditioning);
  Assignment state(model.num_variables(), 0);
  for (const auto& [v, s] : conditioning) state[v] = s;
  std::vector<char> in_block(model.num_variables(), 0);
  for (VariableId v : block) {
    model.check_variable(v);
    in_block[v] = 1;
  }
  for (VariableId v : markov_blanket(model, block)) {
    if (!conditioning.count(v)) {
      throw PreconditionError("conditioning does not assign Markov blanket variable " +
                              std::to_string(v));
    }
  }
  return exact_block_conditional(model, block, state);
}

BlockConditional exact_block_conditional(const DiscreteModel& model,
                                         std::span<const VariableId> block,
                                         const Assignment& state) {
  if (state.size() != model.num_variables()) {
    throw PreconditionError("state does not cover the model");
  }
  if (binary_dims(model, block) > 16.0 + 1e-9) {
    throw SizeGuardError("block exceeds 16 binary-equivalent dimensions");
  }
  BlockConditional out;
  out.block.assign(block.begin(), block.end());
  std::size_t size = 1;
  for (VariableId v : block) {
    out.cardinalities.push_back(model.cardinality(v));
    size *= static_cast<std::size_t>(model.cardinality(v));
  }
  const auto touching = factors_touching(model, block);
  Assignment a = state;
  for (VariableId v : block) a[v] = 0;
  out.log_table.resize(size);
  std::size_t idx = 0;
  do {
    out.log_table[idx++] = log_factor_product(model, touching, a);
  } while (next_assignment(model, block, a));
  if (log_sum_exp(out.log_table) == kNegInf) {
    throw InconsistencyError("conditioning values have zero probability mass");
  }
  normalize_log(out.log_table, out.table);
  return out;
}

Assignment sample_exact(const DiscreteModel& model, const PartialAssignment& evidence,
                        Rng& rng, double max_dims) {
  model.check_partial(evidence);
  const auto latent = latent_variables(model, evidence);
  if (binary_dims(model, latent) > max_dims + 1e-9) {
    throw SizeGuardError("exact sampling exceeds the enumeration guard");
  }
  Assignment a(model.num_variables(), 0);
  for (const auto& [v, s] : evidence) a[v] = s;
  std::vector<double> logs;
  do {
    logs.push_back(log_joint(model, a).value());
  } while (next_assignment(model, latent, a));
  const int pick = sample_log_categorical(logs, rng);
  if (pick < 0) throw InconsistencyError("evidence has zero probability");
  // Decode the odometer position back into states, last variable fastest.
  std::size_t idx = static_cast<std::size_t>(pick);
  for (std::size_t i = latent.size(); i-- > 0;) {
    const auto c = static_cast<std::size_t>(model.cardinality(latent[i]));
    a[latent[i]] = static_cast<int>(idx % c);
    idx /= c;
  }
  return a;
}

}  // namespace nbs
