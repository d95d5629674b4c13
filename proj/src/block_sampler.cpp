#include "nbs/block_sampler.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

#include "nbs/errors.h"

namespace nbs {
namespace {

using Clock = std::chrono::steady_clock;

std::int64_t elapsed_ns(Clock::time_point start) {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - start).count();
}

void add_counts(std::vector<std::vector<std::uint64_t>>& counts, const Assignment& a) {
  for (std::size_t v = 0; v < a.size(); ++v) ++counts[v][static_cast<std::size_t>(a[v])];
}

MarginalTable normalize_counts(const std::vector<std::vector<std::uint64_t>>& counts,
                               std::size_t total) {
  MarginalTable out;
  out.probs.resize(counts.size());
  for (std::size_t v = 0; v < counts.size(); ++v) {
    out.probs[v].resize(counts[v].size());
    for (std::size_t s = 0; s < counts[v].size(); ++s) {
      out.probs[v][s] = static_cast<double>(counts[v][s]) / static_cast<double>(total);
    }
  }
  return out;
}

MoveStats& stats_for(Trace& trace, MoveKind kind) {
  switch (kind) {
    case MoveKind::neural:
      return trace.neural;
    case MoveKind::exact_block:
      return trace.exact_block;
    case MoveKind::single:
      break;
  }
  return trace.single;
}

}  // namespace

void ProposalLibrary::add(const Motif& motif, std::shared_ptr<const MdnParams> params) {
  if (!params) throw PreconditionError("null params");
  const MdnConfig& c = params->config;
  if (c.encoding != motif.encoding) {
    throw VersionError("params for motif '" + motif.name + "' were trained under encoding '" +
                       c.encoding + "', expected '" + motif.encoding + "'");
  }
  if (c.input_dim != motif.input_dim || c.heads != motif.heads) {
    throw VersionError("params shape does not match motif '" + motif.name + "'");
  }
  entries_[motif.name] = ProposalEntry{motif, std::move(params)};
}

const ProposalEntry* ProposalLibrary::find(const std::string& motif_name) const {
  const auto it = entries_.find(motif_name);
  return it == entries_.end() ? nullptr : &it->second;
}

std::vector<Motif> ProposalLibrary::motifs() const {
  std::vector<Motif> out;
  for (const auto& [name, e] : entries_) out.push_back(e.motif);
  return out;
}

const char* move_kind_name(MoveKind kind) {
  switch (kind) {
    case MoveKind::neural:
      return "neural";
    case MoveKind::exact_block:
      return "exact";
    case MoveKind::single:
      break;
  }
  return "single";
}

SamplerKind parse_sampler_kind(const std::string& name) {
  if (name == "gibbs") return SamplerKind::gibbs;
  if (name == "block-exact") return SamplerKind::block_exact;
  if (name == "neural") return SamplerKind::neural;
  if (name == "mixed") return SamplerKind::mixed;
  throw ConfigError("unknown sampler '" + name + "' (gibbs, block-exact, neural, mixed)");
}

const char* sampler_kind_name(SamplerKind kind) {
  switch (kind) {
    case SamplerKind::block_exact:
      return "block-exact";
    case SamplerKind::neural:
      return "neural";
    case SamplerKind::mixed:
      return "mixed";
    case SamplerKind::gibbs:
      break;
  }
  return "gibbs";
}

std::size_t SamplerSchedule::block_moves() const {
  std::size_t n = 0;
  for (const auto& p : plan) n += p.kind != MoveKind::single ? 1 : 0;
  return n;
}

SamplerSchedule build_schedule(const DiscreteModel& model, const PartialAssignment& evidence,
                               std::span<const Motif> motifs, SamplerKind kind,
                               double mix_ratio, const DetectOptions& detect) {
  if (!(mix_ratio >= 0.0 && mix_ratio <= 1.0)) throw ConfigError("mix_ratio must lie in [0, 1]");
  model.check_partial(evidence);
  SamplerSchedule s;
  s.mix_ratio = kind == SamplerKind::mixed ? mix_ratio : 1.0;
  for (std::size_t v = 0; v < model.num_variables(); ++v) {
    if (!evidence.count(static_cast<VariableId>(v))) s.latent.push_back(static_cast<VariableId>(v));
  }
  s.plan.assign(s.latent.size(), PlannedMove{});
  if (kind == SamplerKind::gibbs) return s;

  DetectOptions opts = detect;
  for (const auto& [v, value] : evidence) opts.excluded.push_back(v);
  for (const Motif& m : motifs) {
    auto found = detect_instantiations(model, m, opts);
    s.instantiations.insert(s.instantiations.end(), std::make_move_iterator(found.begin()),
                            std::make_move_iterator(found.end()));
  }
  const MoveKind block_kind = kind == SamplerKind::block_exact ? MoveKind::exact_block
                                                               : MoveKind::neural;
  for (std::size_t i = 0; i < s.latent.size(); ++i) {
    const VariableId v = s.latent[i];
    int pick = -1;
    for (std::size_t j = 0; j < s.instantiations.size() && pick < 0; ++j) {
      if (s.instantiations[j].anchor == v) pick = static_cast<int>(j);
    }
    for (std::size_t j = 0; j < s.instantiations.size() && pick < 0; ++j) {
      if (s.instantiations[j].contains(v)) pick = static_cast<int>(j);
    }
    if (pick >= 0) s.plan[i] = PlannedMove{block_kind, pick};
  }
  return s;
}

ProposalOutcome neural_block_step(const DiscreteModel& model, ChainState& state,
                                  const MotifInstantiation& inst, const ProposalLibrary& library,
                                  NeuralStepDiagnostics* diagnostics) {
  const ProposalEntry* entry = library.find(inst.motif);
  if (!entry) throw ScheduleError("no trained proposal for motif '" + inst.motif + "'");
  if (entry->params->config.encoding != entry->motif.encoding) {
    throw VersionError("proposal encoding does not match motif '" + inst.motif + "'");
  }
  const auto input = encode_input(entry->motif, inst, state.assignment);
  const MixtureProposal q = forward(*entry->params, input);
  int density_calls = 0;
  std::vector<double> target(inst.b_vars.size());
  const ProposalSampler propose = [&q](const Assignment&, Rng& rng) {
    const ProposalDraw draw = sample(q, rng);
    std::vector<int> states(draw.value.size());
    for (std::size_t i = 0; i < states.size(); ++i) states[i] = static_cast<int>(draw.value[i]);
    return states;
  };
  const ProposalDensity density = [&](const Assignment&, std::span<const int> to) {
    if (diagnostics) {
      (density_calls++ == 0 ? diagnostics->forward_fingerprint
                            : diagnostics->reverse_fingerprint) = q.fingerprint();
    }
    for (std::size_t i = 0; i < to.size(); ++i) target[i] = static_cast<double>(to[i]);
    return log_density(q, target);
  };
  return mh_step(model, state, inst.b_vars, propose, density);
}

MarginalTable Trace::current_marginals() const { return normalize_counts(counts, num_samples); }

std::string Trace::moves_csv() const {
  std::string out = "epoch,wall_ns,move_kind,block_id,accepted,log_joint\n";
  char buf[160];
  for (const auto& m : moves) {
    std::snprintf(buf, sizeof(buf), "%lld,%lld,%s,%d,%d,%.17g\n", m.epoch,
                  static_cast<long long>(m.wall_ns), move_kind_name(m.kind), m.block_id,
                  m.accepted ? 1 : 0, m.log_joint);
    out += buf;
  }
  return out;
}

Trace run_inference(const DiscreteModel& model, const PartialAssignment& evidence,
                    const ProposalLibrary& library, const SamplerSchedule& schedule, Rng rng,
                    const InferenceOptions& options) {
  if (options.epochs < 0) throw PreconditionError("negative epoch count");
  if (schedule.plan.size() != schedule.latent.size()) {
    throw ScheduleError("schedule plan does not match its latent variables");
  }
  std::vector<char> covered(model.num_variables(), 0);
  for (VariableId v : schedule.latent) {
    model.check_variable(v);
    covered[v] = 1;
  }
  for (std::size_t v = 0; v < model.num_variables(); ++v) {
    if (!covered[v] && !evidence.count(static_cast<VariableId>(v))) {
      throw ScheduleError("latent variable " + std::to_string(v) + " is not scheduled");
    }
  }
  for (const auto& p : schedule.plan) {
    if (p.kind == MoveKind::single) continue;
    if (p.instantiation < 0 ||
        static_cast<std::size_t>(p.instantiation) >= schedule.instantiations.size()) {
      throw ScheduleError("planned move references a missing instantiation");
    }
    if (p.kind == MoveKind::neural &&
        !library.find(schedule.instantiations[static_cast<std::size_t>(p.instantiation)].motif)) {
      throw ScheduleError("no trained proposal for a scheduled instantiation");
    }
  }

  const auto start = Clock::now();
  std::int64_t excluded_ns = 0;
  ChainState state = initialize_chain(model, evidence, rng);

  Trace trace;
  trace.cardinalities.assign(model.cardinalities().begin(), model.cardinalities().end());
  trace.counts.resize(model.num_variables());
  for (std::size_t v = 0; v < model.num_variables(); ++v) {
    trace.counts[v].assign(static_cast<std::size_t>(model.cardinality(static_cast<VariableId>(v))), 0);
  }
  trace.initial_state = state.assignment;
  add_counts(trace.counts, state.assignment);
  trace.num_samples = 1;
  if (options.record_samples) trace.samples.push_back(state.assignment);

  const long long stride =
      std::max<long long>(1, options.epochs / static_cast<long long>(std::max<std::size_t>(1, options.checkpoint_target)));
  const bool mixing = schedule.mix_ratio > 0.0 && schedule.mix_ratio < 1.0;

  for (long long epoch = 1; epoch <= options.epochs; ++epoch) {
    state.epoch = epoch;
    for (std::size_t i = 0; i < schedule.latent.size(); ++i) {
      const VariableId v = schedule.latent[i];
      const PlannedMove& planned = schedule.plan[i];
      MoveKind kind = planned.kind;
      if (kind != MoveKind::single) {
        if (schedule.mix_ratio <= 0.0) {
          kind = MoveKind::single;
        } else if (mixing && state.rng.uniform() >= schedule.mix_ratio) {
          kind = MoveKind::single;
        }
      }
      bool accepted = true;
      bool flagged = false;
      if (kind == MoveKind::single) {
        gibbs_update(model, state, v);
      } else {
        const auto& inst = schedule.instantiations[static_cast<std::size_t>(planned.instantiation)];
        if (kind == MoveKind::neural) {
          const ProposalOutcome out = neural_block_step(model, state, inst, library);
          accepted = out.accepted;
          flagged = out.flagged;
        } else {
          exact_block_gibbs_step(model, inst.b_vars, state);
        }
      }
      MoveStats& st = stats_for(trace, kind);
      ++st.proposed;
      st.accepted += accepted ? 1 : 0;
      st.flagged += flagged ? 1 : 0;
      if (options.record_moves) {
        trace.moves.push_back({epoch, elapsed_ns(start) - excluded_ns, kind,
                               kind == MoveKind::single ? -1 : planned.instantiation, accepted,
                               log_joint(model, state.assignment).value()});
      }
    }
    add_counts(trace.counts, state.assignment);
    ++trace.num_samples;
    trace.epochs = epoch;
    if (options.record_samples) trace.samples.push_back(state.assignment);
    if (epoch % stride == 0) trace.checkpoints.push_back({trace.num_samples, trace.counts});
    const std::int64_t now = elapsed_ns(start) - excluded_ns;
    if (options.on_epoch) {
      const auto before = Clock::now();
      options.on_epoch(EpochInfo{epoch, now, &state, &trace});
      excluded_ns += std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - before).count();
    }
    if (options.wall_cap_secs > 0.0 && static_cast<double>(now) * 1e-9 >= options.wall_cap_secs) {
      break;
    }
  }
  trace.final_state = state.assignment;
  trace.wall_ns = elapsed_ns(start) - excluded_ns;
  return trace;
}

MarginalTable estimate_marginals(const Trace& trace, double burn_in) {
  if (!(burn_in >= 0.0 && burn_in < 1.0)) throw PreconditionError("burn_in must lie in [0, 1)");
  if (trace.num_samples == 0) throw PreconditionError("empty trace");
  const auto cut = static_cast<std::size_t>(std::floor(burn_in * static_cast<double>(trace.num_samples)));
  if (cut >= trace.num_samples) throw PreconditionError("burn-in discards every sample");
  if (cut == 0) return normalize_counts(trace.counts, trace.num_samples);
  if (!trace.samples.empty()) {
    std::vector<std::vector<std::uint64_t>> counts(trace.counts.size());
    for (std::size_t v = 0; v < counts.size(); ++v) counts[v].assign(trace.counts[v].size(), 0);
    for (std::size_t i = cut; i < trace.samples.size(); ++i) add_counts(counts, trace.samples[i]);
    return normalize_counts(counts, trace.samples.size() - cut);
  }
  const CountCheckpoint* base = nullptr;
  for (const auto& cp : trace.checkpoints) {
    if (cp.samples <= cut) base = &cp;
  }
  if (!base) return normalize_counts(trace.counts, trace.num_samples);
  std::vector<std::vector<std::uint64_t>> counts = trace.counts;
  for (std::size_t v = 0; v < counts.size(); ++v) {
    for (std::size_t s = 0; s < counts[v].size(); ++s) counts[v][s] -= base->counts[v][s];
  }
  return normalize_counts(counts, trace.num_samples - base->samples);
}

}  // namespace nbs
