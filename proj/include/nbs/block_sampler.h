#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "nbs/mdn.h"
#include "nbs/model.h"
#include "nbs/motifs.h"
#include "nbs/oracle.h"
#include "nbs/samplers.h"

namespace nbs {

struct ProposalEntry {
  Motif motif;
  std::shared_ptr<const MdnParams> params;
};

// Trained proposals keyed by motif name.
class ProposalLibrary {
 public:
  // Throws VersionError when the params' encoding or shape does not match
  // the motif.
  void add(const Motif& motif, std::shared_ptr<const MdnParams> params);
  const ProposalEntry* find(const std::string& motif_name) const;
  std::vector<Motif> motifs() const;
  bool empty() const { return entries_.empty(); }

 private:
  std::map<std::string, ProposalEntry> entries_;
};

enum class MoveKind { single, neural, exact_block };
enum class SamplerKind { gibbs, block_exact, neural, mixed };

const char* move_kind_name(MoveKind kind);
SamplerKind parse_sampler_kind(const std::string& name);
const char* sampler_kind_name(SamplerKind kind);

struct PlannedMove {
  MoveKind kind = MoveKind::single;
  // Index into SamplerSchedule::instantiations; -1 for single-site moves.
  int instantiation = -1;
};

struct SamplerSchedule {
  std::vector<VariableId> latent;
  // One entry per latent variable, same order.
  std::vector<PlannedMove> plan;
  std::vector<MotifInstantiation> instantiations;
  // Probability of taking the planned block move instead of a single-site
  // update; 1 means always.
  double mix_ratio = 1.0;

  std::size_t block_moves() const;
};

// Per latent variable (ascending): the instantiation centered on it, else
// the first one containing it, else single-site Gibbs. Instantiations with
// evidence in B are never used.
SamplerSchedule build_schedule(const DiscreteModel& model, const PartialAssignment& evidence,
                               std::span<const Motif> motifs, SamplerKind kind,
                               double mix_ratio = 1.0, const DetectOptions& detect = {});

struct NeuralStepDiagnostics {
  std::uint64_t forward_fingerprint = 0;
  std::uint64_t reverse_fingerprint = 0;
};

// MH move on inst's block using its library proposal. Forward and reverse
// densities come from the same network output, since a block move leaves
// the conditioning values unchanged. Throws ScheduleError on a library miss.
ProposalOutcome neural_block_step(const DiscreteModel& model, ChainState& state,
                                  const MotifInstantiation& inst, const ProposalLibrary& library,
                                  NeuralStepDiagnostics* diagnostics = nullptr);

struct MoveStats {
  std::uint64_t proposed = 0;
  std::uint64_t accepted = 0;
  std::uint64_t flagged = 0;

  double acceptance_rate() const {
    return proposed ? static_cast<double>(accepted) / static_cast<double>(proposed) : 0.0;
  }
};

struct MoveRecord {
  long long epoch = 0;
  std::int64_t wall_ns = 0;
  MoveKind kind = MoveKind::single;
  int block_id = -1;
  bool accepted = false;
  double log_joint = 0.0;
};

// Cumulative per-state counts after `samples` samples.
struct CountCheckpoint {
  std::size_t samples = 0;
  std::vector<std::vector<std::uint64_t>> counts;
};

struct Trace {
  std::vector<int> cardinalities;
  // Samples are the initial state plus the state after every epoch.
  std::size_t num_samples = 0;
  long long epochs = 0;
  std::int64_t wall_ns = 0;
  std::vector<std::vector<std::uint64_t>> counts;
  std::vector<CountCheckpoint> checkpoints;
  Assignment initial_state;
  Assignment final_state;
  std::vector<Assignment> samples;  // only with record_samples
  std::vector<MoveRecord> moves;    // only with record_moves
  MoveStats single;
  MoveStats neural;
  MoveStats exact_block;

  // Running estimate over every sample so far.
  MarginalTable current_marginals() const;
  std::string moves_csv() const;
};

struct EpochInfo {
  long long epoch = 0;
  std::int64_t wall_ns = 0;
  const ChainState* state = nullptr;
  const Trace* trace = nullptr;
};

struct InferenceOptions {
  long long epochs = 0;
  // Stop after the first epoch that ends past this many seconds; 0 = none.
  double wall_cap_secs = 0.0;
  bool record_samples = false;
  bool record_moves = false;
  // Roughly this many count checkpoints are kept for burn-in.
  std::size_t checkpoint_target = 1024;
  // Time spent in the callback is left out of every reported wall time.
  std::function<void(const EpochInfo&)> on_epoch;
};

// Runs epochs of the schedule from an initial state drawn with `rng`.
Trace run_inference(const DiscreteModel& model, const PartialAssignment& evidence,
                    const ProposalLibrary& library, const SamplerSchedule& schedule, Rng rng,
                    const InferenceOptions& options);

// Empirical state frequencies after discarding the first `burn_in`
// fraction of samples. Without stored samples the cut snaps down to the
// nearest checkpoint. Throws PreconditionError when nothing remains.
MarginalTable estimate_marginals(const Trace& trace, double burn_in = 0.0);

}  // namespace nbs
