#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "nbs/mdn.h"
#include "nbs/motifs.h"
#include "nbs/rng.h"
#include "nbs/samplers.h"

namespace nbs {

// Truncated open-universe mixture: at most m isotropic Gaussian components,
// M ~ Unif{1..m} of them active, n observations in d dimensions.
struct GmmSpec {
  int m = 8;
  int n = 60;
  double sigma2_mu = 4.0;
  double sigma2 = 0.1;
  int d = 2;

  void validate() const;
};

// Observations are rows of an n x d matrix.
using GmmData = Eigen::MatrixXd;

struct GmmState {
  Eigen::MatrixXd mu;  // m x d
  std::vector<int> v;  // activity bits
  std::vector<int> z;  // labels; empty when collapsed

  int active_count() const;
};

// log p(mu, v, x) with z summed out, including the priors on mu, v and M:
// log p(M) - log C(m, M) + sum_j log N(mu_j; 0, sigma2_mu I)
//   + sum_i log[(1/M) sum_{j active} N(x_i; mu_j, sigma2 I)].
// Throws DomainError when no component is active.
double collapsed_log_likelihood(const GmmSpec& spec, const Eigen::MatrixXd& mu,
                                std::span<const int> v, const GmmData& x);
// log p(mu, v, z, x); -inf when a label points to an inactive component.
double full_log_joint(const GmmSpec& spec, const Eigen::MatrixXd& mu, std::span<const int> v,
                      std::span<const int> z, const GmmData& x);

// log p(z_i = j | mu, v, x) for every active j (-inf for inactive ones).
std::vector<double> label_log_probs(const GmmSpec& spec, const Eigen::MatrixXd& mu,
                                    std::span<const int> v, const GmmData& x, int i);
void resample_labels(const GmmSpec& spec, GmmState& state, const GmmData& x, Rng& rng);

// Principal axis of the centered data with its first nonzero coordinate
// positive.
Eigen::VectorXd principal_component(const GmmData& x);

// Network input for proposing components j and k: points sorted by their
// principal-component score, the other components sorted by the projection
// of their means (mean then activity bit), the two proposed components
// zeroed in the last slots, a proposed-slot mask, the principal axis and the
// data mean.
std::vector<double> encode_gmm_input(const GmmSpec& spec, const Eigen::MatrixXd& mu,
                                     std::span<const int> v, const GmmData& x, int j, int k);
std::size_t gmm_input_dim(const GmmSpec& spec);
Motif gmm_motif(const GmmSpec& spec);

// Proposal target layout: [mu_j (d), v_j, mu_k (d), v_k].
std::vector<double> pair_target(const GmmState& state, int j, int k);

// MH on the collapsed model for a pair move drawn from q. Forward and
// reverse densities are both read from q. A draw with no active component
// is rejected; on acceptance the labels are resampled exactly.
ProposalOutcome gmm_pair_step(const GmmSpec& spec, GmmState& state, const GmmData& x, int j,
                              int k, const MixtureProposal& q, Rng& rng);

// Picks a uniform pair (and, for models larger than the network's, random
// component and point subsets of the network's size) and applies a neural
// pair move. Throws VersionError when params do not match the encoding.
ProposalOutcome neural_pair_step(const GmmSpec& spec, GmmState& state, const MdnParams& params,
                                 const GmmData& x, Rng& rng);

// Exact p(mu_j, v_j, mu_k, v_k | rest, x) as a mixture over label patterns
// of the data. Exponential in n; guarded at n <= 10.
MixtureProposal exact_pair_conditional(const GmmSpec& spec, const GmmState& state,
                                       const GmmData& x, int j, int k);

// One sweep of truncated single-site Gibbs: labels, then conjugate means,
// then activity bits. v_j is frozen while any label points to j.
void gibbs_truncated_sweep(const GmmSpec& spec, GmmState& state, const GmmData& x, Rng& rng);

// M active components chosen uniformly; their means start at distinct
// random data points, inactive means come from the prior; labels exact.
GmmState initialize_gmm_state(const GmmSpec& spec, const GmmData& x, int active, Rng& rng);

// Draw from the generative model.
struct GmmSample {
  GmmState state;
  GmmData x;
};
GmmSample sample_gmm_prior(const GmmSpec& spec, Rng& rng);

// Points around `clusters` centers evenly spaced on a circle of radius
// `separation`, with isotropic noise variance sigma2.
GmmData generate_cluster_data(int n, int clusters, double separation, double sigma2, Rng& rng);

GmmData read_points_csv(const std::string& path);
std::string points_to_csv(const GmmData& x);

struct GmmTracePoint {
  long long step = 0;
  int active = 0;
  double log_likelihood = 0.0;
};

enum class GmmSamplerKind { neural, gibbs };

struct GmmRunResult {
  std::vector<GmmTracePoint> trace;
  GmmState final_state;
  std::uint64_t proposed = 0;
  std::uint64_t accepted = 0;
};

// `steps` pair moves (neural) or sweeps (gibbs); the trace includes step 0.
GmmRunResult run_gmm_chain(const GmmSpec& spec, const GmmData& x, GmmState state,
                           GmmSamplerKind kind, long long steps, Rng rng,
                           const MdnParams* params = nullptr);
std::string gmm_trace_csv(const std::vector<GmmTracePoint>& trace);
std::size_t distinct_active_counts(const std::vector<GmmTracePoint>& trace);
std::size_t active_count_changes(const std::vector<GmmTracePoint>& trace);

// Training data for the pair proposal: a prior draw, a uniform pair, the
// encoded input and the pair's current values as target.
struct GmmTrainingJob {
  GmmSpec spec;
  MdnConfig config;
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;
};
std::pair<std::vector<double>, std::vector<double>> make_gmm_training_example(const GmmSpec& spec,
                                                                              Rng& rng);
MdnParams train_gmm_proposal(const GmmTrainingJob& job, std::vector<double>* loss_curve = nullptr);

}  // namespace nbs
