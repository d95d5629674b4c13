#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "nbs/rng.h"

namespace nbs {

// One proposed variable. Categorical heads take an integer state as target;
// Gaussian heads an isotropic `size`-dimensional real vector.
struct HeadSpec {
  enum class Kind : std::uint32_t { categorical = 0, gaussian = 1 };
  Kind kind = Kind::categorical;
  int size = 2;  // cardinality, or dimension for Gaussian heads

  static HeadSpec categorical(int cardinality) { return {Kind::categorical, cardinality}; }
  static HeadSpec gaussian(int dim) { return {Kind::gaussian, dim}; }

  // Network outputs consumed per mixture component. Binary heads use a
  // single logit; K-ary heads K logits; Gaussian heads `size` means plus one
  // raw variance.
  int raw_size() const;
  // Entries of the flat target vector.
  int target_size() const { return kind == Kind::categorical ? 1 : size; }

  friend bool operator==(const HeadSpec&, const HeadSpec&) = default;
};

struct MdnConfig {
  std::size_t input_dim = 0;
  std::array<std::size_t, 2> hidden_dims{0, 0};
  int n_mixtures = 4;
  std::vector<HeadSpec> heads;
  double variance_floor = 1e-5;
  // Name of the input encoding the network was trained under.
  std::string encoding;

  std::size_t output_dim() const;
  std::size_t target_dim() const;
  std::size_t num_params() const;
  // Throws ConfigError on inconsistent dimensions.
  void validate() const;

  // Hidden widths lambda * max(input_dim, output_dim).
  static MdnConfig sized(std::size_t input_dim, std::vector<HeadSpec> heads,
                         int n_mixtures, std::string encoding, double lambda = 4.0);

  friend bool operator==(const MdnConfig&, const MdnConfig&) = default;
};

// Network weights as one flat vector, layer order W1 b1 W2 b2 W3 b3, each
// matrix column-major with shape (fan_out, fan_in).
struct MdnParams {
  MdnConfig config;
  Eigen::VectorXd theta;

  // Uniform in +-sqrt(6 / (fan_in + fan_out)), zero biases.
  static MdnParams initialize(const MdnConfig& config, Rng& rng);
  static MdnParams zeros(const MdnConfig& config);
};

struct HeadParams {
  // Categorical heads.
  std::vector<double> probs;
  std::vector<double> log_probs;
  // Gaussian heads.
  std::vector<double> mean;
  double variance = 1.0;
};

// Mixture of fully factorized components.
struct MixtureProposal {
  std::vector<HeadSpec> heads;
  std::vector<double> log_weights;
  // components[k][h]
  std::vector<std::vector<HeadParams>> components;

  std::size_t target_dim() const;
  // Order-sensitive hash of every parameter bit.
  std::uint64_t fingerprint() const;
};

// Raw network output for one input.
Eigen::VectorXd forward_raw(const MdnParams& params, std::span<const double> input);
// Maps raw outputs to proposal parameters.
MixtureProposal decode_output(const MdnConfig& config, std::span<const double> raw);
MixtureProposal forward(const MdnParams& params, std::span<const double> input);

double log_density(const MixtureProposal& proposal, std::span<const double> target);

struct ProposalDraw {
  std::vector<double> value;
  double log_density = 0.0;
};
ProposalDraw sample(const MixtureProposal& proposal, Rng& rng);

// Inputs and targets stored one sample per column.
struct Batch {
  Eigen::MatrixXd inputs;
  Eigen::MatrixXd targets;

  Batch() = default;
  Batch(std::size_t input_dim, std::size_t target_dim, std::size_t size)
      : inputs(input_dim, size), targets(target_dim, size) {}
  std::size_t size() const { return static_cast<std::size_t>(inputs.cols()); }
};

// Mean negative log density over the batch, and its gradient in `grad`.
// Throws TrainingError naming the first sample with a non-finite loss.
double grad_nll(const MdnParams& params, const Batch& batch, Eigen::VectorXd& grad);
double batch_nll(const MdnParams& params, const Batch& batch);

struct OptimizerConfig {
  enum class Kind { adam, sgd };
  Kind kind = Kind::adam;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 256;
  std::size_t steps = 0;
  double divergence_threshold = 1e6;
  // Cosine decay from learning_rate to this fraction of it over `steps`;
  // 1 keeps the rate constant.
  double final_lr_fraction = 1.0;

  double learning_rate_at(std::size_t step) const;
};

// Fills the batch for the given step; must be deterministic in `step`.
using BatchSource = std::function<void(std::size_t step, Batch& batch)>;
// Called after each step with the minibatch loss and the updated params.
using StepCallback =
    std::function<void(std::size_t step, double loss, const MdnParams& params)>;

MdnParams optimize(MdnParams params, const BatchSource& source,
                   const OptimizerConfig& options, const StepCallback& on_step = {});

// Versioned binary weights file. Throws VersionError on a magic, version or
// shape mismatch.
void save_params(const std::string& path, const MdnParams& params);
MdnParams load_params(const std::string& path);
std::string serialize_params(const MdnParams& params);
MdnParams deserialize_params(std::string_view bytes);

}  // namespace nbs
