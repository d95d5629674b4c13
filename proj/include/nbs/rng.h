#pragma once

#include <cstdint>
#include <limits>
#include <span>

namespace nbs {

// Counter-based generator: the i-th output is a pure function of
// (key, i), so streams can be derived per chain or per training sample
// without sharing state between threads. Satisfies
// UniformRandomBitGenerator so it plugs into <random> distributions.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed = 0, std::uint64_t stream = 0);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }

  result_type operator()();

  // Uniform on [0, 1).
  double uniform();
  // Uniform on (0, 1]; safe to take the log of.
  double uniform_pos();
  double normal();
  double gamma(double shape);
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p) { return uniform() < p; }

  // Independent child stream; does not advance this generator.
  Rng split(std::uint64_t stream) const;

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

// Draws an index with probability proportional to exp(log_weights[i]).
// Entries of -inf are never chosen. Returns -1 if every weight is -inf.
int sample_log_categorical(std::span<const double> log_weights, Rng& rng);

}  // namespace nbs
