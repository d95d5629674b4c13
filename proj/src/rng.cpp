#include "nbs/rng.h"

#include <cmath>
#include <random>

#include "nbs/log_prob.h"

namespace nbs {
namespace {

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace

Rng::Rng(std::uint64_t seed, std::uint64_t stream)
    : key_(mix64(mix64(seed + kGolden) ^ mix64(stream * kGolden + 1))) {}

Rng::result_type Rng::operator()() {
  ++counter_;
  return mix64(key_ + counter_ * kGolden);
}

double Rng::uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

double Rng::uniform_pos() {
  return (static_cast<double>((*this)() >> 11) + 1.0) * 0x1.0p-53;
}

double Rng::normal() {
  // Box-Muller, one output per call so the stream position stays a simple
  // function of the number of draws.
  const double u1 = uniform_pos();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

double Rng::gamma(double shape) {
  std::gamma_distribution<double> dist(shape, 1.0);
  return dist(*this);
}

std::uint64_t Rng::below(std::uint64_t n) {
  std::uniform_int_distribution<std::uint64_t> dist(0, n - 1);
  return dist(*this);
}

Rng Rng::split(std::uint64_t stream) const {
  Rng child(key_, stream);
  return child;
}

int sample_log_categorical(std::span<const double> log_weights, Rng& rng) {
  const double total = log_sum_exp(log_weights);
  if (total == -std::numeric_limits<double>::infinity()) return -1;
  const double u = rng.uniform();
  double acc = 0.0;
  int last = -1;
  for (std::size_t i = 0; i < log_weights.size(); ++i) {
    if (log_weights[i] == -std::numeric_limits<double>::infinity()) continue;
    acc += std::exp(log_weights[i] - total);
    last = static_cast<int>(i);
    if (u < acc) return last;
  }
  return last;
}

}  // namespace nbs
