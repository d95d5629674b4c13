#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>

namespace nbs {

// Log-space probability with an explicit zero.
//
// Zero is stored as -inf but never reaches IEEE arithmetic: every operator
// checks for it first, so combining a zero with anything yields zero and no
// NaN can appear from inf - inf.
class LogProb {
 public:
  constexpr LogProb() = default;
  constexpr explicit LogProb(double log_value) : value_(log_value) {}

  static constexpr LogProb zero() {
    return LogProb(-std::numeric_limits<double>::infinity());
  }
  static constexpr LogProb one() { return LogProb(0.0); }

  static LogProb from_prob(double p) {
    return p > 0.0 ? LogProb(std::log(p)) : zero();
  }

  constexpr bool is_zero() const {
    return value_ == -std::numeric_limits<double>::infinity();
  }
  constexpr double value() const { return value_; }
  double prob() const { return is_zero() ? 0.0 : std::exp(value_); }

  // Product of probabilities.
  friend LogProb operator*(LogProb a, LogProb b) {
    if (a.is_zero() || b.is_zero()) return zero();
    return LogProb(a.value_ + b.value_);
  }
  LogProb& operator*=(LogProb b) { return *this = *this * b; }

  // Ratio of probabilities. A zero numerator gives zero; a zero denominator
  // with a nonzero numerator is an unbounded ratio reported as +inf.
  friend LogProb operator/(LogProb a, LogProb b) {
    if (a.is_zero()) return zero();
    if (b.is_zero()) return LogProb(std::numeric_limits<double>::infinity());
    return LogProb(a.value_ - b.value_);
  }

  friend bool operator==(LogProb a, LogProb b) = default;
  friend bool operator<(LogProb a, LogProb b) { return a.value_ < b.value_; }

 private:
  double value_ = 0.0;
};

// Max-shifted log(sum(exp(x))). Entries of -inf are ignored; an empty or
// all -inf input returns -inf.
inline double log_sum_exp(std::span<const double> xs) {
  double peak = -std::numeric_limits<double>::infinity();
  for (double x : xs) peak = std::max(peak, x);
  if (peak == -std::numeric_limits<double>::infinity()) return peak;
  double total = 0.0;
  for (double x : xs) total += std::exp(x - peak);
  return peak + std::log(total);
}

// log(1 + exp(x)) without overflow.
inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace nbs
