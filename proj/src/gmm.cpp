#include "nbs/gmm.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <sstream>

#include "nbs/errors.h"
#include "nbs/log_prob.h"
#include "nbs/uai.h"

namespace nbs {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr int kExactPairMaxPoints = 10;

double log_normal_iso(const double* x, const double* mu, int d, double var, std::size_t x_stride,
                      std::size_t mu_stride) {
  double sq = 0.0;
  for (int e = 0; e < d; ++e) {
    const double diff = x[static_cast<std::size_t>(e) * x_stride] -
                        mu[static_cast<std::size_t>(e) * mu_stride];
    sq += diff * diff;
  }
  return -0.5 * d * std::log(2.0 * std::numbers::pi * var) - sq / (2.0 * var);
}

// log N(x_i; mu_j, var I) for row i of x and row j of mu.
double point_log_density(const GmmData& x, int i, const Eigen::MatrixXd& mu, int j, double var) {
  const int d = static_cast<int>(x.cols());
  return log_normal_iso(&x(i, 0), &mu(j, 0), d, var, static_cast<std::size_t>(x.rows()),
                        static_cast<std::size_t>(mu.rows()));
}

double log_choose(int n, int k) {
  return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0);
}

// log p(v) for M = active components: uniform M, then uniform pattern.
double log_prior_v(const GmmSpec& spec, int active) {
  return -std::log(static_cast<double>(spec.m)) - log_choose(spec.m, active);
}

double log_prior_mu(const GmmSpec& spec, const Eigen::MatrixXd& mu) {
  double total = 0.0;
  const std::vector<double> zero(static_cast<std::size_t>(spec.d), 0.0);
  for (int j = 0; j < spec.m; ++j) {
    total += log_normal_iso(&mu(j, 0), zero.data(), spec.d, spec.sigma2_mu,
                            static_cast<std::size_t>(mu.rows()), 1);
  }
  return total;
}

int count_active(std::span<const int> v) {
  int n = 0;
  for (int b : v) n += b ? 1 : 0;
  return n;
}

void check_shapes(const GmmSpec& spec, const Eigen::MatrixXd& mu, std::span<const int> v,
                  const GmmData& x) {
  if (mu.rows() != spec.m || mu.cols() != spec.d || static_cast<int>(v.size()) != spec.m ||
      x.cols() != spec.d) {
    throw PreconditionError("GMM state or data shape does not match the spec");
  }
}

// Conjugate posterior of one mean given the points assigned to it.
struct MeanPosterior {
  Eigen::VectorXd mean;
  double variance = 0.0;
  double log_marginal = 0.0;  // log of the integral of prior x likelihood
};

MeanPosterior mean_posterior(const GmmSpec& spec, const GmmData& x, const std::vector<int>& points) {
  const double s = static_cast<double>(points.size());
  const double precision = 1.0 / spec.sigma2_mu + s / spec.sigma2;
  MeanPosterior out;
  out.variance = 1.0 / precision;
  out.mean = Eigen::VectorXd::Zero(spec.d);
  double sum_sq = 0.0;
  for (int i : points) {
    for (int e = 0; e < spec.d; ++e) {
      out.mean[e] += x(i, e);
      sum_sq += x(i, e) * x(i, e);
    }
  }
  const Eigen::VectorXd sums = out.mean;
  out.mean = (sums / spec.sigma2) / precision;
  out.log_marginal = spec.d * (-0.5 * s * std::log(2.0 * std::numbers::pi * spec.sigma2) -
                               0.5 * std::log(spec.sigma2_mu * precision)) -
                     0.5 * (sum_sq / spec.sigma2 -
                            sums.squaredNorm() / (spec.sigma2 * spec.sigma2) / precision);
  return out;
}

// Rows in lexicographic order, so that summary statistics do not depend on
// the order of the points.
GmmData sorted_rows(const GmmData& x) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(x.rows()));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<Eigen::Index>(i);
  std::sort(idx.begin(), idx.end(), [&](Eigen::Index a, Eigen::Index b) {
    for (Eigen::Index e = 0; e < x.cols(); ++e) {
      if (x(a, e) != x(b, e)) return x(a, e) < x(b, e);
    }
    return false;
  });
  GmmData out(x.rows(), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(idx[i]);
  return out;
}

std::vector<std::size_t> sample_subset(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = i;
  for (std::size_t i = 0; i < k; ++i) std::swap(ids[i], ids[i + rng.below(n - i)]);
  ids.resize(k);
  std::sort(ids.begin(), ids.end());
  return ids;
}

// Network spec recorded in an encoding tag "gmm-pair-m<m>-n<n>-d<d>/v1".
GmmSpec spec_from_encoding(const std::string& encoding, const GmmSpec& base) {
  GmmSpec s = base;
  if (std::sscanf(encoding.c_str(), "gmm-pair-m%d-n%d-d%d/v1", &s.m, &s.n, &s.d) != 3) {
    throw VersionError("params were not trained for the GMM pair proposal (encoding '" +
                       encoding + "')");
  }
  return s;
}

std::string encoding_for(const GmmSpec& spec) {
  return "gmm-pair-m" + std::to_string(spec.m) + "-n" + std::to_string(spec.n) + "-d" +
         std::to_string(spec.d) + "/v1";
}

}  // namespace

void GmmSpec::validate() const {
  if (m < 1 || n < 0 || d < 1) throw ConfigError("GMM spec needs m >= 1, n >= 0, d >= 1");
  if (!(sigma2_mu > 0.0) || !(sigma2 > 0.0)) throw ConfigError("GMM variances must be positive");
}

int GmmState::active_count() const { return count_active(v); }

double collapsed_log_likelihood(const GmmSpec& spec, const Eigen::MatrixXd& mu,
                                std::span<const int> v, const GmmData& x) {
  check_shapes(spec, mu, v, x);
  const int active = count_active(v);
  if (active == 0) throw DomainError("no active component");
  double total = log_prior_v(spec, active) + log_prior_mu(spec, mu);
  const double log_m = std::log(static_cast<double>(active));
  std::vector<double> terms;
  for (int i = 0; i < x.rows(); ++i) {
    terms.clear();
    for (int j = 0; j < spec.m; ++j) {
      if (v[static_cast<std::size_t>(j)]) terms.push_back(point_log_density(x, i, mu, j, spec.sigma2));
    }
    total += log_sum_exp(terms) - log_m;
  }
  return total;
}

double full_log_joint(const GmmSpec& spec, const Eigen::MatrixXd& mu, std::span<const int> v,
                      std::span<const int> z, const GmmData& x) {
  check_shapes(spec, mu, v, x);
  const int active = count_active(v);
  if (active == 0) throw DomainError("no active component");
  if (static_cast<Eigen::Index>(z.size()) != x.rows()) throw PreconditionError("label count mismatch");
  double total = log_prior_v(spec, active) + log_prior_mu(spec, mu);
  const double log_m = std::log(static_cast<double>(active));
  for (int i = 0; i < x.rows(); ++i) {
    const int j = z[static_cast<std::size_t>(i)];
    if (j < 0 || j >= spec.m || !v[static_cast<std::size_t>(j)]) return kNegInf;
    total += point_log_density(x, i, mu, j, spec.sigma2) - log_m;
  }
  return total;
}

std::vector<double> label_log_probs(const GmmSpec& spec, const Eigen::MatrixXd& mu,
                                    std::span<const int> v, const GmmData& x, int i) {
  std::vector<double> logs(static_cast<std::size_t>(spec.m), kNegInf);
  for (int j = 0; j < spec.m; ++j) {
    if (v[static_cast<std::size_t>(j)]) {
      logs[static_cast<std::size_t>(j)] = point_log_density(x, i, mu, j, spec.sigma2);
    }
  }
  const double lse = log_sum_exp(logs);
  if (lse == kNegInf) throw DomainError("no active component");
  for (double& l : logs) {
    if (l != kNegInf) l -= lse;
  }
  return logs;
}

void resample_labels(const GmmSpec& spec, GmmState& state, const GmmData& x, Rng& rng) {
  state.z.resize(static_cast<std::size_t>(x.rows()));
  for (int i = 0; i < x.rows(); ++i) {
    state.z[static_cast<std::size_t>(i)] =
        sample_log_categorical(label_log_probs(spec, state.mu, state.v, x, i), rng);
  }
}

Eigen::VectorXd principal_component(const GmmData& points) {
  const GmmData x = sorted_rows(points);
  const auto d = x.cols();
  Eigen::VectorXd pc = Eigen::VectorXd::Zero(d);
  if (d == 0) return pc;
  if (x.rows() == 0) {
    pc[0] = 1.0;
    return pc;
  }
  const Eigen::RowVectorXd mean = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - mean;
  const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(x.rows());
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  pc = eig.eigenvectors().col(d - 1);
  if (pc.norm() == 0.0 || !pc.allFinite()) {
    pc.setZero();
    pc[0] = 1.0;
  }
  for (Eigen::Index e = 0; e < d; ++e) {
    if (pc[e] != 0.0) {
      if (pc[e] < 0.0) pc = -pc;
      break;
    }
  }
  return pc;
}

std::size_t gmm_input_dim(const GmmSpec& spec) {
  const auto m = static_cast<std::size_t>(spec.m);
  const auto n = static_cast<std::size_t>(spec.n);
  const auto d = static_cast<std::size_t>(spec.d);
  return n * d + m * d + m + m + d + d;
}

Motif gmm_motif(const GmmSpec& spec) {
  Motif m = gmm_pair_motif();
  m.encoding = encoding_for(spec);
  m.input_dim = gmm_input_dim(spec);
  m.heads = {HeadSpec::gaussian(spec.d), HeadSpec::categorical(2), HeadSpec::gaussian(spec.d),
             HeadSpec::categorical(2)};
  return m;
}

std::vector<double> encode_gmm_input(const GmmSpec& spec, const Eigen::MatrixXd& mu,
                                     std::span<const int> v, const GmmData& x, int j, int k) {
  check_shapes(spec, mu, v, x);
  if (x.rows() != spec.n) throw VersionError("data size does not match the spec");
  if (j == k || j < 0 || k < 0 || j >= spec.m || k >= spec.m) {
    throw PreconditionError("proposed pair must be two distinct components");
  }
  const int d = spec.d;
  const Eigen::VectorXd pc = principal_component(x);
  const Eigen::RowVectorXd mean =
      x.rows() > 0 ? Eigen::RowVectorXd(sorted_rows(x).colwise().mean()) : Eigen::RowVectorXd::Zero(d);

  std::vector<int> order(static_cast<std::size_t>(x.rows()));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::vector<double> score(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    score[i] = (x.row(static_cast<Eigen::Index>(i)) - mean).dot(pc.transpose());
  }
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (score[static_cast<std::size_t>(a)] != score[static_cast<std::size_t>(b)]) {
      return score[static_cast<std::size_t>(a)] < score[static_cast<std::size_t>(b)];
    }
    for (int e = 0; e < d; ++e) {
      if (x(a, e) != x(b, e)) return x(a, e) < x(b, e);
    }
    return false;
  });

  std::vector<int> comps;
  for (int c = 0; c < spec.m; ++c) {
    if (c != j && c != k) comps.push_back(c);
  }
  std::vector<double> proj(static_cast<std::size_t>(spec.m));
  for (int c = 0; c < spec.m; ++c) proj[static_cast<std::size_t>(c)] = mu.row(c).dot(pc.transpose());
  std::sort(comps.begin(), comps.end(), [&](int a, int b) {
    if (proj[static_cast<std::size_t>(a)] != proj[static_cast<std::size_t>(b)]) {
      return proj[static_cast<std::size_t>(a)] < proj[static_cast<std::size_t>(b)];
    }
    if (v[static_cast<std::size_t>(a)] != v[static_cast<std::size_t>(b)]) {
      return v[static_cast<std::size_t>(a)] < v[static_cast<std::size_t>(b)];
    }
    for (int e = 0; e < d; ++e) {
      if (mu(a, e) != mu(b, e)) return mu(a, e) < mu(b, e);
    }
    return false;
  });

  std::vector<double> out;
  out.reserve(gmm_input_dim(spec));
  for (int i : order) {
    for (int e = 0; e < d; ++e) out.push_back(x(i, e));
  }
  for (int c : comps) {
    for (int e = 0; e < d; ++e) out.push_back(mu(c, e));
  }
  out.insert(out.end(), 2 * static_cast<std::size_t>(d), 0.0);
  for (int c : comps) out.push_back(static_cast<double>(v[static_cast<std::size_t>(c)]));
  out.insert(out.end(), 2, 0.0);
  out.insert(out.end(), comps.size(), 0.0);
  out.insert(out.end(), 2, 1.0);
  for (int e = 0; e < d; ++e) out.push_back(pc[e]);
  for (int e = 0; e < d; ++e) out.push_back(mean[e]);
  return out;
}

std::vector<double> pair_target(const GmmState& state, int j, int k) {
  std::vector<double> t;
  for (int c : {j, k}) {
    for (Eigen::Index e = 0; e < state.mu.cols(); ++e) t.push_back(state.mu(c, e));
    t.push_back(static_cast<double>(state.v[static_cast<std::size_t>(c)]));
  }
  return t;
}

ProposalOutcome gmm_pair_step(const GmmSpec& spec, GmmState& state, const GmmData& x, int j,
                              int k, const MixtureProposal& q, Rng& rng) {
  const int d = spec.d;
  ProposalOutcome out;
  const ProposalDraw draw = sample(q, rng);
  const std::vector<double> current = pair_target(state, j, k);
  out.log_q_forward = draw.log_density;
  out.log_q_reverse = log_density(q, current);
  for (double s : draw.value) out.proposed.push_back(static_cast<int>(std::lround(s)));

  GmmState next = state;
  for (int e = 0; e < d; ++e) {
    next.mu(j, e) = draw.value[static_cast<std::size_t>(e)];
    next.mu(k, e) = draw.value[static_cast<std::size_t>(d + 1 + e)];
  }
  next.v[static_cast<std::size_t>(j)] = static_cast<int>(draw.value[static_cast<std::size_t>(d)]);
  next.v[static_cast<std::size_t>(k)] = static_cast<int>(draw.value[static_cast<std::size_t>(2 * d + 1)]);

  const double u = rng.uniform();
  if (!std::isfinite(out.log_q_forward) || std::isnan(out.log_q_reverse) ||
      out.log_q_reverse == std::numeric_limits<double>::infinity()) {
    out.flagged = true;
    out.log_alpha = LogProb::zero();
    return out;
  }
  if (next.active_count() == 0 || out.log_q_reverse == kNegInf) {
    out.log_alpha = LogProb::zero();
    return out;
  }
  const double l_new = collapsed_log_likelihood(spec, next.mu, next.v, x);
  const double l_cur = collapsed_log_likelihood(spec, state.mu, state.v, x);
  out.log_alpha =
      LogProb(std::min(0.0, (l_new + out.log_q_reverse) - (l_cur + out.log_q_forward)));
  if (std::log(u) < out.log_alpha.value()) {
    out.accepted = true;
    state.mu = std::move(next.mu);
    state.v = std::move(next.v);
    resample_labels(spec, state, x, rng);
  }
  return out;
}

ProposalOutcome neural_pair_step(const GmmSpec& spec, GmmState& state, const MdnParams& params,
                                 const GmmData& x, Rng& rng) {
  const GmmSpec net = spec_from_encoding(params.config.encoding, spec);
  const Motif motif = gmm_motif(net);
  if (params.config.input_dim != motif.input_dim || params.config.heads != motif.heads) {
    throw VersionError("params shape does not match the GMM pair encoding");
  }
  if (net.d != spec.d || spec.m < net.m || x.rows() < net.n) {
    throw VersionError("model is smaller than the network's training spec (m=" +
                       std::to_string(net.m) + ", n=" + std::to_string(net.n) + ")");
  }
  const auto comps = sample_subset(static_cast<std::size_t>(spec.m), static_cast<std::size_t>(net.m), rng);
  const auto points = sample_subset(static_cast<std::size_t>(x.rows()), static_cast<std::size_t>(net.n), rng);
  const auto pair = sample_subset(static_cast<std::size_t>(net.m), 2, rng);

  Eigen::MatrixXd sub_mu(net.m, net.d);
  std::vector<int> sub_v(static_cast<std::size_t>(net.m));
  for (std::size_t c = 0; c < comps.size(); ++c) {
    sub_mu.row(static_cast<Eigen::Index>(c)) = state.mu.row(static_cast<Eigen::Index>(comps[c]));
    sub_v[c] = state.v[comps[c]];
  }
  GmmData sub_x(net.n, net.d);
  for (std::size_t i = 0; i < points.size(); ++i) {
    sub_x.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(points[i]));
  }
  const auto input = encode_gmm_input(net, sub_mu, sub_v, sub_x, static_cast<int>(pair[0]),
                                      static_cast<int>(pair[1]));
  const MixtureProposal q = forward(params, input);
  return gmm_pair_step(spec, state, x, static_cast<int>(comps[pair[0]]),
                       static_cast<int>(comps[pair[1]]), q, rng);
}

MixtureProposal exact_pair_conditional(const GmmSpec& spec, const GmmState& state,
                                       const GmmData& x, int j, int k) {
  check_shapes(spec, state.mu, state.v, x);
  const int n = static_cast<int>(x.rows());
  if (n > kExactPairMaxPoints) throw SizeGuardError("exact pair conditional needs n <= 10");
  if (j == k) throw PreconditionError("proposed pair must be two distinct components");
  int others = 0;
  std::vector<double> rest(static_cast<std::size_t>(n), kNegInf);
  for (int c = 0; c < spec.m; ++c) {
    if (c == j || c == k || !state.v[static_cast<std::size_t>(c)]) continue;
    ++others;
    for (int i = 0; i < n; ++i) {
      const double l = point_log_density(x, i, state.mu, c, spec.sigma2);
      rest[static_cast<std::size_t>(i)] = std::max(rest[static_cast<std::size_t>(i)], l) +
                                          std::log1p(std::exp(-std::abs(rest[static_cast<std::size_t>(i)] - l)));
    }
  }

  MixtureProposal q;
  q.heads = {HeadSpec::gaussian(spec.d), HeadSpec::categorical(2), HeadSpec::gaussian(spec.d),
             HeadSpec::categorical(2)};
  const auto categorical_head = [](int value) {
    HeadParams h;
    h.probs = {value == 0 ? 1.0 : 0.0, value == 1 ? 1.0 : 0.0};
    h.log_probs = {value == 0 ? 0.0 : kNegInf, value == 1 ? 0.0 : kNegInf};
    return h;
  };
  const auto gaussian_head = [](const MeanPosterior& p) {
    HeadParams h;
    h.mean.assign(p.mean.data(), p.mean.data() + p.mean.size());
    h.variance = p.variance;
    return h;
  };
  for (int vj = 0; vj <= 1; ++vj) {
    for (int vk = 0; vk <= 1; ++vk) {
      const int active = others + vj + vk;
      if (active == 0) continue;
      // Options per point: 0 -> j, 1 -> k, 2 -> one of the other components.
      std::vector<int> options;
      if (vj) options.push_back(0);
      if (vk) options.push_back(1);
      if (others) options.push_back(2);
      const auto base = static_cast<std::size_t>(options.size());
      std::size_t total = 1;
      for (int i = 0; i < n; ++i) total *= base;
      for (std::size_t code = 0; code < total; ++code) {
        std::vector<int> to_j, to_k;
        double weight = log_prior_v(spec, active) - n * std::log(static_cast<double>(active));
        std::size_t rem = code;
        for (int i = 0; i < n; ++i) {
          const int opt = options[rem % base];
          rem /= base;
          if (opt == 0) {
            to_j.push_back(i);
          } else if (opt == 1) {
            to_k.push_back(i);
          } else {
            weight += rest[static_cast<std::size_t>(i)];
          }
        }
        const MeanPosterior pj = mean_posterior(spec, x, to_j);
        const MeanPosterior pk = mean_posterior(spec, x, to_k);
        weight += pj.log_marginal + pk.log_marginal;
        q.log_weights.push_back(weight);
        q.components.push_back(
            {gaussian_head(pj), categorical_head(vj), gaussian_head(pk), categorical_head(vk)});
      }
    }
  }
  const double lse = log_sum_exp(q.log_weights);
  for (double& w : q.log_weights) w -= lse;
  return q;
}

void gibbs_truncated_sweep(const GmmSpec& spec, GmmState& state, const GmmData& x, Rng& rng) {
  check_shapes(spec, state.mu, state.v, x);
  const int n = static_cast<int>(x.rows());
  resample_labels(spec, state, x, rng);

  std::vector<std::vector<int>> members(static_cast<std::size_t>(spec.m));
  for (int i = 0; i < n; ++i) members[static_cast<std::size_t>(state.z[static_cast<std::size_t>(i)])].push_back(i);
  for (int j = 0; j < spec.m; ++j) {
    const MeanPosterior p = mean_posterior(spec, x, members[static_cast<std::size_t>(j)]);
    const double sd = std::sqrt(p.variance);
    for (int e = 0; e < spec.d; ++e) state.mu(j, e) = p.mean[e] + sd * rng.normal();
  }

  int active = state.active_count();
  for (int j = 0; j < spec.m; ++j) {
    if (!members[static_cast<std::size_t>(j)].empty()) continue;
    const int others = active - state.v[static_cast<std::size_t>(j)];
    double logs[2];
    for (int b = 0; b <= 1; ++b) {
      const int m_total = others + b;
      logs[b] = m_total == 0 ? kNegInf
                             : -log_choose(spec.m, m_total) - n * std::log(static_cast<double>(m_total));
    }
    const int pick = sample_log_categorical(std::span<const double>(logs, 2), rng);
    state.v[static_cast<std::size_t>(j)] = pick;
    active = others + pick;
  }
}

GmmState initialize_gmm_state(const GmmSpec& spec, const GmmData& x, int active, Rng& rng) {
  spec.validate();
  if (active < 1 || active > spec.m) throw DomainError("initial active count must lie in [1, m]");
  GmmState s;
  s.mu = Eigen::MatrixXd(spec.m, spec.d);
  s.v.assign(static_cast<std::size_t>(spec.m), 0);
  const auto on = sample_subset(static_cast<std::size_t>(spec.m), static_cast<std::size_t>(active), rng);
  for (std::size_t c : on) s.v[c] = 1;
  const double sd = std::sqrt(spec.sigma2_mu);
  for (int j = 0; j < spec.m; ++j) {
    for (int e = 0; e < spec.d; ++e) s.mu(j, e) = sd * rng.normal();
  }
  if (x.rows() >= active) {
    const auto seeds = sample_subset(static_cast<std::size_t>(x.rows()), static_cast<std::size_t>(active), rng);
    for (std::size_t c = 0; c < on.size(); ++c) {
      s.mu.row(static_cast<Eigen::Index>(on[c])) = x.row(static_cast<Eigen::Index>(seeds[c]));
    }
  }
  resample_labels(spec, s, x, rng);
  return s;
}

GmmSample sample_gmm_prior(const GmmSpec& spec, Rng& rng) {
  spec.validate();
  GmmSample out;
  GmmState& s = out.state;
  const int active = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.m)));
  s.v.assign(static_cast<std::size_t>(spec.m), 0);
  const auto on = sample_subset(static_cast<std::size_t>(spec.m), static_cast<std::size_t>(active), rng);
  for (std::size_t c : on) s.v[c] = 1;
  s.mu = Eigen::MatrixXd(spec.m, spec.d);
  const double sd_mu = std::sqrt(spec.sigma2_mu);
  for (int j = 0; j < spec.m; ++j) {
    for (int e = 0; e < spec.d; ++e) s.mu(j, e) = sd_mu * rng.normal();
  }
  out.x = GmmData(spec.n, spec.d);
  s.z.resize(static_cast<std::size_t>(spec.n));
  const double sd = std::sqrt(spec.sigma2);
  for (int i = 0; i < spec.n; ++i) {
    const int j = static_cast<int>(on[rng.below(on.size())]);
    s.z[static_cast<std::size_t>(i)] = j;
    for (int e = 0; e < spec.d; ++e) out.x(i, e) = s.mu(j, e) + sd * rng.normal();
  }
  return out;
}

GmmData generate_cluster_data(int n, int clusters, double separation, double sigma2, Rng& rng) {
  if (n < 0 || clusters < 1 || !(sigma2 > 0.0)) throw DomainError("invalid cluster data spec");
  GmmData x(n, 2);
  const double sd = std::sqrt(sigma2);
  for (int i = 0; i < n; ++i) {
    const double angle = 2.0 * std::numbers::pi * (i % clusters) / clusters;
    x(i, 0) = separation * std::cos(angle) + sd * rng.normal();
    x(i, 1) = separation * std::sin(angle) + sd * rng.normal();
  }
  return x;
}

GmmData read_points_csv(const std::string& path) {
  const std::string text = read_text_file(path);
  std::istringstream in(text);
  std::string line;
  std::vector<std::vector<double>> rows;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    bool numeric = true;
    while (std::getline(ss, cell, ',')) {
      char* end = nullptr;
      const double value = std::strtod(cell.c_str(), &end);
      if (end == cell.c_str()) {
        numeric = false;
        break;
      }
      row.push_back(value);
    }
    if (!numeric) {
      if (rows.empty()) continue;  // header
      throw ParseError("non-numeric value in points file", line_no, 0);
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw ParseError("inconsistent column count", line_no, 0);
    }
    rows.push_back(std::move(row));
  }
  const auto cols = rows.empty() ? Eigen::Index{2} : static_cast<Eigen::Index>(rows.front().size());
  GmmData x(static_cast<Eigen::Index>(rows.size()), cols);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (Eigen::Index e = 0; e < cols; ++e) x(static_cast<Eigen::Index>(i), e) = rows[i][static_cast<std::size_t>(e)];
  }
  return x;
}

std::string points_to_csv(const GmmData& x) {
  std::string out;
  for (Eigen::Index e = 0; e < x.cols(); ++e) out += (e ? ",x" : "x") + std::to_string(e);
  out += '\n';
  char buf[40];
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index e = 0; e < x.cols(); ++e) {
      std::snprintf(buf, sizeof(buf), "%.17g", x(i, e));
      if (e) out += ',';
      out += buf;
    }
    out += '\n';
  }
  return out;
}

GmmRunResult run_gmm_chain(const GmmSpec& spec, const GmmData& x, GmmState state,
                           GmmSamplerKind kind, long long steps, Rng rng,
                           const MdnParams* params) {
  if (kind == GmmSamplerKind::neural && !params) {
    throw PreconditionError("the neural GMM sampler needs trained params");
  }
  GmmRunResult out;
  const auto record = [&](long long step) {
    out.trace.push_back({step, state.active_count(), collapsed_log_likelihood(spec, state.mu, state.v, x)});
  };
  record(0);
  for (long long step = 1; step <= steps; ++step) {
    if (kind == GmmSamplerKind::neural) {
      const ProposalOutcome o = neural_pair_step(spec, state, *params, x, rng);
      ++out.proposed;
      out.accepted += o.accepted ? 1 : 0;
    } else {
      gibbs_truncated_sweep(spec, state, x, rng);
    }
    record(step);
  }
  out.final_state = std::move(state);
  return out;
}

std::string gmm_trace_csv(const std::vector<GmmTracePoint>& trace) {
  std::string out = "step,M,log_likelihood\n";
  char buf[96];
  for (const auto& p : trace) {
    std::snprintf(buf, sizeof(buf), "%lld,%d,%.17g\n", p.step, p.active, p.log_likelihood);
    out += buf;
  }
  return out;
}

std::size_t distinct_active_counts(const std::vector<GmmTracePoint>& trace) {
  std::vector<int> seen;
  for (const auto& p : trace) {
    if (std::find(seen.begin(), seen.end(), p.active) == seen.end()) seen.push_back(p.active);
  }
  return seen.size();
}

std::size_t active_count_changes(const std::vector<GmmTracePoint>& trace) {
  std::size_t n = 0;
  for (std::size_t i = 1; i < trace.size(); ++i) n += trace[i].active != trace[i - 1].active ? 1 : 0;
  return n;
}

std::pair<std::vector<double>, std::vector<double>> make_gmm_training_example(const GmmSpec& spec,
                                                                              Rng& rng) {
  const GmmSample s = sample_gmm_prior(spec, rng);
  const auto pair = sample_subset(static_cast<std::size_t>(spec.m), 2, rng);
  const int j = static_cast<int>(pair[0]);
  const int k = static_cast<int>(pair[1]);
  return {encode_gmm_input(spec, s.state.mu, s.state.v, s.x, j, k), pair_target(s.state, j, k)};
}

MdnParams train_gmm_proposal(const GmmTrainingJob& job, std::vector<double>* loss_curve) {
  job.spec.validate();
  const Motif motif = gmm_motif(job.spec);
  if (job.config.input_dim != motif.input_dim || job.config.heads != motif.heads ||
      job.config.encoding != motif.encoding) {
    throw ConfigError("network config does not match the GMM pair encoding");
  }
  Rng init(job.seed, 0);
  MdnParams params = MdnParams::initialize(job.config, init);
  const Rng base(job.seed, 1);
  const std::size_t bs = job.optimizer.batch_size;
  const BatchSource source = [&](std::size_t step, Batch& batch) {
    for (std::size_t b = 0; b < bs; ++b) {
      Rng rng = base.split(step * bs + b);
      const auto [input, target] = make_gmm_training_example(job.spec, rng);
      const auto col = static_cast<Eigen::Index>(b);
      for (std::size_t i = 0; i < input.size(); ++i) batch.inputs(static_cast<Eigen::Index>(i), col) = input[i];
      for (std::size_t i = 0; i < target.size(); ++i) batch.targets(static_cast<Eigen::Index>(i), col) = target[i];
    }
  };
  return optimize(std::move(params), source, job.optimizer,
                  [&](std::size_t, double loss, const MdnParams&) {
                    if (loss_curve) loss_curve->push_back(loss);
                  });
}

}  // namespace nbs
