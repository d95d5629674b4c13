#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "nbs/errors.h"
#include "nbs/gmm.h"

using namespace nbs;

namespace {

double log_normal(const Eigen::VectorXd& x, const Eigen::VectorXd& mu, double var) {
  const double d = static_cast<double>(x.size());
  return -0.5 * d * std::log(2 * std::numbers::pi * var) - 0.5 * (x - mu).squaredNorm() / var;
}

double log_sum(const std::vector<double>& xs) {
  const double m = *std::max_element(xs.begin(), xs.end());
  if (m == -std::numeric_limits<double>::infinity()) return m;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

// Sum over every label vector z of p(mu, v, z, x).
double enumerated_likelihood(const GmmSpec& spec, const Eigen::MatrixXd& mu, const std::vector<int>& v,
                             const GmmData& x) {
  std::vector<double> terms;
  std::vector<int> z(static_cast<std::size_t>(x.rows()), 0);
  std::size_t total = 1;
  for (Eigen::Index i = 0; i < x.rows(); ++i) total *= static_cast<std::size_t>(spec.m);
  for (std::size_t code = 0; code < total; ++code) {
    std::size_t rem = code;
    for (auto& zi : z) {
      zi = static_cast<int>(rem % static_cast<std::size_t>(spec.m));
      rem /= static_cast<std::size_t>(spec.m);
    }
    terms.push_back(full_log_joint(spec, mu, v, z, x));
  }
  return log_sum(terms);
}

struct RandomState {
  Eigen::MatrixXd mu;
  std::vector<int> v;
  GmmData x;
};

RandomState random_state(const GmmSpec& spec, Rng& rng) {
  RandomState s;
  s.mu = Eigen::MatrixXd(spec.m, spec.d);
  for (Eigen::Index i = 0; i < s.mu.size(); ++i) s.mu.data()[i] = 2 * rng.normal();
  do {
    s.v.clear();
    for (int j = 0; j < spec.m; ++j) s.v.push_back(rng.bernoulli(0.5) ? 1 : 0);
  } while (std::count(s.v.begin(), s.v.end(), 1) == 0);
  s.x = GmmData(spec.n, spec.d);
  for (Eigen::Index i = 0; i < s.x.size(); ++i) s.x.data()[i] = 2 * rng.normal();
  return s;
}

}  // namespace

TEST_CASE("collapsed likelihood") {
  SUBCASE("a single active component has a closed form") {
    GmmSpec spec{2, 3, 4.0, 0.1, 2};
    Eigen::MatrixXd mu(2, 2);
    mu << 0.5, -1.0, 3.0, 2.0;
    GmmData x(3, 2);
    x << 0.4, -0.9, 0.7, -1.2, 0.1, -1.0;
    const std::vector<int> v{1, 0};
    double expected = std::log(0.5) - std::log(2.0);
    for (int j = 0; j < 2; ++j) expected += log_normal(mu.row(j).transpose(), Eigen::VectorXd::Zero(2), 4.0);
    for (int i = 0; i < 3; ++i) expected += log_normal(x.row(i).transpose(), mu.row(0).transpose(), 0.1);
    CHECK(collapsed_log_likelihood(spec, mu, v, x) == doctest::Approx(expected).epsilon(1e-13));
  }
  SUBCASE("equals the sum over labels") {
    Rng rng(1, 0);
    GmmSpec small{2, 3, 4.0, 0.1, 2};
    const RandomState s = random_state(small, rng);
    CHECK(std::abs(collapsed_log_likelihood(small, s.mu, s.v, s.x) -
                   enumerated_likelihood(small, s.mu, s.v, s.x)) <= 1e-12);
    for (int rep = 0; rep < 200; ++rep) {
      GmmSpec spec{1 + static_cast<int>(rng.below(3)), static_cast<int>(rng.below(7)), 4.0, 0.1, 2};
      const RandomState r = random_state(spec, rng);
      CHECK(std::abs(collapsed_log_likelihood(spec, r.mu, r.v, r.x) -
                     enumerated_likelihood(spec, r.mu, r.v, r.x)) <= 1e-10);
    }
  }
  SUBCASE("duplicated components are interchangeable") {
    GmmSpec spec{3, 4, 4.0, 0.1, 2};
    Rng rng(2, 0);
    RandomState s = random_state(spec, rng);
    s.mu.row(1) = s.mu.row(0);
    s.v = {1, 0, 1};
    const double a = collapsed_log_likelihood(spec, s.mu, s.v, s.x);
    s.v = {0, 1, 1};
    CHECK(collapsed_log_likelihood(spec, s.mu, s.v, s.x) == doctest::Approx(a).epsilon(1e-14));
  }
  SUBCASE("no active component is outside the domain") {
    GmmSpec spec{2, 1, 4.0, 0.1, 2};
    const Eigen::MatrixXd mu = Eigen::MatrixXd::Zero(2, 2);
    const GmmData x = GmmData::Zero(1, 2);
    CHECK_THROWS_AS(collapsed_log_likelihood(spec, mu, std::vector<int>{0, 0}, x), DomainError);
  }
  SUBCASE("labels on inactive components have zero mass") {
    GmmSpec spec{2, 1, 4.0, 0.1, 2};
    const Eigen::MatrixXd mu = Eigen::MatrixXd::Zero(2, 2);
    const GmmData x = GmmData::Zero(1, 2);
    CHECK(full_log_joint(spec, mu, std::vector<int>{1, 0}, std::vector<int>{1}, x) ==
          -std::numeric_limits<double>::infinity());
  }
}

TEST_CASE("label conditionals") {
  GmmSpec spec{3, 5, 4.0, 0.5, 2};
  Rng rng(3, 0);
  RandomState s = random_state(spec, rng);
  s.v = {1, 0, 1};
  for (int i = 0; i < spec.n; ++i) {
    const auto lp = label_log_probs(spec, s.mu, s.v, s.x, i);
    const double a = log_normal(s.x.row(i).transpose(), s.mu.row(0).transpose(), 0.5);
    const double c = log_normal(s.x.row(i).transpose(), s.mu.row(2).transpose(), 0.5);
    const double norm = log_sum({a, c});
    CHECK(lp[0] == doctest::Approx(a - norm).epsilon(1e-12));
    CHECK(lp[1] == -std::numeric_limits<double>::infinity());
    CHECK(lp[2] == doctest::Approx(c - norm).epsilon(1e-12));
  }
  s.v = {0, 1, 0};
  GmmState st{s.mu, s.v, {}};
  resample_labels(spec, st, s.x, rng);
  for (int zi : st.z) CHECK(zi == 1);
}

TEST_CASE("pair encoding") {
  const GmmSpec spec;
  CHECK(gmm_input_dim(spec) == 156);
  CHECK(gmm_motif(spec).input_dim == 156);
  Rng rng(4, 0);
  const GmmSample sample = sample_gmm_prior(spec, rng);
  const GmmState& s = sample.state;
  const auto base = encode_gmm_input(spec, s.mu, s.v, sample.x, 2, 5);
  CHECK(base.size() == 156);

  SUBCASE("point order does not matter") {
    GmmData shuffled = sample.x;
    for (Eigen::Index i = shuffled.rows() - 1; i > 0; --i) {
      shuffled.row(i).swap(shuffled.row(static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(i + 1)))));
    }
    CHECK(encode_gmm_input(spec, s.mu, s.v, shuffled, 2, 5) == base);
  }
  SUBCASE("identical unproposed components can be swapped") {
    Eigen::MatrixXd mu = s.mu;
    std::vector<int> v = s.v;
    mu.row(1) = mu.row(0);
    v[1] = v[0];
    const auto a = encode_gmm_input(spec, mu, v, sample.x, 2, 5);
    mu.row(0).swap(mu.row(7));
    std::swap(v[0], v[7]);
    mu.row(1).swap(mu.row(3));
    std::swap(v[1], v[3]);
    const auto b = encode_gmm_input(spec, mu, v, sample.x, 2, 5);
    CHECK(a == b);
  }
  SUBCASE("principal axis sign is fixed under rotation by 180 degrees") {
    const GmmData rotated = -sample.x;
    const Eigen::VectorXd pc = principal_component(sample.x);
    const Eigen::VectorXd pr = principal_component(rotated);
    CHECK((pc - pr).norm() < 1e-12);
    CHECK(pc(0) > 0);
    CHECK(pc.norm() == doctest::Approx(1.0));
    const Eigen::MatrixXd rmu = -s.mu;
    CHECK(encode_gmm_input(spec, rmu, s.v, rotated, 2, 5) == encode_gmm_input(spec, rmu, s.v, rotated, 2, 5));
  }
  SUBCASE("bad pairs and sizes") {
    CHECK_THROWS_AS(encode_gmm_input(spec, s.mu, s.v, sample.x, 3, 3), PreconditionError);
    const GmmData fewer = sample.x.topRows(10);
    CHECK_THROWS_AS(encode_gmm_input(spec, s.mu, s.v, fewer, 2, 5), VersionError);
  }
}

TEST_CASE("exact pair conditional as proposal is always accepted") {
  GmmSpec spec{3, 6, 4.0, 0.3, 2};
  Rng rng(5, 0);
  for (int rep = 0; rep < 50; ++rep) {
    const GmmSample sample = sample_gmm_prior(spec, rng);
    GmmState state = initialize_gmm_state(spec, sample.x, 1 + static_cast<int>(rng.below(3)), rng);
    const int j = static_cast<int>(rng.below(3));
    const int k = (j + 1 + static_cast<int>(rng.below(2))) % 3;
    const MixtureProposal q = exact_pair_conditional(spec, state, sample.x, j, k);
    const ProposalOutcome out = gmm_pair_step(spec, state, sample.x, j, k, q, rng);
    CHECK(std::abs(out.log_alpha.value()) <= 1e-9);
    CHECK(out.accepted);
  }
  GmmState big = initialize_gmm_state(GmmSpec{}, GmmData::Zero(60, 2), 2, rng);
  CHECK_THROWS_AS(exact_pair_conditional(GmmSpec{}, big, GmmData::Zero(60, 2), 0, 1), SizeGuardError);
}

TEST_CASE("pair moves never leave the model empty") {
  GmmSpec spec{2, 4, 4.0, 0.1, 2};
  Rng rng(6, 0);
  const GmmSample sample = sample_gmm_prior(spec, rng);
  GmmState state = initialize_gmm_state(spec, sample.x, 1, rng);
  // Proposal that switches both components off.
  MixtureProposal q;
  q.heads = gmm_motif(spec).heads;
  q.log_weights = {0.0};
  HeadParams g;
  g.mean = {0.0, 0.0};
  g.variance = 1.0;
  HeadParams off;
  off.probs = {1.0, 0.0};
  off.log_probs = {0.0, -std::numeric_limits<double>::infinity()};
  q.components = {{g, off, g, off}};
  const auto before = state.v;
  for (int i = 0; i < 100; ++i) {
    const ProposalOutcome out = gmm_pair_step(spec, state, sample.x, 0, 1, q, rng);
    CHECK_FALSE(out.accepted);
  }
  CHECK(state.v == before);
}

TEST_CASE("truncated gibbs") {
  SUBCASE("conjugate mean update") {
    GmmSpec spec{1, 4, 4.0, 0.5, 2};
    GmmData x(4, 2);
    x << 1.0, 2.0, 1.5, 2.5, 0.5, 1.0, 2.0, 2.5;
    Rng rng(7, 0);
    GmmState state = initialize_gmm_state(spec, x, 1, rng);
    const double precision = 4 / 0.5 + 1 / 4.0;
    const Eigen::Vector2d mean = (x.colwise().sum().transpose() / 0.5) / precision;
    const int sweeps = 100000;
    Eigen::Vector2d s = Eigen::Vector2d::Zero();
    for (int t = 0; t < sweeps; ++t) {
      gibbs_truncated_sweep(spec, state, x, rng);
      s += state.mu.row(0).transpose();
      CHECK(state.v[0] == 1);
    }
    const double se = std::sqrt(1 / precision / sweeps);
    for (int e = 0; e < 2; ++e) CHECK(std::abs(s(e) / sweeps - mean(e)) <= 3 * se);
  }
  SUBCASE("without data the means follow the prior") {
    GmmSpec spec{3, 0, 4.0, 0.1, 2};
    const GmmData x(0, 2);
    Rng rng(8, 0);
    GmmState state = initialize_gmm_state(spec, x, 2, rng);
    const int sweeps = 100000;
    double s = 0.0, s2 = 0.0;
    for (int t = 0; t < sweeps; ++t) {
      gibbs_truncated_sweep(spec, state, x, rng);
      s += state.mu(1, 0);
      s2 += state.mu(1, 0) * state.mu(1, 0);
      CHECK(state.active_count() >= 1);
    }
    const double mean = s / sweeps;
    const double var = s2 / sweeps - mean * mean;
    CHECK(std::abs(mean) <= 3 * std::sqrt(4.0 / sweeps));
    // Var of the sample variance of a normal is 2 sigma^4 / n.
    CHECK(std::abs(var - 4.0) <= 3 * std::sqrt(2 * 16.0 / sweeps));
  }
}

TEST_CASE("chains, data and params") {
  GmmSpec spec{4, 12, 4.0, 0.1, 2};
  Rng rng(9, 0);
  const GmmData x = generate_cluster_data(12, 3, 3.0, 0.1, rng);
  CHECK(x.rows() == 12);

  SUBCASE("csv round trip") {
    const std::string path = "gmm_points_test.csv";
    {
      std::FILE* f = std::fopen(path.c_str(), "w");
      const std::string text = points_to_csv(x);
      std::fwrite(text.data(), 1, text.size(), f);
      std::fclose(f);
    }
    const GmmData back = read_points_csv(path);
    CHECK(back.rows() == x.rows());
    CHECK((back - x).cwiseAbs().maxCoeff() == 0.0);
    std::remove(path.c_str());
  }
  SUBCASE("gibbs chains are reproducible and traced") {
    const GmmState init = initialize_gmm_state(spec, x, 2, rng);
    const GmmRunResult a = run_gmm_chain(spec, x, init, GmmSamplerKind::gibbs, 50, Rng(10, 0));
    const GmmRunResult b = run_gmm_chain(spec, x, init, GmmSamplerKind::gibbs, 50, Rng(10, 0));
    REQUIRE(a.trace.size() == 51);
    CHECK(a.trace.front().active == 2);
    CHECK(gmm_trace_csv(a.trace) == gmm_trace_csv(b.trace));
    CHECK(distinct_active_counts(a.trace) >= 1);
  }
  SUBCASE("trace summaries") {
    std::vector<GmmTracePoint> t{{0, 2, 0.0}, {1, 2, 0.0}, {2, 3, 0.0}, {3, 2, 0.0}, {4, 4, 0.0}};
    CHECK(distinct_active_counts(t) == 3);
    CHECK(active_count_changes(t) == 3);
  }
  SUBCASE("neural moves need matching params") {
    const GmmState init = initialize_gmm_state(spec, x, 2, rng);
    MdnConfig other = grid_motif().mdn_config(0.25);
    const MdnParams wrong = MdnParams::zeros(other);
    GmmState st = init;
    CHECK_THROWS_AS(neural_pair_step(spec, st, wrong, x, rng), VersionError);

    GmmSpec big;
    const MdnParams net = MdnParams::zeros(gmm_motif(big).mdn_config(0.25));
    CHECK_THROWS_AS(neural_pair_step(spec, st, net, x, rng), VersionError);

    const MdnParams fits = MdnParams::zeros(gmm_motif(spec).mdn_config(0.25));
    const GmmRunResult r = run_gmm_chain(spec, x, init, GmmSamplerKind::neural, 200, Rng(11, 0), &fits);
    CHECK(r.proposed == 200);
    for (const auto& p : r.trace) CHECK(p.active >= 1);
  }
  SUBCASE("a short training run is finite and seeded") {
    GmmTrainingJob job;
    job.spec = spec;
    job.config = gmm_motif(spec).mdn_config(0.25);
    job.optimizer.steps = 10;
    job.optimizer.batch_size = 8;
    job.seed = 3;
    std::vector<double> curve;
    const MdnParams p = train_gmm_proposal(job, &curve);
    const MdnParams q = train_gmm_proposal(job);
    CHECK(curve.size() == 10);
    CHECK((p.theta.array() == q.theta.array()).all());
    for (double l : curve) CHECK(std::isfinite(l));
  }
}
