#include "doctest.h"

#include <cmath>
#include <numbers>

#include "nbs/errors.h"
#include "nbs/mdn.h"
#include "nbs/motifs.h"
#include "nbs/oracle.h"
#include "test_util.h"

using namespace nbs;

namespace {

MdnConfig small_config(std::vector<HeadSpec> heads, int mixtures, std::size_t input_dim = 5) {
  MdnConfig c;
  c.input_dim = input_dim;
  c.hidden_dims = {7, 6};
  c.n_mixtures = mixtures;
  c.heads = std::move(heads);
  c.encoding = "test/v1";
  return c;
}

// Offset of the last-layer bias for raw output r.
std::size_t b3_index(const MdnConfig& c, std::size_t r) {
  const std::size_t h1 = c.hidden_dims[0], h2 = c.hidden_dims[1], out = c.output_dim();
  return h1 * c.input_dim + h1 + h2 * h1 + h2 + out * h2 + r;
}

std::size_t w3_index(const MdnConfig& c, std::size_t r, std::size_t col) {
  const std::size_t h1 = c.hidden_dims[0], h2 = c.hidden_dims[1], out = c.output_dim();
  return h1 * c.input_dim + h1 + h2 * h1 + h2 + col * out + r;
}

HeadParams bernoulli(double p) {
  HeadParams h;
  h.probs = {1 - p, p};
  h.log_probs = {std::log(1 - p), std::log(p)};
  return h;
}

Batch random_batch(const MdnConfig& c, std::size_t n, Rng& rng) {
  Batch b(c.input_dim, c.target_dim(), n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < c.input_dim; ++j) b.inputs(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = rng.normal();
    Eigen::Index t = 0;
    for (const auto& h : c.heads) {
      if (h.kind == HeadSpec::Kind::categorical) {
        b.targets(t++, static_cast<Eigen::Index>(i)) = static_cast<double>(rng.below(static_cast<std::uint64_t>(h.size)));
      } else {
        for (int d = 0; d < h.size; ++d) b.targets(t++, static_cast<Eigen::Index>(i)) = rng.normal();
      }
    }
  }
  return b;
}

void check_fd(const MdnParams& params, const Batch& batch, Rng& rng, std::size_t coords) {
  Eigen::VectorXd grad;
  grad_nll(params, batch, grad);
  const double h = 1e-5;
  for (std::size_t k = 0; k < coords; ++k) {
    const auto i = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(params.theta.size())));
    MdnParams plus = params, minus = params;
    plus.theta[i] += h;
    minus.theta[i] -= h;
    const double fd = (batch_nll(plus, batch) - batch_nll(minus, batch)) / (2 * h);
    const double scale = std::max({std::abs(fd), std::abs(grad[i]), 1e-3});
    CHECK(std::abs(fd - grad[i]) / scale < 1e-4);
  }
}

}  // namespace

TEST_CASE("network shapes") {
  const MdnConfig grid = grid_motif().mdn_config();
  CHECK(grid.input_dim == 106);
  CHECK(grid.output_dim() == 120);
  CHECK(grid.hidden_dims == std::array<std::size_t, 2>{480, 480});
  CHECK(grid.n_mixtures == 12);

  const MdnConfig gmm = gmm_pair_motif().mdn_config();
  CHECK(gmm.input_dim == 156);
  CHECK(gmm.output_dim() == 36);
  CHECK(gmm.hidden_dims[0] == 624);
}

TEST_CASE("zero network gives uniform proposals") {
  const MdnConfig c = small_config({HeadSpec::categorical(2), HeadSpec::categorical(3)}, 4);
  const MixtureProposal q = forward(MdnParams::zeros(c), std::vector<double>(5, 0.3));
  for (double lw : q.log_weights) CHECK(lw == doctest::Approx(std::log(0.25)));
  for (const auto& comp : q.components) {
    CHECK(comp[0].probs[1] == doctest::Approx(0.5));
    for (double p : comp[1].probs) CHECK(p == doctest::Approx(1.0 / 3.0));
  }
  CHECK_THROWS_AS(forward(MdnParams::zeros(c), std::vector<double>{0, 0, std::nan(""), 0, 0}), DomainError);
  CHECK_THROWS_AS(forward(MdnParams::zeros(c), std::vector<double>(4, 0.0)), PreconditionError);
}

TEST_CASE("forward outputs are normalized") {
  const MdnConfig c =
      small_config({HeadSpec::categorical(2), HeadSpec::categorical(4), HeadSpec::gaussian(2)}, 5);
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(seed, 0);
    MdnParams p = MdnParams::initialize(c, rng);
    p.theta *= 1.0 + 5.0 * rng.uniform();
    std::vector<double> x(5);
    for (double& v : x) v = 3.0 * rng.normal();
    const MixtureProposal q = forward(p, x);
    double w = 0.0;
    for (double lw : q.log_weights) w += std::exp(lw);
    CHECK(std::abs(w - 1.0) < 1e-9);
    for (const auto& comp : q.components) {
      for (std::size_t h = 0; h < 2; ++h) {
        double s = 0.0;
        for (double pr : comp[h].probs) s += pr;
        CHECK(std::abs(s - 1.0) < 1e-9);
      }
      CHECK(comp[2].variance >= 1e-5);
    }
  }
}

TEST_CASE("log density closed forms") {
  MixtureProposal one;
  one.heads = {HeadSpec::categorical(2)};
  one.log_weights = {0.0};
  one.components = {{bernoulli(0.5)}};
  CHECK(log_density(one, std::vector<double>{1.0}) == doctest::Approx(std::log(0.5)));

  MixtureProposal two;
  two.heads = {HeadSpec::categorical(2)};
  two.log_weights = {std::log(0.5), std::log(0.5)};
  two.components = {{bernoulli(0.2)}, {bernoulli(0.6)}};
  CHECK(log_density(two, std::vector<double>{1.0}) == doctest::Approx(std::log(0.4)).epsilon(1e-12));

  MixtureProposal g;
  g.heads = {HeadSpec::gaussian(1)};
  g.log_weights = {0.0};
  HeadParams gh;
  gh.mean = {0.0};
  gh.variance = 1.0;
  g.components = {{gh}};
  CHECK(log_density(g, std::vector<double>{0.0}) ==
        doctest::Approx(-0.5 * std::log(2 * std::numbers::pi)).epsilon(1e-12));
  CHECK_THROWS_AS(log_density(g, std::vector<double>{0.0, 1.0}), PreconditionError);
}

TEST_CASE("log density agrees with direct component summation") {
  const MdnConfig c = small_config({HeadSpec::categorical(3), HeadSpec::gaussian(2)}, 3);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed, 1);
    const MixtureProposal q = forward(MdnParams::initialize(c, rng), std::vector<double>(5, rng.normal()));
    const std::vector<double> t{static_cast<double>(rng.below(3)), rng.normal(), rng.normal()};
    double total = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      const auto& comp = q.components[k];
      double dens = comp[0].probs[static_cast<std::size_t>(t[0])];
      for (int d = 0; d < 2; ++d) {
        const double r = t[static_cast<std::size_t>(1 + d)] - comp[1].mean[static_cast<std::size_t>(d)];
        dens *= std::exp(-0.5 * r * r / comp[1].variance) / std::sqrt(2 * std::numbers::pi * comp[1].variance);
      }
      total += std::exp(q.log_weights[k]) * dens;
    }
    CHECK(std::abs(log_density(q, t) - std::log(total)) < 1e-12);
  }
}

TEST_CASE("sampling") {
  SUBCASE("deterministic head") {
    MixtureProposal q;
    q.heads = {HeadSpec::categorical(3)};
    q.log_weights = {0.0};
    HeadParams h;
    h.probs = {0.0, 0.0, 1.0};
    h.log_probs = {-std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity(), 0.0};
    q.components = {{h}};
    Rng rng(1, 0);
    for (int i = 0; i < 100; ++i) {
      const ProposalDraw d = sample(q, rng);
      CHECK(d.value == std::vector<double>{2.0});
      CHECK(d.log_density == 0.0);
    }
  }
  SUBCASE("two-mixture Bernoulli mean") {
    MixtureProposal q;
    q.heads = {HeadSpec::categorical(2)};
    q.log_weights = {std::log(0.3), std::log(0.7)};
    q.components = {{bernoulli(0.1)}, {bernoulli(0.9)}};
    const double p = 0.3 * 0.1 + 0.7 * 0.9;
    Rng rng(2, 0);
    const int n = 1000000;
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
      const ProposalDraw d = sample(q, rng);
      s += d.value[0];
      if (i < 10) CHECK(d.log_density == doctest::Approx(std::log(d.value[0] > 0 ? p : 1 - p)));
    }
    CHECK(std::abs(s / n - p) <= 3 * std::sqrt(p * (1 - p) / n));
  }
  SUBCASE("gaussian variance") {
    MixtureProposal q;
    q.heads = {HeadSpec::gaussian(1)};
    q.log_weights = {0.0};
    HeadParams h;
    h.mean = {1.5};
    h.variance = 0.7;
    q.components = {{h}};
    Rng rng(3, 0);
    const int n = 1000000;
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
      const double x = sample(q, rng).value[0];
      s += x;
      s2 += x * x;
    }
    const double mean = s / n;
    CHECK(std::abs((s2 / n - mean * mean) / 0.7 - 1.0) < 0.01);
  }
}

TEST_CASE("analytic gradients match finite differences") {
  Rng rng(7, 0);
  SUBCASE("mixed heads") {
    const MdnConfig c =
        small_config({HeadSpec::categorical(2), HeadSpec::categorical(3), HeadSpec::gaussian(2)}, 3);
    const MdnParams p = MdnParams::initialize(c, rng);
    check_fd(p, random_batch(c, 8, rng), rng, 64);
  }
  SUBCASE("gmm pair heads") {
    const MdnConfig c = small_config(
        {HeadSpec::gaussian(2), HeadSpec::categorical(2), HeadSpec::gaussian(2), HeadSpec::categorical(2)}, 4);
    const MdnParams p = MdnParams::initialize(c, rng);
    check_fd(p, random_batch(c, 8, rng), rng, 64);
  }
  SUBCASE("variance floor active") {
    const MdnConfig c = small_config({HeadSpec::gaussian(1)}, 1);
    MdnParams p = MdnParams::initialize(c, rng);
    // Raw outputs: weight logit, mean, raw variance.
    const std::size_t r = 2;
    for (std::size_t col = 0; col < c.hidden_dims[1]; ++col) p.theta[static_cast<Eigen::Index>(w3_index(c, r, col))] = 0.0;
    p.theta[static_cast<Eigen::Index>(b3_index(c, r))] = -30.0;
    const Batch b = random_batch(c, 4, rng);
    Eigen::VectorXd grad;
    grad_nll(p, b, grad);
    CHECK(grad[static_cast<Eigen::Index>(b3_index(c, r))] == 0.0);
    CHECK(forward(p, std::vector<double>(5, 0.0)).components[0][0].variance == 1e-5);
    check_fd(p, b, rng, 64);
  }
}

TEST_CASE("gradient edge cases") {
  Rng rng(8, 0);
  SUBCASE("targets at density one") {
    const MdnConfig c = small_config({HeadSpec::categorical(2)}, 1);
    MdnParams p = MdnParams::zeros(c);
    p.theta[static_cast<Eigen::Index>(b3_index(c, 1))] = 60.0;
    Batch b(5, 1, 3);
    b.inputs.setOnes();
    b.targets.setOnes();
    Eigen::VectorXd grad;
    const double loss = grad_nll(p, b, grad);
    CHECK(loss < 1e-20);
    CHECK(grad.norm() < 1e-9);
  }
  SUBCASE("duplicated sample") {
    const MdnConfig c = small_config({HeadSpec::categorical(3), HeadSpec::gaussian(1)}, 2);
    const MdnParams p = MdnParams::initialize(c, rng);
    const Batch one = random_batch(c, 1, rng);
    Batch two(c.input_dim, c.target_dim(), 2);
    two.inputs << one.inputs, one.inputs;
    two.targets << one.targets, one.targets;
    Eigen::VectorXd g1, g2;
    grad_nll(p, one, g1);
    grad_nll(p, two, g2);
    CHECK((g1 - g2).cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("non-finite loss names the sample") {
    const MdnConfig c = small_config({HeadSpec::gaussian(1)}, 1);
    const MdnParams p = MdnParams::initialize(c, rng);
    Batch b = random_batch(c, 3, rng);
    b.targets(0, 2) = std::numeric_limits<double>::infinity();
    Eigen::VectorXd grad;
    try {
      grad_nll(p, b, grad);
      FAIL("expected a training error");
    } catch (const TrainingError& e) {
      CHECK(e.sample_index() == 2);
    }
  }
}

TEST_CASE("optimizer") {
  SUBCASE("learns a Bernoulli(0.8)") {
    const MdnConfig c = small_config({HeadSpec::categorical(2)}, 1, 1);
    Rng init(10, 0);
    OptimizerConfig opt;
    opt.learning_rate = 1e-2;
    opt.batch_size = 64;
    opt.steps = 2000;
    const auto source = [](std::size_t step, Batch& b) {
      Rng rng(11, step);
      b.inputs.setOnes();
      for (Eigen::Index i = 0; i < b.targets.cols(); ++i) b.targets(0, i) = rng.bernoulli(0.8) ? 1.0 : 0.0;
    };
    const MdnParams p = optimize(MdnParams::initialize(c, init), source, opt);
    CHECK(std::abs(forward(p, std::vector<double>{1.0}).components[0][0].probs[1] - 0.8) <= 0.02);
  }
  SUBCASE("learns a two-variable conditional") {
    Rng mr(12, 0);
    CptDistribution dist{0.0, {1.0, 1.0}};
    std::vector<FactorTable> cpts;
    cpts.push_back({{0}, sample_cpt_row(dist, 2, mr)});
    cpts.push_back({{1}, sample_cpt_row(dist, 2, mr)});
    FactorTable t2{{0, 1, 2}, {}}, t3{{1, 2, 3}, {}};
    for (int r = 0; r < 4; ++r) {
      for (double v : sample_cpt_row(dist, 2, mr)) t2.values.push_back(v);
      for (double v : sample_cpt_row(dist, 2, mr)) t3.values.push_back(v);
    }
    cpts.push_back(t2);
    cpts.push_back(t3);
    const DiscreteModel m = DiscreteModel::directed({2, 2, 2, 2}, cpts);
    const MdnConfig c = small_config({HeadSpec::categorical(2), HeadSpec::categorical(2)}, 4, 2);
    MdnConfig wide = c;
    wide.hidden_dims = {32, 32};
    OptimizerConfig opt;
    opt.learning_rate = 3e-3;
    opt.steps = 3000;
    const auto source = [&](std::size_t step, Batch& b) {
      Rng rng(13, step);
      for (Eigen::Index i = 0; i < b.inputs.cols(); ++i) {
        const Assignment a = sample_prior(m, rng);
        b.inputs(0, i) = a[0];
        b.inputs(1, i) = a[1];
        b.targets(0, i) = a[2];
        b.targets(1, i) = a[3];
      }
    };
    Rng init(14, 0);
    const MdnParams p = optimize(MdnParams::initialize(wide, init), source, opt);
    const std::vector<VariableId> block{2, 3};
    for (int c0 = 0; c0 < 2; ++c0) {
      for (int c1 = 0; c1 < 2; ++c1) {
        const BlockConditional exact = exact_block_conditional(m, block, PartialAssignment{{0, c0}, {1, c1}});
        const MixtureProposal q = forward(p, std::vector<double>{double(c0), double(c1)});
        double kl = 0.0;
        for (std::size_t i = 0; i < 4; ++i) {
          if (exact.table[i] == 0.0) continue;
          const std::vector<double> t{double(i >> 1), double(i & 1)};
          kl += exact.table[i] * (exact.log_table[i] - log_density(q, t));
        }
        CHECK(kl < 0.01);
      }
    }
  }
  SUBCASE("zero learning rate leaves params unchanged") {
    const MdnConfig c = small_config({HeadSpec::categorical(2)}, 2);
    Rng init(15, 0);
    const MdnParams p0 = MdnParams::initialize(c, init);
    OptimizerConfig opt;
    opt.learning_rate = 0.0;
    opt.batch_size = 8;
    opt.steps = 20;
    Rng data(16, 0);
    const Batch fixed = random_batch(c, 8, data);
    const auto source = [&](std::size_t, Batch& b) { b = fixed; };
    for (auto kind : {OptimizerConfig::Kind::adam, OptimizerConfig::Kind::sgd}) {
      opt.kind = kind;
      const MdnParams p = optimize(p0, source, opt);
      CHECK((p.theta.array() == p0.theta.array()).all());
    }
  }
  SUBCASE("training is deterministic and decreases the loss") {
    const MdnConfig c = small_config({HeadSpec::categorical(3)}, 2, 1);
    OptimizerConfig opt;
    opt.learning_rate = 1e-2;
    opt.batch_size = 32;
    opt.steps = 300;
    const auto source = [](std::size_t step, Batch& b) {
      Rng rng(17, step);
      b.inputs.setOnes();
      for (Eigen::Index i = 0; i < b.targets.cols(); ++i) b.targets(0, i) = rng.bernoulli(0.9) ? 2.0 : 0.0;
    };
    Rng i1(18, 0), i2(18, 0);
    std::vector<double> losses;
    const MdnParams a = optimize(MdnParams::initialize(c, i1), source, opt,
                                 [&](std::size_t, double loss, const MdnParams&) { losses.push_back(loss); });
    const MdnParams b = optimize(MdnParams::initialize(c, i2), source, opt);
    CHECK((a.theta.array() == b.theta.array()).all());
    double head = 0.0, tail = 0.0;
    for (std::size_t i = 0; i < 50; ++i) {
      head += losses[i];
      tail += losses[losses.size() - 1 - i];
    }
    CHECK(tail < head);
  }
  SUBCASE("divergence aborts") {
    const MdnConfig c = small_config({HeadSpec::gaussian(1)}, 1, 1);
    OptimizerConfig opt;
    opt.kind = OptimizerConfig::Kind::sgd;
    opt.learning_rate = 1e6;
    opt.batch_size = 4;
    opt.steps = 100;
    const auto source = [](std::size_t, Batch& b) {
      b.inputs.setOnes();
      b.targets.setConstant(100.0);
    };
    Rng init(19, 0);
    CHECK_THROWS_AS(optimize(MdnParams::initialize(c, init), source, opt), TrainingError);
  }
  SUBCASE("cosine schedule") {
    OptimizerConfig opt;
    opt.learning_rate = 1.0;
    opt.steps = 100;
    opt.final_lr_fraction = 0.1;
    CHECK(opt.learning_rate_at(0) == doctest::Approx(1.0));
    CHECK(opt.learning_rate_at(50) == doctest::Approx(0.55));
    CHECK(opt.learning_rate_at(100) == doctest::Approx(0.1));
  }
}

TEST_CASE("params files") {
  const MdnConfig c =
      small_config({HeadSpec::categorical(2), HeadSpec::categorical(3), HeadSpec::gaussian(2)}, 3);
  Rng rng(20, 0);
  const MdnParams p = MdnParams::initialize(c, rng);
  const std::string bytes = serialize_params(p);
  const MdnParams back = deserialize_params(bytes);
  CHECK(back.config == p.config);
  CHECK((back.theta.array() == p.theta.array()).all());
  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(deserialize_params(bad), VersionError);
  CHECK_THROWS_AS(deserialize_params(bytes.substr(0, bytes.size() - 8)), VersionError);
  CHECK_THROWS_AS(deserialize_params(bytes + "x"), VersionError);
}
