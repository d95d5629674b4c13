#include "nbs/mdn.h"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "nbs/errors.h"
#include "nbs/log_prob.h"

namespace nbs {
namespace {

constexpr char kMagic[8] = {'N', 'B', 'S', 'M', 'D', 'N', '\0', '\1'};
constexpr std::uint32_t kFormatVersion = 1;
const double kLog2Pi = std::log(2.0 * std::numbers::pi);

using Matrix = Eigen::MatrixXd;
using ConstMap = Eigen::Map<const Matrix>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;
using MatMap = Eigen::Map<Matrix>;
using VecMap = Eigen::Map<Eigen::VectorXd>;

struct Layout {
  std::size_t in, h1, h2, out;
  std::size_t w1, b1, w2, b2, w3, b3, total;

  explicit Layout(const MdnConfig& c)
      : in(c.input_dim), h1(c.hidden_dims[0]), h2(c.hidden_dims[1]), out(c.output_dim()) {
    w1 = 0;
    b1 = w1 + h1 * in;
    w2 = b1 + h1;
    b2 = w2 + h2 * h1;
    w3 = b2 + h2;
    b3 = w3 + out * h2;
    total = b3 + out;
  }
};

template <class Derived>
void elu_inplace(Eigen::MatrixBase<Derived>& z) {
  z = z.unaryExpr([](double x) { return x > 0.0 ? x : std::expm1(x); });
}

double variance_of(double raw, double floor) {
  return std::max(softplus(raw), floor);
}

// Loss of one sample and its gradient with respect to the raw outputs.
double raw_loss_and_grad(const MdnConfig& config, const double* raw, const double* target,
                         double* grad) {
  const int K = config.n_mixtures;
  const auto& heads = config.heads;
  const double* logits = raw;
  const double lse_w = log_sum_exp(std::span<const double>(logits, static_cast<std::size_t>(K)));

  std::vector<double> comp(static_cast<std::size_t>(K));
  const double* p = raw + K;
  for (int k = 0; k < K; ++k) {
    double total = logits[k] - lse_w;
    const double* t = target;
    for (const auto& h : heads) {
      if (h.kind == HeadSpec::Kind::categorical) {
        const int s = static_cast<int>(*t);
        if (h.size == 2) {
          total += s == 1 ? -softplus(-p[0]) : -softplus(p[0]);
        } else {
          const double lse =
              log_sum_exp(std::span<const double>(p, static_cast<std::size_t>(h.size)));
          total += p[s] - lse;
        }
      } else {
        const double var = variance_of(p[h.size], config.variance_floor);
        double sq = 0.0;
        for (int i = 0; i < h.size; ++i) sq += (t[i] - p[i]) * (t[i] - p[i]);
        total += -0.5 * h.size * (kLog2Pi + std::log(var)) - sq / (2.0 * var);
      }
      p += h.raw_size();
      t += h.target_size();
    }
    comp[static_cast<std::size_t>(k)] = total;
  }
  const double lse = log_sum_exp(comp);
  const double loss = -lse;
  if (!grad) return loss;

  p = raw + K;
  double* g = grad + K;
  for (int k = 0; k < K; ++k) {
    const double gamma = std::exp(comp[static_cast<std::size_t>(k)] - lse);
    const double w = std::exp(logits[k] - lse_w);
    grad[k] = w - gamma;
    const double* t = target;
    for (const auto& h : heads) {
      if (h.kind == HeadSpec::Kind::categorical) {
        const int s = static_cast<int>(*t);
        if (h.size == 2) {
          g[0] = -gamma * (static_cast<double>(s) - sigmoid(p[0]));
        } else {
          const double lse_h =
              log_sum_exp(std::span<const double>(p, static_cast<std::size_t>(h.size)));
          for (int i = 0; i < h.size; ++i) {
            const double pi = std::exp(p[i] - lse_h);
            g[i] = -gamma * ((i == s ? 1.0 : 0.0) - pi);
          }
        }
      } else {
        const double raw_var = p[h.size];
        const double sp = softplus(raw_var);
        const bool floored = sp < config.variance_floor;
        const double var = floored ? config.variance_floor : sp;
        double sq = 0.0;
        for (int i = 0; i < h.size; ++i) {
          const double diff = t[i] - p[i];
          sq += diff * diff;
          g[i] = -gamma * diff / var;
        }
        g[h.size] = floored ? 0.0
                            : -gamma * (-0.5 * h.size / var + sq / (2.0 * var * var)) *
                                  sigmoid(raw_var);
      }
      p += h.raw_size();
      g += h.raw_size();
      t += h.target_size();
    }
  }
  return loss;
}

void check_target(const std::vector<HeadSpec>& heads, std::span<const double> target) {
  std::size_t n = 0;
  for (const auto& h : heads) n += static_cast<std::size_t>(h.target_size());
  if (target.size() != n) {
    throw PreconditionError("target has " + std::to_string(target.size()) +
                            " entries, heads expect " + std::to_string(n));
  }
  std::size_t i = 0;
  for (const auto& h : heads) {
    if (h.kind == HeadSpec::Kind::categorical) {
      const double s = target[i];
      if (!(s >= 0.0 && s < h.size && s == std::floor(s))) {
        throw PreconditionError("categorical target out of range");
      }
    }
    i += static_cast<std::size_t>(h.target_size());
  }
}

void put_u32(std::string& out, std::uint32_t x) {
  for (int i = 0; i < 4; ++i) out += static_cast<char>((x >> (8 * i)) & 0xff);
}
void put_u64(std::string& out, std::uint64_t x) {
  for (int i = 0; i < 8; ++i) out += static_cast<char>((x >> (8 * i)) & 0xff);
}
void put_f64(std::string& out, double x) { put_u64(out, std::bit_cast<std::uint64_t>(x)); }

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}
  std::uint64_t u(int width) {
    if (pos_ + static_cast<std::size_t>(width) > bytes_.size()) {
      throw VersionError("truncated params file");
    }
    std::uint64_t x = 0;
    for (int i = 0; i < width; ++i) {
      x |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(width);
    return x;
  }
  std::uint32_t u32() { return static_cast<std::uint32_t>(u(4)); }
  std::uint64_t u64() { return u(8); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw VersionError("truncated params file");
    std::string s(bytes_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

int HeadSpec::raw_size() const {
  if (kind == Kind::gaussian) return size + 1;
  return size == 2 ? 1 : size;
}

std::size_t MdnConfig::output_dim() const {
  std::size_t per = 0;
  for (const auto& h : heads) per += static_cast<std::size_t>(h.raw_size());
  return static_cast<std::size_t>(n_mixtures) * (1 + per);
}

std::size_t MdnConfig::target_dim() const {
  std::size_t n = 0;
  for (const auto& h : heads) n += static_cast<std::size_t>(h.target_size());
  return n;
}

std::size_t MdnConfig::num_params() const { return Layout(*this).total; }

void MdnConfig::validate() const {
  if (input_dim == 0) throw ConfigError("input_dim must be positive");
  if (hidden_dims[0] == 0 || hidden_dims[1] == 0) {
    throw ConfigError("hidden widths must be positive");
  }
  if (n_mixtures < 1) throw ConfigError("n_mixtures must be positive");
  if (heads.empty()) throw ConfigError("at least one head is required");
  for (const auto& h : heads) {
    if (h.kind == HeadSpec::Kind::categorical && h.size < 2) {
      throw ConfigError("categorical heads need cardinality >= 2");
    }
    if (h.kind == HeadSpec::Kind::gaussian && h.size < 1) {
      throw ConfigError("gaussian heads need dimension >= 1");
    }
  }
  if (!(variance_floor > 0.0)) throw ConfigError("variance_floor must be positive");
}

MdnConfig MdnConfig::sized(std::size_t input_dim, std::vector<HeadSpec> heads, int n_mixtures,
                           std::string encoding, double lambda) {
  MdnConfig c;
  c.input_dim = input_dim;
  c.heads = std::move(heads);
  c.n_mixtures = n_mixtures;
  c.encoding = std::move(encoding);
  const auto width = static_cast<std::size_t>(
      std::llround(lambda * static_cast<double>(std::max(input_dim, c.output_dim()))));
  c.hidden_dims = {width, width};
  return c;
}

MdnParams MdnParams::zeros(const MdnConfig& config) {
  config.validate();
  MdnParams p;
  p.config = config;
  p.theta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(config.num_params()));
  return p;
}

MdnParams MdnParams::initialize(const MdnConfig& config, Rng& rng) {
  MdnParams p = zeros(config);
  const Layout l(config);
  const auto fill = [&](std::size_t off, std::size_t fan_out, std::size_t fan_in) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (std::size_t i = 0; i < fan_out * fan_in; ++i) {
      p.theta[static_cast<Eigen::Index>(off + i)] = (2.0 * rng.uniform() - 1.0) * bound;
    }
  };
  fill(l.w1, l.h1, l.in);
  fill(l.w2, l.h2, l.h1);
  fill(l.w3, l.out, l.h2);
  return p;
}

std::size_t MixtureProposal::target_dim() const {
  std::size_t n = 0;
  for (const auto& h : heads) n += static_cast<std::size_t>(h.target_size());
  return n;
}

std::uint64_t MixtureProposal::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ull;
  const auto mix = [&](double x) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(x);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xff;
      h *= 0x100000001b3ull;
    }
  };
  for (double w : log_weights) mix(w);
  for (const auto& comp : components) {
    for (const auto& hp : comp) {
      for (double x : hp.probs) mix(x);
      for (double x : hp.mean) mix(x);
      mix(hp.variance);
    }
  }
  return h;
}

Eigen::VectorXd forward_raw(const MdnParams& params, std::span<const double> input) {
  const Layout l(params.config);
  if (input.size() != l.in) {
    throw PreconditionError("input has " + std::to_string(input.size()) +
                            " entries, network expects " + std::to_string(l.in));
  }
  for (double x : input) {
    if (!std::isfinite(x)) throw DomainError("non-finite network input");
  }
  const double* t = params.theta.data();
  const ConstVecMap x(input.data(), static_cast<Eigen::Index>(l.in));
  Eigen::VectorXd a1 = ConstMap(t + l.w1, l.h1, l.in) * x + ConstVecMap(t + l.b1, l.h1);
  elu_inplace(a1);
  Eigen::VectorXd a2 = ConstMap(t + l.w2, l.h2, l.h1) * a1 + ConstVecMap(t + l.b2, l.h2);
  elu_inplace(a2);
  return ConstMap(t + l.w3, l.out, l.h2) * a2 + ConstVecMap(t + l.b3, l.out);
}

MixtureProposal decode_output(const MdnConfig& config, std::span<const double> raw) {
  if (raw.size() != config.output_dim()) {
    throw PreconditionError("raw output size does not match the config");
  }
  MixtureProposal out;
  out.heads = config.heads;
  const auto K = static_cast<std::size_t>(config.n_mixtures);
  out.log_weights.assign(raw.begin(), raw.begin() + static_cast<std::ptrdiff_t>(K));
  const double lse = log_sum_exp(out.log_weights);
  for (double& w : out.log_weights) w -= lse;
  out.components.resize(K);
  const double* p = raw.data() + K;
  for (std::size_t k = 0; k < K; ++k) {
    auto& comp = out.components[k];
    comp.resize(config.heads.size());
    for (std::size_t hi = 0; hi < config.heads.size(); ++hi) {
      const auto& h = config.heads[hi];
      auto& hp = comp[hi];
      if (h.kind == HeadSpec::Kind::categorical) {
        hp.log_probs.resize(static_cast<std::size_t>(h.size));
        if (h.size == 2) {
          hp.log_probs[0] = -softplus(p[0]);
          hp.log_probs[1] = -softplus(-p[0]);
        } else {
          const double l = log_sum_exp(std::span<const double>(p, hp.log_probs.size()));
          for (int i = 0; i < h.size; ++i) hp.log_probs[static_cast<std::size_t>(i)] = p[i] - l;
        }
        hp.probs.resize(hp.log_probs.size());
        for (std::size_t i = 0; i < hp.probs.size(); ++i) hp.probs[i] = std::exp(hp.log_probs[i]);
      } else {
        hp.mean.assign(p, p + h.size);
        hp.variance = variance_of(p[h.size], config.variance_floor);
      }
      p += h.raw_size();
    }
  }
  return out;
}

MixtureProposal forward(const MdnParams& params, std::span<const double> input) {
  const Eigen::VectorXd raw = forward_raw(params, input);
  return decode_output(params.config, std::span<const double>(raw.data(), raw.size()));
}

double log_density(const MixtureProposal& proposal, std::span<const double> target) {
  check_target(proposal.heads, target);
  std::vector<double> comp(proposal.log_weights.size());
  for (std::size_t k = 0; k < comp.size(); ++k) {
    double total = proposal.log_weights[k];
    std::size_t ti = 0;
    for (std::size_t hi = 0; hi < proposal.heads.size(); ++hi) {
      const auto& h = proposal.heads[hi];
      const auto& hp = proposal.components[k][hi];
      if (h.kind == HeadSpec::Kind::categorical) {
        total += hp.log_probs[static_cast<std::size_t>(target[ti])];
      } else {
        double sq = 0.0;
        for (int i = 0; i < h.size; ++i) {
          const double d = target[ti + static_cast<std::size_t>(i)] - hp.mean[static_cast<std::size_t>(i)];
          sq += d * d;
        }
        total += -0.5 * h.size * (kLog2Pi + std::log(hp.variance)) - sq / (2.0 * hp.variance);
      }
      ti += static_cast<std::size_t>(h.target_size());
    }
    comp[k] = total;
  }
  return log_sum_exp(comp);
}

ProposalDraw sample(const MixtureProposal& proposal, Rng& rng) {
  const int k = sample_log_categorical(proposal.log_weights, rng);
  if (k < 0) throw PreconditionError("mixture weights have no mass");
  ProposalDraw draw;
  draw.value.reserve(proposal.target_dim());
  const auto& comp = proposal.components[static_cast<std::size_t>(k)];
  for (std::size_t hi = 0; hi < proposal.heads.size(); ++hi) {
    const auto& h = proposal.heads[hi];
    const auto& hp = comp[hi];
    if (h.kind == HeadSpec::Kind::categorical) {
      draw.value.push_back(static_cast<double>(sample_log_categorical(hp.log_probs, rng)));
    } else {
      const double sd = std::sqrt(hp.variance);
      for (int i = 0; i < h.size; ++i) {
        draw.value.push_back(hp.mean[static_cast<std::size_t>(i)] + sd * rng.normal());
      }
    }
  }
  draw.log_density = log_density(proposal, draw.value);
  return draw;
}

double grad_nll(const MdnParams& params, const Batch& batch, Eigen::VectorXd& grad) {
  const MdnConfig& c = params.config;
  const Layout l(c);
  const auto B = static_cast<Eigen::Index>(batch.size());
  if (B == 0) throw PreconditionError("empty batch");
  if (static_cast<std::size_t>(batch.inputs.rows()) != l.in ||
      static_cast<std::size_t>(batch.targets.rows()) != c.target_dim() ||
      batch.targets.cols() != B) {
    throw PreconditionError("batch shape does not match the config");
  }
  const double* t = params.theta.data();
  const ConstMap W1(t + l.w1, l.h1, l.in), W2(t + l.w2, l.h2, l.h1), W3(t + l.w3, l.out, l.h2);
  const ConstVecMap b1(t + l.b1, l.h1), b2(t + l.b2, l.h2), b3(t + l.b3, l.out);

  Matrix Z1 = (W1 * batch.inputs).colwise() + b1;
  Matrix A1 = Z1;
  elu_inplace(A1);
  Matrix Z2 = (W2 * A1).colwise() + b2;
  Matrix A2 = Z2;
  elu_inplace(A2);
  Matrix R = (W3 * A2).colwise() + b3;

  Matrix G(static_cast<Eigen::Index>(l.out), B);
  double total = 0.0;
  for (Eigen::Index i = 0; i < B; ++i) {
    const double loss = raw_loss_and_grad(c, R.col(i).data(), batch.targets.col(i).data(),
                                          G.col(i).data());
    if (!std::isfinite(loss)) {
      throw TrainingError("non-finite loss at batch sample " + std::to_string(i), i);
    }
    total += loss;
  }
  G /= static_cast<double>(B);

  grad.resize(static_cast<Eigen::Index>(l.total));
  double* g = grad.data();
  MatMap(g + l.w3, l.out, l.h2).noalias() = G * A2.transpose();
  VecMap(g + l.b3, l.out) = G.rowwise().sum();
  Matrix D2 = W3.transpose() * G;
  D2.array() *= (Z2.array() > 0.0).select(1.0, A2.array() + 1.0);
  MatMap(g + l.w2, l.h2, l.h1).noalias() = D2 * A1.transpose();
  VecMap(g + l.b2, l.h2) = D2.rowwise().sum();
  Matrix D1 = W2.transpose() * D2;
  D1.array() *= (Z1.array() > 0.0).select(1.0, A1.array() + 1.0);
  MatMap(g + l.w1, l.h1, l.in).noalias() = D1 * batch.inputs.transpose();
  VecMap(g + l.b1, l.h1) = D1.rowwise().sum();
  return total / static_cast<double>(B);
}

double batch_nll(const MdnParams& params, const Batch& batch) {
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto col = static_cast<Eigen::Index>(i);
    const Eigen::VectorXd x = batch.inputs.col(col);
    const Eigen::VectorXd y = batch.targets.col(col);
    total -= log_density(forward(params, std::span<const double>(x.data(), x.size())),
                         std::span<const double>(y.data(), y.size()));
  }
  return total / static_cast<double>(batch.size());
}

double OptimizerConfig::learning_rate_at(std::size_t step) const {
  if (final_lr_fraction == 1.0 || steps == 0) return learning_rate;
  const double t = static_cast<double>(step) / static_cast<double>(steps);
  return learning_rate *
         (final_lr_fraction + (1.0 - final_lr_fraction) * 0.5 * (1.0 + std::cos(std::numbers::pi * t)));
}

MdnParams optimize(MdnParams params, const BatchSource& source,
                   const OptimizerConfig& options, const StepCallback& on_step) {
  const auto n = params.theta.size();
  Eigen::VectorXd m = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd grad(n);
  Batch batch(params.config.input_dim, params.config.target_dim(), options.batch_size);
  double b1t = 1.0;
  double b2t = 1.0;
  for (std::size_t step = 0; step < options.steps; ++step) {
    source(step, batch);
    const double loss = grad_nll(params, batch, grad);
    if (!std::isfinite(loss) || loss > options.divergence_threshold) {
      throw TrainingError("optimizer diverged at step " + std::to_string(step) +
                          " with loss " + std::to_string(loss));
    }
    const double lr = options.learning_rate_at(step);
    if (options.kind == OptimizerConfig::Kind::sgd) {
      params.theta.noalias() -= lr * grad;
    } else {
      b1t *= options.beta1;
      b2t *= options.beta2;
      m = options.beta1 * m + (1.0 - options.beta1) * grad;
      v = options.beta2 * v + (1.0 - options.beta2) * grad.cwiseAbs2();
      const double scale = lr / (1.0 - b1t);
      const double vc = 1.0 / (1.0 - b2t);
      params.theta.array() -=
          scale * m.array() / ((v.array() * vc).sqrt() + options.epsilon);
    }
    if (!params.theta.allFinite()) {
      throw TrainingError("non-finite parameters after step " + std::to_string(step));
    }
    if (on_step) on_step(step, loss, params);
  }
  return params;
}

std::string serialize_params(const MdnParams& params) {
  const MdnConfig& c = params.config;
  std::string out(kMagic, sizeof(kMagic));
  put_u32(out, kFormatVersion);
  put_u32(out, static_cast<std::uint32_t>(c.encoding.size()));
  out += c.encoding;
  put_u64(out, c.input_dim);
  put_u64(out, c.hidden_dims[0]);
  put_u64(out, c.hidden_dims[1]);
  put_u32(out, static_cast<std::uint32_t>(c.n_mixtures));
  put_u32(out, static_cast<std::uint32_t>(c.heads.size()));
  for (const auto& h : c.heads) {
    put_u32(out, static_cast<std::uint32_t>(h.kind));
    put_u32(out, static_cast<std::uint32_t>(h.size));
  }
  put_f64(out, c.variance_floor);
  put_u64(out, static_cast<std::uint64_t>(params.theta.size()));
  for (Eigen::Index i = 0; i < params.theta.size(); ++i) put_f64(out, params.theta[i]);
  return out;
}

MdnParams deserialize_params(std::string_view bytes) {
  Reader r(bytes);
  if (r.str(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    throw VersionError("not an MDN params file");
  }
  const std::uint32_t version = r.u32();
  if (version != kFormatVersion) {
    throw VersionError("unsupported params format version " + std::to_string(version));
  }
  MdnConfig c;
  c.encoding = r.str(r.u32());
  c.input_dim = r.u64();
  c.hidden_dims[0] = r.u64();
  c.hidden_dims[1] = r.u64();
  c.n_mixtures = static_cast<int>(r.u32());
  const std::uint32_t nh = r.u32();
  if (nh > 1u << 20) throw VersionError("implausible head count");
  for (std::uint32_t i = 0; i < nh; ++i) {
    HeadSpec h;
    const std::uint32_t kind = r.u32();
    if (kind > 1) throw VersionError("unknown head kind");
    h.kind = static_cast<HeadSpec::Kind>(kind);
    h.size = static_cast<int>(r.u32());
    c.heads.push_back(h);
  }
  c.variance_floor = r.f64();
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw VersionError(std::string("invalid config block: ") + e.what());
  }
  const std::uint64_t n = r.u64();
  if (n != c.num_params()) throw VersionError("weight count does not match the config");
  MdnParams p;
  p.config = c;
  p.theta.resize(static_cast<Eigen::Index>(n));
  for (std::uint64_t i = 0; i < n; ++i) p.theta[static_cast<Eigen::Index>(i)] = r.f64();
  if (!r.done()) throw VersionError("trailing bytes in params file");
  return p;
}

void save_params(const std::string& path, const MdnParams& params) {
  const std::string bytes = serialize_params(params);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

MdnParams load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_params(ss.str());
}

}  // namespace nbs
