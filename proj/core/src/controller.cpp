#include "facesearch/controller.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <random>

#include "binary_io.hpp"

namespace facesearch {
namespace {

constexpr std::uint32_t kControllerVersion = 1;

Matrix uniform_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double limit) {
  std::uniform_real_distribution<double> u(-limit, limit);
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = u(rng);
  }
  return m;
}

Matrix sigmoid(const Matrix& a) { return (1.0 / (1.0 + (-a.array()).exp())).matrix(); }

// Everything one unrolled step needs for backpropagation.
struct StepCache {
  Matrix x;
  Matrix h_prev;
  Matrix r;
  Matrix z;
  Matrix n;
  Matrix gh_n;  // h_prev W_hn + b_hn
  Matrix h;
  Matrix probs;
  Matrix log_probs;
};

// Unrolls the cell. With `given` set the tokens are teacher-forced;
// otherwise they are sampled from `rng` and written into `tokens`.
std::vector<StepCache> unroll(const ControllerPolicy& p, std::size_t batch, const TokenBatch* given,
                              std::mt19937_64* rng, TokenBatch* tokens) {
  const auto b = static_cast<Eigen::Index>(batch);
  const auto h = static_cast<Eigen::Index>(p.hidden);
  if (given) {
    if (given->size() != batch) throw InvalidArgument("controller: token batch size mismatch");
    for (const auto& seq : *given) {
      if (seq.size() != p.steps()) throw InvalidArgument("controller: sequence length mismatch");
      for (std::size_t t = 0; t < seq.size(); ++t) {
        if (seq[t] >= p.head_sizes[t]) throw InvalidArgument("controller: token out of range");
      }
    }
  } else {
    tokens->assign(batch, std::vector<std::size_t>(p.steps(), 0));
  }
  const TokenBatch& seqs = given ? *given : *tokens;

  std::vector<StepCache> caches(p.steps());
  Matrix hidden = Matrix::Zero(b, h);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t t = 0; t < p.steps(); ++t) {
    auto& c = caches[t];
    c.x.resize(b, static_cast<Eigen::Index>(p.embed));
    for (Eigen::Index j = 0; j < b; ++j) {
      c.x.row(j) = t == 0 ? p.start
                          : p.token_embeddings[t - 1].row(
                                static_cast<Eigen::Index>(seqs[static_cast<std::size_t>(j)][t - 1]));
    }
    c.h_prev = hidden;
    Matrix gi = c.x * p.w_ih;
    gi.rowwise() += p.b_ih;
    Matrix gh = c.h_prev * p.w_hh;
    gh.rowwise() += p.b_hh;
    c.r = sigmoid(gi.leftCols(h) + gh.leftCols(h));
    c.z = sigmoid(gi.middleCols(h, h) + gh.middleCols(h, h));
    c.gh_n = gh.rightCols(h);
    c.n = (gi.rightCols(h) + c.r.cwiseProduct(c.gh_n)).array().tanh().matrix();
    c.h = (1.0 - c.z.array()).matrix().cwiseProduct(c.n) + c.z.cwiseProduct(c.h_prev);
    hidden = c.h;

    Matrix logits = c.h * p.head_w[t];
    logits.rowwise() += p.head_b[t];
    c.log_probs.resize(logits.rows(), logits.cols());
    c.probs.resize(logits.rows(), logits.cols());
    for (Eigen::Index j = 0; j < b; ++j) {
      const double top = logits.row(j).maxCoeff();
      const double lse = top + std::log((logits.row(j).array() - top).exp().sum());
      c.log_probs.row(j) = logits.row(j).array() - lse;
      c.probs.row(j) = c.log_probs.row(j).array().exp();
    }
    if (!given) {
      for (Eigen::Index j = 0; j < b; ++j) {
        const double u = unit(*rng);
        double acc = 0.0;
        std::size_t pick = p.head_sizes[t] - 1;
        for (Eigen::Index k = 0; k < c.probs.cols(); ++k) {
          acc += c.probs(j, k);
          if (u < acc) {
            pick = static_cast<std::size_t>(k);
            break;
          }
        }
        (*tokens)[static_cast<std::size_t>(j)][t] = pick;
      }
    }
  }
  return caches;
}

StepDistributions collect(std::vector<StepCache>& caches) {
  StepDistributions d;
  for (auto& c : caches) {
    d.probs.push_back(std::move(c.probs));
    d.log_probs.push_back(std::move(c.log_probs));
  }
  return d;
}

template <typename F>
void for_each_block(ControllerPolicy& p, F&& f) {
  f(p.w_ih.data(), p.w_ih.size());
  f(p.w_hh.data(), p.w_hh.size());
  f(p.b_ih.data(), p.b_ih.size());
  f(p.b_hh.data(), p.b_hh.size());
  f(p.start.data(), p.start.size());
  for (auto& m : p.token_embeddings) f(m.data(), m.size());
  for (auto& m : p.head_w) f(m.data(), m.size());
  for (auto& m : p.head_b) f(m.data(), m.size());
}

}  // namespace

std::size_t ControllerPolicy::parameter_count() const {
  std::size_t n = 0;
  for_each_block(const_cast<ControllerPolicy&>(*this), [&](double*, Eigen::Index size) {
    n += static_cast<std::size_t>(size);
  });
  return n;
}

Vector ControllerPolicy::flatten() const {
  Vector flat(static_cast<Eigen::Index>(parameter_count()));
  Eigen::Index at = 0;
  for_each_block(const_cast<ControllerPolicy&>(*this), [&](double* data, Eigen::Index size) {
    flat.segment(at, size) = Eigen::Map<const Vector>(data, size);
    at += size;
  });
  return flat;
}

void ControllerPolicy::assign(const Vector& flat) {
  if (static_cast<std::size_t>(flat.size()) != parameter_count()) {
    throw InvalidArgument("ControllerPolicy::assign: parameter count mismatch");
  }
  Eigen::Index at = 0;
  for_each_block(*this, [&](double* data, Eigen::Index size) {
    Eigen::Map<Vector>(data, size) = flat.segment(at, size);
    at += size;
  });
}

ControllerPolicy ControllerPolicy::zeros_like() const {
  ControllerPolicy z = *this;
  for_each_block(z, [](double* data, Eigen::Index size) { Eigen::Map<Vector>(data, size).setZero(); });
  return z;
}

ControllerPolicy make_controller(const std::vector<std::size_t>& head_sizes, std::size_t hidden,
                                 std::size_t embed, std::uint64_t seed) {
  if (head_sizes.empty()) throw InvalidArgument("make_controller: no steps");
  if (hidden < 1 || embed < 1) throw InvalidArgument("make_controller: sizes must be positive");
  for (auto s : head_sizes) {
    if (s < 1) throw InvalidArgument("make_controller: empty head");
  }
  std::mt19937_64 rng(seed);
  const auto h = static_cast<Eigen::Index>(hidden);
  const auto e = static_cast<Eigen::Index>(embed);
  const double k = 1.0 / std::sqrt(static_cast<double>(hidden));
  ControllerPolicy p;
  p.hidden = hidden;
  p.embed = embed;
  p.head_sizes = head_sizes;
  p.w_ih = uniform_matrix(rng, e, 3 * h, k);
  p.w_hh = uniform_matrix(rng, h, 3 * h, k);
  p.b_ih = uniform_matrix(rng, 1, 3 * h, k);
  p.b_hh = uniform_matrix(rng, 1, 3 * h, k);
  p.start = uniform_matrix(rng, 1, e, k);
  for (std::size_t t = 0; t + 1 < head_sizes.size(); ++t) {
    p.token_embeddings.push_back(uniform_matrix(rng, static_cast<Eigen::Index>(head_sizes[t]), e, k));
  }
  for (auto s : head_sizes) {
    p.head_w.push_back(uniform_matrix(rng, h, static_cast<Eigen::Index>(s), k));
    p.head_b.push_back(RowVector::Zero(static_cast<Eigen::Index>(s)));
  }
  return p;
}

ControllerPolicy make_controller(const SearchSpace& space, std::size_t hidden, std::uint64_t seed) {
  return make_controller(space.cardinalities(), hidden, hidden, seed);
}

SampledBatch sample_tokens(const ControllerPolicy& policy, std::size_t batch, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  SampledBatch out;
  auto caches = unroll(policy, batch, nullptr, &rng, &out.tokens);
  out.log_probs.resize(static_cast<Eigen::Index>(batch), static_cast<Eigen::Index>(policy.steps()));
  for (std::size_t t = 0; t < policy.steps(); ++t) {
    for (std::size_t j = 0; j < batch; ++j) {
      out.log_probs(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(t)) =
          caches[t].log_probs(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(out.tokens[j][t]));
    }
  }
  out.dists = collect(caches);
  return out;
}

StepDistributions step_distributions(const ControllerPolicy& policy, const TokenBatch& tokens) {
  auto caches = unroll(policy, tokens.size(), &tokens, nullptr, nullptr);
  return collect(caches);
}

Matrix token_log_probs(const ControllerPolicy& policy, const TokenBatch& tokens) {
  const auto dists = step_distributions(policy, tokens);
  Matrix out(static_cast<Eigen::Index>(tokens.size()), static_cast<Eigen::Index>(policy.steps()));
  for (std::size_t j = 0; j < tokens.size(); ++j) {
    for (std::size_t t = 0; t < policy.steps(); ++t) {
      out(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(t)) =
          dists.log_probs[t](static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(tokens[j][t]));
    }
  }
  return out;
}

double sequence_probability(const ControllerPolicy& policy, const std::vector<std::size_t>& tokens) {
  return std::exp(token_log_probs(policy, TokenBatch{tokens}).sum());
}

std::vector<std::size_t> greedy_tokens(const ControllerPolicy& policy) {
  // Each step only depends on earlier tokens, so re-running the teacher-forced
  // pass with the prefix chosen so far yields the greedy rollout.
  std::vector<std::size_t> seq(policy.steps(), 0);
  for (std::size_t t = 0; t < policy.steps(); ++t) {
    const auto dists = step_distributions(policy, TokenBatch{seq});
    Eigen::Index best = 0;
    dists.probs[t].row(0).maxCoeff(&best);
    seq[t] = static_cast<std::size_t>(best);
  }
  return seq;
}

PolicyGradient policy_gradient(const ControllerPolicy& p, const TokenBatch& tokens, const Matrix& coef,
                               double entropy_coef) {
  const std::size_t batch = tokens.size();
  const auto b = static_cast<Eigen::Index>(batch);
  const auto h = static_cast<Eigen::Index>(p.hidden);
  if (coef.rows() != b || coef.cols() != static_cast<Eigen::Index>(p.steps())) {
    throw InvalidArgument("policy_gradient: coefficient matrix shape mismatch");
  }
  auto caches = unroll(p, batch, &tokens, nullptr, nullptr);

  PolicyGradient out{p.zeros_like(), Matrix(b, static_cast<Eigen::Index>(p.steps())),
                     Matrix(b, static_cast<Eigen::Index>(p.steps()))};
  auto& g = out.grad;
  Matrix carry = Matrix::Zero(b, h);  // dJ/dh flowing back from later steps
  for (std::size_t t = p.steps(); t-- > 0;) {
    const auto& c = caches[t];
    const auto col = static_cast<Eigen::Index>(t);

    Matrix dlogits(b, c.probs.cols());
    for (Eigen::Index j = 0; j < b; ++j) {
      const auto a = static_cast<Eigen::Index>(tokens[static_cast<std::size_t>(j)][t]);
      const double entropy = -(c.probs.row(j).array() * c.log_probs.row(j).array()).sum();
      out.log_probs(j, col) = c.log_probs(j, a);
      out.entropies(j, col) = entropy;
      // d log π(a)/dlogits = onehot(a) - p ;  dH/dlogits = -p ⊙ (log p + H)
      dlogits.row(j) = -coef(j, col) * c.probs.row(j);
      dlogits(j, a) += coef(j, col);
      dlogits.row(j).array() -= entropy_coef * c.probs.row(j).array() * (c.log_probs.row(j).array() + entropy);
    }
    g.head_w[t] += c.h.transpose() * dlogits;
    g.head_b[t] += dlogits.colwise().sum();

    const Matrix dh = dlogits * p.head_w[t].transpose() + carry;
    const Matrix dn = dh.cwiseProduct((1.0 - c.z.array()).matrix());
    const Matrix dz = dh.cwiseProduct(c.h_prev - c.n);
    const Matrix da_n = dn.cwiseProduct((1.0 - c.n.array().square()).matrix());
    const Matrix dr = da_n.cwiseProduct(c.gh_n);
    const Matrix da_r = dr.cwiseProduct((c.r.array() * (1.0 - c.r.array())).matrix());
    const Matrix da_z = dz.cwiseProduct((c.z.array() * (1.0 - c.z.array())).matrix());

    Matrix da_i(b, 3 * h);
    da_i << da_r, da_z, da_n;
    Matrix da_h(b, 3 * h);
    da_h << da_r, da_z, da_n.cwiseProduct(c.r);

    g.w_ih += c.x.transpose() * da_i;
    g.b_ih += da_i.colwise().sum();
    g.w_hh += c.h_prev.transpose() * da_h;
    g.b_hh += da_h.colwise().sum();

    const Matrix dx = da_i * p.w_ih.transpose();
    if (t == 0) {
      g.start += dx.colwise().sum();
    } else {
      for (Eigen::Index j = 0; j < b; ++j) {
        const auto prev = static_cast<Eigen::Index>(tokens[static_cast<std::size_t>(j)][t - 1]);
        g.token_embeddings[t - 1].row(prev) += dx.row(j);
      }
    }
    carry = dh.cwiseProduct(c.z) + da_h * p.w_hh.transpose();
  }
  return out;
}

void AdamState::ascend(ControllerPolicy& policy, const ControllerPolicy& grad) {
  const Vector g = grad.flatten();
  if (m.size() != g.size()) {
    m = Vector::Zero(g.size());
    v = Vector::Zero(g.size());
    t = 0;
  }
  ++t;
  m = beta1 * m + (1.0 - beta1) * g;
  v = beta2 * v + (1.0 - beta2) * g.cwiseProduct(g);
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  const Vector step = (m / c1).array() / ((v / c2).array().sqrt() + eps);
  policy.assign(policy.flatten() + lr * step);
}

void write_controller(std::ostream& out, const ControllerPolicy& policy) {
  io::write_magic(out, "FSCT");
  io::write_u32(out, kControllerVersion);
  io::write_u64(out, policy.hidden);
  io::write_u64(out, policy.embed);
  io::write_u64(out, policy.head_sizes.size());
  for (auto s : policy.head_sizes) io::write_u64(out, s);
  const Vector flat = policy.flatten();
  io::write_u64(out, static_cast<std::uint64_t>(flat.size()));
  for (Eigen::Index i = 0; i < flat.size(); ++i) io::write_f64(out, flat[i]);
}

ControllerPolicy read_controller(std::istream& in) {
  io::expect_magic(in, "FSCT");
  const auto version = io::read_u32(in);
  if (version != kControllerVersion) throw FormatError("FSCT: unsupported version " + std::to_string(version));
  const auto hidden = io::read_u64(in);
  const auto embed = io::read_u64(in);
  const auto steps = io::read_u64(in);
  if (steps == 0 || steps > 1024 || hidden == 0 || hidden > 65536 || embed == 0 || embed > 65536) {
    throw FormatError("FSCT: implausible controller shape");
  }
  std::vector<std::size_t> heads(steps);
  for (auto& s : heads) s = io::read_u64(in);
  auto policy = make_controller(heads, hidden, embed, 0);
  const auto count = io::read_u64(in);
  if (count != policy.parameter_count()) throw FormatError("FSCT: parameter count mismatch");
  Vector flat(static_cast<Eigen::Index>(count));
  for (Eigen::Index i = 0; i < flat.size(); ++i) flat[i] = io::read_f64(in);
  policy.assign(flat);
  return policy;
}

}  // namespace facesearch
