#include "facesearch/marginloss.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace facesearch {
namespace {

constexpr double kCosineClamp = 1.0 - 1e-12;
constexpr double kThetaGuard = 1e-6;

struct Normalized {
  Matrix unit;
  Vector norms;
};

Normalized normalize_rows(const Matrix& m, const char* what) {
  Normalized out{m, m.rowwise().norm()};
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    if (!(out.norms[r] > 0.0) || !std::isfinite(out.norms[r])) {
      throw DegenerateEmbedding(std::string(what) + " row " + std::to_string(r) +
                                " has zero or non-finite norm");
    }
    out.unit.row(r) /= out.norms[r];
  }
  return out;
}

void check_shapes(const Matrix& x, const std::vector<std::uint32_t>& y, const Matrix& weights) {
  if (x.rows() < 1) throw InvalidArgument("margin loss: empty batch");
  if (static_cast<std::size_t>(x.rows()) != y.size()) {
    throw InvalidArgument("margin loss: label count does not match batch size");
  }
  if (weights.rows() < 2) throw InvalidArgument("margin loss: need K >= 2 classes");
  if (weights.cols() != x.cols()) throw InvalidArgument("margin loss: dimension mismatch");
  for (auto label : y) {
    if (label >= weights.rows()) throw InvalidArgument("margin loss: label out of range");
  }
}

// Shared forward pass; keeps the cosines and target angles for backward.
struct Evaluation {
  Normalized xs;
  Normalized ws;
  Matrix cosines;
  Vector theta;
  Matrix logits;
  Vector row_loss;
};

Evaluation evaluate(const Matrix& x, const std::vector<std::uint32_t>& y, const Matrix& weights,
                    const LossParams& p) {
  p.validate();
  check_shapes(x, y, weights);
  Evaluation ev{normalize_rows(x, "embedding"), normalize_rows(weights, "class weight"), {}, {}, {}, {}};
  ev.cosines = ev.xs.unit * ev.ws.unit.transpose();
  ev.logits = p.s_n * ev.cosines;
  ev.theta.resize(x.rows());
  ev.row_loss.resize(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const auto t = static_cast<Eigen::Index>(y[static_cast<std::size_t>(i)]);
    const double c = std::clamp(ev.cosines(i, t), -kCosineClamp, kCosineClamp);
    ev.theta[i] = std::acos(c);
    ev.logits(i, t) = p.s_p * margin_fn(p, ev.theta[i]);
    const double top = ev.logits.row(i).maxCoeff();
    const double lse = top + std::log((ev.logits.row(i).array() - top).exp().sum());
    ev.row_loss[i] = lse - ev.logits(i, t);
  }
  return ev;
}

}  // namespace

void LossParams::validate() const {
  if (!std::isfinite(m1) || !std::isfinite(m2) || !std::isfinite(m3) || !std::isfinite(s_p) ||
      !std::isfinite(s_n)) {
    throw InvalidArgument("LossParams: all parameters must be finite");
  }
  if (m1 < 0.0 || m2 < 0.0 || m3 < 0.0) throw InvalidArgument("LossParams: margins must be >= 0");
  if (!(s_p > 0.0) || !(s_n > 0.0)) throw InvalidArgument("LossParams: scales must be > 0");
}

double margin_fn(const LossParams& p, double theta) { return std::cos(p.m1 * theta + p.m2) - p.m3; }

LossForward loss_forward(const Matrix& x, const std::vector<std::uint32_t>& y, const Matrix& weights,
                         const LossParams& p) {
  auto ev = evaluate(x, y, weights, p);
  return {ev.row_loss.mean(), std::move(ev.logits)};
}

LossGradients loss_backward(const Matrix& x, const std::vector<std::uint32_t>& y,
                            const Matrix& weights, const LossParams& p) {
  const auto ev = evaluate(x, y, weights, p);
  const auto b = x.rows();
  const double inv_b = 1.0 / static_cast<double>(b);

  LossGradients out;
  out.loss = ev.row_loss.mean();

  // dL/dcos, one row per sample.
  Matrix grad_cos(b, weights.rows());
  for (Eigen::Index i = 0; i < b; ++i) {
    const auto t = static_cast<Eigen::Index>(y[static_cast<std::size_t>(i)]);
    const double top = ev.logits.row(i).maxCoeff();
    RowVector prob = (ev.logits.row(i).array() - top).exp();
    prob /= prob.sum();
    prob[t] -= 1.0;
    grad_cos.row(i) = (p.s_n * inv_b) * prob;

    // Guard on the unclamped angle.
    double theta = ev.theta[i];
    const double raw = std::acos(std::clamp(ev.cosines(i, t), -1.0, 1.0));
    if (raw < kThetaGuard || raw > std::numbers::pi - kThetaGuard) {
      theta = std::clamp(theta, kThetaGuard, std::numbers::pi - kThetaGuard);
      out.clamped_rows.push_back(static_cast<std::size_t>(i));
    }
    // d/dc [cos(m1*acos(c) + m2)] = m1 * sin(m1*θ + m2) / sin θ
    const double dmargin = p.m1 * std::sin(p.m1 * theta + p.m2) / std::sin(theta);
    grad_cos(i, t) = prob[t] * inv_b * p.s_p * dmargin;
  }

  const Matrix grad_xu = grad_cos * ev.ws.unit;
  const Matrix grad_wu = grad_cos.transpose() * ev.xs.unit;

  // Back through v -> v/|v|: (g - (g·u) u) / |v|.
  out.grad_x.resize(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < b; ++i) {
    const auto u = ev.xs.unit.row(i);
    out.grad_x.row(i) = (grad_xu.row(i) - grad_xu.row(i).dot(u) * u) / ev.xs.norms[i];
  }
  out.grad_w.resize(weights.rows(), weights.cols());
  for (Eigen::Index k = 0; k < weights.rows(); ++k) {
    const auto u = ev.ws.unit.row(k);
    out.grad_w.row(k) = (grad_wu.row(k) - grad_wu.row(k).dot(u) * u) / ev.ws.norms[k];
  }
  return out;
}

}  // namespace facesearch
