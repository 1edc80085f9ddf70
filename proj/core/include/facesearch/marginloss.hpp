#pragma once

#include <cstdint>
#include <vector>

#include "facesearch/common.hpp"

namespace facesearch {

// Combined-margin parameters: the target logit is s_p * (cos(m1*θ + m2) - m3),
// every other logit is s_n * cos θ_k.
struct LossParams {
  double m1 = 1.0;
  double m2 = 0.0;
  double m3 = 0.0;
  double s_p = 64.0;
  double s_n = 64.0;

  void validate() const;
};

double margin_fn(const LossParams& p, double theta);

struct LossForward {
  double loss = 0.0;  // batch mean
  Matrix logits;      // b x K, target column already carries the margin
};

struct LossGradients {
  double loss = 0.0;
  Matrix grad_x;  // b x d
  Matrix grad_w;  // K x d
  // Rows whose target angle was clamped away from 0 or π for differentiation.
  std::vector<std::size_t> clamped_rows;
};

// `x` holds one embedding per row, `weights` one class weight per row; both
// are normalised internally. Throws DegenerateEmbedding on a zero row.
LossForward loss_forward(const Matrix& x, const std::vector<std::uint32_t>& y, const Matrix& weights,
                         const LossParams& p);

LossGradients loss_backward(const Matrix& x, const std::vector<std::uint32_t>& y,
                            const Matrix& weights, const LossParams& p);

}  // namespace facesearch
