#pragma once

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "facesearch/common.hpp"
#include "facesearch/searchspace.hpp"

namespace facesearch {

// Recurrent policy that emits one token per searched parameter.
//
// A single gated recurrent cell (reset gate r, update gate z) is unrolled
// over the nine steps. Step 0 consumes a learned start vector; step i > 0
// consumes the embedding of the token chosen at step i-1 (one table per
// step, rows indexed by that step's grid). Each step has its own linear
// head from the hidden state to logits over its grid:
//
//   r  = σ(x W_ir + b_ir + h W_hr + b_hr)
//   z  = σ(x W_iz + b_iz + h W_hz + b_hz)
//   n  = tanh(x W_in + b_in + r ⊙ (h W_hn + b_hn))
//   h' = (1 - z) ⊙ n + z ⊙ h
//
// Gate blocks are stored side by side as [r | z | n] in the 3h-wide
// matrices. Row-vector convention throughout.
struct ControllerPolicy {
  std::size_t hidden = 64;
  std::size_t embed = 64;
  std::vector<std::size_t> head_sizes;

  Matrix w_ih;  // embed x 3h
  Matrix w_hh;  // hidden x 3h
  RowVector b_ih;
  RowVector b_hh;
  RowVector start;                       // embed
  std::vector<Matrix> token_embeddings;  // [i] : head_sizes[i] x embed, feeds step i+1
  std::vector<Matrix> head_w;            // [i] : hidden x head_sizes[i]
  std::vector<RowVector> head_b;

  std::size_t steps() const noexcept { return head_sizes.size(); }
  std::size_t parameter_count() const;

  // Flat view in a fixed order, used by the optimiser and by checkpoints.
  Vector flatten() const;
  void assign(const Vector& flat);
  // Same shapes, all zeros.
  ControllerPolicy zeros_like() const;
};

ControllerPolicy make_controller(const std::vector<std::size_t>& head_sizes, std::size_t hidden,
                                 std::size_t embed, std::uint64_t seed);
ControllerPolicy make_controller(const SearchSpace& space, std::size_t hidden, std::uint64_t seed);

// A batch of token sequences, one row per trajectory, one column per step.
using TokenBatch = std::vector<std::vector<std::size_t>>;

struct StepDistributions {
  // probs[t] is B x head_sizes[t]; log_probs likewise.
  std::vector<Matrix> probs;
  std::vector<Matrix> log_probs;
};

struct SampledBatch {
  TokenBatch tokens;
  Matrix log_probs;  // B x steps, log-prob of the sampled token at each step
  StepDistributions dists;
};

// Ancestral sampling; deterministic under `seed`.
SampledBatch sample_tokens(const ControllerPolicy& policy, std::size_t batch, std::uint64_t seed);

// Teacher-forced per-step distributions for given sequences.
StepDistributions step_distributions(const ControllerPolicy& policy, const TokenBatch& tokens);

// log π(token) per step, B x steps.
Matrix token_log_probs(const ControllerPolicy& policy, const TokenBatch& tokens);

// Probability of the single sequence `tokens`.
double sequence_probability(const ControllerPolicy& policy, const std::vector<std::size_t>& tokens);

// Highest-probability token at every step, feeding back the argmax.
std::vector<std::size_t> greedy_tokens(const ControllerPolicy& policy);

// Gradient of  Σ_j Σ_t coef(j,t) · log π(a_jt)  +  entropy_coef · Σ_j Σ_t H_jt
// with respect to every policy parameter, by backpropagation through time.
struct PolicyGradient {
  ControllerPolicy grad;
  Matrix log_probs;  // B x steps
  Matrix entropies;  // B x steps
};

PolicyGradient policy_gradient(const ControllerPolicy& policy, const TokenBatch& tokens,
                               const Matrix& coef, double entropy_coef);

// Adam on the flattened parameter vector, ascending the objective.
struct AdamState {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t t = 0;
  Vector m;
  Vector v;

  void ascend(ControllerPolicy& policy, const ControllerPolicy& grad);
};

void write_controller(std::ostream& out, const ControllerPolicy& policy);
ControllerPolicy read_controller(std::istream& in);

}  // namespace facesearch
