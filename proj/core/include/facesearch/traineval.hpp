#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json.hpp>

#include "facesearch/backbone.hpp"
#include "facesearch/marginloss.hpp"
#include "facesearch/searchspace.hpp"
#include "facesearch/synthdata.hpp"

namespace facesearch {

enum class TrainMode { Proxy, Full };

struct TrainBudget {
  TrainMode mode = TrainMode::Proxy;
  std::size_t epochs = 1;
  std::size_t batch_size = 32;
  double lr = 0.1;
  // Epoch fractions at which the learning rate is multiplied by lr_decay.
  std::vector<double> milestones;
  double lr_decay = 0.1;
  double weight_decay = 5e-4;
  double momentum = 0.9;
  std::uint64_t seed = 0;

  void validate() const;
  static TrainBudget proxy();
  static TrainBudget full();
};

void to_json(nlohmann::json& j, const TrainBudget& b);
void from_json(const nlohmann::json& j, TrainBudget& b);

struct EvalSpec {
  std::vector<double> far_targets{1e-2, 1e-3};
  std::vector<double> weights{0.5, 0.5};

  void validate() const;
  // The 1e-3/1e-4/1e-5 weighting with 0.5/0.25/0.25.
  static EvalSpec benchmark();
};

void to_json(nlohmann::json& j, const EvalSpec& e);
void from_json(const nlohmann::json& j, EvalSpec& e);

struct TrainedModel {
  Network network;
  Matrix class_weights;  // K x embed_dim
  std::vector<double> loss_trace;  // mean training loss per epoch

  bool all_finite() const;
};

// Shuffled mini-batch SGD with momentum and weight decay on the network
// and the class weights jointly. `train` must already be cleaned.
// Throws Diverged on a non-finite loss.
TrainedModel train_candidate(const Combination& c, const LabeledDataset& train, const BaseArch& base,
                             const TrainBudget& budget);

// Same, starting from the given initial parameters.
TrainedModel train_model(TrainedModel init, const LossParams& loss, const LabeledDataset& train,
                         const TrainBudget& budget);

struct PairScores {
  std::vector<double> genuine;
  std::vector<double> impostor;
};

Matrix embed(const Network& net, const Matrix& features);

// Cosine similarity of the two embeddings of every pair.
PairScores evaluate_pairs(const Network& net, const LabeledDataset& ds, const PairSet& pairs);

// Step-function ROC: the threshold is the smallest impostor score t with
// #{impostor >= t} <= far * |impostor| (or just above the largest impostor
// score when none qualifies), and TAR = #{genuine >= t} / |genuine|.
double tar_at_far(const std::vector<double>& genuine, const std::vector<double>& impostor,
                  double far_target);

double weighted_tar(const PairScores& scores, const EvalSpec& spec);

double acc_metric(const Network& net, const LabeledDataset& ds, const PairSet& pairs,
                  const EvalSpec& spec);

}  // namespace facesearch
