#include "facesearch/traineval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace facesearch {
namespace {

std::vector<std::uint32_t> gather_labels(const std::vector<std::uint32_t>& labels,
                                         const std::vector<std::size_t>& rows) {
  std::vector<std::uint32_t> out(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) out[r] = labels[rows[r]];
  return out;
}

Matrix gather_rows(const Matrix& m, const std::vector<std::size_t>& rows) {
  Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    out.row(static_cast<Eigen::Index>(r)) = m.row(static_cast<Eigen::Index>(rows[r]));
  }
  return out;
}

double scheduled_lr(const TrainBudget& b, double progress) {
  double lr = b.lr;
  for (double m : b.milestones) {
    if (progress >= m) lr *= b.lr_decay;
  }
  return lr;
}

void sgd_step(Matrix& param, Matrix& velocity, const Matrix& grad, double lr, double momentum,
              double weight_decay) {
  velocity = momentum * velocity + grad + weight_decay * param;
  param -= lr * velocity;
}

void sgd_step(RowVector& param, RowVector& velocity, const RowVector& grad, double lr, double momentum) {
  velocity = momentum * velocity + grad;
  param -= lr * velocity;
}

}  // namespace

void TrainBudget::validate() const {
  if (epochs < 1) throw InvalidArgument("TrainBudget: epochs must be >= 1");
  if (batch_size < 1) throw InvalidArgument("TrainBudget: batch_size must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw InvalidArgument("TrainBudget: lr must be finite and >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidArgument("TrainBudget: momentum must lie in [0,1)");
  if (!(weight_decay >= 0.0)) throw InvalidArgument("TrainBudget: weight_decay must be >= 0");
  if (!(lr_decay > 0.0)) throw InvalidArgument("TrainBudget: lr_decay must be > 0");
}

TrainBudget TrainBudget::proxy() {
  TrainBudget b;
  b.mode = TrainMode::Proxy;
  b.epochs = 1;
  return b;
}

TrainBudget TrainBudget::full() {
  TrainBudget b;
  b.mode = TrainMode::Full;
  b.epochs = 30;
  b.milestones = {0.4, 0.6, 0.8};
  return b;
}

void to_json(nlohmann::json& j, const TrainBudget& b) {
  j = nlohmann::json{{"mode", b.mode == TrainMode::Proxy ? "proxy" : "full"},
                     {"epochs", b.epochs},
                     {"batch_size", b.batch_size},
                     {"lr", b.lr},
                     {"milestones", b.milestones},
                     {"lr_decay", b.lr_decay},
                     {"weight_decay", b.weight_decay},
                     {"momentum", b.momentum},
                     {"seed", b.seed}};
}

void from_json(const nlohmann::json& j, TrainBudget& b) {
  const auto mode = j.value("mode", std::string("proxy"));
  if (mode != "proxy" && mode != "full") throw InvalidArgument("TrainBudget: mode must be proxy or full");
  b = mode == "proxy" ? TrainBudget::proxy() : TrainBudget::full();
  b.epochs = j.value("epochs", b.epochs);
  b.batch_size = j.value("batch_size", b.batch_size);
  b.lr = j.value("lr", b.lr);
  b.milestones = j.value("milestones", b.milestones);
  b.lr_decay = j.value("lr_decay", b.lr_decay);
  b.weight_decay = j.value("weight_decay", b.weight_decay);
  b.momentum = j.value("momentum", b.momentum);
  b.seed = j.value("seed", b.seed);
  b.validate();
}

void EvalSpec::validate() const {
  if (far_targets.empty() || far_targets.size() != weights.size()) {
    throw InvalidArgument("EvalSpec: far_targets and weights must be non-empty and equally long");
  }
  for (std::size_t i = 0; i < far_targets.size(); ++i) {
    if (!(far_targets[i] > 0.0 && far_targets[i] < 1.0)) {
      throw InvalidArgument("EvalSpec: FAR targets must lie in (0,1)");
    }
    if (i > 0 && !(far_targets[i] < far_targets[i - 1])) {
      throw InvalidArgument("EvalSpec: FAR targets must be strictly decreasing");
    }
    if (!(weights[i] > 0.0)) throw InvalidArgument("EvalSpec: weights must be positive");
  }
  const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (std::abs(sum - 1.0) > 1e-12) throw InvalidArgument("EvalSpec: weights must sum to 1");
}

EvalSpec EvalSpec::benchmark() { return {{1e-3, 1e-4, 1e-5}, {0.5, 0.25, 0.25}}; }

void to_json(nlohmann::json& j, const EvalSpec& e) {
  j = nlohmann::json{{"far_targets", e.far_targets}, {"weights", e.weights}};
}

void from_json(const nlohmann::json& j, EvalSpec& e) {
  e.far_targets = j.at("far_targets").get<std::vector<double>>();
  e.weights = j.at("weights").get<std::vector<double>>();
  e.validate();
}

bool TrainedModel::all_finite() const { return network.all_finite() && class_weights.allFinite(); }

TrainedModel train_candidate(const Combination& c, const LabeledDataset& train, const BaseArch& base,
                             const TrainBudget& budget) {
  budget.validate();
  TrainedModel init;
  init.network = instantiate(base, c.depth_ratio, c.width_ratio, derive_seed(budget.seed, 1));
  const auto k = static_cast<Eigen::Index>(train.n_classes);
  const auto d = static_cast<Eigen::Index>(base.embed_dim);
  std::mt19937_64 rng(derive_seed(budget.seed, 2));
  const double limit = std::sqrt(6.0 / static_cast<double>(d));
  std::uniform_real_distribution<double> uniform(-limit, limit);
  init.class_weights.resize(k, d);
  for (Eigen::Index r = 0; r < k; ++r) {
    for (Eigen::Index col = 0; col < d; ++col) init.class_weights(r, col) = uniform(rng);
  }
  return train_model(std::move(init), c.loss_params(), train, budget);
}

TrainedModel train_model(TrainedModel model, const LossParams& loss, const LabeledDataset& train,
                         const TrainBudget& budget) {
  budget.validate();
  loss.validate();
  train.validate();
  if (train.n_classes < 2) throw InvalidArgument("train: need K >= 2 classes");
  if (train.size() == 0) throw InvalidArgument("train: empty training set");
  if (static_cast<std::size_t>(model.class_weights.rows()) != train.n_classes) {
    throw InvalidArgument("train: class weight rows do not match the dataset's class count");
  }

  std::vector<Layer> velocity;
  for (const auto& layer : model.network.layers) {
    velocity.push_back({Matrix::Zero(layer.weight.rows(), layer.weight.cols()),
                        RowVector::Zero(layer.bias.size())});
  }
  Matrix class_velocity = Matrix::Zero(model.class_weights.rows(), model.class_weights.cols());

  const std::size_t n = train.size();
  const std::size_t batches = (n + budget.batch_size - 1) / budget.batch_size;
  std::vector<std::size_t> order(n);
  std::int64_t step = 0;
  ActivationCache cache;
  for (std::size_t epoch = 0; epoch < budget.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffle_rng(derive_seed(budget.seed, 3, epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    for (std::size_t bi = 0; bi < batches; ++bi, ++step) {
      const auto first = order.begin() + static_cast<std::ptrdiff_t>(bi * budget.batch_size);
      const auto last = order.begin() + static_cast<std::ptrdiff_t>(std::min(n, (bi + 1) * budget.batch_size));
      const std::vector<std::size_t> rows(first, last);
      const Matrix x = gather_rows(train.features, rows);
      const auto y = gather_labels(train.labels, rows);

      const Matrix emb = forward(model.network, x, &cache);
      LossGradients lg;
      try {
        lg = loss_backward(emb, y, model.class_weights, loss);
      } catch (const DegenerateEmbedding& e) {
        throw Diverged(std::string("degenerate embedding during training: ") + e.what(), step);
      }
      if (!std::isfinite(lg.loss)) throw Diverged("non-finite training loss", step);
      epoch_loss += lg.loss * static_cast<double>(rows.size());

      const auto grads = backward(model.network, cache, lg.grad_x);
      const double progress =
          (static_cast<double>(epoch) + static_cast<double>(bi) / static_cast<double>(batches)) /
          static_cast<double>(budget.epochs);
      const double lr = scheduled_lr(budget, progress);
      for (std::size_t l = 0; l < model.network.layers.size(); ++l) {
        auto& layer = model.network.layers[l];
        sgd_step(layer.weight, velocity[l].weight, grads.layers[l].weight, lr, budget.momentum,
                 budget.weight_decay);
        sgd_step(layer.bias, velocity[l].bias, grads.layers[l].bias, lr, budget.momentum);
      }
      sgd_step(model.class_weights, class_velocity, lg.grad_w, lr, budget.momentum, budget.weight_decay);
    }
    model.loss_trace.push_back(epoch_loss / static_cast<double>(n));
  }
  if (!model.all_finite()) throw Diverged("non-finite parameters after training", step);
  return model;
}

Matrix embed(const Network& net, const Matrix& features) { return forward(net, features); }

PairScores evaluate_pairs(const Network& net, const LabeledDataset& ds, const PairSet& pairs) {
  Matrix emb = embed(net, ds.features);
  for (Eigen::Index i = 0; i < emb.rows(); ++i) {
    const double norm = emb.row(i).norm();
    if (!(norm > 0.0) || !std::isfinite(norm)) continue;  // only an error if a pair uses it
    emb.row(i) /= norm;
  }
  auto unit_row = [&](std::size_t i) {
    if (i >= ds.size()) throw InvalidArgument("evaluate_pairs: pair index out of range");
    const auto row = emb.row(static_cast<Eigen::Index>(i));
    const double norm = row.norm();
    if (!(std::abs(norm - 1.0) < 1e-6)) {
      throw DegenerateEmbedding("evaluate_pairs: sample " + std::to_string(i) + " has a zero embedding");
    }
    return row;
  };
  PairScores out;
  for (const auto& p : pairs.pairs) {
    const double s = unit_row(p.a).dot(unit_row(p.b));
    (p.genuine ? out.genuine : out.impostor).push_back(s);
  }
  return out;
}

double tar_at_far(const std::vector<double>& genuine, const std::vector<double>& impostor,
                  double far_target) {
  if (genuine.empty() || impostor.empty()) throw InvalidArgument("tar_at_far: empty score list");
  if (!(far_target > 0.0 && far_target < 1.0)) throw InvalidArgument("tar_at_far: far_target must lie in (0,1)");
  std::vector<double> imp = impostor;
  std::sort(imp.begin(), imp.end(), std::greater<>());
  const double budget = far_target * static_cast<double>(imp.size());

  // Walk distinct impostor scores from the top; every score qualifies until
  // the count at-or-above it exceeds the budget.
  bool found = false;
  double threshold = 0.0;
  std::size_t j = 0;
  while (j < imp.size()) {
    std::size_t end = j;
    while (end < imp.size() && imp[end] == imp[j]) ++end;
    if (static_cast<double>(end) > budget) break;
    threshold = imp[j];
    found = true;
    j = end;
  }
  std::size_t accepted = 0;
  for (double g : genuine) {
    accepted += found ? (g >= threshold) : (g > imp.front());
  }
  return static_cast<double>(accepted) / static_cast<double>(genuine.size());
}

double weighted_tar(const PairScores& scores, const EvalSpec& spec) {
  spec.validate();
  double acc = 0.0;
  for (std::size_t i = 0; i < spec.far_targets.size(); ++i) {
    acc += spec.weights[i] * tar_at_far(scores.genuine, scores.impostor, spec.far_targets[i]);
  }
  return std::clamp(acc, 0.0, 1.0);
}

double acc_metric(const Network& net, const LabeledDataset& ds, const PairSet& pairs,
                  const EvalSpec& spec) {
  return weighted_tar(evaluate_pairs(net, ds, pairs), spec);
}

}  // namespace facesearch
