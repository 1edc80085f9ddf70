#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "facesearch/traineval.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace facesearch;

namespace {

LabeledDataset toy_dataset(std::size_t classes, std::uint64_t seed) {
  auto spec = fixture::small_spec(seed);
  spec.n_classes = classes;
  spec.samples_per_class = 30;
  spec.outlier_rate = 0.0;
  spec.flip_rate = 0.0;
  spec.intra_spread = 0.1;
  return generate_dataset(spec);
}

BaseArch toy_base(const LabeledDataset& ds) { return {ds.feature_dim(), 2, 16, 8}; }

Combination softmax_only() {
  Combination c;
  c.s_p = 16;
  c.s_n = 16;
  return c;
}

Network identity_net(std::size_t d) {
  NetworkConfig cfg;
  cfg.layer_dims = {d, d};
  auto net = instantiate(cfg, 0);
  net.layers[0].weight = Matrix::Identity(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d));
  return net;
}

}  // namespace

TEST(TrainBudget, Validation) {
  TrainBudget b;
  b.epochs = 0;
  EXPECT_THROW(b.validate(), InvalidArgument);
  b = TrainBudget{};
  b.batch_size = 0;
  EXPECT_THROW(b.validate(), InvalidArgument);
  b = TrainBudget{};
  b.lr = -0.1;
  EXPECT_THROW(b.validate(), InvalidArgument);
  b = TrainBudget{};
  b.momentum = 1.0;
  EXPECT_THROW(b.validate(), InvalidArgument);
  b = TrainBudget{};
  b.lr = 0.0;
  EXPECT_NO_THROW(b.validate());
}

TEST(TrainBudget, JsonRoundTrip) {
  auto b = TrainBudget::full();
  b.seed = 77;
  b.lr = 0.03;
  nlohmann::json j = b;
  const auto back = j.get<TrainBudget>();
  EXPECT_EQ(back.mode, TrainMode::Full);
  EXPECT_EQ(back.epochs, b.epochs);
  EXPECT_EQ(back.milestones, b.milestones);
  EXPECT_EQ(back.lr, 0.03);
  EXPECT_EQ(back.seed, 77u);
  j["epochs"] = 0;
  EXPECT_THROW(j.get<TrainBudget>(), InvalidArgument);
}

TEST(Train, ZeroEpochsIsAnError) {
  const auto ds = toy_dataset(3, 1);
  TrainBudget b;
  b.epochs = 0;
  EXPECT_THROW(train_candidate(softmax_only(), ds, toy_base(ds), b), InvalidArgument);
}

TEST(Train, ZeroLearningRateLeavesParametersUnchanged) {
  const auto ds = toy_dataset(4, 2);
  const auto base = toy_base(ds);
  TrainBudget b;
  b.epochs = 3;
  b.lr = 0.0;
  b.weight_decay = 0.0;
  b.seed = 5;
  TrainedModel init;
  init.network = instantiate(base, 1.0, 1.0, 9);
  std::mt19937_64 rng(3);
  init.class_weights = fixture::gaussian(rng, 4, 8);
  const auto out = train_model(init, softmax_only().loss_params(), ds, b);
  ASSERT_EQ(out.loss_trace.size(), 3u);
  EXPECT_EQ(out.class_weights, init.class_weights);
  for (std::size_t l = 0; l < init.network.layers.size(); ++l) {
    EXPECT_EQ(out.network.layers[l].weight, init.network.layers[l].weight);
    EXPECT_EQ(out.network.layers[l].bias, init.network.layers[l].bias);
  }
}

TEST(Train, FiveClassLossDropsBelowChance) {
  const auto ds = toy_dataset(5, 3);
  TrainBudget b = TrainBudget::full();
  b.epochs = 15;
  b.batch_size = 16;
  b.seed = 4;
  const auto model = train_candidate(softmax_only(), ds, toy_base(ds), b);
  ASSERT_EQ(model.loss_trace.size(), 15u);
  EXPECT_LT(model.loss_trace.back(), std::log(5.0));
  EXPECT_LT(model.loss_trace.back(), model.loss_trace.front());
  EXPECT_TRUE(model.all_finite());
}

TEST(Train, DeterministicUnderSeed) {
  const auto ds = toy_dataset(4, 4);
  TrainBudget b;
  b.epochs = 2;
  b.seed = 11;
  const auto a = train_candidate(softmax_only(), ds, toy_base(ds), b);
  const auto c = train_candidate(softmax_only(), ds, toy_base(ds), b);
  EXPECT_EQ(a.class_weights, c.class_weights);
  EXPECT_EQ(a.loss_trace, c.loss_trace);
  for (std::size_t l = 0; l < a.network.layers.size(); ++l) {
    EXPECT_EQ(a.network.layers[l].weight, c.network.layers[l].weight);
  }
  b.seed = 12;
  const auto d = train_candidate(softmax_only(), ds, toy_base(ds), b);
  EXPECT_NE(a.class_weights, d.class_weights);
}

TEST(Train, ExplodingLearningRateRaisesDiverged) {
  const auto ds = toy_dataset(4, 5);
  TrainBudget b;
  b.epochs = 5;
  b.lr = 1e12;
  b.seed = 1;
  EXPECT_THROW(train_candidate(softmax_only(), ds, toy_base(ds), b), Diverged);
}

TEST(Train, RejectsMismatchedClassWeights) {
  const auto ds = toy_dataset(3, 6);
  TrainedModel init;
  init.network = instantiate(toy_base(ds), 1.0, 1.0, 1);
  init.class_weights = Matrix::Ones(5, 8);
  EXPECT_THROW(train_model(init, softmax_only().loss_params(), ds, TrainBudget{}), InvalidArgument);
}

TEST(EvaluatePairs, CosinesOfIdentityEmbeddings) {
  LabeledDataset ds;
  ds.features.resize(4, 2);
  ds.features << 1, 0, 3, 0, 0, 2, 1, 1;
  ds.clean_embeddings = Matrix::Zero(4, 2);
  ds.labels = {0, 0, 1, 1};
  ds.truth.resize(4);
  ds.n_classes = 2;
  PairSet ps;
  ps.pairs = {{0, 1, true}, {0, 2, false}, {0, 3, false}, {2, 3, true}};
  const auto s = evaluate_pairs(identity_net(2), ds, ps);
  ASSERT_EQ(s.genuine.size(), 2u);
  ASSERT_EQ(s.impostor.size(), 2u);
  EXPECT_NEAR(s.genuine[0], 1.0, 1e-15);
  EXPECT_NEAR(s.genuine[1], std::numbers::sqrt2 / 2, 1e-15);
  EXPECT_NEAR(s.impostor[0], 0.0, 1e-15);
  EXPECT_NEAR(s.impostor[1], std::numbers::sqrt2 / 2, 1e-15);
}

TEST(EvaluatePairs, ZeroEmbeddingInAPairThrows) {
  LabeledDataset ds;
  ds.features.resize(3, 2);
  ds.features << 1, 0, 0, 0, 0, 1;
  ds.clean_embeddings = Matrix::Zero(3, 2);
  ds.labels = {0, 0, 1};
  ds.truth.resize(3);
  ds.n_classes = 2;
  PairSet ok;
  ok.pairs = {{0, 2, false}};
  EXPECT_NO_THROW(evaluate_pairs(identity_net(2), ds, ok));
  PairSet bad;
  bad.pairs = {{0, 1, true}};
  EXPECT_THROW(evaluate_pairs(identity_net(2), ds, bad), DegenerateEmbedding);
}

TEST(TarAtFar, HandExample) {
  std::vector<double> impostor;
  for (int i = 0; i < 1000; ++i) impostor.push_back(i / 1000.0);
  const std::vector<double> genuine = {1.0, 1.0, 1.0, 1.0, 0.995, 0.995, 0.95, 0.95, 0.5, 0.5};
  EXPECT_DOUBLE_EQ(tar_at_far(genuine, impostor, 1e-1), 0.8);
  EXPECT_DOUBLE_EQ(tar_at_far(genuine, impostor, 1e-2), 0.6);
  EXPECT_DOUBLE_EQ(tar_at_far(genuine, impostor, 1e-3), 0.4);
  const EvalSpec spec{{1e-1, 1e-2, 1e-3}, {0.5, 0.25, 0.25}};
  EXPECT_NEAR(weighted_tar({genuine, impostor}, spec), 0.65, 1e-15);
  const std::vector<double> top(10, 2.0);
  EXPECT_EQ(weighted_tar({top, impostor}, EvalSpec::benchmark()), 1.0);
}

TEST(TarAtFar, IdenticalListsGiveTheTarget) {
  std::mt19937_64 rng(30);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> scores(5000);
  for (auto& v : scores) v = n(rng);
  for (double far : {0.3, 0.1, 1e-2, 1e-3}) {
    EXPECT_NEAR(tar_at_far(scores, scores, far), far, 1.0 / 5000 + 1e-12);
  }
}

TEST(TarAtFar, MatchesBruteForceSweep) {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_int_distribution<int> coarse(0, 20);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t ng = 5 + trial % 40;
    const std::size_t ni = 10 + (trial * 7) % 400;
    std::vector<double> g(ng), im(ni);
    const bool ties = trial % 3 == 0;
    for (auto& v : g) v = ties ? coarse(rng) / 10.0 : n(rng) + 1.0;
    for (auto& v : im) v = ties ? coarse(rng) / 10.0 - 0.5 : n(rng);
    for (double far : {0.5, 0.1, 1e-2, 1e-3}) {
      EXPECT_DOUBLE_EQ(tar_at_far(g, im, far), oracle::tar_at_far(g, im, far))
          << "trial " << trial << " far " << far;
    }
  }
}

TEST(TarAtFar, MonotoneInFarTarget) {
  std::mt19937_64 rng(32);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> g(200), im(2000);
    for (auto& v : g) v = n(rng) + 1.5;
    for (auto& v : im) v = n(rng);
    double previous = 0.0;
    for (double far : {1e-4, 1e-3, 1e-2, 0.05, 0.2, 0.6}) {
      const double t = tar_at_far(g, im, far);
      EXPECT_GE(t, previous);
      previous = t;
    }
  }
}

TEST(TarAtFar, PerfectSeparationAndIdenticalLists) {
  const std::vector<double> g = {0.9, 0.8, 0.95};
  const std::vector<double> im = {0.1, 0.2, 0.3, 0.0};
  for (double far : {0.5, 1e-2, 1e-5}) EXPECT_EQ(tar_at_far(g, im, far), 1.0);
  const std::vector<double> same = {0.1, 0.2, 0.3, 0.4};
  EXPECT_EQ(tar_at_far(same, same, 1e-3), 0.0);
  EXPECT_EQ(tar_at_far(same, same, 0.5), 0.5);
}

TEST(TarAtFar, RejectsBadInput) {
  EXPECT_THROW(tar_at_far({}, {0.1}, 0.1), InvalidArgument);
  EXPECT_THROW(tar_at_far({0.1}, {}, 0.1), InvalidArgument);
  EXPECT_THROW(tar_at_far({0.1}, {0.1}, 0.0), InvalidArgument);
  EXPECT_THROW(tar_at_far({0.1}, {0.1}, 1.0), InvalidArgument);
}

TEST(Acc, InUnitIntervalAndPermutationInvariant) {
  std::mt19937_64 rng(33);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 40; ++trial) {
    PairScores s;
    s.genuine.resize(100);
    s.impostor.resize(1500);
    for (auto& v : s.genuine) v = n(rng) + trial * 0.1;
    for (auto& v : s.impostor) v = n(rng);
    for (const auto& spec : {EvalSpec{}, EvalSpec::benchmark()}) {
      const double a = weighted_tar(s, spec);
      EXPECT_GE(a, 0.0);
      EXPECT_LE(a, 1.0);
      auto shuffled = s;
      std::shuffle(shuffled.genuine.begin(), shuffled.genuine.end(), rng);
      std::shuffle(shuffled.impostor.begin(), shuffled.impostor.end(), rng);
      EXPECT_EQ(weighted_tar(shuffled, spec), a);
    }
  }
}

TEST(EvalSpec, Validation) {
  EXPECT_NO_THROW(EvalSpec{}.validate());
  EXPECT_NO_THROW(EvalSpec::benchmark().validate());
  EXPECT_THROW((EvalSpec{{1e-2}, {0.5, 0.5}}.validate()), InvalidArgument);
  EXPECT_THROW((EvalSpec{{1e-2, 1e-3}, {0.6, 0.6}}.validate()), InvalidArgument);
  EXPECT_THROW((EvalSpec{{1e-3, 1e-2}, {0.5, 0.5}}.validate()), InvalidArgument);
  EXPECT_THROW((EvalSpec{{1.0}, {1.0}}.validate()), InvalidArgument);
}
