#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "facesearch/agent.hpp"
#include "facesearch/backbone.hpp"
#include "facesearch/synthdata.hpp"
#include "facesearch/traineval.hpp"

namespace facesearch {

inline constexpr int kSchemaVersion = 1;

struct PairCounts {
  std::size_t val_genuine = 600;
  std::size_t val_impostor = 3000;
  std::size_t test_genuine = 1000;
  std::size_t test_impostor = 5000;
};

struct RunConfig {
  std::filesystem::path output_dir = "out";
  std::optional<std::filesystem::path> dataset_path;  // load instead of generating
  std::optional<std::filesystem::path> space_path;
  DatasetSpec dataset;
  std::size_t heldout_classes = 10;
  double val_fraction = 0.25;
  PairCounts pairs;
  BaseArch base;  // input_dim is taken from the dataset
  TrainBudget proxy = TrainBudget::proxy();
  TrainBudget full = TrainBudget::full();
  EvalSpec eval;
  PpoConfig ppo;
  std::size_t epochs = 125;  // T
  std::size_t batch = 8;     // B
  std::size_t top_k = 20;    // K
  std::uint64_t seed = 0;

  void validate() const;
  static RunConfig desk_default();
};

void to_json(nlohmann::json& j, const RunConfig& c);
// Paths in the JSON are resolved relative to `base_dir`. Throws
// FormatError on a schema_version mismatch or unknown top-level keys.
RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

// Everything derived from the config before any training happens.
struct PreparedData {
  LabeledDataset full;
  LabeledDataset search;   // identities the search may see
  LabeledDataset train;    // search identities, training split
  LabeledDataset val;      // search identities, validation split
  LabeledDataset heldout;  // unseen identities for final testing
  PairSet val_pairs;
  PairSet test_pairs;
  BaseArch base;           // with input_dim filled in
  std::uint64_t dataset_hash = 0;
};

PreparedData prepare_data(const RunConfig& cfg);

// FNV-1a over the FSDS serialisation.
std::uint64_t dataset_hash(const LabeledDataset& ds);

// FLOPs of the D = W = 1 network.
std::uint64_t target_cost(const BaseArch& base);

// Proxy-train-and-validate evaluator used during search.
CandidateEvaluator make_proxy_evaluator(const PreparedData& data, const RunConfig& cfg);

struct CandidateOutcome {
  TrainedModel model;
  double test_acc = 0.0;
  std::uint64_t flops = 0;
};

// Clean the search identities with the combination's thresholds, train
// with the full budget, evaluate on the held-out identity pairs.
CandidateOutcome train_and_test(const Combination& c, const PreparedData& data, const RunConfig& cfg,
                                std::uint64_t seed);

// No cleaning, ArcFace-style margin 0.5 at scale 64, unexpanded network.
Combination baseline_combination();

struct RetrainRow {
  std::size_t reward_rank = 0;  // 1-based position in the search ranking
  Tokens tokens{};
  Combination combination;
  double search_reward = 0.0;
  double search_acc = 0.0;
  double test_acc = 0.0;
  std::uint64_t flops = 0;
  bool failed = false;
  std::string failure;
  std::vector<double> loss_trace;
};

struct RetrainReport {
  std::vector<RetrainRow> rows;            // in reward order
  std::vector<std::size_t> by_test_acc;    // indices into rows, best first, failures excluded
  std::optional<double> rank_correlation;  // Spearman, reward order vs test ACC
  std::vector<TrainedModel> models;        // parallel to rows; empty model for failures

  const RetrainRow* best() const;
};

RetrainReport retrain_topk(const SearchLog& log, std::size_t k, const PreparedData& data, const RunConfig& cfg,
                           std::size_t threads = 1);

void to_json(nlohmann::json& j, const RetrainReport& r);
void write_retrain_csv(std::ostream& out, const RetrainReport& r);

// Spearman rank correlation with average ranks for ties. nullopt for
// fewer than two points or a constant input.
std::optional<double> spearman(const std::vector<double>& a, const std::vector<double>& b);

struct Difficulty {
  double data = 0.0;  // 1 - tau_intra + tau_inter
  double loss = 0.0;  // s_n (m1 - 1 + m2 + m3) / s_p
};

Difficulty difficulty(const Combination& c);

struct DifficultyRow {
  std::string source;
  std::size_t epoch = 0;
  std::size_t candidate = 0;
  Combination combination;
  Difficulty difficulty;
  std::uint64_t flops = 0;
  double reward = 0.0;
};

std::vector<DifficultyRow> difficulty_rows(const SearchLog& log, const BaseArch& base, const std::string& source);
void write_difficulty_csv(std::ostream& out, const std::vector<DifficultyRow>& rows);

// Evaluation parallelism: FACESEARCH_THREADS if set (>= 1), else the
// hardware concurrency.
std::size_t default_threads();

// Runs fn(0..n-1) on up to `threads` workers. Results must be written by index.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace facesearch
