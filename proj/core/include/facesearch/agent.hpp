#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "facesearch/controller.hpp"
#include "facesearch/searchspace.hpp"

namespace facesearch {

struct PpoConfig {
  double clip_epsilon = 0.2;
  std::size_t update_epochs = 4;
  double lr = 5e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double baseline_decay = 0.95;
  double entropy_coef = 0.01;
  double alpha = -0.07;        // reward cost exponent
  double target_cost = 1.0;    // FLOPs of the unexpanded network
  std::size_t hidden = 64;

  void validate() const;
};

void to_json(nlohmann::json& j, const PpoConfig& c);
void from_json(const nlohmann::json& j, PpoConfig& c);

// Weighted-product scalarisation: acc * (cost / target_cost)^alpha.
double reward(double acc, double cost, const PpoConfig& cfg);

struct Trajectory {
  std::vector<std::size_t> tokens;
  std::vector<double> log_probs;  // per step, under the sampling policy
  double reward = 0.0;
  double acc = 0.0;
  double cost = 0.0;
};

// Policy, optimiser state and reward baseline: everything the update needs
// to carry across batches.
struct AgentState {
  ControllerPolicy policy;
  AdamState adam;
  double baseline = 0.0;
  bool baseline_ready = false;
};

AgentState make_agent(const std::vector<std::size_t>& head_sizes, const PpoConfig& cfg, std::uint64_t seed);

std::vector<Trajectory> sample_batch(const ControllerPolicy& policy, std::size_t batch, std::uint64_t seed);

struct PpoDiagnostics {
  double baseline_before = 0.0;
  double baseline_after = 0.0;
  std::vector<double> objective;  // surrogate + entropy, per inner epoch (before its step)
  double clip_fraction = 0.0;     // at the last inner epoch
  double mean_entropy = 0.0;
  bool aborted = false;           // non-finite objective; policy left untouched
};

// The clipped surrogate averaged over the batch:
//   (1/B) Σ_j Σ_t min(ρ_jt A_j, clip(ρ_jt, 1-ε, 1+ε) A_j) + c_H (1/B) Σ_j Σ_t H_jt
// with ρ_jt = exp(log π(a_jt) - old_log_prob_jt).
double ppo_objective(const ControllerPolicy& policy, const std::vector<Trajectory>& batch,
                     const std::vector<double>& advantages, const PpoConfig& cfg);

// Its gradient with respect to the policy parameters.
ControllerPolicy ppo_objective_gradient(const ControllerPolicy& policy, const std::vector<Trajectory>& batch,
                                        const std::vector<double>& advantages, const PpoConfig& cfg,
                                        double* objective = nullptr, double* clip_fraction = nullptr);

PpoDiagnostics ppo_update(AgentState& agent, const std::vector<Trajectory>& batch, const PpoConfig& cfg);

struct CandidateResult {
  double acc = 0.0;
  double cost = 0.0;
  bool failed = false;
  std::string failure;
};

// Scores one decoded candidate. Must be safe to call concurrently.
using CandidateEvaluator =
    std::function<CandidateResult(const Combination& c, const Tokens& tokens, std::uint64_t seed)>;

struct SearchRecord {
  std::size_t epoch = 0;
  std::size_t candidate = 0;
  Tokens tokens{};
  Combination combination;
  double acc = 0.0;
  double cost = 0.0;
  double reward = 0.0;
  double wall_ms = 0.0;
  bool failed = false;
  std::string failure;
};

struct SearchLog {
  std::vector<SearchRecord> records;

  // Mean reward of each search epoch, in order.
  std::vector<double> batch_mean_rewards() const;
  // Mean of the first / last `window` batch means.
  double initial_window_mean(std::size_t window) const;
  double final_window_mean(std::size_t window) const;
  // Highest-reward distinct combinations (by tokens), best first; ties go
  // to the earlier record.
  std::vector<SearchRecord> top_k(std::size_t k) const;
};

// Columns: epoch,candidate,tokens,<nine parameters>,acc,cost,reward,failed,wall_ms.
// `with_timing` = false omits wall_ms so that reruns compare byte-for-byte.
void write_search_log_csv(std::ostream& out, const SearchLog& log, bool with_timing = true);
SearchLog read_search_log_csv(std::istream& in, const SearchSpace& space);

struct SearchOptions {
  std::size_t epochs = 125;  // T
  std::size_t batch = 8;     // B
  std::uint64_t seed = 0;
  std::size_t threads = 1;   // candidate evaluation parallelism
  // Called after every completed epoch (e.g. to checkpoint).
  std::function<void(std::size_t epoch, const AgentState&, const SearchLog&)> on_epoch;
};

// Sample -> evaluate -> reward -> PPO update, for epochs [start_epoch, T).
// Failed candidates get reward exactly 0 and the loop continues.
SearchLog run_search(AgentState& agent, const SearchSpace& space, const PpoConfig& cfg,
                     const SearchOptions& opts, const CandidateEvaluator& evaluate,
                     SearchLog log = {}, std::size_t start_epoch = 0);

// Resumable controller checkpoint (policy, Adam moments, baseline, next epoch).
void write_agent_checkpoint(std::ostream& out, const AgentState& agent, std::size_t next_epoch);
AgentState read_agent_checkpoint(std::istream& in, std::size_t* next_epoch);

}  // namespace facesearch
