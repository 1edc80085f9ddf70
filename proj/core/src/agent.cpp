#include "facesearch/agent.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include "binary_io.hpp"

namespace facesearch {
namespace {

constexpr std::uint32_t kAgentCheckpointVersion = 1;

TokenBatch tokens_of(const std::vector<Trajectory>& batch) {
  TokenBatch t;
  t.reserve(batch.size());
  for (const auto& traj : batch) t.push_back(traj.tokens);
  return t;
}

Matrix old_log_probs_of(const std::vector<Trajectory>& batch, std::size_t steps) {
  Matrix m(static_cast<Eigen::Index>(batch.size()), static_cast<Eigen::Index>(steps));
  for (std::size_t j = 0; j < batch.size(); ++j) {
    if (batch[j].log_probs.size() != steps) throw InvalidArgument("ppo: trajectory log-prob length mismatch");
    for (std::size_t t = 0; t < steps; ++t) {
      m(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(t)) = batch[j].log_probs[t];
    }
  }
  return m;
}

struct Surrogate {
  double value = 0.0;
  Matrix coef;  // dJ/dlog π(a_jt), already divided by B
  double clip_fraction = 0.0;
};

Surrogate clipped_surrogate(const Matrix& new_lp, const Matrix& old_lp, const std::vector<double>& adv,
                            double eps) {
  const auto b = new_lp.rows();
  const double inv_b = 1.0 / static_cast<double>(b);
  Surrogate s;
  s.coef = Matrix::Zero(b, new_lp.cols());
  std::size_t clipped = 0;
  for (Eigen::Index j = 0; j < b; ++j) {
    const double a = adv[static_cast<std::size_t>(j)];
    for (Eigen::Index t = 0; t < new_lp.cols(); ++t) {
      const double ratio = std::exp(new_lp(j, t) - old_lp(j, t));
      const double unclipped = ratio * a;
      const double bounded = std::clamp(ratio, 1.0 - eps, 1.0 + eps) * a;
      if (unclipped <= bounded) {
        s.value += inv_b * unclipped;
        s.coef(j, t) = inv_b * unclipped;
      } else {
        s.value += inv_b * bounded;
        ++clipped;
      }
    }
  }
  s.clip_fraction = static_cast<double>(clipped) / static_cast<double>(new_lp.size());
  return s;
}

std::string csv_number(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

void PpoConfig::validate() const {
  if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0)) throw InvalidArgument("PpoConfig: clip_epsilon must lie in (0,1)");
  if (!(lr > 0.0)) throw InvalidArgument("PpoConfig: lr must be > 0");
  if (update_epochs < 1) throw InvalidArgument("PpoConfig: update_epochs must be >= 1");
  if (!(baseline_decay >= 0.0 && baseline_decay < 1.0)) throw InvalidArgument("PpoConfig: baseline_decay must lie in [0,1)");
  if (!(entropy_coef >= 0.0)) throw InvalidArgument("PpoConfig: entropy_coef must be >= 0");
  if (!std::isfinite(alpha)) throw InvalidArgument("PpoConfig: alpha must be finite");
  if (!(target_cost > 0.0)) throw InvalidArgument("PpoConfig: target_cost must be > 0");
  if (hidden < 1) throw InvalidArgument("PpoConfig: hidden must be >= 1");
}

void to_json(nlohmann::json& j, const PpoConfig& c) {
  j = nlohmann::json{{"clip_epsilon", c.clip_epsilon},     {"update_epochs", c.update_epochs},
                     {"lr", c.lr},                         {"adam_beta1", c.adam_beta1},
                     {"adam_beta2", c.adam_beta2},         {"baseline_decay", c.baseline_decay},
                     {"entropy_coef", c.entropy_coef},     {"alpha", c.alpha},
                     {"target_cost", c.target_cost},       {"hidden", c.hidden}};
}

void from_json(const nlohmann::json& j, PpoConfig& c) {
  c = PpoConfig{};
  c.clip_epsilon = j.value("clip_epsilon", c.clip_epsilon);
  c.update_epochs = j.value("update_epochs", c.update_epochs);
  c.lr = j.value("lr", c.lr);
  c.adam_beta1 = j.value("adam_beta1", c.adam_beta1);
  c.adam_beta2 = j.value("adam_beta2", c.adam_beta2);
  c.baseline_decay = j.value("baseline_decay", c.baseline_decay);
  c.entropy_coef = j.value("entropy_coef", c.entropy_coef);
  c.alpha = j.value("alpha", c.alpha);
  c.target_cost = j.value("target_cost", c.target_cost);
  c.hidden = j.value("hidden", c.hidden);
  c.validate();
}

double reward(double acc, double cost, const PpoConfig& cfg) {
  if (!(cost > 0.0)) throw InvalidArgument("reward: cost must be > 0");
  if (!(cfg.target_cost > 0.0)) throw InvalidArgument("reward: target cost must be > 0");
  if (!(acc >= 0.0 && acc <= 1.0)) throw InvalidArgument("reward: acc must lie in [0,1]");
  if (cost == cfg.target_cost) return acc;
  return acc * std::pow(cost / cfg.target_cost, cfg.alpha);
}

AgentState make_agent(const std::vector<std::size_t>& head_sizes, const PpoConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  AgentState a;
  a.policy = make_controller(head_sizes, cfg.hidden, cfg.hidden, seed);
  a.adam.lr = cfg.lr;
  a.adam.beta1 = cfg.adam_beta1;
  a.adam.beta2 = cfg.adam_beta2;
  return a;
}

std::vector<Trajectory> sample_batch(const ControllerPolicy& policy, std::size_t batch, std::uint64_t seed) {
  if (batch < 1) throw InvalidArgument("sample_batch: B must be >= 1");
  const auto sampled = sample_tokens(policy, batch, seed);
  std::vector<Trajectory> out(batch);
  for (std::size_t j = 0; j < batch; ++j) {
    out[j].tokens = sampled.tokens[j];
    for (std::size_t t = 0; t < policy.steps(); ++t) {
      out[j].log_probs.push_back(sampled.log_probs(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(t)));
    }
  }
  return out;
}

double ppo_objective(const ControllerPolicy& policy, const std::vector<Trajectory>& batch,
                     const std::vector<double>& advantages, const PpoConfig& cfg) {
  const auto tokens = tokens_of(batch);
  const auto dists = step_distributions(policy, tokens);
  Matrix new_lp(static_cast<Eigen::Index>(batch.size()), static_cast<Eigen::Index>(policy.steps()));
  double entropy = 0.0;
  for (std::size_t j = 0; j < batch.size(); ++j) {
    for (std::size_t t = 0; t < policy.steps(); ++t) {
      const auto row = static_cast<Eigen::Index>(j);
      new_lp(row, static_cast<Eigen::Index>(t)) = dists.log_probs[t](row, static_cast<Eigen::Index>(tokens[j][t]));
      entropy -= (dists.probs[t].row(row).array() * dists.log_probs[t].row(row).array()).sum();
    }
  }
  const auto s = clipped_surrogate(new_lp, old_log_probs_of(batch, policy.steps()), advantages, cfg.clip_epsilon);
  return s.value + cfg.entropy_coef * entropy / static_cast<double>(batch.size());
}

ControllerPolicy ppo_objective_gradient(const ControllerPolicy& policy, const std::vector<Trajectory>& batch,
                                        const std::vector<double>& advantages, const PpoConfig& cfg,
                                        double* objective, double* clip_fraction) {
  if (batch.empty() || advantages.size() != batch.size()) {
    throw InvalidArgument("ppo: advantages must match a non-empty batch");
  }
  const auto tokens = tokens_of(batch);
  const Matrix new_lp = token_log_probs(policy, tokens);
  const auto s = clipped_surrogate(new_lp, old_log_probs_of(batch, policy.steps()), advantages, cfg.clip_epsilon);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  auto pg = policy_gradient(policy, tokens, s.coef, cfg.entropy_coef * inv_b);
  if (objective) *objective = s.value + cfg.entropy_coef * inv_b * pg.entropies.sum();
  if (clip_fraction) *clip_fraction = s.clip_fraction;
  return std::move(pg.grad);
}

PpoDiagnostics ppo_update(AgentState& agent, const std::vector<Trajectory>& batch, const PpoConfig& cfg) {
  cfg.validate();
  if (batch.empty()) throw InvalidArgument("ppo_update: empty batch");
  PpoDiagnostics diag;
  double mean_reward = 0.0;
  for (const auto& t : batch) mean_reward += t.reward;
  mean_reward /= static_cast<double>(batch.size());
  if (!std::isfinite(mean_reward)) {
    diag.aborted = true;
    return diag;
  }
  if (!agent.baseline_ready) {
    agent.baseline = mean_reward;
    agent.baseline_ready = true;
  }
  diag.baseline_before = agent.baseline;
  std::vector<double> advantages;
  for (const auto& t : batch) advantages.push_back(t.reward - agent.baseline);

  const ControllerPolicy saved_policy = agent.policy;
  const AdamState saved_adam = agent.adam;
  agent.adam.lr = cfg.lr;
  for (std::size_t e = 0; e < cfg.update_epochs; ++e) {
    double objective = 0.0;
    const auto grad = ppo_objective_gradient(agent.policy, batch, advantages, cfg, &objective, &diag.clip_fraction);
    if (!std::isfinite(objective) || !grad.flatten().allFinite()) {
      agent.policy = saved_policy;
      agent.adam = saved_adam;
      diag.aborted = true;
      diag.baseline_after = agent.baseline;
      return diag;
    }
    diag.objective.push_back(objective);
    agent.adam.ascend(agent.policy, grad);
  }
  const auto entropies = policy_gradient(agent.policy, tokens_of(batch),
                                         Matrix::Zero(static_cast<Eigen::Index>(batch.size()),
                                                      static_cast<Eigen::Index>(agent.policy.steps())),
                                         0.0)
                             .entropies;
  diag.mean_entropy = entropies.rowwise().sum().mean();
  agent.baseline = cfg.baseline_decay * agent.baseline + (1.0 - cfg.baseline_decay) * mean_reward;
  diag.baseline_after = agent.baseline;
  return diag;
}

std::vector<double> SearchLog::batch_mean_rewards() const {
  std::map<std::size_t, std::pair<double, std::size_t>> acc;
  for (const auto& r : records) {
    auto& [sum, n] = acc[r.epoch];
    sum += r.reward;
    ++n;
  }
  std::vector<double> out;
  for (const auto& [epoch, v] : acc) out.push_back(v.first / static_cast<double>(v.second));
  return out;
}

double SearchLog::initial_window_mean(std::size_t window) const {
  const auto means = batch_mean_rewards();
  if (means.empty() || window == 0) return 0.0;
  const auto n = std::min(window, means.size());
  return std::accumulate(means.begin(), means.begin() + static_cast<std::ptrdiff_t>(n), 0.0) / static_cast<double>(n);
}

double SearchLog::final_window_mean(std::size_t window) const {
  const auto means = batch_mean_rewards();
  if (means.empty() || window == 0) return 0.0;
  const auto n = std::min(window, means.size());
  return std::accumulate(means.end() - static_cast<std::ptrdiff_t>(n), means.end(), 0.0) / static_cast<double>(n);
}

std::vector<SearchRecord> SearchLog::top_k(std::size_t k) const {
  std::vector<const SearchRecord*> ranked;
  for (const auto& r : records) {
    if (!r.failed) ranked.push_back(&r);
  }
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const SearchRecord* a, const SearchRecord* b) { return a->reward > b->reward; });
  std::vector<SearchRecord> out;
  std::set<Tokens> seen;
  for (const auto* r : ranked) {
    if (out.size() >= k) break;
    if (seen.insert(r->tokens).second) out.push_back(*r);
  }
  return out;
}

void write_search_log_csv(std::ostream& out, const SearchLog& log, bool with_timing) {
  out << "epoch,candidate,tokens";
  for (auto name : kParameterNames) out << ',' << name;
  out << ",acc,cost,reward,failed";
  if (with_timing) out << ",wall_ms";
  out << '\n';
  for (const auto& r : log.records) {
    out << r.epoch << ',' << r.candidate << ',' << format_tokens(r.tokens);
    for (double v : r.combination.values()) out << ',' << csv_number(v);
    out << ',' << csv_number(r.acc) << ',' << csv_number(r.cost) << ',' << csv_number(r.reward) << ','
        << (r.failed ? 1 : 0);
    if (with_timing) out << ',' << csv_number(r.wall_ms);
    out << '\n';
  }
}

SearchLog read_search_log_csv(std::istream& in, const SearchSpace& space) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("epoch,candidate,tokens", 0) != 0) {
    throw FormatError("search log: missing header");
  }
  SearchLog log;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() < 3 + kNumTokens + 4) throw FormatError("search log: short row");
    SearchRecord r;
    try {
      r.epoch = std::stoul(cells[0]);
      r.candidate = std::stoul(cells[1]);
      std::istringstream ts(cells[2]);
      for (auto& t : r.tokens) {
        if (!(ts >> t)) throw FormatError("search log: bad token list");
      }
      r.acc = std::stod(cells[3 + kNumTokens]);
      r.cost = std::stod(cells[4 + kNumTokens]);
      r.reward = std::stod(cells[5 + kNumTokens]);
      r.failed = cells[6 + kNumTokens] == "1";
      if (cells.size() > 7 + kNumTokens) r.wall_ms = std::stod(cells[7 + kNumTokens]);
    } catch (const std::logic_error&) {
      throw FormatError("search log: malformed number in row: " + line);
    }
    r.combination = space.decode(r.tokens);
    log.records.push_back(std::move(r));
  }
  return log;
}

SearchLog run_search(AgentState& agent, const SearchSpace& space, const PpoConfig& cfg,
                     const SearchOptions& opts, const CandidateEvaluator& evaluate, SearchLog log,
                     std::size_t start_epoch) {
  cfg.validate();
  if (opts.batch < 1) throw InvalidArgument("run_search: B must be >= 1");
  if (agent.policy.head_sizes != space.cardinalities()) {
    throw InvalidArgument("run_search: controller heads do not match the search space");
  }
  const std::uint64_t sample_stream = derive_seed(opts.seed, 0x5a3b1e);
  const std::uint64_t eval_stream = derive_seed(opts.seed, 0xe7a1);

  for (std::size_t epoch = start_epoch; epoch < opts.epochs; ++epoch) {
    auto batch = sample_batch(agent.policy, opts.batch, derive_seed(sample_stream, epoch));
    std::vector<SearchRecord> records(opts.batch);
    for (std::size_t j = 0; j < opts.batch; ++j) {
      auto& r = records[j];
      r.epoch = epoch;
      r.candidate = j;
      std::copy(batch[j].tokens.begin(), batch[j].tokens.end(), r.tokens.begin());
      r.combination = space.decode(r.tokens);
    }

    auto work = [&](std::size_t j) {
      auto& r = records[j];
      const auto started = std::chrono::steady_clock::now();
      try {
        const auto res = evaluate(r.combination, r.tokens, derive_seed(eval_stream, epoch, j));
        r.acc = res.acc;
        r.cost = res.cost;
        r.failed = res.failed;
        r.failure = res.failure;
        if (!r.failed) r.reward = reward(res.acc, res.cost, cfg);
      } catch (const std::exception& e) {
        r.failed = true;
        r.failure = e.what();
      }
      if (r.failed || !std::isfinite(r.reward)) {
        r.failed = true;
        r.reward = 0.0;
      }
      r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    };

    const std::size_t workers = std::clamp<std::size_t>(opts.threads, 1, opts.batch);
    if (workers == 1) {
      for (std::size_t j = 0; j < opts.batch; ++j) work(j);
    } else {
      std::atomic<std::size_t> next{0};
      std::vector<std::thread> pool;
      for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
          for (std::size_t j = next++; j < opts.batch; j = next++) work(j);
        });
      }
      for (auto& t : pool) t.join();
    }

    for (std::size_t j = 0; j < opts.batch; ++j) {
      batch[j].reward = records[j].reward;
      batch[j].acc = records[j].acc;
      batch[j].cost = records[j].cost;
      log.records.push_back(std::move(records[j]));
    }
    ppo_update(agent, batch, cfg);
    if (opts.on_epoch) opts.on_epoch(epoch, agent, log);
  }
  return log;
}

void write_agent_checkpoint(std::ostream& out, const AgentState& agent, std::size_t next_epoch) {
  io::write_magic(out, "FSCP");
  io::write_u32(out, kAgentCheckpointVersion);
  io::write_u64(out, next_epoch);
  io::write_f64(out, agent.baseline);
  io::write_u8(out, agent.baseline_ready ? 1 : 0);
  io::write_f64(out, agent.adam.lr);
  io::write_f64(out, agent.adam.beta1);
  io::write_f64(out, agent.adam.beta2);
  io::write_f64(out, agent.adam.eps);
  io::write_u64(out, agent.adam.t);
  write_controller(out, agent.policy);
  Matrix moments(2, agent.adam.m.size());
  if (agent.adam.m.size() > 0) {
    moments.row(0) = agent.adam.m.transpose();
    moments.row(1) = agent.adam.v.transpose();
  }
  io::write_sized_matrix(out, moments);
}

AgentState read_agent_checkpoint(std::istream& in, std::size_t* next_epoch) {
  io::expect_magic(in, "FSCP");
  const auto version = io::read_u32(in);
  if (version != kAgentCheckpointVersion) throw FormatError("FSCP: unsupported version " + std::to_string(version));
  AgentState a;
  const auto epoch = io::read_u64(in);
  if (next_epoch) *next_epoch = epoch;
  a.baseline = io::read_f64(in);
  a.baseline_ready = io::read_u8(in) != 0;
  a.adam.lr = io::read_f64(in);
  a.adam.beta1 = io::read_f64(in);
  a.adam.beta2 = io::read_f64(in);
  a.adam.eps = io::read_f64(in);
  a.adam.t = io::read_u64(in);
  a.policy = read_controller(in);
  const Matrix moments = io::read_sized_matrix(in);
  if (moments.cols() > 0) {
    if (moments.rows() != 2 || static_cast<std::size_t>(moments.cols()) != a.policy.parameter_count()) {
      throw FormatError("FSCP: optimiser state does not match the controller");
    }
    a.adam.m = moments.row(0).transpose();
    a.adam.v = moments.row(1).transpose();
  }
  return a;
}

}  // namespace facesearch
