#include "facesearch/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

namespace facesearch {
namespace {

using nlohmann::json;

void dataset_spec_to_json(json& j, const DatasetSpec& s) {
  j = json{{"n_classes", s.n_classes},
           {"samples_per_class", s.samples_per_class},
           {"feature_dim", s.feature_dim},
           {"embed_dim", s.embed_dim},
           {"intra_spread", s.intra_spread},
           {"outlier_rate", s.outlier_rate},
           {"flip_rate", s.flip_rate},
           {"embedding_corruption", s.embedding_corruption},
           {"feature_noise", s.feature_noise},
           {"seed", s.seed}};
}

DatasetSpec dataset_spec_from_json(const json& j, DatasetSpec s) {
  s.n_classes = j.value("n_classes", s.n_classes);
  s.samples_per_class = j.value("samples_per_class", s.samples_per_class);
  s.feature_dim = j.value("feature_dim", s.feature_dim);
  s.embed_dim = j.value("embed_dim", s.embed_dim);
  s.intra_spread = j.value("intra_spread", s.intra_spread);
  s.outlier_rate = j.value("outlier_rate", s.outlier_rate);
  s.flip_rate = j.value("flip_rate", s.flip_rate);
  s.embedding_corruption = j.value("embedding_corruption", s.embedding_corruption);
  s.feature_noise = j.value("feature_noise", s.feature_noise);
  s.seed = j.value("seed", s.seed);
  return s;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

const std::set<std::string> kConfigKeys = {
    "schema_version", "output_dir", "dataset_path", "space_path", "dataset", "heldout_classes",
    "val_fraction",   "pairs",      "base_arch",    "proxy_budget", "full_budget", "eval",
    "ppo",            "search",     "seed"};

}  // namespace

void RunConfig::validate() const {
  if (!dataset_path) dataset.validate();
  base.validate();
  proxy.validate();
  full.validate();
  eval.validate();
  ppo.validate();
  if (!(val_fraction > 0.0 && val_fraction < 0.5)) throw InvalidArgument("config: val_fraction must lie in (0, 0.5)");
  if (batch < 1) throw InvalidArgument("config: search.B must be >= 1");
  if (top_k < 1) throw InvalidArgument("config: search.K must be >= 1");
  if (epochs > 0 && top_k > epochs * batch) throw InvalidArgument("config: search.K must not exceed T*B");
}

RunConfig RunConfig::desk_default() {
  RunConfig c;
  c.dataset.n_classes = 20;
  c.dataset.samples_per_class = 50;
  c.dataset.feature_dim = 32;
  c.dataset.embed_dim = 16;
  c.dataset.intra_spread = 0.1;
  c.dataset.outlier_rate = 0.1;
  c.dataset.flip_rate = 0.05;
  c.heldout_classes = 10;
  c.base = {32, 2, 32, 16};
  c.pairs.val_genuine = 300;
  c.pairs.val_impostor = 2000;
  return c;
}

void to_json(json& j, const RunConfig& c) {
  json ds;
  dataset_spec_to_json(ds, c.dataset);
  j = json{{"schema_version", kSchemaVersion},
           {"output_dir", c.output_dir.string()},
           {"dataset", ds},
           {"heldout_classes", c.heldout_classes},
           {"val_fraction", c.val_fraction},
           {"pairs", {{"val_genuine", c.pairs.val_genuine},
                      {"val_impostor", c.pairs.val_impostor},
                      {"test_genuine", c.pairs.test_genuine},
                      {"test_impostor", c.pairs.test_impostor}}},
           {"base_arch", {{"base_depth", c.base.base_depth},
                          {"base_width", c.base.base_width},
                          {"embed_dim", c.base.embed_dim}}},
           {"proxy_budget", c.proxy},
           {"full_budget", c.full},
           {"eval", c.eval},
           {"ppo", c.ppo},
           {"search", {{"T", c.epochs}, {"B", c.batch}, {"K", c.top_k}}},
           {"seed", c.seed}};
  if (c.dataset_path) j["dataset_path"] = c.dataset_path->string();
  if (c.space_path) j["space_path"] = c.space_path->string();
}

RunConfig run_config_from_json(const json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw FormatError("config: expected a JSON object");
  const int version = j.value("schema_version", -1);
  if (version != kSchemaVersion) {
    throw FormatError("config: schema_version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kSchemaVersion) + ")");
  }
  for (const auto& [key, value] : j.items()) {
    if (!kConfigKeys.count(key)) throw FormatError("config: unknown key \"" + key + "\"");
  }
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
  };
  try {
    RunConfig c = RunConfig::desk_default();
    if (j.contains("output_dir")) c.output_dir = resolve(j.at("output_dir").get<std::string>());
    if (j.contains("dataset_path")) c.dataset_path = resolve(j.at("dataset_path").get<std::string>());
    if (j.contains("space_path")) c.space_path = resolve(j.at("space_path").get<std::string>());
    if (j.contains("dataset")) c.dataset = dataset_spec_from_json(j.at("dataset"), c.dataset);
    c.heldout_classes = j.value("heldout_classes", c.heldout_classes);
    c.val_fraction = j.value("val_fraction", c.val_fraction);
    if (j.contains("pairs")) {
      const auto& p = j.at("pairs");
      c.pairs.val_genuine = p.value("val_genuine", c.pairs.val_genuine);
      c.pairs.val_impostor = p.value("val_impostor", c.pairs.val_impostor);
      c.pairs.test_genuine = p.value("test_genuine", c.pairs.test_genuine);
      c.pairs.test_impostor = p.value("test_impostor", c.pairs.test_impostor);
    }
    if (j.contains("base_arch")) {
      const auto& b = j.at("base_arch");
      c.base.base_depth = b.value("base_depth", c.base.base_depth);
      c.base.base_width = b.value("base_width", c.base.base_width);
      c.base.embed_dim = b.value("embed_dim", c.base.embed_dim);
    }
    c.base.input_dim = c.dataset.feature_dim;
    if (j.contains("proxy_budget")) c.proxy = j.at("proxy_budget").get<TrainBudget>();
    if (j.contains("full_budget")) c.full = j.at("full_budget").get<TrainBudget>();
    if (j.contains("eval")) c.eval = j.at("eval").get<EvalSpec>();
    if (j.contains("ppo")) c.ppo = j.at("ppo").get<PpoConfig>();
    if (j.contains("search")) {
      const auto& s = j.at("search");
      c.epochs = s.value("T", c.epochs);
      c.batch = s.value("B", c.batch);
      c.top_k = s.value("K", c.top_k);
    }
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
  } catch (const json::exception& e) {
    throw FormatError(std::string("config: ") + e.what());
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw FormatError("config " + path.string() + ": " + e.what());
  }
  return run_config_from_json(j, path.parent_path());
}

std::uint64_t dataset_hash(const LabeledDataset& ds) {
  std::ostringstream os(std::ios::binary);
  write_dataset(os, ds);
  const std::string bytes = os.str();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t target_cost(const BaseArch& base) { return flops(expand(base, 1.0, 1.0)); }

PreparedData prepare_data(const RunConfig& cfg) {
  cfg.validate();
  PreparedData d;
  d.full = cfg.dataset_path ? load_dataset(cfg.dataset_path->string()) : generate_dataset(cfg.dataset);
  d.dataset_hash = dataset_hash(d.full);
  std::tie(d.search, d.heldout) = split_identities(d.full, cfg.heldout_classes, derive_seed(cfg.seed, 11));
  std::tie(d.train, d.val) = split(d.search, cfg.val_fraction, derive_seed(cfg.seed, 12));
  d.val_pairs = build_pairset(d.val, cfg.pairs.val_genuine, cfg.pairs.val_impostor, derive_seed(cfg.seed, 13));
  d.test_pairs =
      build_pairset(d.heldout, cfg.pairs.test_genuine, cfg.pairs.test_impostor, derive_seed(cfg.seed, 14));
  d.base = cfg.base;
  d.base.input_dim = d.full.feature_dim();
  return d;
}

CandidateEvaluator make_proxy_evaluator(const PreparedData& data, const RunConfig& cfg) {
  return [&data, &cfg](const Combination& c, const Tokens&, std::uint64_t seed) {
    CandidateResult res;
    res.cost = static_cast<double>(flops(expand(data.base, c.depth_ratio, c.width_ratio)));
    const auto [cleaned, report] = clean(data.train, c.clean_params());
    TrainBudget budget = cfg.proxy;
    budget.seed = seed;
    const auto model = train_candidate(c, cleaned, data.base, budget);
    res.acc = acc_metric(model.network, data.val, data.val_pairs, cfg.eval);
    return res;
  };
}

CandidateOutcome train_and_test(const Combination& c, const PreparedData& data, const RunConfig& cfg,
                                std::uint64_t seed) {
  CandidateOutcome out;
  out.flops = flops(expand(data.base, c.depth_ratio, c.width_ratio));
  const auto [cleaned, report] = clean(data.search, c.clean_params());
  TrainBudget budget = cfg.full;
  budget.seed = seed;
  out.model = train_candidate(c, cleaned, data.base, budget);
  out.test_acc = acc_metric(out.model.network, data.heldout, data.test_pairs, cfg.eval);
  return out;
}

Combination baseline_combination() {
  Combination c;
  c.tau_intra = 0.0;
  c.tau_inter = 1.0;
  c.m1 = 1.0;
  c.m2 = 0.5;
  c.m3 = 0.0;
  c.s_p = 64.0;
  c.s_n = 64.0;
  c.depth_ratio = 1.0;
  c.width_ratio = 1.0;
  return c;
}

const RetrainRow* RetrainReport::best() const {
  return by_test_acc.empty() ? nullptr : &rows[by_test_acc.front()];
}

RetrainReport retrain_topk(const SearchLog& log, std::size_t k, const PreparedData& data, const RunConfig& cfg,
                           std::size_t threads) {
  const auto top = log.top_k(k);
  if (top.size() < k) {
    throw InvalidArgument("retrain: log holds " + std::to_string(top.size()) +
                          " distinct successful combinations, fewer than K = " + std::to_string(k));
  }
  RetrainReport report;
  report.rows.resize(top.size());
  report.models.resize(top.size());
  parallel_for(top.size(), threads, [&](std::size_t i) {
    auto& row = report.rows[i];
    row.reward_rank = i + 1;
    row.tokens = top[i].tokens;
    row.combination = top[i].combination;
    row.search_reward = top[i].reward;
    row.search_acc = top[i].acc;
    try {
      auto outcome = train_and_test(row.combination, data, cfg, derive_seed(cfg.seed, 0x7e7, i));
      row.test_acc = outcome.test_acc;
      row.flops = outcome.flops;
      row.loss_trace = outcome.model.loss_trace;
      report.models[i] = std::move(outcome.model);
    } catch (const std::exception& e) {
      row.failed = true;
      row.failure = e.what();
    }
  });
  std::vector<double> rewards;
  std::vector<double> accs;
  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    if (report.rows[i].failed) continue;
    report.by_test_acc.push_back(i);
    rewards.push_back(report.rows[i].search_reward);
    accs.push_back(report.rows[i].test_acc);
  }
  std::stable_sort(report.by_test_acc.begin(), report.by_test_acc.end(),
                   [&](auto a, auto b) { return report.rows[a].test_acc > report.rows[b].test_acc; });
  report.rank_correlation = spearman(rewards, accs);
  return report;
}

void to_json(json& j, const RetrainReport& r) {
  auto rows = json::array();
  for (const auto& row : r.rows) {
    json jr{{"reward_rank", row.reward_rank},
            {"tokens", format_tokens(row.tokens)},
            {"combination", row.combination},
            {"search_reward", row.search_reward},
            {"search_acc", row.search_acc},
            {"test_acc", row.test_acc},
            {"flops", row.flops},
            {"failed", row.failed},
            {"loss_trace", row.loss_trace}};
    if (row.failed) jr["failure"] = row.failure;
    rows.push_back(std::move(jr));
  }
  std::vector<std::size_t> by_acc;
  for (auto i : r.by_test_acc) by_acc.push_back(r.rows[i].reward_rank);
  j = json{{"schema_version", kSchemaVersion},
           {"rows", rows},
           {"ranking_by_reward", [&] {
              std::vector<std::size_t> v;
              for (const auto& row : r.rows) v.push_back(row.reward_rank);
              return v;
            }()},
           {"ranking_by_test_acc", by_acc}};
  j["rank_correlation"] = r.rank_correlation ? json(*r.rank_correlation) : json(nullptr);
}

void write_retrain_csv(std::ostream& out, const RetrainReport& r) {
  out << "test_rank,reward_rank,tokens";
  for (auto name : kParameterNames) out << ',' << name;
  out << ",search_reward,search_acc,test_acc,flops,failed\n";
  std::vector<std::size_t> order = r.by_test_acc;
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    if (r.rows[i].failed) order.push_back(i);
  }
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    const auto& row = r.rows[order[pos]];
    out << (row.failed ? std::string() : std::to_string(pos + 1)) << ',' << row.reward_rank << ','
        << format_tokens(row.tokens);
    for (double v : row.combination.values()) out << ',' << fmt(v);
    out << ',' << fmt(row.search_reward) << ',' << fmt(row.search_acc) << ',' << fmt(row.test_acc) << ','
        << row.flops << ',' << (row.failed ? 1 : 0) << '\n';
  }
}

std::optional<double> spearman(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw InvalidArgument("spearman: length mismatch");
  if (a.size() < 2) return std::nullopt;
  const auto ra = average_ranks(a);
  const auto rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) return std::nullopt;
  return cov / std::sqrt(va * vb);
}

Difficulty difficulty(const Combination& c) {
  if (!(c.s_p > 0.0)) throw InvalidArgument("difficulty: s_p must be > 0");
  return {1.0 - c.tau_intra + c.tau_inter, c.s_n * (c.m1 - 1.0 + c.m2 + c.m3) / c.s_p};
}

std::vector<DifficultyRow> difficulty_rows(const SearchLog& log, const BaseArch& base, const std::string& source) {
  std::vector<DifficultyRow> rows;
  for (const auto& r : log.records) {
    rows.push_back({source, r.epoch, r.candidate, r.combination, difficulty(r.combination),
                    flops(expand(base, r.combination.depth_ratio, r.combination.width_ratio)), r.reward});
  }
  return rows;
}

void write_difficulty_csv(std::ostream& out, const std::vector<DifficultyRow>& rows) {
  out << "source,epoch,candidate";
  for (auto name : kParameterNames) out << ',' << name;
  out << ",difficulty_data,difficulty_loss,flops,reward\n";
  for (const auto& r : rows) {
    out << r.source << ',' << r.epoch << ',' << r.candidate;
    for (double v : r.combination.values()) out << ',' << fmt(v);
    out << ',' << fmt(r.difficulty.data) << ',' << fmt(r.difficulty.loss) << ',' << r.flops << ','
        << fmt(r.reward) << '\n';
  }
}

std::size_t default_threads() {
  if (const char* env = std::getenv("FACESEARCH_THREADS")) {
    try {
      const auto v = std::stoul(env);
      if (v >= 1) return v;
    } catch (const std::logic_error&) {
    }
  }
  return std::max(1U, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(n, 1));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace facesearch
