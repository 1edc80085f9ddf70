#include "cli.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "facesearch/agent.hpp"
#include "facesearch/cleaner.hpp"
#include "facesearch/pipeline.hpp"
#include "facesearch/searchspace.hpp"
#include "facesearch/synthdata.hpp"
#include "facesearch/traineval.hpp"

namespace facesearch::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kVersion = "0.1.0";
constexpr std::size_t kRewardWindow = 10;

// Write to a sibling temp file and rename, so a reader never sees half a file.
void write_text(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw Error("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const fs::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void check_schema(const json& j, const fs::path& path) {
  const int v = j.value("schema_version", -1);
  if (v != kSchemaVersion) {
    throw FormatError(path.string() + ": schema_version " + std::to_string(v) + " is not supported");
  }
}

void make_output_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Error("cannot create output directory " + dir.string());
}

std::string hex(std::uint64_t v) {
  std::ostringstream ss;
  ss << std::hex << std::setw(16) << std::setfill('0') << v;
  return ss.str();
}

RunConfig config_or_default(const std::string& path) {
  if (path.empty()) return RunConfig::desk_default();
  if (!fs::exists(path)) throw Error("config file not found: " + path);
  return load_run_config(path);
}

Combination parse_combination(const std::string& text) {
  std::array<double, kNumTokens> v{};
  std::stringstream ss(text);
  std::string item;
  std::size_t n = 0;
  while (std::getline(ss, item, ',')) {
    if (n == kNumTokens) throw InvalidArgument("--combination takes exactly 9 values");
    try {
      std::size_t used = 0;
      v[n] = std::stod(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw InvalidArgument("--combination: not a number: '" + item + "'");
    }
    ++n;
  }
  if (n != kNumTokens) throw InvalidArgument("--combination takes exactly 9 values");
  auto c = Combination::from_values(v);
  c.clean_params().validate();
  c.loss_params().validate();
  if (!(c.depth_ratio > 0.0) || !(c.width_ratio > 0.0)) throw InvalidArgument("--combination: D and W must be > 0");
  return c;
}

Tokens parse_tokens(const std::string& text) {
  Tokens t{};
  std::stringstream ss(text);
  std::string item;
  std::size_t n = 0;
  while (std::getline(ss, item, ',')) {
    if (n == kNumTokens) throw InvalidArgument("--tokens takes exactly 9 indices");
    try {
      t[n++] = std::stoul(item);
    } catch (const std::logic_error&) {
      throw InvalidArgument("--tokens: not an index: '" + item + "'");
    }
  }
  if (n != kNumTokens) throw InvalidArgument("--tokens takes exactly 9 indices");
  return t;
}

SearchSpace load_space(const RunConfig& cfg) {
  if (!cfg.space_path) return default_space();
  return space_from_json(read_json(*cfg.space_path));
}

// A run directory: its manifest carries the full config the search used.
struct Run {
  fs::path dir;
  RunConfig cfg;
  json manifest;
};

Run open_run(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) throw Error(dir.string() + " is not a run directory (no manifest.json)");
  Run run;
  run.dir = dir;
  run.manifest = read_json(manifest_path);
  check_schema(run.manifest, manifest_path);
  run.cfg = run_config_from_json(run.manifest.at("config"));
  run.cfg.output_dir = dir;
  return run;
}

PreparedData prepare_checked(const Run& run) {
  auto data = prepare_data(run.cfg);
  const std::string expected = run.manifest.value("dataset_hash", "");
  if (expected != hex(data.dataset_hash)) {
    throw Error("dataset hash " + hex(data.dataset_hash) + " does not match the run manifest (" + expected + ")");
  }
  return data;
}

SearchLog load_log(const Run& run, const SearchSpace& space) {
  std::ifstream in(run.dir / "search_log.csv");
  if (!in) throw Error("cannot open " + (run.dir / "search_log.csv").string());
  return read_search_log_csv(in, space);
}

SearchSpace load_run_space(const Run& run) { return space_from_json(read_json(run.dir / "space.json")); }

json dataset_summary(const LabeledDataset& ds) {
  std::size_t outliers = 0, flips = 0;
  for (const auto& t : ds.truth) {
    outliers += t.kind == NoiseKind::Outlier;
    flips += t.kind == NoiseKind::Flip;
  }
  return json{{"samples", ds.size()},
              {"classes", ds.n_classes},
              {"feature_dim", ds.feature_dim()},
              {"embed_dim", ds.embed_dim()},
              {"outliers", outliers},
              {"flips", flips},
              {"hash", hex(dataset_hash(ds))}};
}

// gen-data --------------------------------------------------------------

struct GenDataArgs {
  std::string config;
  std::string out;
  bool csv = false;
};

int gen_data(const GenDataArgs& a, std::ostream& out) {
  auto cfg = config_or_default(a.config);
  const fs::path dir = a.out.empty() ? cfg.output_dir : fs::path(a.out);
  const auto ds = cfg.dataset_path ? load_dataset(cfg.dataset_path->string()) : generate_dataset(cfg.dataset);
  make_output_dir(dir);
  {
    std::ostringstream bytes(std::ios::binary);
    write_dataset(bytes, ds);
    write_text(dir / "dataset.fsds", bytes.str());
  }
  if (a.csv) {
    std::ostringstream csv;
    write_dataset_csv(csv, ds);
    write_text(dir / "dataset.csv", csv.str());
  }
  json result{{"schema_version", kSchemaVersion}, {"command", "gen-data"}, {"dataset", dataset_summary(ds)}};
  write_json(dir / "gen_data.json", result);
  out << "wrote " << (dir / "dataset.fsds").string() << " (" << ds.size() << " samples, " << ds.n_classes
      << " classes)\n";
  return 0;
}

// clean -------------------------------------------------------------------

struct CleanArgs {
  std::string config;
  std::string dataset;
  std::string out;
  double tau_intra = 0.0;
  double tau_inter = 1.0;
  bool leave_one_out = false;
};

int clean_cmd(const CleanArgs& a, std::ostream& out) {
  auto cfg = config_or_default(a.config);
  const fs::path dir = a.out.empty() ? cfg.output_dir : fs::path(a.out);
  const CleanParams params{a.tau_intra, a.tau_inter, a.leave_one_out};
  params.validate();
  LabeledDataset ds;
  if (!a.dataset.empty()) {
    ds = load_dataset(a.dataset);
  } else if (cfg.dataset_path) {
    ds = load_dataset(cfg.dataset_path->string());
  } else {
    ds = generate_dataset(cfg.dataset);
  }
  const auto [cleaned, report] = clean(ds, params);
  make_output_dir(dir);
  {
    std::ostringstream bytes(std::ios::binary);
    write_dataset(bytes, cleaned);
    write_text(dir / "cleaned.fsds", bytes.str());
  }
  json result{{"schema_version", kSchemaVersion},
              {"command", "clean"},
              {"tau_intra", params.tau_intra},
              {"tau_inter", params.tau_inter},
              {"leave_one_out", params.leave_one_out},
              {"input", dataset_summary(ds)},
              {"output", dataset_summary(cleaned)},
              {"report", report}};
  write_json(dir / "clean_report.json", result);
  out << "removed " << report.removed_indices.size() << " of " << ds.size() << " samples, classes "
      << report.classes_before << " -> " << report.classes_after << ", outlier recall " << report.outlier_recall
      << ", noise precision " << report.noise_precision << "\n";
  return 0;
}

// train-one ---------------------------------------------------------------

struct TrainOneArgs {
  std::string config;
  std::string out;
  std::string combination;
  std::string tokens;
  std::string budget = "full";
  std::uint64_t seed = 0;
};

int train_one(const TrainOneArgs& a, std::ostream& out) {
  auto cfg = config_or_default(a.config);
  const fs::path dir = a.out.empty() ? cfg.output_dir : fs::path(a.out);
  if (a.combination.empty() == a.tokens.empty()) throw InvalidArgument("give exactly one of --combination, --tokens");
  if (a.budget != "proxy" && a.budget != "full") throw InvalidArgument("--budget must be proxy or full");
  const auto space = load_space(cfg);
  const Combination c = a.tokens.empty() ? parse_combination(a.combination) : space.decode(parse_tokens(a.tokens));
  const auto data = prepare_data(cfg);
  const bool proxy = a.budget == "proxy";

  const auto [cleaned, report] = clean(proxy ? data.train : data.search, c.clean_params());
  TrainBudget budget = proxy ? cfg.proxy : cfg.full;
  budget.seed = a.seed;
  const auto model = train_candidate(c, cleaned, data.base, budget);
  const auto& eval_ds = proxy ? data.val : data.heldout;
  const auto& eval_pairs = proxy ? data.val_pairs : data.test_pairs;
  const auto scores = evaluate_pairs(model.network, eval_ds, eval_pairs);
  const double acc = weighted_tar(scores, cfg.eval);
  const auto cost = flops(expand(data.base, c.depth_ratio, c.width_ratio));
  PpoConfig ppo = cfg.ppo;
  ppo.target_cost = static_cast<double>(target_cost(data.base));

  json tars = json::array();
  for (double far : cfg.eval.far_targets) {
    tars.push_back({{"far", far}, {"tar", tar_at_far(scores.genuine, scores.impostor, far)}});
  }
  json result{{"schema_version", kSchemaVersion},
              {"command", "train-one"},
              {"combination", c},
              {"budget", budget},
              {"eval_set", proxy ? "val" : "test"},
              {"acc", acc},
              {"tar_at_far", tars},
              {"flops", cost},
              {"reward", reward(acc, static_cast<double>(cost), ppo)},
              {"clean", report},
              {"loss_trace", model.loss_trace},
              {"dataset_hash", hex(data.dataset_hash)}};
  make_output_dir(dir);
  save_network((dir / "model.fsnw").string(), model.network);
  std::ostringstream log;
  log << "epoch,loss\n";
  for (std::size_t e = 0; e < model.loss_trace.size(); ++e) {
    log << e << ',' << std::setprecision(17) << model.loss_trace[e] << '\n';
  }
  write_text(dir / "train_log.csv", log.str());
  write_json(dir / "train_one.json", result);
  out << "acc " << acc << " on " << (proxy ? "val" : "test") << " pairs, " << cost << " FLOPs\n";
  return 0;
}

// search ------------------------------------------------------------------

struct SearchArgs {
  std::string config;
  std::string out;
  bool resume = false;
  bool overwrite = false;
  bool verbose = false;
};

std::string log_csv(const SearchLog& log) {
  std::ostringstream ss;
  write_search_log_csv(ss, log, false);
  return ss.str();
}

std::string timings_csv(const SearchLog& log) {
  std::ostringstream ss;
  ss << "epoch,candidate,wall_ms\n" << std::setprecision(6);
  for (const auto& r : log.records) ss << r.epoch << ',' << r.candidate << ',' << r.wall_ms << '\n';
  return ss.str();
}

void restore_timings(const fs::path& path, SearchLog& log) {
  std::ifstream in(path);
  if (!in) return;
  std::map<std::pair<std::size_t, std::size_t>, double> ms;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::size_t e = 0, c = 0;
    double w = 0.0;
    if (std::sscanf(line.c_str(), "%zu,%zu,%lf", &e, &c, &w) == 3) ms[{e, c}] = w;
  }
  for (auto& r : log.records) {
    if (auto it = ms.find({r.epoch, r.candidate}); it != ms.end()) r.wall_ms = it->second;
  }
}

json search_result(const SearchLog& log, const RunConfig& cfg, std::size_t completed) {
  json top = json::array();
  for (const auto& r : log.top_k(cfg.top_k)) {
    top.push_back({{"epoch", r.epoch},
                   {"candidate", r.candidate},
                   {"tokens", format_tokens(r.tokens)},
                   {"combination", r.combination},
                   {"acc", r.acc},
                   {"cost", r.cost},
                   {"reward", r.reward}});
  }
  std::size_t failures = 0;
  for (const auto& r : log.records) failures += r.failed;
  const auto means = log.batch_mean_rewards();
  json j{{"schema_version", kSchemaVersion},
         {"command", "search"},
         {"epochs_completed", completed},
         {"epochs", cfg.epochs},
         {"batch", cfg.batch},
         {"candidates", log.records.size()},
         {"failures", failures},
         {"batch_mean_rewards", means},
         {"top_k", top}};
  if (!means.empty()) {
    j["initial_window_mean"] = log.initial_window_mean(kRewardWindow);
    j["final_window_mean"] = log.final_window_mean(kRewardWindow);
  }
  return j;
}

int search(const SearchArgs& a, std::ostream& out, std::ostream& err) {
  RunConfig cfg;
  fs::path dir;
  std::optional<json> previous_manifest;
  if (a.resume && a.config.empty()) {
    if (a.out.empty()) throw InvalidArgument("--resume needs --config or --out");
    auto run = open_run(a.out);
    cfg = run.cfg;
    dir = run.dir;
    previous_manifest = run.manifest;
  } else {
    if (a.config.empty()) throw InvalidArgument("search requires --config");
    if (!fs::exists(a.config)) throw Error("config file not found: " + a.config);
    cfg = load_run_config(a.config);
    if (!a.out.empty()) cfg.output_dir = a.out;
    dir = cfg.output_dir;
    if (a.resume) {
      if (!fs::exists(dir / "manifest.json")) throw Error("nothing to resume in " + dir.string());
      previous_manifest = read_json(dir / "manifest.json");
      check_schema(*previous_manifest, dir / "manifest.json");
    }
  }
  if (!a.resume && fs::exists(dir / "manifest.json") && !a.overwrite) {
    throw Error(dir.string() + " already holds a run; pass --resume or --overwrite");
  }

  const auto space = load_space(cfg);
  const auto data = prepare_data(cfg);
  PpoConfig ppo = cfg.ppo;
  ppo.target_cost = static_cast<double>(target_cost(data.base));
  cfg.ppo = ppo;

  json config_json = cfg;
  config_json.erase("output_dir");
  json space_json = space;
  json manifest{{"schema_version", kSchemaVersion},
                {"tool", "facesearch"},
                {"version", kVersion},
                {"config", config_json},
                {"dataset_hash", hex(data.dataset_hash)},
                {"dataset", dataset_summary(data.full)},
                {"search_identities", data.search.n_classes},
                {"heldout_identities", data.heldout.n_classes},
                {"target_cost", ppo.target_cost},
                {"space_size", space.size()},
                {"artifacts",
                 {"space.json", "search_log.csv", "timings.csv", "controller.fscp", "search_result.json"}}};

  AgentState agent;
  SearchLog log;
  std::size_t start = 0;
  if (a.resume) {
    if (previous_manifest->value("dataset_hash", "") != hex(data.dataset_hash)) {
      throw Error("dataset hash does not match the run being resumed");
    }
    if (previous_manifest->at("config") != config_json) throw Error("config differs from the run being resumed");
    std::ifstream ck(dir / "controller.fscp", std::ios::binary);
    if (!ck) throw Error("cannot open " + (dir / "controller.fscp").string());
    agent = read_agent_checkpoint(ck, &start);
    log = load_log({dir, cfg, manifest}, space);
    std::erase_if(log.records, [&](const SearchRecord& r) { return r.epoch >= start; });
    restore_timings(dir / "timings.csv", log);
  } else {
    agent = make_agent(space.cardinalities(), ppo, derive_seed(cfg.seed, 21));
  }

  make_output_dir(dir);
  write_json(dir / "manifest.json", manifest);
  write_json(dir / "space.json", space_json);

  SearchOptions opts;
  opts.epochs = cfg.epochs;
  opts.batch = cfg.batch;
  opts.seed = cfg.seed;
  opts.threads = default_threads();
  opts.on_epoch = [&](std::size_t epoch, const AgentState& state, const SearchLog& current) {
    std::ostringstream ck(std::ios::binary);
    write_agent_checkpoint(ck, state, epoch + 1);
    write_text(dir / "controller.fscp", ck.str());
    write_text(dir / "search_log.csv", log_csv(current));
    write_text(dir / "timings.csv", timings_csv(current));
    if (a.verbose) {
      const auto means = current.batch_mean_rewards();
      err << "epoch " << epoch + 1 << "/" << cfg.epochs << " mean reward " << means.back() << "\n";
    }
  };
  if (start == 0 && !a.resume) {
    std::ostringstream ck(std::ios::binary);
    write_agent_checkpoint(ck, agent, 0);
    write_text(dir / "controller.fscp", ck.str());
    write_text(dir / "search_log.csv", log_csv(log));
    write_text(dir / "timings.csv", timings_csv(log));
  }
  log = run_search(agent, space, ppo, opts, make_proxy_evaluator(data, cfg), std::move(log), start);

  write_text(dir / "search_log.csv", log_csv(log));
  write_text(dir / "timings.csv", timings_csv(log));
  const auto result = search_result(log, cfg, cfg.epochs);
  write_json(dir / "search_result.json", result);
  out << "search finished: " << log.records.size() << " candidates";
  if (result.contains("final_window_mean")) {
    out << ", window-" << kRewardWindow << " mean reward " << result["initial_window_mean"].get<double>() << " -> "
        << result["final_window_mean"].get<double>();
  }
  out << "\n";
  return 0;
}

// retrain -----------------------------------------------------------------

struct RetrainArgs {
  std::string run;
  std::size_t k = 0;
  bool baseline = true;
};

int retrain(const RetrainArgs& a, std::ostream& out) {
  const auto run = open_run(a.run);
  const auto space = load_run_space(run);
  const auto log = load_log(run, space);
  const auto data = prepare_checked(run);
  const std::size_t k = a.k ? a.k : run.cfg.top_k;
  const std::size_t threads = default_threads();

  auto report = retrain_topk(log, k, data, run.cfg, threads);
  json j = report;
  j["command"] = "retrain";
  j["k"] = k;
  j["full_budget"] = run.cfg.full;

  std::optional<CandidateOutcome> base;
  if (a.baseline) {
    base = train_and_test(baseline_combination(), data, run.cfg, derive_seed(run.cfg.seed, 0x7e7, 0xba5e));
    j["baseline"] = {{"combination", baseline_combination()},
                     {"test_acc", base->test_acc},
                     {"flops", base->flops},
                     {"loss_trace", base->model.loss_trace}};
    if (const auto* best = report.best()) j["best_minus_baseline"] = best->test_acc - base->test_acc;
  }
  if (const auto* best = report.best()) {
    j["best"] = {{"reward_rank", best->reward_rank}, {"combination", best->combination}, {"test_acc", best->test_acc}};
  }

  const fs::path models = run.dir / "models";
  make_output_dir(models);
  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    if (report.rows[i].failed) continue;
    std::ostringstream name;
    name << "rank_" << std::setw(2) << std::setfill('0') << report.rows[i].reward_rank << ".fsnw";
    save_network((models / name.str()).string(), report.models[i].network);
  }
  if (base) save_network((models / "baseline.fsnw").string(), base->model.network);
  std::ostringstream csv;
  write_retrain_csv(csv, report);
  write_text(run.dir / "retrain_report.csv", csv.str());
  write_json(run.dir / "retrain_report.json", j);

  if (const auto* best = report.best()) {
    out << "best test acc " << best->test_acc << " (reward rank " << best->reward_rank << ")";
    if (base) out << ", baseline " << base->test_acc;
    out << "\n";
  } else {
    out << "every retrained candidate failed\n";
  }
  return 0;
}

// analyze -----------------------------------------------------------------

struct AnalyzeArgs {
  std::string run;
  std::vector<std::string> merge;
  std::string combination;
  std::string out;
};

int analyze(const AnalyzeArgs& a, std::ostream& out) {
  if (a.run.empty() && a.combination.empty()) throw InvalidArgument("analyze needs --run or --combination");
  if (a.run.empty()) {
    // Single combination: the result goes to stdout, nothing is written.
    const auto c = parse_combination(a.combination);
    const auto d = difficulty(c);
    json j{{"schema_version", kSchemaVersion},
           {"command", "analyze"},
           {"combination", c},
           {"difficulty_data", d.data},
           {"difficulty_loss", d.loss}};
    out << j.dump() << "\n";
    return 0;
  }

  std::vector<DifficultyRow> rows;
  const auto primary = open_run(a.run);
  std::vector<fs::path> sources{primary.dir};
  for (const auto& m : a.merge) sources.emplace_back(m);
  std::vector<Run> runs;
  for (const auto& dir : sources) runs.push_back(dir == primary.dir ? primary : open_run(dir));
  for (const auto& run : runs) {
    const auto space = load_run_space(run);
    BaseArch base = run.cfg.base;
    base.input_dim = run.manifest.at("dataset").at("feature_dim").get<std::size_t>();
    auto more = difficulty_rows(load_log(run, space), base, run.dir.filename().empty()
                                                                ? run.dir.parent_path().filename().string()
                                                                : run.dir.filename().string());
    rows.insert(rows.end(), more.begin(), more.end());
  }
  const fs::path dir = a.out.empty() ? primary.dir : fs::path(a.out);
  make_output_dir(dir);
  std::ostringstream csv;
  write_difficulty_csv(csv, rows);
  write_text(dir / "difficulty.csv", csv.str());
  json sources_json = json::array();
  for (const auto& s : sources) sources_json.push_back(s.string());
  json j{{"schema_version", kSchemaVersion}, {"command", "analyze"}, {"runs", sources_json}, {"rows", rows.size()}};
  if (!a.combination.empty()) {
    const auto c = parse_combination(a.combination);
    const auto d = difficulty(c);
    j["combination"] = c;
    j["difficulty_data"] = d.data;
    j["difficulty_loss"] = d.loss;
  }
  write_json(dir / "analyze_result.json", j);
  out << "wrote " << rows.size() << " rows to " << (dir / "difficulty.csv").string() << "\n";
  return 0;
}

// eval --------------------------------------------------------------------

struct EvalArgs {
  std::string run;
  std::string config;
  std::string model;
  std::string set = "test";
  std::string out;
};

int eval_cmd(const EvalArgs& a, std::ostream& out) {
  if (a.model.empty()) throw InvalidArgument("eval requires --model");
  if (a.set != "val" && a.set != "test") throw InvalidArgument("--set must be val or test");
  RunConfig cfg;
  PreparedData data;
  fs::path dir;
  if (!a.run.empty()) {
    const auto run = open_run(a.run);
    cfg = run.cfg;
    data = prepare_checked(run);
    dir = run.dir;
  } else {
    cfg = config_or_default(a.config);
    data = prepare_data(cfg);
    dir = cfg.output_dir;
  }
  if (!a.out.empty()) dir = a.out;
  const auto net = load_network(a.model);
  if (net.config.layer_dims.front() != data.full.feature_dim()) {
    throw InvalidArgument("model input width does not match the dataset features");
  }
  const bool test = a.set == "test";
  const auto scores = evaluate_pairs(net, test ? data.heldout : data.val, test ? data.test_pairs : data.val_pairs);
  json tars = json::array();
  for (double far : cfg.eval.far_targets) {
    tars.push_back({{"far", far}, {"tar", tar_at_far(scores.genuine, scores.impostor, far)}});
  }
  const double acc = weighted_tar(scores, cfg.eval);
  json j{{"schema_version", kSchemaVersion},
         {"command", "eval"},
         {"model", a.model},
         {"set", a.set},
         {"genuine_pairs", scores.genuine.size()},
         {"impostor_pairs", scores.impostor.size()},
         {"tar_at_far", tars},
         {"acc", acc},
         {"flops", flops(net.config)}};
  make_output_dir(dir);
  write_json(dir / "eval_result.json", j);
  out << "acc " << acc << " on " << a.set << " pairs\n";
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Joint search over data cleaning, margin loss and backbone size for face recognition"};
  app.name("facesearch");
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic labelled dataset");
  gen_cmd->add_option("--config", gen.config, "Run config (JSON)");
  gen_cmd->add_option("--out", gen.out, "Output directory (default: config output_dir)");
  gen_cmd->add_flag("--csv", gen.csv, "Also write dataset.csv");

  CleanArgs cl;
  auto* clean_sub = app.add_subcommand("clean", "Clean a dataset with fixed thresholds");
  clean_sub->add_option("--config", cl.config, "Run config (JSON)");
  clean_sub->add_option("--dataset", cl.dataset, "Dataset file (.fsds); default: generate from config");
  clean_sub->add_option("--out", cl.out, "Output directory");
  clean_sub->add_option("--tau-intra", cl.tau_intra, "Intra-class discriminability threshold");
  clean_sub->add_option("--tau-inter", cl.tau_inter, "Inter-class centroid merge threshold");
  clean_sub->add_flag("--leave-one-out", cl.leave_one_out, "Exclude each sample from its own centroid");

  TrainOneArgs tr;
  auto* train_sub = app.add_subcommand("train-one", "Train and evaluate a single combination");
  train_sub->add_option("--config", tr.config, "Run config (JSON)");
  train_sub->add_option("--out", tr.out, "Output directory");
  train_sub->add_option("--combination", tr.combination, "tau_intra,tau_inter,m1,m2,m3,s_p,s_n,D,W");
  train_sub->add_option("--tokens", tr.tokens, "Nine grid indices into the search space");
  train_sub->add_option("--budget", tr.budget, "proxy or full")->check(CLI::IsMember({"proxy", "full"}));
  train_sub->add_option("--seed", tr.seed, "Training seed");

  SearchArgs se;
  auto* search_sub = app.add_subcommand("search", "Run the controller search");
  search_sub->add_option("--config", se.config, "Run config (JSON)");
  search_sub->add_option("--out", se.out, "Run directory (default: config output_dir)");
  search_sub->add_flag("--resume", se.resume, "Continue from the run directory's checkpoint");
  search_sub->add_flag("--overwrite", se.overwrite, "Replace an existing run");
  search_sub->add_flag("-v,--verbose", se.verbose, "Report progress per epoch on stderr");

  RetrainArgs re;
  auto* retrain_sub = app.add_subcommand("retrain", "Fully retrain the top-K combinations of a run");
  retrain_sub->add_option("--run", re.run, "Run directory")->required();
  retrain_sub->add_option("--k", re.k, "How many combinations (default: config K)");
  retrain_sub->add_flag("!--no-baseline", re.baseline, "Skip the fixed baseline combination");

  AnalyzeArgs an;
  auto* analyze_sub = app.add_subcommand("analyze", "Difficulty-vs-FLOPs table of a run");
  analyze_sub->add_option("--run", an.run, "Run directory");
  analyze_sub->add_option("--merge", an.merge, "Further run directories to append");
  analyze_sub->add_option("--combination", an.combination, "Score a single combination");
  analyze_sub->add_option("--out", an.out, "Output directory (default: the run)");

  EvalArgs ev;
  auto* eval_sub = app.add_subcommand("eval", "Evaluate a saved network on verification pairs");
  eval_sub->add_option("--run", ev.run, "Run directory");
  eval_sub->add_option("--config", ev.config, "Run config (JSON), when not using --run");
  eval_sub->add_option("--model", ev.model, "Network file (.fsnw)")->required();
  eval_sub->add_option("--set", ev.set, "val or test")->check(CLI::IsMember({"val", "test"}));
  eval_sub->add_option("--out", ev.out, "Output directory");

  std::vector<const char*> argv;
  for (const auto& s : args) argv.push_back(s.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (gen_cmd->parsed()) return gen_data(gen, out);
    if (clean_sub->parsed()) return clean_cmd(cl, out);
    if (train_sub->parsed()) return train_one(tr, out);
    if (search_sub->parsed()) return search(se, out, err);
    if (retrain_sub->parsed()) return retrain(re, out);
    if (analyze_sub->parsed()) return analyze(an, out);
    if (eval_sub->parsed()) return eval_cmd(ev, out);
  } catch (const std::exception& e) {
    err << "facesearch: error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace facesearch::cli
