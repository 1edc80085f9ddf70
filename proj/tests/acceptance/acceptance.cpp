// One PASS/FAIL line per criterion. Exit status is nonzero if any fails.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "facesearch/cleaner.hpp"
#include "facesearch/pipeline.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace facesearch;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

double max_abs(const Matrix& a, const Matrix& b) { return (a - b).cwiseAbs().maxCoeff(); }

// 1. Margin loss with (1, 0, 0, s, s) against plain softmax CE.
Outcome loss_reduction() {
  std::mt19937_64 rng(1001);
  std::uniform_int_distribution<int> bi(1, 8), ki(2, 10), di(2, 16);
  std::uniform_real_distribution<double> su(1.0, 64.0);
  double worst = 0.0;
  for (int f = 0; f < 100; ++f) {
    const int b = bi(rng), k = ki(rng), d = di(rng);
    const double s = su(rng);
    const Matrix x = fixture::gaussian(rng, b, d, 3.0);
    const Matrix w = fixture::gaussian(rng, k, d, 0.5);
    const auto y = fixture::labels(rng, b, k);
    const LossParams p{1.0, 0.0, 0.0, s, s};
    const auto ref = oracle::plain_ce(x, y, w, s);
    const auto fw = loss_forward(x, y, w, p);
    const auto bw = loss_backward(x, y, w, p);
    worst = std::max({worst, std::abs(fw.loss - ref.loss), std::abs(bw.loss - ref.loss), max_abs(bw.grad_x, ref.gx),
                      max_abs(bw.grad_w, ref.gw)});
    for (int i = 0; i < b; ++i) {
      for (int c = 0; c < k; ++c) worst = std::max(worst, std::abs(fw.logits(i, c) - s * oracle::cosine(x, i, w, c)));
    }
  }
  return {worst < 1e-10, fmt("max abs diff %.2e over 100 fixtures", worst)};
}

Matrix from_table(const oracle::Table& t) {
  Matrix m(static_cast<Eigen::Index>(t.size()), static_cast<Eigen::Index>(t[0].size()));
  for (std::size_t r = 0; r < t.size(); ++r) {
    for (std::size_t c = 0; c < t[r].size(); ++c) m(r, c) = t[r][c];
  }
  return m;
}

// 2. backbone followed by the margin loss, against central differences.
// Central differences at h = 1e-6 carry ~eps*|L|/h ≈ 1e-9 of round-off, so
// entries below the floor are compared on that absolute scale.
Outcome gradient_oracle() {
  constexpr double kFloor = 1e-4;
  std::mt19937_64 rng(1002);
  std::uniform_int_distribution<int> bi(1, 8), ki(2, 6), di(2, 16), ii(2, 12), hi(2, 12), li(1, 3);
  std::uniform_real_distribution<double> m1(0.9, 1.2), m2(0.0, 0.3), m3(0.0, 0.2), sc(4.0, 32.0);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const int b = bi(rng), k = ki(rng), d = di(rng);
    const BaseArch base{static_cast<std::size_t>(ii(rng)), static_cast<std::size_t>(li(rng)),
                        static_cast<std::size_t>(hi(rng)), static_cast<std::size_t>(d)};
    auto net = instantiate(base, 1.0, 1.0, 500 + trial);
    for (auto& layer : net.layers) layer.bias = fixture::gaussian(rng, 1, layer.bias.size(), 0.1);
    const Matrix x = fixture::gaussian(rng, b, static_cast<Eigen::Index>(base.input_dim));
    const Matrix w = fixture::gaussian(rng, k, d);
    const auto y = fixture::labels(rng, b, k);
    const LossParams p{m1(rng), m2(rng), m3(rng), sc(rng), sc(rng)};

    const auto composite = [&](const Network& n, const Matrix& cls) {
      return oracle::margin_loss(from_table(oracle::mlp_forward(n, oracle::to_table(x))), y, cls, p);
    };
    ActivationCache cache;
    const Matrix emb = forward(net, x, &cache);
    const auto lg = loss_backward(emb, y, w, p);
    const auto grads = backward(net, cache, lg.grad_x);

    const auto gw = oracle::numeric_gradient([&](const Matrix& m) { return composite(net, m); }, w);
    worst = std::max(worst, oracle::max_rel_error(lg.grad_w, gw, kFloor));
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      const auto nw = oracle::numeric_gradient(
          [&](const Matrix& m) {
            auto probe = net;
            probe.layers[l].weight = m;
            return composite(probe, w);
          },
          net.layers[l].weight);
      worst = std::max(worst, oracle::max_rel_error(grads.layers[l].weight, nw, kFloor));
      const auto nb = oracle::numeric_gradient(
          [&](const Matrix& m) {
            auto probe = net;
            probe.layers[l].bias = m.row(0);
            return composite(probe, w);
          },
          Matrix(net.layers[l].bias));
      worst = std::max(worst, oracle::max_rel_error(grads.layers[l].bias, nb, kFloor));
    }
  }
  return {worst < 1e-4, fmt("max rel error %.2e over 20 instances (denominator floor 1e-4)", worst)};
}

// 3. clean() against the brute-force filter and merge.
Outcome cleaning_oracle() {
  const std::array<std::pair<double, double>, 5> settings = {
      {{0.0, 0.6}, {0.3, 0.9}, {0.5, 0.7}, {0.8, 0.45}, {1.0, 1.0}}};
  std::mt19937_64 rng(1003);
  std::uniform_int_distribution<int> ci(3, 10), ni(6, 20), di(4, 16);
  std::uniform_real_distribution<double> spread(0.1, 0.6);
  std::size_t compared = 0, mismatched = 0, degenerate = 0;
  for (int dsi = 0; dsi < 50; ++dsi) {
    DatasetSpec spec = fixture::small_spec(2000 + dsi);
    spec.n_classes = ci(rng);
    spec.samples_per_class = ni(rng);
    spec.embed_dim = di(rng);
    spec.feature_dim = spec.embed_dim;
    spec.intra_spread = spread(rng);
    const auto ds = generate_dataset(spec);
    for (const auto& [ti, te] : settings) {
      ++compared;
      const auto expected = oracle::clean(ds.clean_embeddings, ds.labels, ds.n_classes, ti, te);
      try {
        const auto [out, report] = clean(ds, {ti, te, false});
        const std::set<std::size_t> removed(report.removed_indices.begin(), report.removed_indices.end());
        if (removed != expected.removed || report.merge_map != expected.group_of) ++mismatched;
      } catch (const DegenerateDataset&) {
        // Only acceptable if the brute force also leaves fewer than two classes.
        ++degenerate;
        std::set<std::uint32_t> alive;
        for (std::size_t i = 0; i < ds.size(); ++i) {
          if (!expected.removed.count(i)) alive.insert(expected.group_of[ds.labels[i]]);
        }
        if (alive.size() >= 2) ++mismatched;
      }
    }
  }
  return {mismatched == 0, fmt("%.0f/%.0f settings identical (%.0f degenerate)", double(compared - mismatched),
                               double(compared), double(degenerate))};
}

// 4. Some threshold pair finds >= 90% of the outliers at >= 80% precision.
Outcome cleaning_efficacy() {
  DatasetSpec spec;
  spec.n_classes = 20;
  spec.samples_per_class = 50;
  spec.feature_dim = 16;
  spec.embed_dim = 16;
  spec.intra_spread = 0.1;
  spec.outlier_rate = 0.1;
  spec.flip_rate = 0.05;
  spec.seed = 3;
  const auto ds = generate_dataset(spec);
  const auto inter = default_space().grid(1).values;
  double best_recall = 0.0, best_precision = 0.0, best_ti = 0.0, best_te = 0.0;
  bool found = false;
  for (int q = 0; q <= 20; ++q) {
    const double ti = q * 0.05;
    for (double te : inter) {
      const auto [out, r] = clean(ds, {ti, te, false});
      const bool ok = r.outlier_recall >= 0.9 && r.noise_precision >= 0.8;
      if ((ok && !found) || (ok == found && r.outlier_recall > best_recall)) {
        found = found || ok;
        best_recall = r.outlier_recall;
        best_precision = r.noise_precision;
        best_ti = ti;
        best_te = te;
      }
    }
  }
  return {found, fmt("best tau_intra %.2f tau_inter %.2f: recall %.3f precision %.3f", best_ti, best_te, best_recall,
                     best_precision)};
}

// 5. tar_at_far against a brute-force threshold walk, plus monotonicity.
Outcome tar_oracle() {
  std::mt19937_64 rng(1005);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_int_distribution<int> coarse(0, 25), gi(5, 300), ii(10, 2000);
  const std::vector<double> fars = {1e-4, 1e-3, 1e-2, 0.05, 0.1, 0.3, 0.5, 0.9};
  std::size_t mismatches = 0, non_monotone = 0;
  for (int f = 0; f < 100; ++f) {
    std::vector<double> g(gi(rng)), im(ii(rng));
    const bool ties = f % 3 == 0;
    for (auto& v : g) v = ties ? coarse(rng) / 10.0 : n(rng) + 1.0;
    for (auto& v : im) v = ties ? coarse(rng) / 10.0 - 0.6 : n(rng);
    double previous = -1.0;
    for (double far : fars) {
      const double got = tar_at_far(g, im, far);
      if (got != oracle::tar_at_far(g, im, far)) ++mismatches;
      if (got < previous) ++non_monotone;
      previous = got;
    }
  }
  return {mismatches == 0 && non_monotone == 0,
          fmt("%.0f mismatches, %.0f monotonicity violations", double(mismatches), double(non_monotone))};
}

// 6. Reward unit cases and cost monotonicity.
Outcome reward_properties() {
  std::size_t failures = 0;
  PpoConfig cfg;
  for (double target : {1.0, 384.0, 5120.0, 1e9}) {
    cfg.target_cost = target;
    for (double acc : {0.0, 0.123456789, 0.5, 0.9, 1.0}) {
      if (reward(acc, target, cfg) != acc) ++failures;
    }
  }
  cfg.target_cost = 5120.0;
  std::size_t points = 0;
  for (int a = 1; a <= 10; ++a) {
    const double acc = a / 10.0;
    double previous = std::numeric_limits<double>::infinity();
    for (int c = 0; c < 100; ++c) {
      const double cost = 100.0 * std::pow(1.08, c);
      const double r = reward(acc, cost, cfg);
      if (!(r < previous)) ++failures;
      previous = r;
      ++points;
    }
  }
  return {failures == 0, fmt("%.0f failures, %.0f grid points", double(failures), double(points))};
}

SearchSpace two_value_space() {
  std::vector<ParameterGrid> grids;
  const std::vector<std::vector<double>> values = {{0.1, 0.3}, {0.5, 0.7}, {1.0, 1.2}, {0.0, 0.3}, {0.0, 0.1},
                                                   {32, 64},   {32, 64},   {1.0, 1.5}, {1.0, 1.5}};
  for (std::size_t i = 0; i < kNumTokens; ++i) grids.push_back({std::string(kParameterNames[i]), values[i]});
  return SearchSpace(std::move(grids));
}

// Batches until the target reaches probability 0.9, or 0 if never within 300.
std::size_t batches_to_converge(const std::vector<std::size_t>& heads, std::uint64_t seed, bool partial_credit) {
  const PpoConfig cfg;
  auto agent = make_agent(heads, cfg, seed);
  std::vector<std::size_t> target(heads.size());
  for (std::size_t i = 0; i < heads.size(); ++i) target[i] = (i * 7 + seed) % heads[i];
  for (std::size_t it = 0; it < 300; ++it) {
    auto batch = sample_batch(agent.policy, 8, derive_seed(seed, it));
    for (auto& t : batch) {
      std::size_t matched = 0;
      for (std::size_t i = 0; i < heads.size(); ++i) matched += t.tokens[i] == target[i];
      t.reward = partial_credit ? static_cast<double>(matched) / static_cast<double>(heads.size())
                                : (matched == heads.size() ? 1.0 : 0.1);
    }
    ppo_update(agent, batch, cfg);
    if (sequence_probability(agent.policy, target) > 0.9) return it + 1;
  }
  return 0;
}

// 7. Policy converges onto a hidden target combination.
Outcome controller_convergence() {
  std::string detail;
  bool pass = true;
  const auto small = two_value_space().cardinalities();
  const auto full = default_space().cardinalities();
  for (const auto& [name, heads, partial] :
       {std::tuple{"exact-match 2^9 space", small, false}, std::tuple{"per-token default space", full, true}}) {
    detail += std::string(detail.empty() ? "" : "; ") + name + ":";
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      const auto n = batches_to_converge(heads, seed, partial);
      pass = pass && n > 0;
      detail += n > 0 ? " " + std::to_string(n) : " >300";
    }
  }
  return {pass, detail + " batches"};
}

// 8. Desk-scale search beats its own start and the fixed baseline.
Outcome end_to_end() {
  std::size_t wins = 0;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    auto cfg = RunConfig::desk_default();
    cfg.seed = seed;
    cfg.dataset.seed = seed;
    const auto data = prepare_data(cfg);
    PpoConfig ppo = cfg.ppo;
    ppo.target_cost = static_cast<double>(target_cost(data.base));
    const auto space = default_space();
    auto agent = make_agent(space.cardinalities(), ppo, derive_seed(cfg.seed, 21));
    SearchOptions opts;
    opts.epochs = cfg.epochs;
    opts.batch = cfg.batch;
    opts.seed = cfg.seed;
    opts.threads = default_threads();
    const auto log = run_search(agent, space, ppo, opts, make_proxy_evaluator(data, cfg));
    const auto report = retrain_topk(log, cfg.top_k, data, cfg, default_threads());
    const auto base = train_and_test(baseline_combination(), data, cfg, derive_seed(cfg.seed, 0x7e7, 0xba5e));

    const double init = log.initial_window_mean(10), fin = log.final_window_mean(10);
    const double best = report.best() ? report.best()->test_acc : 0.0;
    const bool ok = fin > init && best >= base.test_acc + 0.01;
    wins += ok;
    const auto line = fmt("seed %.0f: window %.4f -> %.4f, ", double(seed), init, fin) +
                      fmt("top-1 %.4f vs baseline %.4f", best, base.test_acc) + (ok ? "" : " (miss)");
    detail += (seed > 1 ? "; " : "") + line;
    std::cout << "  criterion 8 " << line << std::endl;
  }
  return {wins >= 2, fmt("%.0f/3 seeds; ", double(wins)) + detail};
}

std::string capture(const std::string& cmd, int* status) {
  std::string out;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) {
    *status = -1;
    return out;
  }
  char buf[4096];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, p)) out.append(buf, n);
  *status = ::pclose(p);
  return out;
}

std::string quoted(const fs::path& p) { return "'" + p.string() + "'"; }

// 9. `analyze` on the first published optimum.
Outcome difficulty_formulas() {
  int status = 0;
  const auto out = capture(std::string("'") + FACESEARCH_CLI_PATH +
                               "' analyze --combination 0.3,0.62,1.15,0.22,0,40,48,1.47,0.84",
                           &status);
  if (status != 0) return {false, "analyze exited with status " + std::to_string(status)};
  const auto j = json::parse(out);
  const double dd = j.at("difficulty_data").get<double>(), dl = j.at("difficulty_loss").get<double>();
  const bool ok = std::abs(dd - 1.32) <= 1e-12 && std::abs(dl - 0.444) <= 1e-12;
  return {ok, fmt("difficulty_data %.15g, difficulty_loss %.15g", dd, dl)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// 10. Two CLI searches with different thread counts write the same log.
Outcome determinism() {
  const auto root = fs::temp_directory_path() / ("facesearch_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(root);
  fs::create_directories(root);
  const json cfg = {{"schema_version", 1},
                    {"dataset", {{"n_classes", 12}, {"samples_per_class", 40}, {"seed", 7}}},
                    {"heldout_classes", 6},
                    {"pairs", {{"val_genuine", 100}, {"val_impostor", 500}, {"test_genuine", 100},
                               {"test_impostor", 500}}},
                    {"search", {{"T", 6}, {"B", 8}, {"K", 4}}},
                    {"seed", 11}};
  std::ofstream(root / "run.json") << cfg.dump(2);
  std::vector<std::string> logs;
  for (const char* threads : {"1", "4"}) {
    const auto out = root / (std::string("threads") + threads);
    int status = 0;
    capture(std::string("FACESEARCH_THREADS=") + threads + " '" + FACESEARCH_CLI_PATH + "' search --config " +
                quoted(root / "run.json") + " --out " + quoted(out) + " 2>&1",
            &status);
    if (status != 0) {
      fs::remove_all(root);
      return {false, std::string("search failed with FACESEARCH_THREADS=") + threads};
    }
    logs.push_back(slurp(out / "search_log.csv"));
  }
  fs::remove_all(root);
  const bool same = !logs[0].empty() && logs[0] == logs[1];
  return {same, fmt("%.0f-byte logs ", double(logs[0].size())) + (same ? "identical" : "differ") +
                    " for FACESEARCH_THREADS 1 and 4"};
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;  // 0 = no runtime bound
  std::function<Outcome()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "loss reduces to softmax CE", 1.0, loss_reduction},
      {2, "backbone+loss gradient vs finite differences", 10.0, gradient_oracle},
      {3, "cleaning matches brute force", 30.0, cleaning_oracle},
      {4, "cleaning finds outliers", 60.0, cleaning_efficacy},
      {5, "TAR@FAR matches brute force", 5.0, tar_oracle},
      {6, "reward properties", 1.0, reward_properties},
      {7, "controller converges", 300.0, controller_convergence},
      {8, "end-to-end search improvement", 3 * 3600.0, end_to_end},
      {9, "difficulty formulas via CLI", 1.0, difficulty_formulas},
      {10, "search determinism across thread counts", 0.0, determinism},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = c.budget_s <= 0.0 || secs < c.budget_s;
    const bool pass = o.pass && in_time;
    failed += !pass;
    std::cout << "criterion " << c.id << " " << (pass ? "PASS" : "FAIL") << " " << c.name << ": " << o.detail
              << fmt(" [%.2fs", secs) << (c.budget_s > 0 ? fmt(" of %.0fs]", c.budget_s) : std::string("]"))
              << (in_time ? "" : " over budget") << std::endl;
  }
  std::cout << (failed ? "FAILED " : "ALL PASSED ") << 10 - failed << "/10" << std::endl;
  return failed ? 1 : 0;
}
