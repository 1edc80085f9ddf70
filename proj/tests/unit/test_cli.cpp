#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "facesearch/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code = 0;
  std::string out;
  std::string err;
};

Result invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "facesearch");
  std::ostringstream out, err;
  const int code = facesearch::cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

json tiny_config_json(const fs::path& out_dir) {
  return json{{"schema_version", 1},
              {"output_dir", out_dir.string()},
              {"dataset",
               {{"n_classes", 8}, {"samples_per_class", 40}, {"feature_dim", 12}, {"embed_dim", 8}, {"seed", 4}}},
              {"heldout_classes", 4},
              {"pairs", {{"val_genuine", 50}, {"val_impostor", 200}, {"test_genuine", 60}, {"test_impostor", 300}}},
              {"base_arch", {{"base_depth", 1}, {"base_width", 16}, {"embed_dim", 8}}},
              {"full_budget", {{"mode", "full"}, {"epochs", 3}}},
              {"search", {{"T", 3}, {"B", 3}, {"K", 2}}},
              {"seed", 2}};
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    root_ = fs::temp_directory_path() / (std::string("facesearch_cli_") + info->name());
    fs::remove_all(root_);
    fs::create_directories(root_);
    config_ = root_ / "run.json";
    std::ofstream(config_) << tiny_config_json(root_ / "out").dump(2);
  }
  void TearDown() override { fs::remove_all(root_); }

  fs::path root_;
  fs::path config_;
};

}  // namespace

TEST_F(CliTest, MissingConfigFailsWithoutArtifacts) {
  const auto out = root_ / "never";
  const auto r = invoke({"search", "--config", (root_ / "missing.json").string(), "--out", out.string()});
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("facesearch: error:"), std::string::npos);
  EXPECT_FALSE(fs::exists(out));
  const auto g = invoke({"gen-data", "--config", (root_ / "missing.json").string(), "--out", out.string()});
  EXPECT_NE(g.code, 0);
  EXPECT_FALSE(fs::exists(out));
}

TEST_F(CliTest, UnknownFlagAndSubcommand) {
  EXPECT_NE(invoke({"search", "--bogus"}).code, 0);
  EXPECT_NE(invoke({"frobnicate"}).code, 0);
  EXPECT_NE(invoke({}).code, 0);
  EXPECT_NE(invoke({"train-one", "--budget", "medium"}).code, 0);
}

TEST_F(CliTest, SchemaMismatchIsRejected) {
  auto j = tiny_config_json(root_ / "out");
  j["schema_version"] = 7;
  std::ofstream(config_) << j.dump();
  const auto r = invoke({"gen-data", "--config", config_.string()});
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("schema_version"), std::string::npos);
  EXPECT_FALSE(fs::exists(root_ / "out"));
}

TEST_F(CliTest, AnalyzeSingleCombinationPrintsJson) {
  const auto r = invoke({"analyze", "--combination", "0.3,0.62,1.15,0.22,0,40,48,1.47,0.84"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = json::parse(r.out);
  EXPECT_NEAR(j.at("difficulty_data").get<double>(), 1.32, 1e-12);
  EXPECT_NEAR(j.at("difficulty_loss").get<double>(), 0.444, 1e-12);
  EXPECT_NE(invoke({"analyze", "--combination", "1,2,3"}).code, 0);
}

TEST_F(CliTest, GenDataAndClean) {
  const auto dir = root_ / "data";
  ASSERT_EQ(invoke({"gen-data", "--config", config_.string(), "--out", dir.string(), "--csv"}).code, 0);
  EXPECT_TRUE(fs::exists(dir / "dataset.fsds"));
  EXPECT_TRUE(fs::exists(dir / "dataset.csv"));
  EXPECT_EQ(read_json(dir / "gen_data.json").at("schema_version"), 1);

  const auto cleaned = root_ / "cleaned";
  const auto r = invoke({"clean", "--dataset", (dir / "dataset.fsds").string(), "--out", cleaned.string(),
                         "--tau-intra", "0.3", "--tau-inter", "0.9"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(cleaned / "cleaned.fsds"));
  const auto report = read_json(cleaned / "clean_report.json");
  EXPECT_EQ(report.at("schema_version"), 1);
}

TEST_F(CliTest, TrainOneProxy) {
  const auto dir = root_ / "one";
  const auto r = invoke({"train-one", "--config", config_.string(), "--out", dir.string(), "--combination",
                         "0.2,0.8,1,0.3,0,32,32,1,1", "--budget", "proxy", "--seed", "3"});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto j = read_json(dir / "train_one.json");
  EXPECT_GE(j.at("acc").get<double>(), 0.0);
  EXPECT_LE(j.at("acc").get<double>(), 1.0);
  EXPECT_TRUE(fs::exists(dir / "model.fsnw"));
  EXPECT_TRUE(fs::exists(dir / "train_log.csv"));
}

TEST_F(CliTest, SearchRetrainAnalyzeEval) {
  const auto run = root_ / "run";
  auto r = invoke({"search", "--config", config_.string(), "--out", run.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"manifest.json", "space.json", "search_log.csv", "timings.csv", "controller.fscp",
                        "search_result.json"}) {
    EXPECT_TRUE(fs::exists(run / f)) << f;
  }
  const auto result = read_json(run / "search_result.json");
  EXPECT_EQ(result.at("top_k").size(), 2u);

  // A second search into the same directory needs --resume or --overwrite.
  EXPECT_NE(invoke({"search", "--config", config_.string(), "--out", run.string()}).code, 0);
  const auto log_before = slurp(run / "search_log.csv");
  ASSERT_EQ(invoke({"search", "--resume", "--out", run.string()}).code, 0);
  EXPECT_EQ(slurp(run / "search_log.csv"), log_before);

  r = invoke({"retrain", "--run", run.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto report = read_json(run / "retrain_report.json");
  EXPECT_EQ(report.at("rows").size(), 2u);
  EXPECT_TRUE(report.contains("baseline"));
  EXPECT_TRUE(fs::exists(run / "models" / "rank_01.fsnw"));
  EXPECT_TRUE(fs::exists(run / "models" / "baseline.fsnw"));

  r = invoke({"analyze", "--run", run.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream csv(run / "difficulty.csv");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(csv, line)) ++lines;
  EXPECT_EQ(lines, 1u + 9u);

  r = invoke({"eval", "--run", run.string(), "--model", (run / "models" / "rank_01.fsnw").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto ev = read_json(run / "eval_result.json");
  EXPECT_EQ(ev.at("genuine_pairs"), 60);
  EXPECT_EQ(ev.at("impostor_pairs"), 300);
}

TEST_F(CliTest, ResumeAfterInterruptionMatchesFullRun) {
  const auto full = root_ / "full";
  ASSERT_EQ(invoke({"search", "--config", config_.string(), "--out", full.string()}).code, 0);

  // Stop after one epoch, then patch the manifest so it looks like a T=3 run that was killed.
  auto j = tiny_config_json(root_ / "out");
  j["search"]["T"] = 1;
  const auto short_cfg = root_ / "short.json";
  std::ofstream(short_cfg) << j.dump();
  const auto partial = root_ / "partial";
  ASSERT_EQ(invoke({"search", "--config", short_cfg.string(), "--out", partial.string()}).code, 0);
  auto manifest = read_json(partial / "manifest.json");
  manifest["config"]["search"]["T"] = 3;
  std::ofstream(partial / "manifest.json") << manifest.dump(2);

  const auto r = invoke({"search", "--config", config_.string(), "--out", partial.string(), "--resume"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(partial / "search_log.csv"), slurp(full / "search_log.csv"));
  EXPECT_EQ(slurp(partial / "controller.fscp"), slurp(full / "controller.fscp"));

  // A different config is refused.
  j["search"]["T"] = 3;
  j["seed"] = 9;
  std::ofstream(short_cfg) << j.dump();
  EXPECT_NE(invoke({"search", "--config", short_cfg.string(), "--out", partial.string(), "--resume"}).code, 0);
}
