#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "dragtraffic/dataio.hpp"
#include "dragtraffic/training.hpp"
#include "../support/models.hpp"

namespace dragtraffic {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / ("dragtraffic_cli_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }

  static RunResult run(const std::string& args) {
    const fs::path out = dir_ / "stdout.txt";
    const fs::path err = dir_ / "stderr.txt";
    const std::string cmd =
        std::string(DRAGTRAFFIC_CLI) + " " + args + " > " + out.string() + " 2> " + err.string();
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
  }

  static fs::path path(const std::string& name) { return dir_ / name; }

  // synth -> preprocess -> split -> stage 1 -> stage 2, once per suite.
  static void ensure_pipeline() {
    if (fs::exists(path("s2.ckpt"))) return;
    std::ofstream(path("train.json")) << json{{"train", {{"model", testing::tiny_config().to_json()},
                                                         {"batch_size", 8}, {"epochs", 1}, {"seed", 3}}}}
                                             .dump();
    ASSERT_EQ(run("synth --seed 5 --count 12 --out " + path("raw.jsonl").string()).code, 0);
    ASSERT_EQ(run("preprocess --in " + path("raw.jsonl").string() + " --out-dir " + path("pre").string()).code, 0);
    ASSERT_EQ(run("split --in " + path("pre/vehicle.jsonl").string() + " --seed 1 --ratios 0.5,0.25,0.25 --out-dir " +
                  path("split").string())
                  .code,
              0);
    const std::string common = " --config " + path("train.json").string() + " --data " +
                               path("split/train.jsonl").string();
    auto s1 = run("train --stage denoiser_pretrain --out " + path("s1.ckpt").string() + common);
    ASSERT_EQ(s1.code, 0) << s1.err;
    auto s2 = run("train --stage 2 --init " + path("s1.ckpt").string() + " --out " + path("s2.ckpt").string() + common);
    ASSERT_EQ(s2.code, 0) << s2.err;
  }

  static fs::path dir_;
};

fs::path CliTest::dir_;

TEST_F(CliTest, HelpListsSubcommands) {
  const RunResult r = run("--help");
  EXPECT_EQ(r.code, 0);
  for (const char* sub : {"synth", "preprocess", "split", "train", "evaluate", "generate", "serve", "inspect"}) {
    EXPECT_NE(r.out.find(sub), std::string::npos) << sub;
  }
}

TEST_F(CliTest, PipelineProducesCheckpointsWithStages) {
  ensure_pipeline();
  const ExpertModel m = ExpertModel::load(path("s2.ckpt"));
  EXPECT_EQ(m.config().encoder.hidden, testing::tiny_config().encoder.hidden);
  const json stages = m.metadata().at("stages");
  EXPECT_EQ(stages, json({"denoiser_pretrain", "initializer_finetune"}));
  EXPECT_TRUE(m.metadata().contains("last_train_config"));
}

TEST_F(CliTest, StageTwoWithoutInitFails) {
  ensure_pipeline();
  const RunResult r = run("train --stage 2 --data " + path("split/train.jsonl").string() + " --out " +
                          path("bad.ckpt").string());
  EXPECT_NE(r.code, 0);
  EXPECT_NE(r.err.find("--init"), std::string::npos) << r.err;
  EXPECT_FALSE(fs::exists(path("bad.ckpt")));
}

TEST_F(CliTest, EvaluateMatchesInProcessReport) {
  ensure_pipeline();
  const RunResult r = run("evaluate --checkpoint " + path("s2.ckpt").string() + " --data " +
                          path("split/val.jsonl").string() + " --seed 4 --conditions from_gt_endpoint --out " +
                          path("report.json").string());
  ASSERT_EQ(r.code, 0) << r.err;
  const json from_cli = json::parse(slurp(path("report.json")));

  const ExpertModel model = ExpertModel::load(path("s2.ckpt"));
  EvalOptions o;
  o.seed = 4;
  o.conditions = ConditionsPolicy::FromGtEndpoint;
  const std::vector<EvalReport> reports{evaluate(model, load_scenarios(path("split/val.jsonl")), o)};
  EXPECT_EQ(from_cli, merge_reports(reports));
}

TEST_F(CliTest, FlagsOverrideConfigOverrideDefaults) {
  std::ofstream(path("synth.json")) << json{{"synth", {{"count", 3}, {"seed", 9}}}}.dump();
  RunResult r = run("synth --config " + path("synth.json").string() + " --count 2 --out " + path("p.jsonl").string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(load_scenarios(path("p.jsonl")).size(), 2u);
  EXPECT_NE(r.err.find("\"seed\":9"), std::string::npos) << r.err;

  // Flat keys are accepted too.
  std::ofstream(path("flat.json")) << json{{"count", 4}}.dump();
  r = run("synth --config " + path("flat.json").string() + " --out " + path("q.jsonl").string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(load_scenarios(path("q.jsonl")).size(), 4u);
}

TEST_F(CliTest, InspectSummarisesScenarios) {
  ASSERT_EQ(run("synth --seed 2 --count 2 --out " + path("i.jsonl").string()).code, 0);
  const auto scenes = load_scenarios(path("i.jsonl"));
  const RunResult r = run("inspect --in " + path("i.jsonl").string() + " --id " + scenes[1].id);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find(scenes[1].id), std::string::npos);
  EXPECT_EQ(r.out.find(scenes[0].id + " "), std::string::npos);
}

TEST_F(CliTest, BadInputsExitNonZero) {
  EXPECT_NE(run("inspect --in " + path("missing.jsonl").string()).code, 0);
  EXPECT_NE(run("synth --count 3").code, 0);
  EXPECT_NE(run("nonsense").code, 0);
}

}  // namespace
}  // namespace dragtraffic
