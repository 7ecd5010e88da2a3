#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / ("cgpo_cli_test_" + std::to_string(::getpid()));

struct Result {
  int code = -1;
  std::string output;
};

Result lab(const std::string& args) {
  const fs::path log = kRoot / "last.log";
  const std::string cmd = std::string(CGPO_LAB_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  r.output = ss.str();
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path write_file(const std::string& name, const std::string& text) {
  const fs::path p = kRoot / name;
  std::ofstream(p, std::ios::binary) << text;
  return p;
}

const char* kTiny = R"({
  "env": "pointmass",
  "train": {"total_steps": 200, "warmup_steps": 80, "batch_size": 32, "eval_interval": 100, "eval_episodes": 2},
  "diffusion": {"hidden": [8]},
  "critic": {"hidden": [8]},
  "value": {"hidden": [4]},
  "analysis": {"contrast_candidates": 8, "contrast_states": 8}
})";

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    fs::create_directories(kRoot);
    write_file("tiny.json", kTiny);
  }
  static void TearDownTestSuite() { fs::remove_all(kRoot); }
  static std::string config() { return (kRoot / "tiny.json").string(); }
  static std::string out(const std::string& name) { return (kRoot / name).string(); }
};

}  // namespace

TEST_F(Cli, TrainTwiceGivesIdenticalMetrics) {
  ASSERT_EQ(lab("train --config " + config() + " --seed 7 --out " + out("a")).code, 0);
  ASSERT_EQ(lab("train --config " + config() + " --seed 7 --out " + out("b")).code, 0);
  const std::string a = slurp(kRoot / "a" / "metrics.csv");
  EXPECT_EQ(a, slurp(kRoot / "b" / "metrics.csv"));
  EXPECT_EQ(std::count(a.begin(), a.end(), '\n'), 3);
  EXPECT_TRUE(fs::exists(kRoot / "a" / "checkpoints" / "final.json"));
  EXPECT_TRUE(fs::exists(kRoot / "a" / "checkpoints" / "step_100.json"));
  EXPECT_TRUE(fs::exists(kRoot / "a" / "timing.csv"));
}

TEST_F(Cli, EchoedConfigReproducesTheRun) {
  ASSERT_EQ(lab("train --config " + config() + " --seed 9 --out " + out("orig")).code, 0);
  ASSERT_EQ(lab("train --config " + (kRoot / "orig" / "config.json").string() + " --out " + out("again")).code, 0);
  EXPECT_EQ(slurp(kRoot / "orig" / "metrics.csv"), slurp(kRoot / "again" / "metrics.csv"));
  const auto echo = nlohmann::json::parse(slurp(kRoot / "orig" / "config.json"));
  EXPECT_EQ(echo["seed"], 9);
  EXPECT_EQ(echo["guidance"]["G"], 10);
}

TEST_F(Cli, ConfigErrorsExitTwoWithDiagnostics) {
  const fs::path broken = write_file("broken.json", "{\n  \"seed\": 1,\n  \"train\": {\n}}\n,");
  Result r = lab("train --config " + broken.string() + " --out " + out("x"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("line"), std::string::npos) << r.output;

  r = lab("train --config " + config() + " --seed 1 --set guidance.rhoo=0.5 --out " + out("x"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("guidance.rhoo"), std::string::npos) << r.output;

  r = lab("train --config " + config() + " --out " + out("x"));
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("seed"), std::string::npos) << r.output;

  EXPECT_EQ(lab("frobnicate").code, 2);
  EXPECT_EQ(lab("train --config " + (kRoot / "missing.json").string() + " --seed 1").code, 2);
}

TEST_F(Cli, NumericAbortExitsThreeWithEnvStep) {
  const Result r = lab("train --config " + config() + " --seed 1 --set critic.lr=1e300 --out " + out("nan"));
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.output.find("env_step"), std::string::npos) << r.output;
}

TEST_F(Cli, AblateEmitsFiveVariantDirectories) {
  ASSERT_EQ(lab("ablate --config " + config() + " --seed 2 --out " + out("ablate")).code, 0);
  std::vector<std::string> dirs;
  for (const auto& e : fs::directory_iterator(kRoot / "ablate")) {
    if (e.is_directory()) dirs.push_back(e.path().filename().string());
  }
  std::sort(dirs.begin(), dirs.end());
  EXPECT_EQ(dirs, (std::vector<std::string>{"cgpo_naive_guidance", "cgpo_unguided", "no_ddqn", "no_truncation",
                                            "no_valuenet"}));
  for (const auto& d : dirs) EXPECT_TRUE(fs::exists(kRoot / "ablate" / d / "metrics.csv")) << d;
  const std::string summary = slurp(kRoot / "ablate" / "ablate.csv");
  EXPECT_EQ(std::count(summary.begin(), summary.end(), '\n'), 6);
}

TEST_F(Cli, SweepRunsTheCartesianProduct) {
  const Result r = lab("sweep --config " + config() + " --seed 3 --set sweep.guidance.rho=[0.35,0.65,0.95] --out " +
                       out("sweep"));
  ASSERT_EQ(r.code, 0) << r.output;
  for (const char* d : {"rho-0.35", "rho-0.65", "rho-0.95"}) {
    ASSERT_TRUE(fs::exists(kRoot / "sweep" / d / "config.json")) << d;
  }
  const auto echo = nlohmann::json::parse(slurp(kRoot / "sweep" / "rho-0.65" / "config.json"));
  EXPECT_EQ(echo["guidance"]["rho"], 0.65);
  const std::string summary = slurp(kRoot / "sweep" / "sweep.csv");
  EXPECT_EQ(std::count(summary.begin(), summary.end(), '\n'), 4);
  EXPECT_EQ(lab("sweep --config " + config() + " --seed 3 --out " + out("nosweep")).code, 2);
}

TEST_F(Cli, EvalScoresACheckpoint) {
  ASSERT_EQ(lab("train --config " + config() + " --seed 4 --out " + out("for_eval")).code, 0);
  const std::string ck = (kRoot / "for_eval" / "checkpoints" / "final.json").string();
  const Result a = lab("eval --checkpoint " + ck + " --episodes 3 --out " + out("eval_a"));
  ASSERT_EQ(a.code, 0) << a.output;
  const Result b = lab("eval --checkpoint " + ck + " --episodes 3 --out " + out("eval_b"));
  EXPECT_EQ(a.output, b.output);
  const auto j = nlohmann::json::parse(slurp(kRoot / "eval_a" / "eval.json"));
  EXPECT_EQ(j["episodes"], 3);
  EXPECT_LE(j["mean_return"].get<double>(), 0.0);
  EXPECT_EQ(lab("eval --checkpoint " + ck + " --episodes 0 --out " + out("eval_c")).code, 2);
}

TEST_F(Cli, ContrastWritesAReport) {
  const Result r = lab("contrast --config " + config() + " --seed 5 --out " + out("contrast"));
  ASSERT_EQ(r.code, 0) << r.output;
  const std::string report = slurp(kRoot / "contrast" / "delta_q_report.csv");
  EXPECT_EQ(report.substr(0, report.find('\n')), "env_step,delta_q,guided_gap,states,candidates");
  EXPECT_EQ(std::count(report.begin(), report.end(), '\n'), 3);
  const Result again = lab("contrast --config " + config() + " --seed 5 --sampling-run " + out("contrast/qvpo_sampling") +
                           " --guided-run " + out("contrast/cgpo") + " --out " + out("contrast_replay"));
  ASSERT_EQ(again.code, 0) << again.output;
  EXPECT_EQ(slurp(kRoot / "contrast_replay" / "delta_q_report.csv"), report);
}
