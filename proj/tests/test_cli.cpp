#include <gtest/gtest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code;
  std::string err;
};

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("qrcate_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  RunResult run(const std::string& args) const {
    const fs::path err = dir_ / "stderr.txt";
    const std::string cmd = std::string(QRCATE_CLI_PATH) + " " + args + " > " + (dir_ / "stdout.txt").string() +
                            " 2> " + err.string();
    const int status = std::system(cmd.c_str());
    std::ifstream in(err);
    std::stringstream text;
    text << in.rdbuf();
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, text.str()};
  }

  std::string read(const fs::path& p) const {
    std::ifstream in(p);
    std::stringstream text;
    text << in.rdbuf();
    return text.str();
  }

  std::string last_line(const std::string& text) const {
    std::string t = text;
    while (!t.empty() && t.back() == '\n') t.pop_back();
    return t.substr(t.rfind('\n') == std::string::npos ? 0 : t.rfind('\n') + 1);
  }

  fs::path dir_;
};

}  // namespace

TEST_F(Cli, SimulateRmseHappyPath) {
  const auto out = dir_ / "out";
  const RunResult r = run("simulate-rmse --scenario aligned --n1 250 --n0 1000 --reps 2 --seed 7 --rounds 20 "
                          "--output-dir " + out.string());
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string csv = read(out / "rmse_results.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "learner,scenario,n1,n0,mean_rmse,se,R,failures");
  EXPECT_NE(csv.find("qr,aligned,250,1000,"), std::string::npos);
  EXPECT_TRUE(fs::exists(out / "resolved_config.yaml"));
}

TEST_F(Cli, ResolvedConfigReproducesRun) {
  const auto a = dir_ / "a";
  const auto b = dir_ / "b";
  ASSERT_EQ(run("simulate-rmse --n1 120 --n0 60 --reps 2 --eval-n 100 --rounds 10 --seed 3 --output-dir " +
                a.string()).code, 0);
  ASSERT_EQ(run("simulate-rmse --config " + (a / "resolved_config.yaml").string() + " --output-dir " + b.string())
                .code, 0);
  EXPECT_EQ(read(a / "rmse_results.csv"), read(b / "rmse_results.csv"));
}

TEST_F(Cli, FlagsOverrideConfig) {
  std::ofstream(dir_ / "c.yaml") << "command: simulate-rmse\nreps: 5\nn1: 120\nn0: [60]\neval-n: 100\nrounds: 5\n";
  const auto out = dir_ / "o";
  ASSERT_EQ(run("simulate-rmse --config " + (dir_ / "c.yaml").string() + " --reps 1 --output-dir " + out.string()).code,
            0);
  const std::string snap = read(out / "resolved_config.yaml");
  EXPECT_NE(snap.find("reps: 1\n"), std::string::npos);
  EXPECT_NE(snap.find("n1: 120\n"), std::string::npos);
}

TEST_F(Cli, UnknownFlagIsUsageError) {
  const RunResult r = run("simulate-rmse --no-such-flag");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("Usage"), std::string::npos);
  EXPECT_EQ(last_line(r.err).rfind("qrcate: error code=2 kind=usage", 0), 0u) << r.err;
}

TEST_F(Cli, UnknownConfigKeyIsRejected) {
  std::ofstream(dir_ / "bad.yaml") << "reps: 3\nnot_a_setting: 1\n";
  const RunResult r = run("simulate-rmse --config " + (dir_ / "bad.yaml").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("not_a_setting"), std::string::npos);
}

TEST_F(Cli, BadValueIsConfigError) {
  EXPECT_EQ(run("simulate-rmse --scenario sideways").code, 2);
  EXPECT_EQ(run("fit --learner nope --trial x.csv").code, 2);
}

TEST_F(Cli, MissingOutcomeColumnIsNamed) {
  std::ofstream(dir_ / "trial.csv") << "x1,a\n0.1,1\n0.2,0\n";
  const RunResult r = run("fit --learner qr --trial " + (dir_ / "trial.csv").string() + " --output-dir " +
                          (dir_ / "o").string());
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("column=y"), std::string::npos) << r.err;
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1);
}

TEST_F(Cli, MissingInputFile) {
  const RunResult r = run("transport-test --input " + (dir_ / "absent.csv").string());
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("kind=missing_file"), std::string::npos);
}

TEST_F(Cli, FitWritesPredictions) {
  {
    std::ofstream trial(dir_ / "trial.csv");
    std::ofstream external(dir_ / "external.csv");
    trial << "x1,x2,a,y\n";
    external << "x1,x2,a,y\n";
    for (int i = 0; i < 120; ++i) {
      const double x1 = (i % 17) / 8.0 - 1.0;
      const double x2 = (i % 5) / 2.0 - 1.0;
      const int a = (i * 7) % 3 == 0 ? 1 : 0;
      trial << x1 << ',' << x2 << ',' << a << ',' << x1 + a * x2 + 0.01 * (i % 3) << '\n';
      external << x2 << ',' << x1 << ',' << 1 - a << ',' << x2 + (1 - a) * x1 << '\n';
    }
  }
  const auto out = dir_ / "o";
  const RunResult r = run("fit --learner combined --stage1 linear --trial " + (dir_ / "trial.csv").string() +
                          " --external " + (dir_ / "external.csv").string() + " --output-dir " + out.string());
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string csv = read(out / "predictions.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "row,tau_hat");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 121);
  EXPECT_NE(read(out / "fit_summary.json").find("\"lambda\""), std::string::npos);
}

TEST_F(Cli, TransportTestOnShippedFixture) {
  const auto out = dir_ / "o";
  const RunResult r = run("transport-test --star-input " + std::string(QRCATE_DATA_DIR) +
                          "/star_synthetic.csv --output-dir " + out.string());
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string json = read(out / "transport_test.json");
  EXPECT_NE(json.find("\"p_value\""), std::string::npos);
  EXPECT_NE(json.find("\"method\": \"transportability\""), std::string::npos);
}

TEST_F(Cli, StarEvalRequiresInput) {
  EXPECT_EQ(run("star-eval").code, 2);
  EXPECT_EQ(run("star-eval --input " + (dir_ / "none.csv").string()).code, 3);
}

TEST_F(Cli, OutputDirFromEnvironment) {
  const auto out = dir_ / "env";
  const std::string cmd = "QRCATE_OUTPUT_DIR=" + out.string() + " " + std::string(QRCATE_CLI_PATH) +
                          " star-prep --synthetic --synth-rural 60 --synth-urban 30 > /dev/null";
  ASSERT_EQ(std::system(cmd.c_str()), 0);
  EXPECT_TRUE(fs::exists(out / "star_trial.csv"));
  EXPECT_TRUE(fs::exists(out / "star_external.csv"));
  EXPECT_TRUE(fs::exists(out / "star_raw.csv"));
}
