#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>
#include <json.hpp>

namespace fs = std::filesystem;

namespace {

const fs::path configs = KAMFLOW_CONFIG_DIR;

int run(const std::string& args, const fs::path& err = {}) {
  std::string cmd = std::string(KAMFLOW_CLI) + " " + args + " > /dev/null";
  if (!err.empty()) cmd += " 2> " + err.string();
  const int s = std::system(cmd.c_str());
  return WIFEXITED(s) ? WEXITSTATUS(s) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("kamflow_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST(Cli, FreeSolveHasZeroCorrections) {
  const auto out = scratch("free");
  ASSERT_EQ(run("solve --config " + (configs / "free.json").string() + " --out " + out.string()), 0);
  const auto s = nlohmann::json::parse(slurp(out / "summary.json"));
  EXPECT_TRUE(s["all_converged"].get<bool>());
  EXPECT_EQ(s["branches"]["plus"]["deviation"].get<double>(), 0.0);
  EXPECT_EQ(s["branches"]["minus"]["c0"].get<double>(), 0.0);
  EXPECT_EQ(slurp(out / "residuals_plus.csv").rfind("# schema: kamflow.residuals/1\np0,iter,residual,ratio\n", 0), 0u);
  EXPECT_TRUE(fs::exists(out / "resolved_config.json"));
  EXPECT_TRUE(fs::exists(out / "corrections" / "minus_0001.json"));
}

TEST(Cli, ReferenceRatiosFromStepTwo) {
  const auto out = scratch("reference");
  std::ofstream(out / "cfg.json") << R"({"model": {"preset": "reference"}, "parameters": {"points": [[0.3], [-0.2]]}})";
  ASSERT_EQ(run("solve --config " + (out / "cfg.json").string() + " --out " + out.string()), 0);
  for (const char* b : {"plus", "minus"}) {
    std::ifstream f(out / (std::string("residuals_") + b + ".csv"));
    std::string line;
    std::getline(f, line);
    std::getline(f, line);
    int rows = 0;
    while (std::getline(f, line)) {
      std::stringstream ss(line);
      std::string p0, iter, res, ratio;
      std::getline(ss, p0, ',');
      std::getline(ss, iter, ',');
      std::getline(ss, res, ',');
      std::getline(ss, ratio, ',');
      ++rows;
      if (std::stoi(iter) >= 2) EXPECT_LE(std::stod(ratio), 0.5) << line;
      if (std::stoi(iter) == 0) EXPECT_TRUE(ratio.empty());
    }
    EXPECT_GE(rows, 4);
  }
  const auto s = nlohmann::json::parse(slurp(out / "summary.json"));
  EXPECT_GT(s["branches"]["plus"]["c0"].get<double>(), 0.0);
}

TEST(Cli, ResolvedConfigReproducesOutputs) {
  const auto a = scratch("echo_a"), b = scratch("echo_b");
  ASSERT_EQ(run("solve --config " + (configs / "free.json").string() + " --out " + a.string()), 0);
  ASSERT_EQ(run("solve --config " + (a / "resolved_config.json").string() + " --out " + b.string() + " --seed 77"), 0);
  EXPECT_EQ(slurp(a / "summary.json"), slurp(b / "summary.json"));
  EXPECT_EQ(slurp(a / "residuals_minus.csv"), slurp(b / "residuals_minus.csv"));
  EXPECT_EQ(slurp(a / "corrections" / "plus_0000.json"), slurp(b / "corrections" / "plus_0000.json"));
}

TEST(Cli, MalformedJsonExitsOneWithPosition) {
  const auto out = scratch("bad");
  std::ofstream(out / "bad.json") << "{\n  \"model\": {\"preset\": \"free\"},\n  \"numerics\": {\"K\": 4,}\n}\n";
  const int code = run("solve --config " + (out / "bad.json").string() + " --out " + out.string(), out / "err.txt");
  EXPECT_EQ(code, 1);
  EXPECT_NE(slurp(out / "err.txt").find("bad.json:3:23:"), std::string::npos) << slurp(out / "err.txt");
}

TEST(Cli, UnknownKeyExitsOne) {
  const auto out = scratch("unknown");
  std::ofstream(out / "cfg.json") << R"({"model": {"preset": "free"}, "numerics": {"Kk": 4}})";
  EXPECT_EQ(run("solve --config " + (out / "cfg.json").string() + " --out " + out.string(), out / "err.txt"), 1);
  EXPECT_NE(slurp(out / "err.txt").find("Kk"), std::string::npos);
}

TEST(Cli, UnperturbedGlueHasConstantMomentum) {
  const auto out = scratch("glue_free");
  ASSERT_EQ(run("glue --config " + (configs / "free.json").string() + " --out " + out.string()), 0);
  std::ifstream f(out / "orbit_0.csv");
  std::string line;
  std::getline(f, line);
  EXPECT_EQ(line, "# schema: kamflow.orbit_series/1");
  std::getline(f, line);
  EXPECT_EQ(line, "t,q,p,deviation_plus,deviation_minus");
  int rows = 0;
  while (std::getline(f, line)) {
    std::stringstream ss(line);
    std::string t, q, p;
    std::getline(ss, t, ',');
    std::getline(ss, q, ',');
    std::getline(ss, p, ',');
    EXPECT_EQ(p, "0.3");
    ++rows;
  }
  EXPECT_EQ(rows, 2 * 41 + 1);
  const auto o = nlohmann::json::parse(slurp(out / "orbit_0.json"));
  EXPECT_EQ(o["plus"]["omega"][0].get<double>(), 0.3);
  EXPECT_NE(slurp(out / "glue_summary.csv").find("slope_plus"), std::string::npos);
}

TEST(Cli, TargetOutsideHalfBallIsRejected) {
  const auto out = scratch("glue_reject");
  const int code = run("glue --config " + (configs / "free.json").string() + " --targets " +
                       (configs / "targets_outside.json").string() + " --out " + out.string());
  EXPECT_EQ(code, 2);
  const std::string rej = slurp(out / "rejects.csv");
  EXPECT_NE(rej.find("T^n × B_{1/2}"), std::string::npos);
  EXPECT_NE(rej.find("target,q,p,branch,margin,reason"), std::string::npos);
  EXPECT_TRUE(fs::exists(out / "orbit_0.json"));
  EXPECT_FALSE(fs::exists(out / "orbit_1.json"));
}

TEST(Cli, TailConstants) {
  const auto out = scratch("tails");
  ASSERT_EQ(run("tail-constants --out " + out.string()), 0);
  const auto j = nlohmann::json::parse(slurp(out / "tail_constants.json"));
  EXPECT_NEAR(j["rows"][0]["f"].get<double>(), 1.0, 0.02);
  EXPECT_NEAR(j["rows"][1]["f"].get<double>(), 0.5, 0.01);
}

TEST(Cli, ThreadsFlagDoesNotChangeOutputs) {
  const auto a = scratch("thr_a"), b = scratch("thr_b");
  std::ofstream(a / "cfg.json") << R"({"model": {"preset": "reference"}, "numerics": {"K": 8}, "parameters": {"spacing": 0.25}})";
  ASSERT_EQ(run("solve --threads 1 --config " + (a / "cfg.json").string() + " --out " + a.string()), 0);
  ASSERT_EQ(run("solve --threads 3 --config " + (a / "cfg.json").string() + " --out " + b.string()), 0);
  EXPECT_EQ(slurp(a / "summary.json"), slurp(b / "summary.json"));
  EXPECT_EQ(slurp(a / "residuals_plus.csv"), slurp(b / "residuals_plus.csv"));
}

TEST(Cli, MissingSubcommandOrConfigIsAnError) {
  EXPECT_EQ(run("", "/dev/null"), 1);
  EXPECT_EQ(run("solve --out /tmp/x", "/dev/null"), 1);
}
