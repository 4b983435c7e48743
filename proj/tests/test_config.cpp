#include <gtest/gtest.h>

#include "kamflow/config.hpp"

using namespace kamflow;

namespace {

// H gradients agree at a spread of points
void expect_same_model(const HamiltonianModel& a, const HamiltonianModel& b) {
  ASSERT_EQ(a.n, b.n);
  EXPECT_EQ(a.near_integrable(), b.near_integrable());
  EXPECT_EQ(a.holes.size(), b.holes.size());
  EXPECT_EQ(a.eps, b.eps);
  EXPECT_EQ(a.l, b.l);
  for (double q : {0.0, 0.13, 0.71})
    for (double p : {-0.6, -0.1, 0.29, 0.31, 0.8})
      for (double t : {-3.0, 0.0, 0.5, 40.0}) {
        const double qq[] = {q};
        Eigen::VectorXd qa, pa, qb, pb;
        a.gradient(qq, Eigen::VectorXd::Constant(1, p), t, qa, pa);
        b.gradient(qq, Eigen::VectorXd::Constant(1, p), t, qb, pb);
        EXPECT_NEAR(qa[0], qb[0], 1e-15) << q << " " << p << " " << t;
        EXPECT_NEAR(pa[0], pb[0], 1e-15) << q << " " << p << " " << t;
      }
}

std::string error_of(const std::string& text) {
  try {
    parse_config(text, "cfg");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Config, PresetsMatchFactories) {
  expect_same_model(*parse_config(R"({"model": {"preset": "reference", "eps": 0.002}})").model, reference_model(0.002));
  expect_same_model(*parse_config(R"({"model": {"preset": "saturating"}})").model, saturating_model(1e-3));
  expect_same_model(*parse_config(R"({"model": {"preset": "holed"}})").model, holed_model(1e-3));
  HamiltonianModel f = reference_model(1e-3);
  f.modes.clear();
  expect_same_model(*parse_config(R"({"model": {"preset": "free"}})").model, f);
}

TEST(Config, ModeFollowsTheModel) {
  EXPECT_EQ(parse_config(R"({"model": {"preset": "holed"}})").mode, "near-integrable");
  EXPECT_EQ(parse_config(R"({"model": {"preset": "reference"}})").mode, "integrable");
  EXPECT_NE(error_of(R"({"model": {"preset": "reference"}, "mode": "near-integrable"})").find("disagrees"), std::string::npos);
}

TEST(Config, UnknownKeysAreRejected) {
  EXPECT_NE(error_of(R"({"model": {"preset": "free"}, "extra": 1})").find("\"extra\""), std::string::npos);
  EXPECT_NE(error_of(R"({"model": {"preset": "free"}, "glue": {"tmax": 3}})").find("glue"), std::string::npos);
  EXPECT_NE(error_of(R"({"model": {"preset": "free", "epsilon": 1}})").find("epsilon"), std::string::npos);
  EXPECT_NE(error_of(R"({"model": {"preset": "nope"}})").find("nope"), std::string::npos);
  EXPECT_NE(error_of(R"({"numerics": {}})").find("model"), std::string::npos);
}

TEST(Config, ParseErrorsCarryLineAndColumn) {
  const std::string e = error_of("{\n  \"model\": {\"preset\": \"free\"},\n  \"seed\": ,\n}");
  EXPECT_EQ(e.rfind("cfg:3:11:", 0), 0u) << e;
}

TEST(Config, BadValuesAreConfigErrors) {
  EXPECT_FALSE(error_of(R"({"model": {"preset": "free"}, "numerics": {"K": "big"}})").empty());
  EXPECT_FALSE(error_of(R"({"model": {"preset": "free"}, "numerics": {"rho": -1}})").empty());
  EXPECT_FALSE(error_of(R"({"model": {"preset": "free"}, "glue": {"targets": [{"q": [0.1, 0.2], "p": [0]}]}})").empty());
  EXPECT_FALSE(error_of(R"({"model": {"n": 1, "h": [{"coef": 1, "pow": [2, 0]}]}})").empty());
}

TEST(Config, DefaultsAndOverrides) {
  const auto c = parse_config(R"({"model": {"preset": "reference"}, "numerics": {"K": 8, "delta": 0.1}, "seed": 9})");
  EXPECT_EQ(c.solver.K, 8);
  EXPECT_EQ(c.solver.delta, 0.1);
  EXPECT_EQ(c.solver.max_iter, 25);
  EXPECT_EQ(c.solver.tol, 1e-9);
  EXPECT_EQ(c.glue_t_max, 1000);
  EXPECT_EQ(c.coverage_samples, 10000u);
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.parameters().size(), 5u);
}

TEST(Config, ResolvedEchoReproduces) {
  const auto c = parse_config(R"({"model": {"preset": "holed", "mu0": 0.01},
                                  "parameters": {"spacing": 0.1},
                                  "glue": {"targets": [{"q": [0.5], "p": [0.2]}]}})");
  const json r = resolved(c);
  const auto again = parse_config(r.dump());
  EXPECT_EQ(resolved(again).dump(), r.dump());
  expect_same_model(*again.model, *c.model);
  EXPECT_EQ(again.parameters().size(), c.parameters().size());
}

TEST(Config, ExplicitModel) {
  const auto c = parse_config(R"({"model": {
      "n": 1,
      "h": [{"coef": 0.5, "pow": [2]}],
      "modes": [{"fourier": [{"k": [1], "cos": 0.001}], "P": [{"coef": 1, "pow": [1]}], "decay": {"kind": "poly", "rate": 4}}]
    }})");
  expect_same_model(*c.model, reference_model(1e-3));
}
