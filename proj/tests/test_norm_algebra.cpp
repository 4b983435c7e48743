#include <gtest/gtest.h>

#include "kamflow/norm_suite.hpp"

using namespace kamflow;

TEST(NormAlgebra, RandomInstancesStayBelowTheModuleConstant) {
  const NormSuiteReport r = run_norm_suite(20240601, 100);
  std::printf("product ratio %.4f composition ratio %.4f constant %.1f\n", r.product_max_ratio,
              r.composition_max_ratio, r.constant);
  EXPECT_TRUE(r.sigma_monotone);
  EXPECT_TRUE(r.weight_inequality);
  EXPECT_LE(r.product_max_ratio, kNormAlgebraConstant);
  EXPECT_LE(r.composition_max_ratio, kNormAlgebraConstant);
  EXPECT_GT(r.product_max_ratio, 0.0);
}

TEST(NormAlgebra, Deterministic) {
  const NormSuiteReport a = run_norm_suite(7, 5), b = run_norm_suite(7, 5);
  EXPECT_EQ(a.product_max_ratio, b.product_max_ratio);
  EXPECT_EQ(a.composition_max_ratio, b.composition_max_ratio);
}
