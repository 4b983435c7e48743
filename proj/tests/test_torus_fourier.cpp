#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "kamflow/torus_fourier.hpp"

using namespace kamflow;

namespace {

TorusFun random_fun(int n, int m, int K, std::mt19937_64& rng, double decay = 0.7) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  TorusFun f(n, m, K);
  std::vector<int> k(n);
  for (std::size_t i = 0; i < f.mode_count(); ++i) {
    const std::size_t j = f.mirror_mode(i);
    if (j < i) continue;
    f.mode_of(i, k);
    int kmax = 0;
    for (int x : k) kmax = std::max(kmax, std::abs(x));
    const double scale = std::pow(decay, kmax);
    for (int c = 0; c < m; ++c) {
      if (i == j) {
        f.coeff(i, c) = scale * u(rng);
      } else {
        f.coeff(i, c) = scale * cplx(u(rng), u(rng));
        f.coeff(j, c) = std::conj(f.coeff(i, c));
      }
    }
  }
  return f;
}

TorusFun cos_mode(int K = 1, int k = 1, double amp = 1.0) {
  TorusFun f(1, 1, K);
  const int kk[] = {k};
  f.add_real_mode(kk, 0, amp, 0.0);
  return f;
}

}  // namespace

TEST(TorusFourier, ZeroSynthesizesToZero) {
  const auto s = synthesize(TorusFun(2, 3, 4), {2, 10});
  for (double x : s.values) EXPECT_EQ(x, 0.0);
}

TEST(TorusFourier, SingleModeSamples) {
  const auto s = synthesize(cos_mode(), {1, 7});
  for (int j = 0; j < 7; ++j) EXPECT_NEAR(s.at(j, 0), std::cos(two_pi * j / 7), 1e-15);
}

TEST(TorusFourier, RoundTripTwoDimensions) {
  std::mt19937_64 rng(11);
  const TorusFun f = random_fun(2, 2, 5, rng);
  EXPECT_LT(f.symmetry_defect(), 1e-14);
  const TorusFun g = analyze(synthesize(f, {2, 12}), 5);
  double err = 0;
  for (std::size_t i = 0; i < f.data().size(); ++i) err = std::max(err, std::abs(f.data()[i] - g.data()[i]));
  EXPECT_LT(err, 1e-12);
  EXPECT_LT(g.symmetry_defect(), 1e-14);
}

TEST(TorusFourier, CoarseGridIsRejected) {
  EXPECT_THROW(synthesize(TorusFun(1, 1, 5), {1, 10}), AliasingError);
  EXPECT_THROW(analyze(SampleArray{{1, 6}, 1, std::vector<double>(6)}, 3), AliasingError);
}

TEST(TorusFourier, EvaluationMatchesSynthesisAndIsReal) {
  std::mt19937_64 rng(3);
  const TorusFun f = random_fun(3, 2, 3, rng);
  const CollocationGrid grid{3, 8};
  const auto s = synthesize(f, grid);
  std::vector<double> th(3);
  for (std::size_t p = 0; p < grid.size(); p += 37) {
    grid.point(p, th);
    const auto v = f(th);
    for (int c = 0; c < 2; ++c) EXPECT_NEAR(v[c], s.at(p, c), 1e-12);
  }
  // imaginary residue of the raw complex sum
  th = {0.123, 0.77, 0.31};
  cplx sum = 0;
  std::vector<int> k(3);
  for (std::size_t i = 0; i < f.mode_count(); ++i) {
    f.mode_of(i, k);
    sum += f.coeff(i, 0) * std::polar(1.0, two_pi * (k[0] * th[0] + k[1] * th[1] + k[2] * th[2]));
  }
  EXPECT_LT(std::abs(sum.imag()), 1e-12);
}

TEST(TorusFourier, ParsevalAndLinearity) {
  std::mt19937_64 rng(5);
  const TorusFun f = random_fun(2, 1, 4, rng), g = random_fun(2, 1, 4, rng);
  const CollocationGrid grid{2, 11};
  const auto s = synthesize(f, grid);
  double mean_sq = 0, coeff_sq = 0;
  for (double x : s.values) mean_sq += x * x;
  mean_sq /= grid.size();
  for (const auto& z : f.data()) coeff_sq += std::norm(z);
  EXPECT_NEAR(mean_sq, coeff_sq, 1e-12);
  const auto lhs = synthesize(2.0 * f - g, grid);
  const auto sf = synthesize(f, grid), sg = synthesize(g, grid);
  for (std::size_t i = 0; i < lhs.values.size(); ++i)
    EXPECT_NEAR(lhs.values[i], 2 * sf.values[i] - sg.values[i], 1e-12);
}

TEST(TorusFourier, DerivativeIdentities) {
  const TorusFun c = TorusFun::constant(1, Eigen::VectorXd::Constant(1, 3.0), 2);
  EXPECT_EQ(differentiate(c, 0).coefficient_bound(), 0.0);

  TorusFun s(1, 1, 1);
  const int one[] = {1};
  s.add_real_mode(one, 0, 0.0, 1.0);
  const TorusFun ds = differentiate(s, 0);
  for (double x : {0.0, 0.1, 0.37, 0.9}) {
    const double th[] = {x};
    EXPECT_NEAR(ds.value(th), two_pi * std::cos(two_pi * x), 1e-13);
  }
}

TEST(TorusFourier, DerivativeMatchesCentralDifference) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const TorusFun f = random_fun(2, 1, 4, rng);
  const TorusFun d1 = differentiate(f, 1);
  const double h = 1e-5;
  for (int i = 0; i < 20; ++i) {
    const double x = u(rng), y = u(rng);
    const double p[] = {x, y + h}, m[] = {x, y - h}, c[] = {x, y};
    const double fd = (f.value(p) - f.value(m)) / (2 * h);
    EXPECT_NEAR(fd, d1.value(c), 1e-6 * std::max(1.0, std::abs(fd)));
  }
}

TEST(TorusFourier, MixedPartialsCommute) {
  std::mt19937_64 rng(9);
  const TorusFun f = random_fun(2, 2, 3, rng);
  const TorusFun a = differentiate(differentiate(f, 0), 1), b = differentiate(differentiate(f, 1), 0);
  for (std::size_t i = 0; i < a.data().size(); ++i) EXPECT_LT(std::abs(a.data()[i] - b.data()[i]), 1e-12);
}

TEST(TorusFourier, ComposeWithZeroShiftIsIdentity) {
  std::mt19937_64 rng(13);
  const TorusFun f = random_fun(2, 1, 4, rng);
  const TorusFun g = compose_shift(f, TorusFun(2, 2, 0));
  for (std::size_t i = 0; i < f.data().size(); ++i) EXPECT_LT(std::abs(f.data()[i] - g.data()[i]), 1e-13);
}

TEST(TorusFourier, ConstantShiftRotatesPhases) {
  std::mt19937_64 rng(17);
  const TorusFun f = random_fun(1, 1, 6, rng);
  const double c = 0.137;
  const TorusFun g = compose_shift(f, TorusFun::constant(1, Eigen::VectorXd::Constant(1, c)));
  std::vector<int> k(1);
  for (std::size_t i = 0; i < f.mode_count(); ++i) {
    f.mode_of(i, k);
    EXPECT_LT(std::abs(g.coeff(i, 0) - f.coeff(i, 0) * std::polar(1.0, two_pi * k[0] * c)), 1e-12);
  }
  EXPECT_THROW(compose_shift(f, TorusFun::constant(1, Eigen::VectorXd::Constant(1, 0.5))), DomainError);
}

TEST(TorusFourier, SmallSineShiftMatchesPointwise) {
  TorusFun u(1, 1, 1);
  const int one[] = {1};
  u.add_real_mode(one, 0, 0.0, 0.01);
  const TorusFun g = compose_shift(cos_mode(16), u, 16);
  for (int j = 0; j < 64; ++j) {
    const double x = j / 64.0, th[] = {x};
    const double exact = std::cos(two_pi * (x + 0.01 * std::sin(two_pi * x)));
    EXPECT_NEAR(g.value(th), exact, 1e-10);
  }
}

TEST(TorusFourier, ProductIsExactForTrigPolynomials) {
  const TorusFun p = multiply(cos_mode(1), cos_mode(1), 2);
  for (double x : {0.0, 0.2, 0.45}) {
    const double th[] = {x};
    EXPECT_NEAR(p.value(th), std::pow(std::cos(two_pi * x), 2), 1e-14);
  }
}

TEST(HolderSurrogate, Constants) {
  const TorusFun c = TorusFun::constant(2, Eigen::VectorXd::Constant(1, -2.5), 3);
  for (double s : {0.0, 0.5, 1.0, 2.7}) EXPECT_DOUBLE_EQ(holder_surrogate(c, s, {2, 16}), 2.5);
}

TEST(HolderSurrogate, CosineC1IsTwoPi) {
  EXPECT_NEAR(holder_surrogate(cos_mode(), 1.0, {1, 64}), two_pi, 1e-12);
  EXPECT_NEAR(holder_surrogate(cos_mode(), 0.0, {1, 64}), 1.0, 1e-15);
}

TEST(HolderSurrogate, MonotoneUnderRefinement) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> us(0.0, 2.5);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + trial % 2;
    const TorusFun f = random_fun(n, 1 + trial % 3, 4, rng);
    const double s = us(rng);
    EXPECT_LE(holder_surrogate(f, s, {n, 10}), holder_surrogate(f, s, {n, 20}));
  }
}

TEST(HolderSurrogate, MonotoneInSigma) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    const TorusFun f = random_fun(1 + trial % 2, 1, 5, rng);
    const CollocationGrid grid{f.dim(), 16};
    double prev = 0;
    for (double s = 0; s <= 3.0; s += 0.125) {
      const double v = holder_surrogate(f, s, grid);
      EXPECT_LE(prev, v) << "sigma=" << s;
      prev = v;
    }
  }
}
