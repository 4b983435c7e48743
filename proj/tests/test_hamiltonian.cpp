#include <cmath>
#include <numbers>
#include <random>

#include <gtest/gtest.h>

#include "kamflow/hamiltonian.hpp"

using namespace kamflow;

namespace {

constexpr double pi = std::numbers::pi;

std::vector<int> vec(std::initializer_list<int> v) { return v; }

// n = 2, quartic h, two modes with distinct decay, one of them exponential.
ModelPtr battery_model() {
  HamiltonianModel m;
  m.n = 2;
  m.h = Polynomial(2, {{0.5, vec({2, 0})}, {0.7, vec({0, 2})}, {0.2, vec({1, 1})}, {0.1, vec({4, 0})},
                       {-0.05, vec({1, 3})}, {0.3, vec({1, 0})}});
  TorusFun G1(2, 1, 2), G2(2, 1, 1);
  G1.add_real_mode(vec({1, 0}), 0, 0.01, 0.004);
  G1.add_real_mode(vec({2, -1}), 0, 0.003, 0.0);
  G2.add_real_mode(vec({1, 1}), 0, 0.0, 0.02);
  m.modes.push_back({G1, Polynomial(2, {{1.0, vec({1, 0})}, {0.5, vec({2, 1})}, {0.25, vec({0, 0})}}),
                     {DecayProfile::Kind::poly, 5.0}});
  m.modes.push_back({G2, Polynomial(2, {{1.0, vec({0, 3})}, {-0.4, vec({1, 2})}}), {DecayProfile::Kind::exp, 0.7}});
  m.l = 2;
  m.eps = 1.0;
  return std::make_shared<const HamiltonianModel>(m);
}

ModelPtr reference(double eps = 1e-3) { return std::make_shared<const HamiltonianModel>(reference_model(eps)); }

ModelPtr free_model() {
  HamiltonianModel m;
  m.n = 1;
  m.h = Polynomial(1, {{0.5, vec({2})}});
  return std::make_shared<const HamiltonianModel>(m);
}

Eigen::VectorXd v1(double x) { return Eigen::VectorXd::Constant(1, x); }

}  // namespace

TEST(Polynomial, DerivativesMatchHandComputation) {
  const Polynomial P(2, {{3.0, vec({2, 1})}, {-1.0, vec({0, 3})}, {2.0, vec({0, 0})}});
  Eigen::VectorXd p(2);
  p << 0.4, -0.3;
  EXPECT_NEAR(P.value(p), 3 * 0.16 * -0.3 + 0.027 + 2, 1e-15);
  const auto g = P.gradient(p);
  EXPECT_NEAR(g[0], 6 * 0.4 * -0.3, 1e-15);
  EXPECT_NEAR(g[1], 3 * 0.16 - 3 * 0.09, 1e-15);
  const auto H = P.hessian(p);
  EXPECT_NEAR(H(0, 0), 6 * -0.3, 1e-15);
  EXPECT_NEAR(H(0, 1), 6 * 0.4, 1e-15);
  EXPECT_NEAR(H(1, 0), 6 * 0.4, 1e-15);
  EXPECT_NEAR(H(1, 1), -6 * -0.3, 1e-15);
}

TEST(Polynomial, RejectsBadExponents) {
  EXPECT_THROW(Polynomial(2, {{1.0, vec({1})}}), InvalidDataError);
  EXPECT_THROW(Polynomial(1, {{1.0, vec({-1})}}), InvalidDataError);
}

TEST(Expansion, FreeParticle) {
  const auto E = expand_at(free_model(), v1(0.3));
  EXPECT_NEAR(E.e(), 0.045, 1e-15);
  EXPECT_NEAR(E.omega()[0], 0.3, 1e-15);
  const double th[] = {0.17};
  const auto T = E.terms(th, v1(0.1), 3.0);
  EXPECT_EQ(T.a, 0.0);
  EXPECT_EQ(T.b[0], 0.0);
  EXPECT_NEAR(T.m(0, 0), 0.5, 1e-14);
  EXPECT_NEAR(T.mbar(0, 0), 1.0, 1e-14);
}

TEST(Expansion, ReferenceModelSubstitution) {
  const double eps = 1e-3;
  const auto E = expand_at(reference(eps), v1(0.3));
  for (double th : {0.0, 0.13, 0.5, 0.81})
    for (double t : {0.0, 0.7, -2.0, 40.0}) {
      const double q[] = {th};
      const auto T = E.terms(q, v1(0.0), t);
      const double w = 1.0 / (1.0 + std::pow(t, 4));
      EXPECT_NEAR(T.a, 0.3 * eps * std::cos(2 * pi * th) * w, 1e-17);
      EXPECT_NEAR(T.b[0], eps * std::cos(2 * pi * th) * w, 1e-17);
    }
}

TEST(Expansion, AdmissibleBall) {
  EXPECT_THROW(expand_at(free_model(), v1(0.8)), DomainError);
  const auto E = expand_at(free_model(), v1(0.5));
  const double th[] = {0.0};
  Eigen::VectorXd a, b;
  EXPECT_THROW(E.eval_XH(th, v1(0.25), 0.0, a, b), DomainError);
  EXPECT_THROW(E.eval_Xh_tilde(th, v1(-0.3), 0.0, a, b), DomainError);
}

TEST(Expansion, OmegaIsGradientOfH) {
  const auto M = battery_model();
  Eigen::VectorXd p0(2);
  p0 << 0.25, -0.5;
  const auto E = expand_at(M, p0);
  // d/dp0 of 0.5x^2 + 0.7y^2 + 0.2xy + 0.1x^4 - 0.05xy^3 + 0.3x
  const double x = 0.25, y = -0.5;
  EXPECT_DOUBLE_EQ(E.omega()[0], x + 0.2 * y + 0.4 * x * x * x - 0.05 * y * y * y + 0.3);
  EXPECT_DOUBLE_EQ(E.omega()[1], 1.4 * y + 0.2 * x - 0.15 * x * y * y);
}

TEST(Expansion, ReconstructionIdentity) {
  const auto M = battery_model();
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1, 1), uq(0, 1), ut(-30, 30);
  Eigen::VectorXd p0(2);
  p0 << 0.3, 0.4;
  const auto E = expand_at(M, p0);
  double worst = 0;
  for (int k = 0; k < 100; ++k) {
    const double th[] = {uq(rng), uq(rng)};
    Eigen::VectorXd I(2);
    I << 0.17 * u(rng), 0.17 * u(rng);
    const double t = ut(rng);
    worst = std::max(worst, std::abs(M->H(th, p0 + I, t) - E.reconstruct(th, I, t)));
  }
  EXPECT_LT(worst, 1e-10);
}

TEST(Expansion, MbarIsDerivativeOfQuadraticPart) {
  const auto M = battery_model();
  Eigen::VectorXd p0(2);
  p0 << -0.2, 0.1;
  const auto E = expand_at(M, p0);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-0.15, 0.15), uq(0, 1), ut(-5, 5);
  for (int k = 0; k < 20; ++k) {
    const double th[] = {uq(rng), uq(rng)};
    Eigen::VectorXd I(2);
    I << u(rng), u(rng);
    const double t = ut(rng);
    const auto T = E.terms(th, I, t);
    const Eigen::VectorXd lhs = T.mbar * I;
    const double h = 1e-5;
    for (int a = 0; a < 2; ++a) {
      Eigen::VectorXd Ip = I, Im = I;
      Ip[a] += h;
      Im[a] -= h;
      const auto Tp = E.terms(th, Ip, t, ExpandedHamiltonian::kM), Tm = E.terms(th, Im, t, ExpandedHamiltonian::kM);
      const double fd = (Ip.dot(Tp.m * Ip) - Im.dot(Tm.m * Im)) / (2 * h);
      EXPECT_NEAR(lhs[a], fd, 1e-8);
    }
  }
}

TEST(VectorField, MatchesSymplecticGradient) {
  const auto M = battery_model();
  Eigen::VectorXd p0(2);
  p0 << 0.1, -0.35;
  const auto E = expand_at(M, p0);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-0.15, 0.15), uq(0, 1), ut(-4, 4);
  for (int k = 0; k < 20; ++k) {
    std::vector<double> th = {uq(rng), uq(rng)};
    Eigen::VectorXd I(2);
    I << u(rng), u(rng);
    const double t = ut(rng);
    Eigen::VectorXd dth, dI;
    E.eval_XH(th, I, t, dth, dI);
    const double h = 1e-5;
    for (int a = 0; a < 2; ++a) {
      Eigen::VectorXd Ip = I, Im = I;
      Ip[a] += h;
      Im[a] -= h;
      const double dHdI = (M->H(th, p0 + Ip, t) - M->H(th, p0 + Im, t)) / (2 * h);
      auto tp = th, tm = th;
      tp[a] += h;
      tm[a] -= h;
      const double dHdth = (M->H(tp, p0 + I, t) - M->H(tm, p0 + I, t)) / (2 * h);
      EXPECT_NEAR(dth[a], dHdI, 1e-6 * std::max(1.0, std::abs(dHdI)));
      EXPECT_NEAR(dI[a], -dHdth, 1e-6 * std::max(1.0, std::abs(dHdth)));
    }
  }
}

TEST(VectorField, AtZeroAction) {
  const auto M = battery_model();
  Eigen::VectorXd p0(2);
  p0 << 0.2, 0.2;
  const auto E = expand_at(M, p0);
  const double th[] = {0.3, 0.6};
  const Eigen::VectorXd I0 = Eigen::VectorXd::Zero(2);
  Eigen::VectorXd dth, dI;
  E.eval_XH(th, I0, 1.5, dth, dI);
  const auto T = E.terms(th, I0, 1.5);
  EXPECT_LT((dth - E.omega() - T.b).norm(), 1e-15);
  EXPECT_LT((dI + T.grad_a).norm(), 1e-15);
  E.eval_Xh_tilde(th, I0, 1.5, dth, dI);
  EXPECT_EQ(dth, E.omega());
  EXPECT_EQ(dI, Eigen::VectorXd::Zero(2));
}

TEST(VectorField, TildeFieldMatchesReducedHamiltonian) {
  const auto M = battery_model();
  Eigen::VectorXd p0(2);
  p0 << -0.1, 0.3;
  const auto E = expand_at(M, p0);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-0.15, 0.15), uq(0, 1), ut(-4, 4);
  auto htilde = [&](std::span<const double> th, const Eigen::VectorXd& I, double t) {
    const auto T = E.terms(th, I, t, ExpandedHamiltonian::kM);
    return E.e() + E.omega().dot(I) + I.dot(T.m * I);
  };
  for (int k = 0; k < 10; ++k) {
    std::vector<double> th = {uq(rng), uq(rng)};
    Eigen::VectorXd I(2);
    I << u(rng), u(rng);
    const double t = ut(rng);
    Eigen::VectorXd dth, dI;
    E.eval_Xh_tilde(th, I, t, dth, dI);
    const double h = 1e-5;
    for (int a = 0; a < 2; ++a) {
      Eigen::VectorXd Ip = I, Im = I;
      Ip[a] += h;
      Im[a] -= h;
      auto tp = th, tm = th;
      tp[a] += h;
      tm[a] -= h;
      EXPECT_NEAR(dth[a], (htilde(th, Ip, t) - htilde(th, Im, t)) / (2 * h), 1e-6);
      EXPECT_NEAR(dI[a], -(htilde(tp, I, t) - htilde(tm, I, t)) / (2 * h), 1e-6);
    }
  }
}

TEST(VectorField, UnperturbedFieldsCoincide) {
  const auto E = expand_at(free_model(), v1(0.2));
  for (double th : {0.0, 0.4})
    for (double I : {-0.2, 0.0, 0.1}) {
      const double q[] = {th};
      Eigen::VectorXd a1, b1, a2, b2;
      E.eval_XH(q, v1(I), 0.3, a1, b1);
      E.eval_Xh_tilde(q, v1(I), 0.3, a2, b2);
      EXPECT_EQ(a1, a2);
      EXPECT_EQ(b1, b2);
      EXPECT_NEAR(a1[0], 0.2 + I, 1e-15);
      EXPECT_EQ(b1[0], 0.0);
    }
}

TEST(Expansion, FamiliesMirrorAcrossBranches) {
  const auto M = battery_model();
  Eigen::VectorXd p0(2);
  p0 << 0.1, 0.2;
  const auto E = expand_at(M, p0);
  const auto gp = std::make_shared<const TimeGrid>(TimeGrid::log_uniform(Branch::plus, 0.1, 50));
  const auto gm = std::make_shared<const TimeGrid>(TimeGrid::log_uniform(Branch::minus, 0.1, 50));
  const auto ap = E.a_family(gp), am = E.a_family(gm);
  const auto bp = E.b_family(gp), bm = E.b_family(gm);
  for (std::size_t j = 0; j < gp->size(); ++j) {
    for (std::size_t i = 0; i < ap.slices[j].mode_count(); ++i)
      EXPECT_EQ(ap.slices[j].coeff(i, 0), am.slices[j].coeff(i, 0));
    for (std::size_t i = 0; i < bp.slices[j].mode_count(); ++i)
      for (int c = 0; c < 2; ++c) EXPECT_EQ(bp.slices[j].coeff(i, c), bm.slices[j].coeff(i, c));
  }
  // slices agree with pointwise evaluation
  const double th[] = {0.21, 0.77};
  for (std::size_t j : {std::size_t{0}, gp->size() / 2, gp->size() - 1}) {
    const auto T = E.terms(th, Eigen::VectorXd::Zero(2), gm->t(j));
    EXPECT_NEAR(am.slices[j](th)[0], T.a, 1e-14);
    EXPECT_NEAR((bm.slices[j](th) - T.b).norm(), 0.0, 1e-14);
  }
  const CollocationGrid cg = CollocationGrid::for_norms(2, ap.order());
  EXPECT_TRUE(ap.tail_consistent(cg));
  EXPECT_TRUE(bp.tail_consistent(cg));
}

TEST(NearIntegrable, RemainderIsFlatOnGoodSet) {
  HamiltonianModel m = reference_model(1e-3, 2.0, 2);
  Eigen::VectorXd c(2);
  c << 0.4, -0.2;
  TorusFun G(2, 1, 1);
  G.add_real_mode(vec({0, 1}), 0, 0.5, 0.2);
  m.holes.push_back({c, 0.1});
  m.remainder.push_back({G, c, 0.08, 3.0});
  m.validate();
  EXPECT_TRUE(m.near_integrable());
  EXPECT_LT(m.flatness_defect(1000, 42), 1e-12);
  EXPECT_NEAR(m.excluded_measure(), pi * 0.01, 1e-15);
  // nonzero inside its support
  const double q[] = {0.1, 0.1};
  const double bump = 3.0 * G.value(q) * std::pow(0.08, 6);
  EXPECT_NEAR(m.H(q, c, 0.0) - m.h.value(c) - 1e-3 * std::cos(2 * pi * 0.1) * 0.4, bump, 1e-15);
  EXPECT_NE(bump, 0.0);
  const auto M = std::make_shared<const HamiltonianModel>(m);
  EXPECT_THROW(expand_at(M, c, 0.05), DomainError);
  Eigen::VectorXd p0(2);
  p0 << 0.1, 0.1;
  const auto E = expand_at(M, p0, 0.05);
  EXPECT_DOUBLE_EQ(E.radius(), 0.05);
  Eigen::VectorXd a, b;
  EXPECT_THROW(E.eval_XH(q, Eigen::VectorXd::Constant(2, 0.04), 0.0, a, b), DomainError);
}

TEST(NearIntegrable, RemainderOutsideHolesIsRejected) {
  HamiltonianModel m = reference_model(1e-3, 2.0, 2);
  Eigen::VectorXd c(2);
  c << 0.4, -0.2;
  m.holes.push_back({c, 0.05});
  m.remainder.push_back({TorusFun::constant(2, Eigen::VectorXd::Ones(1)), c, 0.08, 1.0});
  EXPECT_THROW(m.validate(), ConfigError);
}

TEST(DecayBudget, FreeModelPasses) {
  HamiltonianModel m = *free_model();
  m.eps = 1e-9;
  const auto r = check_decay_budget(m);
  EXPECT_TRUE(r.passed());
  EXPECT_EQ(r.total, 0.0);
  EXPECT_NEAR(r.hessian_sup, 1.0, 1e-12);
}

TEST(DecayBudget, SmallModePasses) {
  const double eps = 1e-2, l = 2;
  HamiltonianModel m = *free_model();
  m.eps = eps;
  m.l = l;
  TorusFun G(1, 1, 1);
  G.add_real_mode(vec({1}), 0, eps / 1000, 0.0);
  m.modes.push_back({G, Polynomial::constant(1, 1.0), {DecayProfile::Kind::poly, l + 3}});
  const auto r = check_decay_budget(m);
  EXPECT_TRUE(r.passed()) << (r.violated.empty() ? "" : r.violated.front());
  ASSERT_EQ(r.terms.size(), 3u);
  // integer order: |f|_{C^3} is the largest derivative sup, (2 pi)^3 eps0
  EXPECT_NEAR(r.terms[0].value, eps / 1000 * 8 * pi * pi * pi, 1e-12);
  EXPECT_EQ(r.terms[2].value, 0.0);
  EXPECT_LT(r.total, eps);
}

TEST(DecayBudget, LargeModeFailsOnSum) {
  const double eps = 1e-2, l = 2;
  HamiltonianModel m = *free_model();
  m.eps = eps;
  m.l = l;
  TorusFun G(1, 1, 1);
  G.add_real_mode(vec({1}), 0, eps / 10, 0.0);
  m.modes.push_back({G, Polynomial::constant(1, 1.0), {DecayProfile::Kind::poly, l + 3}});
  const auto r = check_decay_budget(m);
  EXPECT_FALSE(r.passed());
}

TEST(DecayBudget, SlowDecayNamesViolatedTerm) {
  HamiltonianModel m = *free_model();
  m.eps = 1.0;
  m.l = 3;
  TorusFun G(1, 1, 1);
  G.add_real_mode(vec({1}), 0, 1e-6, 0.0);
  m.modes.push_back({G, Polynomial::constant(1, 1.0), {DecayProfile::Kind::poly, 2.0}});
  const auto r = check_decay_budget(m);
  EXPECT_FALSE(r.passed());
  bool named = false;
  for (const auto& v : r.violated) named = named || v.find("||d_q f||_{sigma,1,l+2}") != std::string::npos;
  EXPECT_TRUE(named);
}

TEST(DecayBudget, HessianBound) {
  HamiltonianModel m = *free_model();
  m.h = Polynomial(1, {{1.5, vec({2})}});
  m.upsilon = 2.0;
  const auto r = check_decay_budget(m);
  EXPECT_FALSE(r.passed());
  EXPECT_NEAR(r.hessian_sup, 3.0, 1e-12);
}
