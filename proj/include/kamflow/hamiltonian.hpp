#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "decay_norms.hpp"
#include "errors.hpp"
#include "numerics.hpp"
#include "torus_fourier.hpp"

namespace kamflow {

struct Monomial {
  double coef = 0;
  std::vector<int> pow;
};

/// Polynomial in p with explicit value, gradient and Hessian.
class Polynomial {
 public:
  Polynomial() = default;
  Polynomial(int dim, std::vector<Monomial> terms) : n_(dim), terms_(std::move(terms)) {
    for (const auto& t : terms_) {
      if (static_cast<int>(t.pow.size()) != n_) throw InvalidDataError("Polynomial: exponent length != dimension");
      for (int e : t.pow)
        if (e < 0) throw InvalidDataError("Polynomial: negative exponent");
    }
  }
  static Polynomial constant(int dim, double c) { return Polynomial(dim, {{c, std::vector<int>(dim, 0)}}); }

  int dim() const { return n_; }
  const std::vector<Monomial>& terms() const { return terms_; }
  int degree() const {
    int d = 0;
    for (const auto& t : terms_) {
      int s = 0;
      for (int e : t.pow) s += e;
      d = std::max(d, s);
    }
    return d;
  }

  void eval(const Eigen::VectorXd& p, double* value, Eigen::VectorXd* grad, Eigen::MatrixXd* hess) const {
    if (value) *value = 0;
    if (grad) grad->setZero(n_);
    if (hess) hess->setZero(n_, n_);
    for (const auto& t : terms_) {
      if (value) {
        double v = t.coef;
        for (int a = 0; a < n_; ++a) v *= ipow(p[a], t.pow[a]);
        *value += v;
      }
      if (grad)
        for (int i = 0; i < n_; ++i) {
          if (t.pow[i] == 0) continue;
          double v = t.coef * t.pow[i];
          for (int a = 0; a < n_; ++a) v *= ipow(p[a], t.pow[a] - (a == i));
          (*grad)[i] += v;
        }
      if (hess)
        for (int i = 0; i < n_; ++i)
          for (int j = 0; j < n_; ++j) {
            const int ei = t.pow[i], ej = t.pow[j];
            double v = t.coef;
            if (i == j) {
              if (ei < 2) continue;
              v *= ei * (ei - 1);
            } else {
              if (ei < 1 || ej < 1) continue;
              v *= ei * ej;
            }
            for (int a = 0; a < n_; ++a) v *= ipow(p[a], t.pow[a] - (a == i) - (a == j));
            (*hess)(i, j) += v;
          }
    }
  }
  double value(const Eigen::VectorXd& p) const {
    double v;
    eval(p, &v, nullptr, nullptr);
    return v;
  }
  Eigen::VectorXd gradient(const Eigen::VectorXd& p) const {
    Eigen::VectorXd g;
    eval(p, nullptr, &g, nullptr);
    return g;
  }
  Eigen::MatrixXd hessian(const Eigen::VectorXd& p) const {
    Eigen::MatrixXd h;
    eval(p, nullptr, nullptr, &h);
    return h;
  }

 private:
  static double ipow(double x, int e) {
    double r = 1;
    for (int i = 0; i < e; ++i) r *= x;
    return r;
  }
  int n_ = 1;
  std::vector<Monomial> terms_;
};

/// w(t) = 1/(1+|t|^rate) or exp(-rate |t|).
struct DecayProfile {
  enum class Kind { poly, exp };
  Kind kind = Kind::poly;
  double rate = 2;
  double operator()(double t) const {
    const double s = std::abs(t);
    return kind == Kind::poly ? 1.0 / (1.0 + std::pow(s, rate)) : std::exp(-rate * s);
  }
  TailModel tail(double c) const {
    return kind == Kind::poly ? TailModel::poly(rate, c) : TailModel::exponential(rate, c);
  }
  double poly_exponent() const { return kind == Kind::poly ? rate : std::numeric_limits<double>::infinity(); }
};

/// G(q) P(p) w(t).
struct PerturbationMode {
  TorusFun G;
  Polynomial P;
  DecayProfile w;
};

/// amplitude * G(q) * (r^2 - |p-c|^2)^3 inside the ball |p-c| < r, zero outside.
struct RemainderTerm {
  TorusFun G;
  Eigen::VectorXd center;
  double radius = 0;
  double amplitude = 0;

  void bump(const Eigen::VectorXd& p, double* v, Eigen::VectorXd* g, Eigen::MatrixXd* h) const {
    const int n = static_cast<int>(p.size());
    const Eigen::VectorXd d = p - center;
    const double psi = radius * radius - d.squaredNorm();
    if (psi <= 0) {
      if (v) *v = 0;
      if (g) g->setZero(n);
      if (h) h->setZero(n, n);
      return;
    }
    if (v) *v = psi * psi * psi;
    if (g) *g = -6.0 * psi * psi * d;
    if (h) *h = 24.0 * psi * d * d.transpose() - 6.0 * psi * psi * Eigen::MatrixXd::Identity(n, n);
  }
};

/// Open ball removed from B_1.
struct Hole {
  Eigen::VectorXd center;
  double radius = 0;
};

/// H(q,p,t) = h(p) + R(q,p) + sum_j G_j(q) P_j(p) w_j(t) on T^n x B_1.
struct HamiltonianModel {
  int n = 1;
  Polynomial h;
  std::vector<PerturbationMode> modes;
  std::vector<RemainderTerm> remainder;
  std::vector<Hole> holes;
  double l = 2;
  double eps = 1e-3;
  double upsilon = 1;
  double sigma = 1;

  bool near_integrable() const { return !remainder.empty() || !holes.empty(); }
  int order() const {
    int K = 0;
    for (const auto& m : modes) K = std::max(K, m.G.order());
    return K;
  }

  void validate() const {
    if (n < 1) throw ConfigError("model: n must be >= 1");
    if (h.dim() != n) throw ConfigError("model: h has wrong dimension");
    if (h.degree() > 6) throw ConfigError("model: degree of h exceeds 6");
    for (const auto& m : modes) {
      if (m.G.dim() != n || m.G.range() != 1) throw ConfigError("model: mode G must be scalar on T^n");
      if (m.P.dim() != n) throw ConfigError("model: mode P has wrong dimension");
      if (m.P.degree() > 6) throw ConfigError("model: degree of P exceeds 6");
      if (!(m.w.rate > 0)) throw ConfigError("model: decay rate must be positive");
      if (m.G.symmetry_defect() > 1e-14) throw ConfigError("model: G is not real");
    }
    for (const auto& r : remainder) {
      if (r.center.size() != n || r.G.dim() != n || r.G.range() != 1) throw ConfigError("model: remainder term has wrong dimension");
      bool inside = false;
      for (const auto& hole : holes)
        inside = inside || (r.center - hole.center).norm() + r.radius <= hole.radius * (1 + 1e-12);
      if (!inside) throw ConfigError("model: remainder support must lie inside a hole");
    }
    for (const auto& hole : holes)
      if (hole.center.size() != n || !(hole.radius > 0)) throw ConfigError("model: bad hole");
    if (!(l > 1)) throw ConfigError("model: decay exponent l must exceed 1");
    if (!(eps > 0)) throw ConfigError("model: eps must be positive");
  }

  /// p in the good set D = B_1 minus the open holes.
  bool in_good_set(const Eigen::VectorXd& p, double shrink = 0.0) const {
    if (p.norm() >= 1.0 - shrink) return false;
    for (const auto& hole : holes)
      if ((p - hole.center).norm() < hole.radius) return false;
    return true;
  }
  /// Lebesgue measure of B_1 \ D (holes assumed inside B_1 and disjoint).
  double excluded_measure() const {
    double m = 0;
    const double unit = std::pow(std::numbers::pi, n / 2.0) / std::tgamma(n / 2.0 + 1.0);
    for (const auto& hole : holes) m += unit * std::pow(hole.radius, n);
    return m;
  }
  double ball_measure() const { return std::pow(std::numbers::pi, n / 2.0) / std::tgamma(n / 2.0 + 1.0); }

  /// f, grad_q f, grad_p f, hess_p f at (q,p,t).
  void perturbation(std::span<const double> q, const Eigen::VectorXd& p, double t, double* f,
                    Eigen::VectorXd* fq, Eigen::VectorXd* fp, Eigen::MatrixXd* fpp) const {
    if (f) *f = 0;
    if (fq) fq->setZero(n);
    if (fp) fp->setZero(n);
    if (fpp) fpp->setZero(n, n);
    Eigen::VectorXd gv, pg;
    Eigen::MatrixXd gg, ph;
    double pv;
    for (const auto& m : modes) {
      m.G.evaluate(q, gv, fq ? &gg : nullptr);
      m.P.eval(p, &pv, fp ? &pg : nullptr, fpp ? &ph : nullptr);
      const double w = m.w(t);
      if (f) *f += gv[0] * pv * w;
      if (fq) *fq += gg.row(0).transpose() * (pv * w);
      if (fp) *fp += gv[0] * w * pg;
      if (fpp) *fpp += gv[0] * w * ph;
    }
  }

  double H(std::span<const double> q, const Eigen::VectorXd& p, double t) const {
    double v = h.value(p), f;
    perturbation(q, p, t, &f, nullptr, nullptr, nullptr);
    v += f;
    for (const auto& r : remainder) {
      double b;
      r.bump(p, &b, nullptr, nullptr);
      if (b != 0) v += r.amplitude * r.G.value(q) * b;
    }
    return v;
  }

  /// (dH/dq, dH/dp).
  void gradient(std::span<const double> q, const Eigen::VectorXd& p, double t, Eigen::VectorXd& dq,
                Eigen::VectorXd& dp) const {
    perturbation(q, p, t, nullptr, &dq, &dp, nullptr);
    dp += h.gradient(p);
    Eigen::VectorXd gv, bg;
    Eigen::MatrixXd gg;
    double b;
    for (const auto& r : remainder) {
      r.bump(p, &b, &bg, nullptr);
      if (b == 0 && bg.isZero()) continue;
      r.G.evaluate(q, gv, &gg);
      dq += r.amplitude * b * gg.row(0).transpose();
      dp += r.amplitude * gv[0] * bg;
    }
  }

  /// Hessian in p of H; when dq_hess is given, also its q-derivatives (one matrix per axis).
  Eigen::MatrixXd hessian_pp(std::span<const double> q, const Eigen::VectorXd& p, double t,
                             std::vector<Eigen::MatrixXd>* dq_hess = nullptr) const {
    Eigen::MatrixXd H2 = h.hessian(p), ph;
    if (dq_hess) dq_hess->assign(n, Eigen::MatrixXd::Zero(n, n));
    Eigen::VectorXd gv;
    Eigen::MatrixXd gg;
    double pv;
    for (const auto& m : modes) {
      m.G.evaluate(q, gv, dq_hess ? &gg : nullptr);
      m.P.eval(p, &pv, nullptr, &ph);
      const double w = m.w(t);
      H2 += gv[0] * w * ph;
      if (dq_hess)
        for (int j = 0; j < n; ++j) (*dq_hess)[j] += gg(0, j) * w * ph;
    }
    for (const auto& r : remainder) {
      r.bump(p, nullptr, nullptr, &ph);
      if (ph.isZero()) continue;
      r.G.evaluate(q, gv, dq_hess ? &gg : nullptr);
      H2 += r.amplitude * gv[0] * ph;
      if (dq_hess)
        for (int j = 0; j < n; ++j) (*dq_hess)[j] += r.amplitude * gg(0, j) * ph;
    }
    return H2;
  }

  /// sup of |R| + |grad_p R| over `samples` uniform points of D.
  double flatness_defect(int samples, std::uint64_t seed) const {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0), uq(0.0, 1.0);
    double worst = 0;
    int got = 0;
    std::vector<double> q(n);
    while (got < samples) {
      Eigen::VectorXd p(n);
      for (int a = 0; a < n; ++a) p[a] = u(rng);
      if (!in_good_set(p)) continue;
      ++got;
      for (auto& x : q) x = uq(rng);
      for (const auto& r : remainder) {
        double b;
        Eigen::VectorXd g;
        r.bump(p, &b, &g, nullptr);
        const double G = r.G.value(q);
        worst = std::max(worst, std::abs(r.amplitude * G) * (std::abs(b) + g.norm()));
      }
    }
    return worst;
  }
};

using ModelPtr = std::shared_ptr<const HamiltonianModel>;

/// H = p^2/2 (per axis) + eps cos(2 pi q_0) p_0 / (1+|t|^4): the reference model.
inline HamiltonianModel reference_model(double eps, double l = 2.0, int n = 1) {
  HamiltonianModel m;
  m.n = n;
  std::vector<Monomial> hh;
  for (int a = 0; a < n; ++a) {
    std::vector<int> e(n, 0);
    e[a] = 2;
    hh.push_back({0.5, e});
  }
  m.h = Polynomial(n, hh);
  TorusFun G(n, 1, 1);
  std::vector<int> k(n, 0), e(n, 0);
  k[0] = 1;
  e[0] = 1;
  G.add_real_mode(k, 0, eps, 0.0);
  m.modes.push_back({G, Polynomial(n, {{1.0, e}}), {DecayProfile::Kind::poly, 4.0}});
  m.l = l;
  m.eps = eps;
  m.upsilon = 1;
  return m;
}

/// Reference model plus eps p_0 / (1 + |t|^{l+1}): the q-independent term makes the torus
/// correction decay exactly like |t|^{-l}.
inline HamiltonianModel saturating_model(double eps, double l = 2.0, int n = 1) {
  HamiltonianModel m = reference_model(eps, l, n);
  TorusFun G(n, 1, 0);
  G.coeff(G.zero_mode(), 0) = eps;
  std::vector<int> e(n, 0);
  e[0] = 1;
  m.modes.push_back({G, Polynomial(n, {{1.0, e}}), {DecayProfile::Kind::poly, l + 1.0}});
  return m;
}

/// Reference model with one excluded ball of relative measure mu0 centred at c, and a
/// time-independent remainder supported inside it.
inline HamiltonianModel holed_model(double eps, double mu0 = 0.02, double c = 0.3, int n = 1) {
  HamiltonianModel m = reference_model(eps, 2.0, n);
  const double r = std::pow(mu0, 1.0 / n);  // Leb(B_r) / Leb(B_1) = r^n
  Eigen::VectorXd center = Eigen::VectorXd::Zero(n);
  center[0] = c;
  m.holes.push_back({center, r});
  TorusFun G(n, 1, 1);
  std::vector<int> k(n, 0);
  k[0] = 1;
  G.add_real_mode(k, 0, 1.0, 0.0);
  m.remainder.push_back({G, center, 0.5 * r, eps});
  return m;
}

// ---------------------------------------------------------------------------
// Expansion around p0

/// Pointwise pieces of the expansion at (theta, I, t).
struct LocalTerms {
  double a = 0;
  Eigen::VectorXd grad_a;    // d_theta a
  Eigen::VectorXd b;
  Eigen::MatrixXd jac_b;     // (i, j) = d b_i / d theta_j
  Eigen::MatrixXd m, mbar;
  Eigen::VectorXd dm_quad;   // j -> I^T (d_theta_j m) I
};

/// H(theta, p0+I, t) = e + omega.I + a + b.I + m(theta,I,t) I.I around a fixed p0.
class ExpandedHamiltonian {
 public:
  ExpandedHamiltonian(ModelPtr model, Eigen::VectorXd p0, double radius)
      : model_(std::move(model)), p0_(std::move(p0)), radius_(radius) {
    const auto& M = *model_;
    if (p0_.size() != M.n) throw DomainError("expand_at: p0 has wrong dimension");
    model_->h.eval(p0_, &e_, &omega_, nullptr);
  }

  const HamiltonianModel& model() const { return *model_; }
  const ModelPtr& model_ptr() const { return model_; }
  int dim() const { return model_->n; }
  const Eigen::VectorXd& p0() const { return p0_; }
  double e() const { return e_; }
  const Eigen::VectorXd& omega() const { return omega_; }
  double radius() const { return radius_; }

  enum : unsigned { kA = 1, kB = 2, kM = 4, kMbar = 8, kDm = 16, kAll = 31 };

  LocalTerms terms(std::span<const double> theta, const Eigen::VectorXd& I, double t, unsigned what = kAll) const {
    const auto& M = *model_;
    const int n = M.n;
    LocalTerms out;
    out.grad_a.setZero(n);
    out.b.setZero(n);
    out.jac_b.setZero(n, n);
    Eigen::VectorXd gv, pg;
    Eigen::MatrixXd gg;
    double pv;
    if (what & (kA | kB)) {
      for (const auto& md : M.modes) {
        md.G.evaluate(theta, gv, &gg);
        md.P.eval(p0_, &pv, &pg, nullptr);
        const double w = md.w(t);
        out.a += gv[0] * pv * w;
        out.grad_a += gg.row(0).transpose() * (pv * w);
        out.b += gv[0] * w * pg;
        out.jac_b += w * pg * gg.row(0);
      }
    }
    if (what & (kM | kMbar | kDm)) {
      out.m.setZero(n, n);
      out.mbar.setZero(n, n);
      out.dm_quad.setZero(n);
      const bool flat = I.squaredNorm() == 0.0;
      const auto& gl = UnitGaussLegendre::get();
      std::vector<Eigen::MatrixXd> dq;
      for (std::size_t k = 0; k < (flat ? 1 : gl.x.size()); ++k) {
        const double tau = flat ? 0.0 : gl.x[k], wt = flat ? 1.0 : gl.w[k];
        const Eigen::MatrixXd H2 = M.hessian_pp(theta, p0_ + tau * I, t, (what & kDm) ? &dq : nullptr);
        out.m += wt * (1 - tau) * H2 * (flat ? 0.5 : 1.0);
        out.mbar += wt * H2;
        if (what & kDm)
          for (int j = 0; j < n; ++j) out.dm_quad[j] += wt * (1 - tau) * (flat ? 0.5 : 1.0) * I.dot(dq[j] * I);
      }
    }
    return out;
  }

  void check_ball(const Eigen::VectorXd& I) const {
    if (I.norm() >= radius_) throw DomainError("expanded vector field: |I| outside the expansion ball");
  }

  /// X_H in (theta, I).
  void eval_XH(std::span<const double> theta, const Eigen::VectorXd& I, double t, Eigen::VectorXd& dtheta,
               Eigen::VectorXd& dI) const {
    check_ball(I);
    const LocalTerms T = terms(theta, I, t, kA | kB | kMbar | kDm);
    dtheta = omega_ + T.b + T.mbar * I;
    dI = -T.grad_a - T.jac_b.transpose() * I - T.dm_quad;
  }

  /// Vector field of e + omega.I + m I.I (a and b dropped).
  void eval_Xh_tilde(std::span<const double> theta, const Eigen::VectorXd& I, double t, Eigen::VectorXd& dtheta,
                     Eigen::VectorXd& dI) const {
    check_ball(I);
    const LocalTerms T = terms(theta, I, t, kMbar | kDm);
    dtheta = omega_ + T.mbar * I;
    dI = -T.dm_quad;
  }

  /// e + omega.I + a + b.I + m I.I.
  double reconstruct(std::span<const double> theta, const Eigen::VectorXd& I, double t) const {
    const LocalTerms T = terms(theta, I, t, kA | kB | kM);
    return e_ + omega_.dot(I) + T.a + T.b.dot(I) + I.dot(T.m * I);
  }

  /// a, b as TimeFamilies on `grid` (t = sign * s).
  TimeFamily a_family(const GridPtr& grid) const { return family(grid, false); }
  TimeFamily b_family(const GridPtr& grid) const { return family(grid, true); }

  /// Declared tail of a (or b): sum of the mode profiles with coefficient-bound constants.
  TailModel family_tail(bool want_b) const {
    TailModel tail = TailModel::zero();
    for (const auto& md : model_->modes) {
      double pv;
      Eigen::VectorXd pg;
      md.P.eval(p0_, &pv, &pg, nullptr);
      const double c = md.G.coefficient_bound() * (want_b ? pg.lpNorm<Eigen::Infinity>() : std::abs(pv));
      if (c > 0) tail = tail + md.w.tail(c);
    }
    return tail;
  }

 private:
  TimeFamily family(const GridPtr& grid, bool want_b) const {
    const auto& M = *model_;
    const int n = M.n, range = want_b ? n : 1;
    int K = 0;
    for (const auto& md : M.modes) K = std::max(K, md.G.order());
    TimeFamily out(grid, n, range, K, family_tail(want_b));
    for (const auto& md : M.modes) {
      double pv;
      Eigen::VectorXd pg;
      md.P.eval(p0_, &pv, &pg, nullptr);
      const TorusFun G = md.G.resized(K);
      for (std::size_t j = 0; j < grid->size(); ++j) {
        const double w = md.w(grid->t(j));
        TorusFun s(n, range, K);
        for (std::size_t i = 0; i < G.mode_count(); ++i)
          for (int c2 = 0; c2 < range; ++c2) s.coeff(i, c2) = G.coeff(i, 0) * (w * (want_b ? pg[c2] : pv));
        out.slices[j] += s;
      }
    }
    return out;
  }

  ModelPtr model_;
  Eigen::VectorXd p0_;
  double radius_;
  double e_ = 0;
  Eigen::VectorXd omega_;
};

/// Expansion at p0. Integrable models need p0 in B_{3/4}; near-integrable ones need p0 in D' = B_{1-delta} cap D.
inline ExpandedHamiltonian expand_at(const ModelPtr& model, const Eigen::VectorXd& p0, double delta = 0.0) {
  if (model->near_integrable()) {
    if (!model->in_good_set(p0, delta)) throw DomainError("expand_at: p0 outside D' = B_{1-delta} cap D");
    return ExpandedHamiltonian(model, p0, std::max(delta, 1e-300));
  }
  if (p0.norm() >= 0.75) throw DomainError("expand_at: p0 outside B_{3/4}");
  return ExpandedHamiltonian(model, p0, 0.25);
}

// ---------------------------------------------------------------------------
// Hypothesis check

struct BudgetTerm {
  std::string name;
  double value = 0;
  bool tail_violation = false;
};

struct DecayBudgetReport {
  std::vector<BudgetTerm> terms;
  double total = 0;
  double eps = 0;
  double hessian_sup = 0;
  double upsilon = 0;
  bool lipschitz_norms = false;
  std::vector<std::string> violated;
  bool passed() const { return violated.empty(); }
};

struct BudgetOptions {
  double horizon = 1e4;
  double rho = 0.05;
  int params_per_axis = 5;
};

namespace detail {

// Family of sum_j d_q^alpha G_j(theta) * (d_p^beta P_j)(p) * w_j(t) with the vector index
// running over one derivative direction; kind: 0 = f, 1 = d_q f, 2 = d_p f.
inline ParamFamily perturbation_family(const HamiltonianModel& M, const GridPtr& grid,
                                       const std::vector<Eigen::VectorXd>& params, int kind) {
  const int n = M.n, range = kind == 0 ? 1 : n, K = std::max(M.order(), 0);
  ParamFamily pf;
  pf.params = params;
  for (const auto& p : params) {
    TimeFamily val(grid, n, range, K);
    std::vector<TimeFamily> dp(n, TimeFamily(grid, n, range, K));
    TailModel tail = TailModel::zero(), dtail = TailModel::zero();
    for (const auto& md : M.modes) {
      const TorusFun G = md.G.resized(K);
      std::vector<TorusFun> dG;
      for (int a = 0; a < n; ++a) dG.push_back(differentiate(G, a));
      double pv;
      Eigen::VectorXd pg;
      Eigen::MatrixXd ph;
      md.P.eval(p, &pv, &pg, &ph);
      // value(c) and its p-derivative along axis d as theta-functions
      auto component = [&](int c, int d) -> TorusFun {
        if (kind == 0) return d < 0 ? pv * G : pg[d] * G;
        if (kind == 1) return d < 0 ? pv * dG[c] : pg[d] * dG[c];
        return d < 0 ? pg[c] * G : ph(c, d) * G;
      };
      const double cb = G.coefficient_bound() * two_pi * std::max(1, K);
      tail = tail + md.w.tail(cb * (std::abs(pv) + pg.lpNorm<Eigen::Infinity>()));
      dtail = dtail + md.w.tail(cb * (pg.lpNorm<Eigen::Infinity>() + ph.lpNorm<Eigen::Infinity>()));
      for (std::size_t j = 0; j < grid->size(); ++j) {
        const double w = md.w(grid->s(j));
        for (int c = 0; c < range; ++c) {
          const TorusFun v = w * component(c, -1);
          for (std::size_t i = 0; i < v.mode_count(); ++i) val.slices[j].coeff(i, c) += v.coeff(i, 0);
          for (int d = 0; d < n; ++d) {
            const TorusFun dv = w * component(c, d);
            for (std::size_t i = 0; i < dv.mode_count(); ++i) dp[d].slices[j].coeff(i, c) += dv.coeff(i, 0);
          }
        }
      }
    }
    val.tail = tail;
    for (auto& d : dp) d.tail = dtail;
    pf.values.push_back(std::move(val));
    pf.dp.push_back(std::move(dp));
  }
  return pf;
}

inline std::vector<Eigen::VectorXd> ball_samples(const HamiltonianModel& M, int per_axis, double radius) {
  std::vector<Eigen::VectorXd> pts;
  std::vector<int> idx(M.n, 0);
  for (;;) {
    Eigen::VectorXd p(M.n);
    for (int a = 0; a < M.n; ++a) p[a] = per_axis == 1 ? 0.0 : -radius + 2 * radius * idx[a] / (per_axis - 1);
    if (p.norm() <= radius) pts.push_back(p);
    int a = M.n - 1;
    while (a >= 0 && ++idx[a] == per_axis) idx[a--] = 0;
    if (a < 0) break;
  }
  return pts;
}

}  // namespace detail

/// Evaluates the smallness budget of the model:
///   |f|_{sigma+2,0} + ||d_q f||_{sigma,1,l+2} + ||d_p f||_{sigma,2,l+1} < eps,
///   sup_t |d_p^2 H^t|_{C^{sigma+2}} <= Upsilon.
/// Near-integrable models use the Lipschitz-in-parameter norms on B_1.
inline DecayBudgetReport check_decay_budget(const HamiltonianModel& M, const BudgetOptions& opt = {}) {
  DecayBudgetReport rep;
  rep.eps = M.eps;
  rep.upsilon = M.upsilon;
  rep.lipschitz_norms = M.near_integrable();
  const GridPtr grid = std::make_shared<const TimeGrid>(TimeGrid::log_uniform(Branch::plus, opt.rho, opt.horizon));
  const auto params = detail::ball_samples(M, opt.params_per_axis, 0.999);
  const double s = M.sigma, l = M.l;
  if (!M.modes.empty()) {
    const ParamFamily f = detail::perturbation_family(M, grid, params, 0);
    const ParamFamily fq = detail::perturbation_family(M, grid, params, 1);
    const ParamFamily fp = detail::perturbation_family(M, grid, params, 2);
    auto add = [&](const std::string& name, const ParamFamily& pf, double sigma, int k, double weight) {
      BudgetTerm t{name, 0, false};
      for (int i = 0; i <= k; ++i) {
        std::vector<ParamFamily> ders;
        detail::collect_derivatives(pf, i, 0, ders);
        for (const auto& d : ders) {
          if (rep.lipschitz_norms) {
            const auto ln = lipschitz_param_norm(d, sigma + k - i, weight);
            t.value = std::max(t.value, ln.total);
            for (const auto& v : d.values) t.tail_violation = t.tail_violation || detail::violates(v.tail, weight);
          } else {
            const auto wn = weighted_norm(d, sigma + k - i, weight);
            t.value = std::max(t.value, wn.total);
            t.tail_violation = t.tail_violation || wn.tail_violation;
          }
        }
      }
      rep.terms.push_back(t);
    };
    add("|f|_{sigma+2,0}", f, s + 2, 0, 0.0);
    add("||d_q f||_{sigma,1,l+2}", fq, s, 1, l + 2);
    add("||d_p f||_{sigma,2,l+1}", fp, s, 2, l + 1);
  } else {
    for (const char* name : {"|f|_{sigma+2,0}", "||d_q f||_{sigma,1,l+2}", "||d_p f||_{sigma,2,l+1}"})
      rep.terms.push_back({name, 0, false});
  }
  for (const auto& t : rep.terms) {
    rep.total += t.value;
    if (t.tail_violation) rep.violated.push_back(t.name + " (weight exceeds the declared decay)");
  }
  if (!(rep.total < M.eps)) {
    std::string worst = rep.terms.front().name;
    double wv = -1;
    for (const auto& t : rep.terms)
      if (t.value > wv) wv = t.value, worst = t.name;
    rep.violated.push_back("budget sum >= eps (largest term " + worst + ")");
  }
  // Hessian bound: theta-surrogate of d_p^2 H at the sampled p and grid times
  const int K = std::max(1, std::max(M.order(), [&] {
    int k = 0;
    for (const auto& r : M.remainder) k = std::max(k, r.G.order());
    return k;
  }()));
  const CollocationGrid cg = CollocationGrid::for_norms(M.n, K);
  std::vector<double> sup(grid->size(), 0.0);
  parallel_for(grid->size(), [&](std::size_t j) {
    for (const auto& p : params) {
      const TorusFun hess = sample_and_analyze(M.n, M.n * M.n, K, cg, [&](std::size_t, std::span<const double> q, std::span<double> out) {
        const Eigen::MatrixXd H2 = M.hessian_pp(q, p, grid->s(j));
        for (int i = 0; i < M.n * M.n; ++i) out[i] = H2.data()[i];
      });
      sup[j] = std::max(sup[j], holder_surrogate(hess, s + 2, cg));
    }
  });
  rep.hessian_sup = *std::max_element(sup.begin(), sup.end());
  if (rep.hessian_sup > M.upsilon) rep.violated.push_back("sup_t |d_p^2 H^t|_{C^{sigma+2}} <= Upsilon");
  return rep;
}

}  // namespace kamflow
