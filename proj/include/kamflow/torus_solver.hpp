#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "decay_norms.hpp"
#include "errors.hpp"
#include "hamiltonian.hpp"
#include "homological.hpp"
#include "parallel.hpp"
#include "torus_fourier.hpp"

namespace kamflow {

struct SolverOptions {
  int K = 16;
  SolverGridOptions grid;
  double tol = 1e-9;
  int max_iter = 25;
  double divergence_ratio = 0.9;
  double delta = 0.05;  // expansion radius in the near-integrable mode
};

/// psi(theta, t) = (theta + u, v) with the stored directional derivatives (nabla u) Omega, (nabla v) Omega.
struct TorusCorrection {
  TimeFamily u, v, DuOmega, DvOmega;
};

/// (F1, F2): z in the space of weight l+1, g in the space of weight l+2.
struct FunctionalValue {
  TimeFamily z, g;
};

namespace detail {

/// Sets the constant of a tail model of the given shape from the last three slices.
inline TailModel fitted_tail(const TimeFamily& f, TailModel shape) {
  if (shape.is_zero()) shape = TailModel::exponential(1.0, 1.0);
  double c = 0;
  for (std::size_t i = f.size() >= 3 ? f.size() - 3 : 0; i < f.size(); ++i)
    c = std::max(c, f.slices[i].coefficient_bound() / shape.profile(f.grid->s(i)));
  shape.constant = c;
  return shape;
}

inline TailModel shape_of(const TailModel& t) { return t.is_zero() ? TailModel::zero() : TailModel{t.kind, t.rate, 1.0}; }

inline TailModel shifted(const TailModel& t, double by) {
  if (t.is_zero() || t.kind == TailModel::Kind::exp) return t;
  return TailModel::poly(t.rate - by, t.constant);
}

}  // namespace detail

/// The functional equation for one p0 on one branch.
class TorusProblem {
 public:
  TorusProblem(ExpandedHamiltonian expanded, Branch branch, SolverOptions opt)
      : E_(std::move(expanded)), branch_(branch), opt_(opt), n_(E_.dim()),
        cg_(CollocationGrid::dealiasing(E_.dim(), opt.K)) {
    // Shapes come from the model's profiles alone so that every p0 of a family shares one grid.
    // d_theta a keeps the decay of a; v ~ int d_theta a loses one power, and so does m v.
    TailModel ta = TailModel::zero();
    for (const auto& md : E_.model().modes) ta = ta + md.w.tail(1.0);
    g_shape_ = detail::shape_of(ta);
    z_shape_ = ta.is_zero() ? ta : detail::shape_of(ta + detail::shifted(ta, 1));
    const TailModel driver = g_shape_.is_zero() ? z_shape_ : (z_shape_.is_zero() ? g_shape_ : z_shape_ + g_shape_);
    grid_ = solver_grid(branch, driver, opt.grid);
    const std::size_t P = cg_.size();
    mbar0_.assign(grid_->size(), std::vector<double>(P * n_ * n_));
    parallel_for(grid_->size(), [&](std::size_t j) {
      std::vector<double> th(n_);
      const Eigen::VectorXd I0 = Eigen::VectorXd::Zero(n_);
      for (std::size_t p = 0; p < P; ++p) {
        cg_.point(p, th);
        const auto T = E_.terms(th, I0, grid_->t(j), ExpandedHamiltonian::kMbar);
        std::copy(T.mbar.data(), T.mbar.data() + n_ * n_, mbar0_[j].begin() + p * n_ * n_);
      }
    });
  }

  const ExpandedHamiltonian& expanded() const { return E_; }
  const GridPtr& grid() const { return grid_; }
  Branch branch() const { return branch_; }
  const SolverOptions& options() const { return opt_; }
  const CollocationGrid& collocation() const { return cg_; }
  double l() const { return E_.model().l; }
  double sigma() const { return E_.model().sigma; }

  TorusCorrection zero() const {
    const TimeFamily f(grid_, n_, n_, opt_.K);
    return {f, f, f, f};
  }

  /// F1 = b(theta+u) + mbar(psi) v - (nabla u) Omega,
  /// F2 = d_theta a(theta+u) + (d_theta b(theta+u))^T v + (d_theta m(psi)) v.v + (nabla v) Omega.
  FunctionalValue eval(const TorusCorrection& c) const {
    FunctionalValue out{TimeFamily(grid_, n_, n_, opt_.K), TimeFamily(grid_, n_, n_, opt_.K)};
    const std::size_t P = cg_.size();
    parallel_for(grid_->size(), [&](std::size_t j) {
      const SampleArray u = synthesize(c.u.slices[j], cg_), v = synthesize(c.v.slices[j], cg_);
      const SampleArray du = synthesize(c.DuOmega.slices[j], cg_), dv = synthesize(c.DvOmega.slices[j], cg_);
      if (detail::grid_sup(u) >= 0.5) throw DomainError("eval_functional: |u| >= 1/2");
      SampleArray z{cg_, n_, std::vector<double>(P * n_)}, g = z;
      std::vector<double> phi(n_);
      Eigen::VectorXd I(n_);
      const double t = grid_->t(j);
      for (std::size_t p = 0; p < P; ++p) {
        cg_.point(p, phi);
        for (int a = 0; a < n_; ++a) {
          phi[a] += u.values[p * n_ + a];
          I[a] = v.values[p * n_ + a];
        }
        E_.check_ball(I);
        const auto T = E_.terms(phi, I, t, ExpandedHamiltonian::kB | ExpandedHamiltonian::kA |
                                               ExpandedHamiltonian::kMbar | ExpandedHamiltonian::kDm);
        const Eigen::VectorXd f1 = T.b + T.mbar * I;
        const Eigen::VectorXd f2 = T.grad_a + T.jac_b.transpose() * I + T.dm_quad;
        for (int a = 0; a < n_; ++a) {
          z.values[p * n_ + a] = f1[a] - du.values[p * n_ + a];
          g.values[p * n_ + a] = f2[a] + dv.values[p * n_ + a];
        }
      }
      out.z.slices[j] = analyze(z, opt_.K);
      out.g.slices[j] = analyze(g, opt_.K);
    });
    out.z.tail = detail::fitted_tail(out.z, z_shape_);
    out.g.tail = detail::fitted_tail(out.g, g_shape_);
    return out;
  }

  /// m0 v - z with m0 = mbar(theta, 0, t).
  TimeFamily coupled(const TimeFamily& v, const TimeFamily& z) const {
    TimeFamily out(grid_, n_, n_, opt_.K);
    const std::size_t P = cg_.size();
    parallel_for(grid_->size(), [&](std::size_t j) {
      const SampleArray vs = synthesize(v.slices[j], cg_), zs = synthesize(z.slices[j].resized(opt_.K), cg_);
      SampleArray r{cg_, n_, std::vector<double>(P * n_)};
      for (std::size_t p = 0; p < P; ++p) {
        const double* m = mbar0_[j].data() + p * n_ * n_;  // column-major n x n
        for (int a = 0; a < n_; ++a) {
          double s = -zs.values[p * n_ + a];
          for (int b = 0; b < n_; ++b) s += m[a + b * n_] * vs.values[p * n_ + b];
          r.values[p * n_ + a] = s;
        }
      }
      out.slices[j] = analyze(r, opt_.K);
    });
    return out;
  }

  /// Unique decaying solution of m0 v - (nabla u) Omega = z, (nabla v) Omega = g.
  TorusCorrection invert(const FunctionalValue& F) const {
    TorusCorrection c;
    TimeFamily g = F.g;
    if (g.order() != opt_.K)
      for (auto& s : g.slices) s = s.resized(opt_.K);
    const auto vs = solve_he(g, E_.omega());
    c.v = vs.kappa;
    c.DvOmega = g;
    TimeFamily w = coupled(c.v, F.z);
    w.tail = detail::fitted_tail(w, z_shape_);
    const auto us = solve_he(w, E_.omega());
    c.u = us.kappa;
    c.DuOmega = w;
    return c;
  }

  /// (m0 v - (nabla u) Omega, (nabla v) Omega) with the transport derivatives taken by differences.
  FunctionalValue apply_linearized(const TimeFamily& u, const TimeFamily& v) const {
    const TimeFamily du = transport_derivative(u, E_.omega());
    FunctionalValue out;
    out.g = transport_derivative(v, E_.omega());
    out.z = coupled(v, du);
    return out;
  }

  /// Correction with (nabla u) Omega, (nabla v) Omega filled by differences.
  TorusCorrection with_transport(const TimeFamily& u, const TimeFamily& v) const {
    return {u, v, transport_derivative(u, E_.omega()), transport_derivative(v, E_.omega())};
  }

  /// max{|z|_{sigma,l+1}, |g|_{sigma,l+2}}.
  double space_norm(const FunctionalValue& F) const {
    NormOptions o;
    o.with_dp = false;
    return std::max(weighted_norm(F.z, sigma(), l() + 1, o).total, weighted_norm(F.g, sigma(), l() + 2, o).total);
  }
  /// max{|u|_{sigma,l}, |v|_{sigma,l+1}}.
  double correction_norm(const TorusCorrection& c) const {
    NormOptions o;
    o.with_dp = false;
    return std::max(weighted_norm(c.u, sigma(), l(), o).total, weighted_norm(c.v, sigma(), l() + 1, o).total);
  }

  /// C-bar assembled from the homological constants of the two solves.
  double c_bar() const {
    const double w = E_.omega().norm(), L = l();
    auto c = [&](double m) { return 4.0 * (tail_bound_f(m + 1, 0) + w * tail_bound_g(m, 0) + tail_bound_f(m, 0)); };
    return c(L) * (1.0 + c(L + 1));
  }

 private:
  ExpandedHamiltonian E_;
  Branch branch_;
  SolverOptions opt_;
  int n_;
  CollocationGrid cg_;
  GridPtr grid_;
  TailModel z_shape_, g_shape_;
  std::vector<std::vector<double>> mbar0_;
};

struct ChordResult {
  TorusCorrection corr;
  std::vector<double> residuals;  // space norm of F(y_k), k = 0..iterations
  std::vector<double> ratios;     // residuals[k] / residuals[k-1]
  std::vector<double> step_norms;
  int iterations = 0;
  double mu = 0;
  double max_iterate_norm = 0;
  bool within_mu = true;
  double final_residual() const { return residuals.empty() ? 0.0 : residuals.back(); }
};

/// y_{k+1} = y_k - T F(y_k) with T the inverse of the linearization frozen at the origin.
inline ChordResult chord_iterate(const TorusProblem& P) {
  const auto& opt = P.options();
  ChordResult r;
  r.corr = P.zero();
  const auto& M = P.expanded().model();
  r.mu = 2.0 * P.c_bar() * M.upsilon * M.eps;
  int bad = 0;
  for (int k = 0;; ++k) {
    const FunctionalValue F = P.eval(r.corr);
    const double res = P.space_norm(F);
    r.residuals.push_back(res);
    if (k > 0) {
      const double ratio = r.residuals[k - 1] > 0 ? res / r.residuals[k - 1] : 0.0;
      r.ratios.push_back(ratio);
      bad = ratio > opt.divergence_ratio ? bad + 1 : 0;
      if (bad >= 3)
        throw ConvergenceError("chord iteration: contraction ratio > " + std::to_string(opt.divergence_ratio) +
                                   " for 3 consecutive steps; the smallness condition on eps (|DF(y)-DF(0)| T <= 1/2) fails",
                               "contraction <= 1/2");
    }
    if (!std::isfinite(res)) throw ConvergenceError("chord iteration: residual is not finite", "finite residual");
    if (res <= opt.tol) break;
    if (k >= opt.max_iter) {
      std::string hist;
      for (double v : r.residuals) hist += " " + std::to_string(v);
      throw ConvergenceError("chord iteration: max_iter exhausted; residual history:" + hist, "max_iter");
    }
    const TorusCorrection d = P.invert(F);
    r.step_norms.push_back(P.correction_norm(d));
    r.corr.u.axpy(-1.0, d.u);
    r.corr.v.axpy(-1.0, d.v);
    r.corr.DuOmega.axpy(-1.0, d.DuOmega);
    r.corr.DvOmega.axpy(-1.0, d.DvOmega);
    r.iterations = k + 1;
    const double nrm = P.correction_norm(r.corr);
    r.max_iterate_norm = std::max(r.max_iterate_norm, nrm);
    r.within_mu = r.within_mu && nrm <= r.mu;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Families over p0

struct TorusSolveRecord {
  Eigen::VectorXd p0, omega;
  bool converged = false;
  std::string failure;    // message when not converged
  std::string condition;  // name of the violated condition
  ChordResult chord;
  GridPtr grid;

  /// (q + u(q, t), p0 + v(q, t)) for t on this branch within the horizon (t = sign * s).
  void embed(std::span<const double> q, double t, Eigen::VectorXd& qo, Eigen::VectorXd& po) const {
    const double s = std::abs(t);
    const TorusFun u = s == 0 ? chord.corr.u.slices[0] : chord.corr.u.at(s);
    const TorusFun v = s == 0 ? chord.corr.v.slices[0] : chord.corr.v.at(s);
    Eigen::VectorXd du, dv;
    u.evaluate(q, du);
    v.evaluate(q, dv);
    qo.resize(q.size());
    for (std::size_t a = 0; a < q.size(); ++a) qo[a] = q[a] + du[a];
    po = p0 + dv;
  }
};

struct AsymptoticTorusFamily {
  Branch branch = Branch::plus;
  ModelPtr model;
  SolverOptions options;
  std::vector<TorusSolveRecord> solves;

  bool all_converged() const {
    return std::all_of(solves.begin(), solves.end(), [](const auto& s) { return s.converged; });
  }
};

inline ExpandedHamiltonian expand_for(const ModelPtr& model, const Eigen::VectorXd& p0, const SolverOptions& opt) {
  return expand_at(model, p0, model->near_integrable() ? opt.delta : 0.0);
}

/// Solves one p0. Domain and convergence failures are recorded, not thrown.
inline TorusSolveRecord solve_torus(const ModelPtr& model, const Eigen::VectorXd& p0, Branch branch,
                                    const SolverOptions& opt) {
  TorusSolveRecord rec;
  rec.p0 = p0;
  try {
    TorusProblem P(expand_for(model, p0, opt), branch, opt);
    rec.omega = P.expanded().omega();
    rec.grid = P.grid();
    rec.chord = chord_iterate(P);
    rec.converged = true;
  } catch (const ConvergenceError& e) {
    rec.failure = e.what();
    rec.condition = e.condition;
  } catch (const DomainError& e) {
    rec.failure = e.what();
    rec.condition = "domain";
  }
  return rec;
}

inline AsymptoticTorusFamily solve_family(const ModelPtr& model, const std::vector<Eigen::VectorXd>& params,
                                          Branch branch, const SolverOptions& opt) {
  AsymptoticTorusFamily fam;
  fam.branch = branch;
  fam.model = model;
  fam.options = opt;
  fam.solves.resize(params.size());
  parallel_for(params.size(), [&](std::size_t i) { fam.solves[i] = solve_torus(model, params[i], branch, opt); });
  return fam;
}

struct TheoremEstimates {
  double deviation_c1 = 0;         // sup_{p0,t} |psi^t - psi_0|_{C1 surrogate}
  double parameter_quotient = 0;   // sup_t sup_{p != p'} |(u,v)(p) - (u,v)(p')|_C0 / |p - p'|
  double deviation = 0;            // C1 part, plus the quotient in the near-integrable mode
  double c0 = 0;                   // deviation / eps
  bool lipschitz = false;
};

inline TheoremEstimates theorem_estimates(const AsymptoticTorusFamily& fam, double eps) {
  TheoremEstimates r;
  r.lipschitz = fam.model->near_integrable();
  std::vector<const TorusSolveRecord*> ok;
  for (const auto& s : fam.solves)
    if (s.converged) ok.push_back(&s);
  std::vector<double> dev(ok.size(), 0.0);
  parallel_for(ok.size(), [&](std::size_t i) {
    const CollocationGrid cg = CollocationGrid::for_norms(ok[i]->chord.corr.u.dim(), ok[i]->chord.corr.u.order());
    for (std::size_t j = 0; j < ok[i]->chord.corr.u.size(); ++j)
      dev[i] = std::max({dev[i], holder_surrogate(ok[i]->chord.corr.u.slices[j], 1.0, cg),
                         holder_surrogate(ok[i]->chord.corr.v.slices[j], 1.0, cg)});
  });
  for (double d : dev) r.deviation_c1 = std::max(r.deviation_c1, d);
  if (r.lipschitz && ok.size() >= 2) {
    const std::size_t M = ok.front()->chord.corr.u.size();
    std::vector<double> q(M, 0.0);
    parallel_for(M, [&](std::size_t j) {
      for (std::size_t a = 0; a < ok.size(); ++a)
        for (std::size_t b = a + 1; b < ok.size(); ++b) {
          if (ok[a]->chord.corr.u.size() != M || ok[b]->chord.corr.u.size() != M) continue;
          TorusFun du = ok[a]->chord.corr.u.slices[j], dv = ok[a]->chord.corr.v.slices[j];
          du -= ok[b]->chord.corr.u.slices[j];
          dv -= ok[b]->chord.corr.v.slices[j];
          const double d = std::max(detail::slice_sup(du), detail::slice_sup(dv));
          q[j] = std::max(q[j], d / (ok[a]->p0 - ok[b]->p0).norm());
        }
    });
    r.parameter_quotient = *std::max_element(q.begin(), q.end());
  }
  r.deviation = r.deviation_c1 + (r.lipschitz ? r.parameter_quotient : 0.0);
  r.c0 = eps > 0 ? r.deviation / eps : 0.0;
  return r;
}

}  // namespace kamflow
