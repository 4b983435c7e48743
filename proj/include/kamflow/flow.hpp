#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <boost/numeric/odeint.hpp>
#include <Eigen/Dense>

#include "errors.hpp"
#include "hamiltonian.hpp"
#include "homological.hpp"
#include "torus_solver.hpp"

namespace kamflow {

/// dx/dt at (x, t); x = (q, p) with q unwrapped. Throws DomainError outside its domain.
using VectorField = std::function<void(const std::vector<double>&, std::vector<double>&, double)>;

struct FlowOptions {
  double tol = 1e-10;
  double initial_step = 1e-3;
  double min_step = 1e-12;
  std::size_t max_steps = 50'000'000;
};

struct Trajectory {
  int n = 1;
  std::vector<double> times;
  std::vector<std::vector<double>> states, derivs, mids;  // mids[i]: state at the middle of step i
  double tol = 0;
  std::size_t accepted = 0, rejected = 0;
  bool domain_exit = false;
  std::string exit_reason;

  double t_begin() const { return times.front(); }
  double t_end() const { return times.back(); }

  /// Quartic interpolation on each step from both end states, end derivatives and the
  /// midpoint of the Runge-Kutta continuous extension.
  std::vector<double> at(double t) const {
    const bool fwd = times.back() >= times.front();
    const double lo = fwd ? times.front() : times.back(), hi = fwd ? times.back() : times.front();
    if (t < lo - 1e-12 || t > hi + 1e-12) throw DomainError("Trajectory::at: time outside the integrated range");
    if (times.size() == 1) return states.front();
    std::size_t i;
    if (fwd)
      i = std::upper_bound(times.begin(), times.end(), t) - times.begin();
    else
      i = std::upper_bound(times.begin(), times.end(), t, std::greater<double>()) - times.begin();
    i = std::clamp<std::size_t>(i, 1, times.size() - 1);
    const double t0 = times[i - 1], h = times[i] - t0;
    const double s = (t - t0) / h, s2 = s * s, s3 = s2 * s;
    const double h00 = 2 * s3 - 3 * s2 + 1, h10 = s3 - 2 * s2 + s, h01 = -2 * s3 + 3 * s2, h11 = s3 - s2;
    const double bump = 16 * s2 * (1 - s) * (1 - s);
    std::vector<double> x(states[i].size());
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double a = states[i - 1][k], b = states[i][k], da = h * derivs[i - 1][k], db = h * derivs[i][k];
      const double cubic_mid = 0.5 * (a + b) + 0.125 * (da - db);
      x[k] = h00 * a + h10 * da + h01 * b + h11 * db + bump * (mids[i - 1][k] - cubic_mid);
    }
    return x;
  }

  /// q reduced to [0,1)^n.
  std::vector<double> reduced(std::size_t i) const {
    std::vector<double> x = states[i];
    for (int a = 0; a < n; ++a) x[a] -= std::floor(x[a]);
    return x;
  }
};

/// Adaptive Dormand-Prince 5(4) from t0 to t1 (either direction). The error estimate of a
/// step must stay below tol * min(1, |dt|), so the local error per step is <= tol.
inline Trajectory integrate(const VectorField& field, int n, std::vector<double> x, double t0, double t1,
                            const FlowOptions& opt = {}) {
  namespace ode = boost::numeric::odeint;
  using State = std::vector<double>;
  ode::runge_kutta_dopri5<State> rk;
  Trajectory tr;
  tr.n = n;
  tr.tol = opt.tol;
  const double dir = t1 >= t0 ? 1.0 : -1.0;
  State dxdt(x.size()), xn(x.size()), dxn(x.size()), err(x.size()), xm(x.size());
  try {
    field(x, dxdt, t0);
  } catch (const DomainError& e) {
    tr.domain_exit = true;
    tr.exit_reason = e.what();
    return tr;
  }
  tr.times.push_back(t0);
  tr.states.push_back(x);
  tr.derivs.push_back(dxdt);
  double t = t0, dt = dir * std::min(opt.initial_step, std::abs(t1 - t0));
  auto sys = [&](const State& y, State& dy, double tt) { field(y, dy, tt); };
  while (dir * (t1 - t) > 0) {
    if (tr.accepted + tr.rejected >= opt.max_steps) throw StiffnessError("integrate: step budget exhausted");
    bool last = false;
    if (dir * (t + dt - t1) >= 0) {
      dt = t1 - t;
      last = true;
    }
    double e = 0;
    try {
      rk.do_step(sys, x, dxdt, t, xn, dxn, dt, err);
      // the final stage is an evaluation at the step's end, which can also leave the domain
    } catch (const DomainError& ex) {
      tr.domain_exit = true;
      tr.exit_reason = ex.what();
      return tr;
    }
    for (double v : err) e = std::max(e, std::abs(v));
    e /= opt.tol * std::min(1.0, std::abs(dt));
    if (e <= 1.0) {
      const double tn = last ? t1 : t + dt;
      rk.calc_state(t + 0.5 * dt, xm, x, dxdt, t, xn, dxn, t + dt);
      ++tr.accepted;
      tr.mids.push_back(xm);
      t = tn;
      x.swap(xn);
      dxdt.swap(dxn);
      tr.times.push_back(t);
      tr.states.push_back(x);
      tr.derivs.push_back(dxdt);
      dt *= std::clamp(0.9 * std::pow(std::max(e, 1e-10), -0.2), 0.2, 5.0);
    } else {
      ++tr.rejected;
      dt *= std::clamp(0.9 * std::pow(e, -0.25), 0.1, 0.9);
      if (std::abs(dt) < opt.min_step) throw StiffnessError("integrate: step size underflow at t = " + std::to_string(t));
    }
  }
  return tr;
}

/// (dH/dp, -dH/dq) of the model; leaves the domain when |p| >= 1.
inline VectorField model_field(const ModelPtr& model) {
  return [model](const std::vector<double>& x, std::vector<double>& dx, double t) {
    const int n = model->n;
    Eigen::VectorXd p(n), Hq, Hp;
    for (int a = 0; a < n; ++a) p[a] = x[n + a];
    if (p.norm() >= 1.0) throw DomainError("model flow: |p| >= 1");
    model->gradient(std::span<const double>(x.data(), n), p, t, Hq, Hp);
    dx.resize(2 * n);
    for (int a = 0; a < n; ++a) {
      dx[a] = Hp[a];
      dx[n + a] = -Hq[a];
    }
  };
}

/// Vector field of the expansion in (theta, I); `tilde` drops a and b.
inline VectorField expanded_field(const ExpandedHamiltonian& E, bool tilde = false) {
  return [&E, tilde](const std::vector<double>& x, std::vector<double>& dx, double t) {
    const int n = E.dim();
    Eigen::VectorXd I(n), dth, dI;
    for (int a = 0; a < n; ++a) I[a] = x[n + a];
    if (tilde)
      E.eval_Xh_tilde(std::span<const double>(x.data(), n), I, t, dth, dI);
    else
      E.eval_XH(std::span<const double>(x.data(), n), I, t, dth, dI);
    dx.resize(2 * n);
    for (int a = 0; a < n; ++a) {
      dx[a] = dth[a];
      dx[n + a] = dI[a];
    }
  };
}

/// sup over interior grid nodes and theta samples of |X_H(psi) - d_theta psi omega - d_t psi|,
/// with d_t from differences; independent of the chord iteration's stored derivatives.
inline double embedding_defect(const TorusSolveRecord& rec, const HamiltonianModel& model, int samples_per_axis = 16) {
  if (!rec.converged) return std::numeric_limits<double>::infinity();
  const auto& c = rec.chord.corr;
  const int n = model.n;
  const TimeFamily du = transport_derivative(c.u, rec.omega), dv = transport_derivative(c.v, rec.omega);
  const auto& grid = *c.u.grid;
  const CollocationGrid cg{n, std::max(samples_per_axis, 2 * c.u.order() + 2)};
  const std::size_t M = grid.size();
  const std::size_t skip = M > 2 * kResidualSkip + 1 ? kResidualSkip : 0;
  std::vector<double> sup(M, 0.0);
  parallel_for(M - 2 * skip, [&](std::size_t jj) {
    const std::size_t j = jj + skip;
    const SampleArray u = synthesize(c.u.slices[j], cg), v = synthesize(c.v.slices[j], cg);
    const SampleArray a = synthesize(du.slices[j], cg), b = synthesize(dv.slices[j], cg);
    std::vector<double> th(n);
    Eigen::VectorXd p(n), Hq, Hp;
    for (std::size_t k = 0; k < cg.size(); ++k) {
      cg.point(k, th);
      for (int i = 0; i < n; ++i) {
        th[i] += u.values[k * n + i];
        p[i] = rec.p0[i] + v.values[k * n + i];
      }
      model.gradient(th, p, grid.t(j), Hq, Hp);
      for (int i = 0; i < n; ++i) {
        sup[j] = std::max(sup[j], std::abs(Hp[i] - rec.omega[i] - a.values[k * n + i]));
        sup[j] = std::max(sup[j], std::abs(-Hq[i] - b.values[k * n + i]));
      }
    }
  });
  return *std::max_element(sup.begin(), sup.end());
}

struct ConjugacyReport {
  double t_end = 0;
  double max_deviation = 0;
  double budget = 0;
  double solver_residual = 0;   // max of the chord residual and the embedding defect
  std::vector<double> times, deviations;
  bool passed = false;
};

/// Integrates the model from phi^0(q) and compares with phi^t(q + omega t) at 50 checkpoints.
inline ConjugacyReport conjugacy_check(const TorusSolveRecord& rec, const ModelPtr& model, std::span<const double> q,
                                       double t_end, double tol = 1e-10, int checkpoints = 50) {
  ConjugacyReport r;
  r.t_end = t_end;
  const int n = model->n;
  const int sgn = rec.grid->sign();
  if (t_end > rec.grid->horizon()) throw DomainError("conjugacy_check: t_end beyond the grid horizon");
  r.solver_residual = std::max(rec.chord.final_residual(), embedding_defect(rec, *model));
  r.budget = r.solver_residual * t_end * 10.0 + tol;
  Eigen::VectorXd q0, p0;
  rec.embed(q, 0.0, q0, p0);
  std::vector<double> x(2 * n);
  for (int a = 0; a < n; ++a) {
    x[a] = q0[a];
    x[n + a] = p0[a];
  }
  FlowOptions fo;
  fo.tol = tol;
  const Trajectory tr = integrate(model_field(model), n, x, 0.0, sgn * t_end, fo);
  if (tr.domain_exit) throw DomainError("conjugacy_check: flow left the domain: " + tr.exit_reason);
  std::vector<double> qs(n);
  for (int i = 1; i <= checkpoints; ++i) {
    const double t = sgn * t_end * i / checkpoints;
    const auto y = tr.at(t);
    for (int a = 0; a < n; ++a) qs[a] = q[a] + rec.omega[a] * t;
    Eigen::VectorXd qt, pt;
    rec.embed(qs, t, qt, pt);
    double d = 0;
    for (int a = 0; a < n; ++a) d = std::max({d, std::abs(y[a] - qt[a]), std::abs(y[n + a] - pt[a])});
    r.times.push_back(t);
    r.deviations.push_back(d);
    r.max_deviation = std::max(r.max_deviation, d);
  }
  r.passed = r.max_deviation <= r.budget;
  return r;
}

}  // namespace kamflow
