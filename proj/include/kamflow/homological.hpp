#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "decay_norms.hpp"
#include "errors.hpp"
#include "numerics.hpp"
#include "parallel.hpp"
#include "torus_fourier.hpp"

namespace kamflow {

inline constexpr int kFilonDegree = 9;
inline constexpr int kDerivativePoints = 11;
inline constexpr int kResidualSkip = 5;

struct HomologicalSolution {
  TimeFamily kappa;
  Eigen::VectorXd omega;
  double residual_sup = 0;
  double residual_tolerance = 0;
  double decay_fit_exponent = std::nan("");  // -slope of log |kappa^t|_C0 over the last decade
  double tail_error_bound = 0;               // bound on the truncated oscillatory tail
  bool weak_tail = false;                    // g decays like |t|^{-e} with e <= 2
};

struct SolverGridOptions {
  double rho = 0.02;
  double tail_budget = 1e-10;
  double min_horizon = 20.0;
};

/// Log-uniform grid long enough that the rhs tail beyond the horizon is below the budget.
inline GridPtr solver_grid(Branch branch, const TailModel& rhs_tail, const SolverGridOptions& opt = {}) {
  double T = opt.min_horizon;
  if (!rhs_tail.is_zero()) T = std::max(T, horizon_for_tail(rhs_tail, opt.tail_budget));
  return std::make_shared<const TimeGrid>(TimeGrid::log_uniform(branch, opt.rho, T));
}

namespace detail {

/// Per-interval Taylor data of the local degree-7 interpolant: taylor[d][i] * g(stencil_i)
/// is the coefficient of x^d, x = (s - s_j)/h_j in [0,1].
struct FilonPlan {
  std::vector<int> start;
  std::vector<double> h;
  std::vector<std::vector<std::vector<double>>> taylor;

  explicit FilonPlan(const TimeGrid& g) {
    const auto& x = g.nodes();
    const int M = static_cast<int>(x.size());
    const int width = std::min(kFilonDegree + 1, M);
    for (int j = 0; j + 1 < M; ++j) {
      const int s0 = stencil_start(j, width, M, width / 2 - 1);
      const double hj = x[j + 1] - x[j];
      auto w = fornberg_weights(x[j], std::span<const double>(x.data() + s0, width), width - 1);
      double scale = 1.0;
      for (int d = 0; d < width; ++d) {
        for (auto& v : w[d]) v *= scale;
        scale *= hj / (d + 1);
      }
      start.push_back(s0);
      h.push_back(hj);
      taylor.push_back(std::move(w));
    }
  }
};

/// kappa(s) = -int_s^inf g(tau) e^{i w (tau - s)} dtau on the grid; g given at nodes,
/// kappa_end the value at the horizon.
inline void filon_backward(const FilonPlan& plan, std::span<const cplx> g, double w, cplx kappa_end,
                           std::span<cplx> out) {
  const int M = static_cast<int>(g.size());
  const cplx i1(0.0, 1.0);
  std::array<cplx, kFilonDegree + 1> mu;
  out[M - 1] = kappa_end;
  for (int j = M - 2; j >= 0; --j) {
    const auto& tay = plan.taylor[j];
    const int width = static_cast<int>(tay.size());
    const double theta = w * plan.h[j];
    filon_moments(theta, width - 1, std::span<cplx>(mu.data(), width));
    cplx I = 0.0;
    for (int i = 0; i < width; ++i) {
      cplx wi = 0.0;
      for (int d = 0; d < width; ++d) wi += tay[d][i] * mu[d];
      I += wi * g[plan.start[j] + i];
    }
    I *= plan.h[j];
    out[j] = -I + std::exp(i1 * theta) * out[j + 1];
  }
}

/// Value of -int_T^inf ghat(tau) e^{i w (tau-T)} dtau when ghat follows the tail profile past T.
inline cplx tail_start_value(const TailModel& tail, double T, cplx gT, double w) {
  if (tail.is_zero()) return 0.0;
  const cplx i1(0.0, 1.0);
  if (tail.kind == TailModel::Kind::exp) return -gT / (tail.rate - i1 * w);
  const double e = tail.rate;
  if (std::abs(w) < 1e-14) return -gT * (1.0 + std::pow(T, e)) * power_tail_integral(e, T);
  const double lam = T > 0 ? e * std::pow(T, e - 1) / (1.0 + std::pow(T, e)) : 0.0;
  return -gT / (lam - i1 * w);
}

inline double mode_frequency(const TorusFun& f, std::size_t idx, const Eigen::VectorXd& omega, std::vector<int>& k) {
  f.mode_of(idx, k);
  double w = 0;
  for (int a = 0; a < f.dim(); ++a) w += k[a] * omega[a];
  return two_pi * w;
}

/// Nine-point Fornberg first-derivative weights at every node (one-sided near the ends).
struct DerivativePlan {
  std::vector<int> start;
  std::vector<std::vector<double>> w;
  explicit DerivativePlan(const TimeGrid& g) {
    const auto& x = g.nodes();
    const int M = static_cast<int>(x.size());
    const int width = std::min(kDerivativePoints, M);
    for (int j = 0; j < M; ++j) {
      const int s0 = stencil_start(j, width, M, width / 2);
      start.push_back(s0);
      w.push_back(fornberg_weights(x[j], std::span<const double>(x.data() + s0, width), 1)[1]);
    }
  }
};

inline double slice_sup(const TorusFun& f) {
  if (f.order() == 0) {
    double m = 0;
    for (int c = 0; c < f.range(); ++c) m = std::max(m, std::abs(f.coeff(0, c)));
    return m;
  }
  return grid_sup(synthesize(f, CollocationGrid::for_norms(f.dim(), f.order())));
}

}  // namespace detail

/// (nabla_{theta t} kappa) Omega = omega.d_theta kappa + d_t kappa with d_t from nine-point stencils.
inline TimeFamily transport_derivative(const TimeFamily& kappa, const Eigen::VectorXd& omega) {
  const TimeGrid& grid = *kappa.grid;
  const int M = static_cast<int>(grid.size());
  const int sgn = grid.sign();
  const detail::DerivativePlan dp(grid);
  TimeFamily out(kappa.grid, kappa.dim(), kappa.range(), kappa.order(), kappa.tail);
  const cplx i1(0.0, 1.0);
  parallel_for(static_cast<std::size_t>(M), [&](std::size_t jj) {
    const int j = static_cast<int>(jj);
    TorusFun& r = out.slices[j];
    std::vector<int> k(kappa.dim());
    const auto& w = dp.w[j];
    for (std::size_t m = 0; m < r.mode_count(); ++m) {
      const double wk = detail::mode_frequency(r, m, omega, k);
      for (int c = 0; c < r.range(); ++c) {
        cplx ds = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) ds += w[i] * kappa.slices[dp.start[j] + i].coeff(m, c);
        r.coeff(m, c) = i1 * wk * kappa.slices[j].coeff(m, c) + double(sgn) * ds;
      }
    }
  });
  return out;
}

/// sup over nodes away from both ends and over the collocation grid of |a - b|.
inline double interior_distance(const TimeFamily& a, const TimeFamily& b) {
  if (!(*a.grid == *b.grid)) throw InvalidDataError("interior_distance: grid mismatch");
  if (a.range() != b.range() || a.dim() != b.dim()) throw InvalidDataError("interior_distance: shape mismatch");
  const int M = static_cast<int>(a.size());
  const int skip = M > 2 * kResidualSkip + 1 ? kResidualSkip : 0;
  const int K = std::max(a.order(), b.order());
  std::vector<double> sup(M, 0.0);
  parallel_for(static_cast<std::size_t>(M - 2 * skip), [&](std::size_t jj) {
    const int j = static_cast<int>(jj) + skip;
    TorusFun d = a.slices[j].resized(K);
    d -= b.slices[j];
    sup[j] = detail::slice_sup(d);
  });
  return *std::max_element(sup.begin(), sup.end());
}

/// sup over interior nodes and the collocation grid of |omega.d_theta kappa + d_t kappa - g|.
inline double residual(const TimeFamily& kappa, const TimeFamily& g, const Eigen::VectorXd& omega) {
  if (!(*kappa.grid == *g.grid)) throw InvalidDataError("residual: grid mismatch");
  if (kappa.range() != g.range() || kappa.dim() != g.dim()) throw InvalidDataError("residual: shape mismatch");
  return interior_distance(transport_derivative(kappa, omega), g);
}

/// Solves omega.d_theta kappa + d_t kappa = g with kappa -> 0 as t -> sign * infinity,
/// mode by mode along the characteristics.
inline HomologicalSolution solve_he(const TimeFamily& g, const Eigen::VectorXd& omega) {
  if (omega.size() != g.dim()) throw InvalidDataError("solve_he: omega has wrong dimension");
  HomologicalSolution sol;
  sol.omega = omega;
  const TimeGrid& grid = *g.grid;
  const int M = static_cast<int>(grid.size());
  const int sgn = grid.sign();
  const double T = grid.horizon();
  if (!g.tail.is_zero() && g.tail.kind == TailModel::Kind::poly) {
    if (g.tail.rate <= 1.0) throw DivergentIntegralError("solve_he: rhs tail exponent <= 1 is not integrable");
    sol.weak_tail = g.tail.rate <= 2.0;
  }
  sol.tail_error_bound = g.tail.integral_from(T);
  sol.kappa = TimeFamily(g.grid, g.dim(), g.range(), g.order(), g.tail.integrated(T));
  const detail::FilonPlan plan(grid);
  const std::size_t modes = g.slices.front().mode_count();
  const int range = g.range();
  parallel_for(modes * range, [&](std::size_t job) {
    const std::size_t m = job / range;
    const int c = static_cast<int>(job % range);
    std::vector<int> k(g.dim());
    const double w = sgn * detail::mode_frequency(g.slices.front(), m, omega, k);
    std::vector<cplx> gh(M), out(M);
    bool zero = true;
    for (int j = 0; j < M; ++j) {
      gh[j] = g.slices[j].coeff(m, c);
      zero = zero && gh[j] == 0.0;
    }
    if (zero) return;
    const cplx end = detail::tail_start_value(g.tail, T, gh[M - 1], w);
    detail::filon_backward(plan, gh, w, end, out);
    for (int j = 0; j < M; ++j) sol.kappa.slices[j].coeff(m, c) = double(sgn) * out[j];
  });
  sol.residual_sup = residual(sol.kappa, g, omega);
  double gsup = 0;
  for (const auto& s : g.slices) gsup = std::max(gsup, detail::slice_sup(s));
  sol.residual_tolerance = 1e-8 * (1.0 + gsup);
  // decay fit over [T/10, T]
  std::vector<double> xs, ys;
  for (int j = 0; j < M; ++j)
    if (grid.s(j) >= T / 10) {
      xs.push_back(grid.s(j));
      ys.push_back(detail::slice_sup(sol.kappa.slices[j]));
    }
  sol.decay_fit_exponent = -loglog_slope(xs, ys);
  return sol;
}

struct DecayEstimateReport {
  double kappa_norm = 0, g_norm = 0, ratio = 0, c_check = 0;
  bool passed = false;
};

/// |kappa|_{sigma,l} against |g|_{sigma,l+1} with C = 4 (f_{l+1}(0) + |omega| g_l(0) + f_l(0)).
inline DecayEstimateReport decay_estimate_check(const HomologicalSolution& sol, const TimeFamily& g, double sigma,
                                                double l) {
  DecayEstimateReport r;
  r.c_check = 4.0 * (tail_bound_f(l + 1, 0) + sol.omega.norm() * tail_bound_g(l, 0) + tail_bound_f(l, 0));
  NormOptions opt;
  opt.with_dp = false;
  r.g_norm = weighted_norm(g, sigma, l + 1, opt).total;
  r.kappa_norm = weighted_norm(sol.kappa, sigma, l, opt).total;
  r.ratio = r.g_norm > 0 ? r.kappa_norm / r.g_norm : 0.0;
  r.passed = std::isfinite(r.ratio) && r.ratio <= r.c_check;
  return r;
}

}  // namespace kamflow
