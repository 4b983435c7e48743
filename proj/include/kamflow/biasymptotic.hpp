#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "decay_norms.hpp"
#include "errors.hpp"
#include "flow.hpp"
#include "hamiltonian.hpp"
#include "parallel.hpp"
#include "torus_solver.hpp"

namespace kamflow {

/// Lattice points of spacing h inside B_{3/4} (integrable) or D' = B_{1-delta} cap D.
inline std::vector<Eigen::VectorXd> parameter_lattice(const HamiltonianModel& m, double h, double delta) {
  if (!(h > 0)) throw InvalidDataError("parameter_lattice: spacing must be positive");
  const int J = static_cast<int>(std::floor(1.0 / h));
  std::vector<Eigen::VectorXd> out;
  std::vector<int> j(m.n, -J);
  while (true) {
    Eigen::VectorXd p(m.n);
    for (int a = 0; a < m.n; ++a) p[a] = h * j[a];
    const bool ok = m.near_integrable() ? m.in_good_set(p, delta) : p.norm() < 0.75;
    if (ok) out.push_back(p);
    int a = m.n - 1;
    while (a >= 0 && ++j[a] > J) j[a--] = -J;
    if (a < 0) break;
  }
  return out;
}

/// The embeddings phi^t(.; p0) of one branch, evaluated at arbitrary p0.
class EmbeddingSource {
 public:
  virtual ~EmbeddingSource() = default;
  virtual void embed(std::span<const double> q, const Eigen::VectorXd& p0, double t, Eigen::VectorXd& qo,
                     Eigen::VectorXd& po) const = 0;
  virtual Eigen::VectorXd omega(const Eigen::VectorXd& p0) const = 0;
  virtual bool admissible(const Eigen::VectorXd& p0) const = 0;
  /// Chord residual and embedding defect relevant at p0.
  virtual double solver_residual(const Eigen::VectorXd& p0) const = 0;

  Branch branch() const { return branch_; }
  const ModelPtr& model() const { return model_; }
  double c0() const { return c0_; }
  /// delta = 2 C0 eps.
  double margin() const { return 2.0 * c0_ * model_->eps; }
  double horizon() const { return horizon_; }

 protected:
  Branch branch_ = Branch::plus;
  ModelPtr model_;
  double c0_ = 0;
  mutable double horizon_ = 0;
};
using SourcePtr = std::shared_ptr<const EmbeddingSource>;

/// Integrable mode: exact solves at each requested p0, cached.
class ExactEmbedding : public EmbeddingSource {
 public:
  explicit ExactEmbedding(const AsymptoticTorusFamily& fam) : options_(fam.options) {
    branch_ = fam.branch;
    model_ = fam.model;
    c0_ = theorem_estimates(fam, model_->eps).c0;
    for (const auto& s : fam.solves)
      if (s.converged) cache_.emplace(key(s.p0), std::make_shared<const TorusSolveRecord>(s));
    if (!cache_.empty()) horizon_ = cache_.begin()->second->grid->horizon();
  }

  std::shared_ptr<const TorusSolveRecord> record(const Eigen::VectorXd& p0) const {
    const auto k = key(p0);
    {
      std::lock_guard<std::mutex> lk(mu_);
      if (auto it = cache_.find(k); it != cache_.end()) return it->second;
    }
    auto rec = std::make_shared<const TorusSolveRecord>(solve_torus(model_, p0, branch_, options_));
    if (!rec->converged)
      throw NotCoveredError("no torus at p0 = " + std::to_string(p0[0]) + ": " + rec->failure +
                                "; margin delta = 2 C0 eps = " + std::to_string(margin()),
                            margin());
    std::lock_guard<std::mutex> lk(mu_);
    if (horizon_ == 0) horizon_ = rec->grid->horizon();
    return cache_.emplace(k, rec).first->second;
  }

  void embed(std::span<const double> q, const Eigen::VectorXd& p0, double t, Eigen::VectorXd& qo,
             Eigen::VectorXd& po) const override {
    record(p0)->embed(q, t, qo, po);
  }
  Eigen::VectorXd omega(const Eigen::VectorXd& p0) const override { return model_->h.gradient(p0); }
  bool admissible(const Eigen::VectorXd& p0) const override { return p0.norm() < 0.75; }
  double solver_residual(const Eigen::VectorXd& p0) const override {
    const auto rec = record(p0);
    return std::max(rec->chord.final_residual(), embedding_defect(*rec, *model_));
  }

 private:
  static std::vector<double> key(const Eigen::VectorXd& p) { return {p.data(), p.data() + p.size()}; }
  SolverOptions options_;
  mutable std::mutex mu_;
  mutable std::map<std::vector<double>, std::shared_ptr<const TorusSolveRecord>> cache_;
};

/// Near-integrable mode: (u, v) known on the grid in D', extended in p0 componentwise by
/// McShane with the Lipschitz constant of the grid data.
class ExtendedEmbedding : public EmbeddingSource {
 public:
  explicit ExtendedEmbedding(const AsymptoticTorusFamily& fam) : delta_(fam.options.delta) {
    branch_ = fam.branch;
    model_ = fam.model;
    for (const auto& s : fam.solves)
      if (s.converged) {
        records_.push_back(s);
        points_.push_back(s.p0);
      }
    if (records_.empty()) throw InvalidDataError("ExtendedEmbedding: no converged solves in the family");
    c0_ = theorem_estimates(fam, model_->eps).c0;
    horizon_ = records_.front().grid->horizon();
  }

  void embed(std::span<const double> q, const Eigen::VectorXd& p0, double t, Eigen::VectorXd& qo,
             Eigen::VectorXd& po) const override {
    const int n = model_->n;
    const std::size_t N = records_.size();
    std::vector<std::vector<double>> vals(2 * n, std::vector<double>(N));
    Eigen::VectorXd a, b;
    for (std::size_t i = 0; i < N; ++i) {
      records_[i].embed(q, t, a, b);
      for (int c = 0; c < n; ++c) {
        vals[c][i] = a[c] - q[c];
        vals[n + c][i] = b[c] - points_[i][c];
      }
    }
    qo.resize(n);
    po.resize(n);
    for (int c = 0; c < 2 * n; ++c) {
      const double L = lipschitz_constant(points_, vals[c]);
      const double e = mcshane_extend(points_, vals[c], L)(p0);
      if (c < n)
        qo[c] = q[c] + e;
      else
        po[c - n] = p0[c - n] + e;
    }
  }
  /// Grid value at the nearest parameter point.
  Eigen::VectorXd omega(const Eigen::VectorXd& p0) const override { return records_[nearest(p0)].omega; }
  bool admissible(const Eigen::VectorXd& p0) const override { return model_->in_good_set(p0, delta_); }
  double solver_residual(const Eigen::VectorXd&) const override {
    std::call_once(residual_once_, [&] {
      std::vector<double> r(records_.size());
      for (std::size_t i = 0; i < records_.size(); ++i)
        r[i] = std::max(records_[i].chord.final_residual(), embedding_defect(records_[i], *model_));
      residual_ = *std::max_element(r.begin(), r.end());
    });
    return residual_;
  }
  double delta() const { return delta_; }
  std::size_t grid_size() const { return records_.size(); }

 private:
  std::size_t nearest(const Eigen::VectorXd& p0) const {
    std::size_t best = 0;
    for (std::size_t i = 1; i < points_.size(); ++i)
      if ((points_[i] - p0).norm() < (points_[best] - p0).norm()) best = i;
    return best;
  }
  double delta_;
  std::vector<TorusSolveRecord> records_;
  std::vector<Eigen::VectorXd> points_;
  mutable std::once_flag residual_once_;
  mutable double residual_ = 0;
};

inline SourcePtr make_source(const AsymptoticTorusFamily& fam) {
  if (fam.model->near_integrable()) return std::make_shared<const ExtendedEmbedding>(fam);
  return std::make_shared<const ExactEmbedding>(fam);
}

struct InversionOptions {
  double tol = 1e-10;
  int max_iter = 50;
  Eigen::VectorXd start_q, start_p;  // empty: start at the target
};

struct InversionResult {
  Eigen::VectorXd q, p0;  // q unwrapped, near the target's q
  int iterations = 0;     // fixed-point updates
  int evaluations = 0;    // evaluations of phi^0
  double residual = 0;
  std::vector<double> history;
};

using TimeZeroMap = std::function<void(std::span<const double>, const Eigen::VectorXd&, Eigen::VectorXd&, Eigen::VectorXd&)>;

namespace detail {

inline double wrap_half(double x) { return x - std::round(x); }

}  // namespace detail

/// Fixed point x <- x - (phi^0(x) - target) for a near-identity map; angle residuals taken mod 1.
/// The preimage's p0 must be admissible.
inline InversionResult invert_map(const TimeZeroMap& phi, const std::function<bool(const Eigen::VectorXd&)>& admissible,
                                  const Eigen::VectorXd& tq, const Eigen::VectorXd& tp, double margin,
                                  const InversionOptions& opt = {}) {
  InversionResult r;
  r.q = opt.start_q.size() ? opt.start_q : tq;
  r.p0 = opt.start_p.size() ? opt.start_p : tp;
  const int n = static_cast<int>(tq.size());
  Eigen::VectorXd qo, po;
  for (int it = 0; it < opt.max_iter; ++it) {
    phi(std::span<const double>(r.q.data(), n), r.p0, qo, po);
    Eigen::VectorXd rq(n);
    for (int a = 0; a < n; ++a) rq[a] = detail::wrap_half(qo[a] - tq[a]);
    const Eigen::VectorXd rp = po - tp;
    r.residual = std::max(rq.cwiseAbs().maxCoeff(), rp.cwiseAbs().maxCoeff());
    r.history.push_back(r.residual);
    r.evaluations = it + 1;
    r.iterations = it;
    if (r.residual <= opt.tol) {
      if (admissible && !admissible(r.p0))
        throw NotCoveredError("invert_time_zero: preimage p0 outside the admissible parameter set; margin delta = 2 C0 eps = " +
                                  std::to_string(margin),
                              margin);
      return r;
    }
    if (it >= 2 && r.residual >= r.history[it - 1])
      throw NotCoveredError("invert_time_zero: iteration stopped contracting at residual " +
                                std::to_string(r.residual) + "; margin delta = 2 C0 eps = " + std::to_string(margin),
                            margin);
    r.q -= rq;
    r.p0 -= rp;
  }
  throw NotCoveredError("invert_time_zero: no convergence in " + std::to_string(opt.max_iter) +
                            " iterations; margin delta = 2 C0 eps = " + std::to_string(margin),
                        margin);
}

inline InversionResult invert_time_zero(const EmbeddingSource& src, const Eigen::VectorXd& tq,
                                        const Eigen::VectorXd& tp, const InversionOptions& opt = {}) {
  auto phi = [&src](std::span<const double> q, const Eigen::VectorXd& p0, Eigen::VectorXd& qo, Eigen::VectorXd& po) {
    src.embed(q, p0, 0.0, qo, po);
  };
  auto adm = [&src](const Eigen::VectorXd& p0) { return src.admissible(p0); };
  return invert_map(phi, adm, tq, tp, src.margin(), opt);
}

struct BiasymptoticOrbit {
  Eigen::VectorXd target_q, target_p;
  InversionResult plus, minus;
  Eigen::VectorXd omega_plus, omega_minus;
  SourcePtr plus_source, minus_source;

  /// g(t) = phi_+^t(q_+ + omega_+ t) for t >= 0, phi_-^t(q_- + omega_- t) for t < 0; q unwrapped.
  void at(double t, Eigen::VectorXd& q, Eigen::VectorXd& p) const {
    const bool fwd = t >= 0;
    const auto& inv = fwd ? plus : minus;
    const Eigen::VectorXd qs = inv.q + (fwd ? omega_plus : omega_minus) * t;
    (fwd ? plus_source : minus_source)->embed(std::span<const double>(qs.data(), qs.size()), inv.p0, t, q, p);
  }
  /// |g(t) - (q_pm + omega_pm t, p0_pm)| in the max norm.
  double deviation(double t) const {
    Eigen::VectorXd q, p;
    at(t, q, p);
    return deviation_of(t, q, p);
  }
  double deviation_of(double t, const Eigen::VectorXd& q, const Eigen::VectorXd& p) const {
    const bool fwd = t >= 0;
    const auto& inv = fwd ? plus : minus;
    const Eigen::VectorXd q_lin = inv.q + (fwd ? omega_plus : omega_minus) * t;
    return std::max((q - q_lin).cwiseAbs().maxCoeff(), (p - inv.p0).cwiseAbs().maxCoeff());
  }
};

/// Both preimages of the target; GlueError names the failing branch (+1 or -1).
inline BiasymptoticOrbit glue(const SourcePtr& plus, const SourcePtr& minus, const Eigen::VectorXd& tq,
                              const Eigen::VectorXd& tp, const InversionOptions& opt = {}) {
  if (!plus->model()->near_integrable() && tp.norm() >= 0.5)
    throw GlueError("glue: target outside T^n × B_{1/2}, the integrable coverage guarantee", 0);
  BiasymptoticOrbit o;
  o.target_q = tq;
  o.target_p = tp;
  o.plus_source = plus;
  o.minus_source = minus;
  try {
    o.plus = invert_time_zero(*plus, tq, tp, opt);
  } catch (const NotCoveredError& e) {
    throw GlueError(std::string("glue: plus branch: ") + e.what(), +1);
  }
  try {
    o.minus = invert_time_zero(*minus, tq, tp, opt);
  } catch (const NotCoveredError& e) {
    throw GlueError(std::string("glue: minus branch: ") + e.what(), -1);
  }
  o.omega_plus = plus->omega(o.plus.p0);
  o.omega_minus = minus->omega(o.minus.p0);
  return o;
}

struct ConvergenceReport {
  std::vector<double> times;  // positive, log-spaced; series index i refers to +times[i] and -times[i]
  std::vector<double> torus_plus, torus_minus;
  std::vector<double> flow_plus, flow_minus;  // NaN beyond the flow window
  double slope_plus = std::nan(""), slope_minus = std::nan("");  // torus series over [t_max/10, t_max]
  double flow_slope_plus = std::nan(""), flow_slope_minus = std::nan("");  // over the flow window's last decade
  double torus_window_slope_plus = std::nan(""), torus_window_slope_minus = std::nan("");
  double flow_window = 0;
  double agreement = 0;  // max |flow - torus| inside the flow window
  double budget = 0;  // solver residual and integrator terms, plus inversion residual times (1 + twist t)
  bool agree = false;
};

struct DiagnosticsOptions {
  int points = 41;
  double t_min = 1.0;
  double flow_window = 20.0;
  double flow_tol = 1e-10;
};

inline ConvergenceReport convergence_diagnostics(const BiasymptoticOrbit& o, double t_max,
                                                 const DiagnosticsOptions& opt = {}) {
  const double H = std::min(o.plus_source->horizon(), o.minus_source->horizon());
  if (t_max > H) throw DomainError("convergence_diagnostics: t_max beyond the grid horizon");
  ConvergenceReport r;
  r.flow_window = std::min(opt.flow_window, t_max);
  const int P = std::max(opt.points, 2);
  for (int i = 0; i < P; ++i) r.times.push_back(opt.t_min * std::pow(t_max / opt.t_min, double(i) / (P - 1)));
  r.torus_plus.resize(P);
  r.torus_minus.resize(P);
  parallel_for(static_cast<std::size_t>(2 * P), [&](std::size_t job) {
    const int i = static_cast<int>(job / 2);
    if (job % 2 == 0)
      r.torus_plus[i] = o.deviation(r.times[i]);
    else
      r.torus_minus[i] = o.deviation(-r.times[i]);
  });
  auto fit = [&](const std::vector<double>& dev, double lo, double hi) {
    std::vector<double> xs, ys;
    for (int i = 0; i < P; ++i)
      if (r.times[i] >= lo * (1 - 1e-12) && r.times[i] <= hi * (1 + 1e-12) && std::isfinite(dev[i])) {
        xs.push_back(r.times[i]);
        ys.push_back(dev[i]);
      }
    if (xs.size() < 2 || *std::min_element(ys.begin(), ys.end()) <= 0) return std::nan("");
    return loglog_slope(xs, ys);
  };
  r.slope_plus = fit(r.torus_plus, t_max / 10, t_max);
  r.slope_minus = fit(r.torus_minus, t_max / 10, t_max);

  // independent check: integrate the model from g(0)
  const auto model = o.plus_source->model();
  const int n = model->n;
  Eigen::VectorXd q0, p0;
  o.at(0.0, q0, p0);
  std::vector<double> x(2 * n);
  for (int a = 0; a < n; ++a) {
    x[a] = q0[a];
    x[n + a] = p0[a];
  }
  FlowOptions fo;
  fo.tol = opt.flow_tol;
  Trajectory tr[2];
  parallel_for(2, [&](std::size_t b) {
    tr[b] = integrate(model_field(model), n, x, 0.0, b == 0 ? r.flow_window : -r.flow_window, fo);
  });
  r.flow_plus.assign(P, std::nan(""));
  r.flow_minus.assign(P, std::nan(""));
  for (int i = 0; i < P; ++i) {
    if (r.times[i] > r.flow_window * (1 + 1e-12)) continue;
    for (int b = 0; b < 2; ++b) {
      const double t = b == 0 ? r.times[i] : -r.times[i];
      if (tr[b].domain_exit && std::abs(t) > std::abs(tr[b].t_end())) continue;
      const auto y = tr[b].at(t);
      Eigen::VectorXd q(n), p(n);
      for (int a = 0; a < n; ++a) {
        q[a] = y[a];
        p[a] = y[n + a];
      }
      const double d = o.deviation_of(t, q, p);
      (b == 0 ? r.flow_plus : r.flow_minus)[i] = d;
      const double tor = (b == 0 ? r.torus_plus : r.torus_minus)[i];
      r.agreement = std::max(r.agreement, std::abs(d - tor));
    }
  }
  r.flow_slope_plus = fit(r.flow_plus, r.flow_window / 10, r.flow_window);
  r.flow_slope_minus = fit(r.flow_minus, r.flow_window / 10, r.flow_window);
  r.torus_window_slope_plus = fit(r.torus_plus, r.flow_window / 10, r.flow_window);
  r.torus_window_slope_minus = fit(r.torus_minus, r.flow_window / 10, r.flow_window);
  const double res = std::max(o.plus_source->solver_residual(o.plus.p0), o.minus_source->solver_residual(o.minus.p0));
  // g(0) sits on each torus only up to the inversion residual; the twist turns that into linear drift
  double twist = 1.0;
  for (const auto* p0 : {&o.plus.p0, &o.minus.p0}) {
    Eigen::MatrixXd hess;
    model->h.eval(*p0, nullptr, nullptr, &hess);
    twist = std::max(twist, hess.cwiseAbs().rowwise().sum().maxCoeff());
  }
  const double start = std::max(o.plus.residual, o.minus.residual);
  r.budget = res * r.flow_window * 10.0 + opt.flow_tol + start * (1.0 + twist * r.flow_window);
  r.agree = r.agreement <= r.budget;
  return r;
}

struct CoverageSample {
  Eigen::VectorXd q, p;
  bool covered = false;
  int failed_branch = 0;  // +1 / -1 when not covered
};

struct CoverageReport {
  std::size_t samples = 0, failures = 0;
  double fraction = 0, half_width = 0;
  double mu = 0, ball_measure = 0, threshold = 0;
  double delta = 0, margin = 0;  // solve shrink and 2 C0 eps
  std::uint64_t seed = 0;
  std::vector<CoverageSample> list;
  bool passed = true;
};

/// Monte Carlo over uniform targets in T^n x B_1.
inline CoverageReport coverage_estimate(const SourcePtr& plus, const SourcePtr& minus, std::size_t samples,
                                        std::uint64_t seed, const InversionOptions& opt = {}) {
  const auto& M = *plus->model();
  const int n = M.n;
  CoverageReport r;
  r.samples = samples;
  r.seed = seed;
  r.mu = M.excluded_measure();
  r.ball_measure = M.ball_measure();
  r.margin = std::max(plus->margin(), minus->margin());
  if (auto* e = dynamic_cast<const ExtendedEmbedding*>(plus.get())) r.delta = e->delta();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uq(0.0, 1.0), up(-1.0, 1.0);
  r.list.resize(samples);
  for (auto& s : r.list) {
    s.q.resize(n);
    s.p.resize(n);
    for (int a = 0; a < n; ++a) s.q[a] = uq(rng);
    do {
      for (int a = 0; a < n; ++a) s.p[a] = up(rng);
    } while (s.p.norm() >= 1.0);
  }
  parallel_for(samples, [&](std::size_t i) {
    auto& s = r.list[i];
    try {
      glue(plus, minus, s.q, s.p, opt);
      s.covered = true;
    } catch (const GlueError& e) {
      s.failed_branch = e.branch;
    }
  });
  for (const auto& s : r.list) r.failures += s.covered ? 0 : 1;
  if (samples > 0) {
    r.fraction = double(r.failures) / samples;
    r.half_width = 1.96 * std::sqrt(r.fraction * (1 - r.fraction) / samples);
  }
  r.threshold = 4.0 * r.mu / r.ball_measure + 3.0 * r.half_width;
  r.passed = r.fraction <= r.threshold;
  return r;
}

}  // namespace kamflow
