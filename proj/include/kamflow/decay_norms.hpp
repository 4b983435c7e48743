#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <Eigen/Dense>

#include "errors.hpp"
#include "numerics.hpp"
#include "parallel.hpp"
#include "torus_fourier.hpp"

namespace kamflow {

enum class Branch { plus = 1, minus = -1 };

inline int sign_of(Branch b) { return static_cast<int>(b); }
inline const char* name_of(Branch b) { return b == Branch::plus ? "plus" : "minus"; }

// ---------------------------------------------------------------------------
// Tail integrals f_m, g_m

namespace detail {

inline double power_tail_integral(double m, double t) {  // int_t^inf dtau/(1+tau^m)
  const double T = std::max(t, 8.0);
  double head = 0.0;
  if (T > t)
    head = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
        [m](double x) { return 1.0 / (1.0 + std::pow(x, m)); }, t, T, 12, 1e-13);
  double tail = 0.0, sign = 1.0;
  for (int k = 0; k < 400; ++k) {
    const double e = (k + 1) * m;
    const double term = std::pow(T, 1.0 - e) / (e - 1.0);
    tail += sign * term;
    sign = -sign;
    if (term < 1e-18 * std::abs(tail)) break;
  }
  return head + tail;
}

inline double lever_tail_integral(double m, double t) {  // int_t^inf (tau-t)/(1+tau^{m+1}) dtau
  const double T = std::max(t, 8.0);
  double head = 0.0;
  if (T > t)
    head = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(
        [m, t](double x) { return (x - t) / (1.0 + std::pow(x, m + 1.0)); }, t, T, 12, 1e-13);
  double tail = 0.0, sign = 1.0;
  for (int k = 0; k < 400; ++k) {
    const double e = (k + 1) * (m + 1.0);
    const double term =
        std::pow(T, 2.0 - e) / (e - 2.0) - t * std::pow(T, 1.0 - e) / (e - 1.0);
    tail += sign * term;
    sign = -sign;
    if (std::abs(term) < 1e-18 * std::abs(tail)) break;
  }
  return head + tail;
}

}  // namespace detail

/// f_m(t) = (1+t^{m-1}) int_t^inf dtau/(1+tau^m); tends to 1/(m-1).
inline double tail_bound_f(double m, double t) {
  if (!(m > 1.0)) throw DivergentIntegralError("tail_bound_f: m <= 1");
  if (t < 0) throw DomainError("tail_bound_f: t < 0");
  return (1.0 + std::pow(t, m - 1.0)) * detail::power_tail_integral(m, t);
}

/// g_m(t) = (1+t^{m-1}) int_t^inf (tau-t)/(1+tau^{m+1}) dtau; tends to 1/(m(m-1)).
inline double tail_bound_g(double m, double t) {
  if (!(m > 1.0)) throw DivergentIntegralError("tail_bound_g: m <= 1");
  if (t < 0) throw DomainError("tail_bound_g: t < 0");
  return (1.0 + std::pow(t, m - 1.0)) * detail::lever_tail_integral(m, t);
}

// ---------------------------------------------------------------------------
// Tail models

/// Declared bound for |slice|_C0 beyond the grid: c/(1+s^rate) or c*exp(-rate*s).
struct TailModel {
  enum class Kind { poly, exp };
  Kind kind = Kind::poly;
  double rate = 2.0;
  double constant = 0.0;

  static TailModel poly(double exponent, double c) { return {Kind::poly, exponent, c}; }
  static TailModel exponential(double lambda, double c) { return {Kind::exp, lambda, c}; }
  static TailModel zero() { return {Kind::exp, 1.0, 0.0}; }

  bool is_zero() const { return constant == 0.0; }
  double poly_exponent() const {
    return kind == Kind::exp ? std::numeric_limits<double>::infinity() : rate;
  }
  double profile(double s) const {
    return kind == Kind::poly ? 1.0 / (1.0 + std::pow(s, rate)) : std::exp(-rate * s);
  }
  double bound(double s) const { return constant * profile(s); }

  /// int_T^inf bound(s) ds.
  double integral_from(double T) const {
    if (is_zero()) return 0.0;
    if (kind == Kind::exp) return constant * std::exp(-rate * T) / rate;
    if (rate <= 1.0) return std::numeric_limits<double>::infinity();
    return constant * detail::power_tail_integral(rate, T);
  }

  /// Bound for s -> int_s^inf of data with this tail, valid for s >= T.
  TailModel integrated(double T) const {
    if (is_zero()) return zero();
    if (kind == Kind::exp) return exponential(rate, constant / rate);
    if (rate <= 1.0) throw DivergentIntegralError("tail exponent <= 1 is not integrable");
    return poly(rate - 1.0, constant * std::max(tail_bound_f(rate, T), 1.0 / (rate - 1.0)));
  }

  TailModel scaled(double s) const {
    TailModel t = *this;
    t.constant *= std::abs(s);
    return t;
  }

  /// Re-expressed as a poly tail of the given exponent (valid on s >= 0).
  double constant_as_poly(double exponent) const {
    if (is_zero()) return 0.0;
    if (kind == Kind::exp) {
      // sup_s (1+s^e) e^{-lambda s} <= 1 + (e/lambda)^e e^{-e}
      return constant * (1.0 + std::pow(exponent / rate, exponent) * std::exp(-exponent));
    }
    if (rate >= exponent) return 2.0 * constant;  // (1+s^e)/(1+s^r) <= 2 for r >= e
    return std::numeric_limits<double>::infinity();
  }
};

/// Sum of two tails: the weaker decay wins.
inline TailModel operator+(const TailModel& a, const TailModel& b) {
  if (a.is_zero()) return b;
  if (b.is_zero()) return a;
  if (a.kind == TailModel::Kind::exp && b.kind == TailModel::Kind::exp)
    return TailModel::exponential(std::min(a.rate, b.rate), a.constant + b.constant);
  const double e = std::min(a.poly_exponent(), b.poly_exponent());
  return TailModel::poly(e, a.constant_as_poly(e) + b.constant_as_poly(e));
}

/// Smallest horizon T with int_T^inf profile <= budget.
inline double horizon_for_tail(const TailModel& tail, double budget) {
  if (tail.kind == TailModel::Kind::exp) return std::max(1.0, std::log(1.0 / (tail.rate * budget)) / tail.rate);
  if (tail.rate <= 1.0) throw DivergentIntegralError("horizon_for_tail: tail exponent <= 1");
  double lo = 0.0, hi = 1.0;
  while (detail::power_tail_integral(tail.rate, std::exp(hi)) > budget) {
    hi *= 2.0;
    if (hi > 60) return std::exp(60.0);
  }
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    (detail::power_tail_integral(tail.rate, std::exp(mid)) > budget ? lo : hi) = mid;
  }
  return std::exp(hi);
}

// ---------------------------------------------------------------------------
// Time grids and families

/// One-sided grid s_0 = 0 < s_1 < ... < s_M; physical time is t = sign * s.
class TimeGrid {
 public:
  TimeGrid(Branch branch, std::vector<double> s) : branch_(branch), s_(std::move(s)) {
    if (s_.size() < 2 || s_[0] != 0.0) throw InvalidDataError("TimeGrid: needs s_0 = 0 and >= 2 nodes");
    for (std::size_t i = 1; i < s_.size(); ++i)
      if (!(s_[i] > s_[i - 1])) throw InvalidDataError("TimeGrid: nodes not strictly increasing");
    for (std::size_t i = 2; i < s_.size(); ++i) {
      const double r = (s_[i] - s_[i - 1]) / (s_[i - 1] - s_[i - 2]);
      if (r < 1.0 - 1e-9 || r > 4.0) throw InvalidDataError("TimeGrid: spacing ratio outside [1,4]");
    }
  }

  /// s_j = e^{rho j} - 1 up to the first node >= horizon.
  static TimeGrid log_uniform(Branch branch, double rho, double horizon) {
    if (!(rho > 0) || !(horizon > 0)) throw InvalidDataError("TimeGrid: rho and horizon must be positive");
    std::vector<double> s{0.0};
    for (int j = 1; s.back() < horizon; ++j) s.push_back(std::expm1(rho * j));
    return TimeGrid(branch, std::move(s));
  }
  /// Log-uniform grid with exactly `nodes` nodes ending at horizon.
  static TimeGrid log_uniform_count(Branch branch, int nodes, double horizon) {
    const double rho = std::log1p(horizon) / (nodes - 1);
    std::vector<double> s(nodes);
    for (int j = 0; j < nodes; ++j) s[j] = std::expm1(rho * j);
    s.back() = horizon;
    return TimeGrid(branch, std::move(s));
  }

  Branch branch() const { return branch_; }
  int sign() const { return sign_of(branch_); }
  std::size_t size() const { return s_.size(); }
  double s(std::size_t i) const { return s_[i]; }
  double t(std::size_t i) const { return sign() * s_[i]; }
  double horizon() const { return s_.back(); }
  const std::vector<double>& nodes() const { return s_; }
  bool operator==(const TimeGrid& o) const { return branch_ == o.branch_ && s_ == o.s_; }

 private:
  Branch branch_;
  std::vector<double> s_;
};

using GridPtr = std::shared_ptr<const TimeGrid>;

inline constexpr int kInterpolationPoints = 8;

/// Fornberg interpolation weights at s over the stencil returned in `start`.
inline std::vector<double> interpolation_weights(const TimeGrid& g, double s, int& start) {
  const auto& x = g.nodes();
  const int M = static_cast<int>(x.size());
  const int width = std::min(kInterpolationPoints, M);
  const int j = static_cast<int>(std::upper_bound(x.begin(), x.end(), s) - x.begin()) - 1;
  start = stencil_start(std::max(j, 0), width, M, width / 2 - 1);
  const auto w = fornberg_weights(s, std::span<const double>(x.data() + start, width), 0);
  return w[0];
}

/// Time-indexed torus functions with a declared tail beyond the horizon.
struct TimeFamily {
  GridPtr grid;
  std::vector<TorusFun> slices;
  TailModel tail = TailModel::zero();

  TimeFamily() = default;
  TimeFamily(GridPtr g, int dim, int range, int order, TailModel t = TailModel::zero())
      : grid(std::move(g)), slices(grid->size(), TorusFun(dim, range, order)), tail(t) {}

  std::size_t size() const { return slices.size(); }
  int dim() const { return slices.front().dim(); }
  int range() const { return slices.front().range(); }
  int order() const { return slices.front().order(); }

  /// Slice at s >= 0: interpolated inside the grid, tail-scaled last slice beyond it.
  TorusFun at(double s) const {
    if (s < 0) throw DomainError("TimeFamily::at: s < 0");
    if (s > grid->horizon()) {
      if (tail.is_zero()) return TorusFun(dim(), range(), order());
      return (tail.profile(s) / tail.profile(grid->horizon())) * slices.back();
    }
    int start = 0;
    const auto w = interpolation_weights(*grid, s, start);
    TorusFun out(dim(), range(), order());
    for (std::size_t i = 0; i < w.size(); ++i) out.axpy(w[i], slices[start + i]);
    return out;
  }

  TimeFamily& axpy(double a, const TimeFamily& o) {
    if (!(*grid == *o.grid)) throw InvalidDataError("TimeFamily: grid mismatch");
    for (std::size_t i = 0; i < slices.size(); ++i) slices[i].axpy(a, o.slices[i]);
    tail = tail + o.tail.scaled(a);
    return *this;
  }

  /// Sanity check: last three slice sups below 4x the declared bound.
  bool tail_consistent(const CollocationGrid& cg, double factor = 4.0) const {
    for (std::size_t i = size() >= 3 ? size() - 3 : 0; i < size(); ++i) {
      const double v = holder_surrogate(slices[i], 0.0, cg);
      if (v > factor * tail.bound(grid->s(i)) + 1e-300) return false;
    }
    return true;
  }
};

// ---------------------------------------------------------------------------
// Parameter families and weighted norms

/// A TimeFamily per parameter point, optionally with analytic d/dp slices.
struct ParamFamily {
  std::vector<Eigen::VectorXd> params;
  std::vector<TimeFamily> values;
  std::vector<std::vector<TimeFamily>> dp;  // dp[i][axis]; empty when unavailable
  bool p_independent = false;

  static ParamFamily independent(TimeFamily f) {
    ParamFamily pf;
    pf.params.push_back(Eigen::VectorXd::Zero(1));
    pf.values.push_back(std::move(f));
    pf.p_independent = true;
    return pf;
  }
};

struct WeightedNorm {
  double sigma = 1, l = 0;
  double c0_part = 0, dp_part = 0, total = 0;
  bool tail_violation = false;
  std::string dp_source = "none";  // analytic | difference | independent | none
};

struct NormOptions {
  int grid_N = 0;  // 0: CollocationGrid::for_norms
  bool with_dp = true;
};

namespace detail {

inline CollocationGrid norm_grid(const TimeFamily& f, const NormOptions& o) {
  return o.grid_N > 0 ? CollocationGrid{f.dim(), o.grid_N} : CollocationGrid::for_norms(f.dim(), f.order());
}

inline double weight(double s, double l) { return l == 0 ? 1.0 : 1.0 + std::pow(s, l); }

// sup_j surrogate(slice_j) * weight(s_j, l)
inline double weighted_sup(const TimeFamily& f, double sigma, double l, const CollocationGrid& cg) {
  std::vector<double> v(f.size());
  parallel_for(f.size(), [&](std::size_t j) {
    v[j] = holder_surrogate(f.slices[j], sigma, cg) * weight(f.grid->s(j), l);
  });
  return v.empty() ? 0.0 : *std::max_element(v.begin(), v.end());
}

inline bool violates(const TailModel& tail, double l) {
  return !tail.is_zero() && tail.poly_exponent() < l;
}

}  // namespace detail

/// |f|_{sigma,l}: weighted C^sigma surrogate plus weighted C0 of d/dp.
inline WeightedNorm weighted_norm(const ParamFamily& f, double sigma, double l, const NormOptions& opt = {}) {
  if (!(l >= 1.0 || l == 0.0)) throw InvalidDataError("weighted_norm: need l >= 1 or l = 0");
  WeightedNorm out;
  out.sigma = sigma;
  out.l = l;
  if (f.values.empty()) return out;
  const CollocationGrid cg = detail::norm_grid(f.values.front(), opt);
  const double ldp = l == 0 ? 0.0 : l - 1.0;
  for (const auto& v : f.values) {
    out.c0_part = std::max(out.c0_part, detail::weighted_sup(v, sigma, l, cg));
    out.tail_violation = out.tail_violation || detail::violates(v.tail, l);
  }
  if (opt.with_dp) {
    if (f.p_independent) {
      out.dp_source = "independent";
    } else if (!f.dp.empty()) {
      out.dp_source = "analytic";
      for (const auto& per_axis : f.dp)
        for (const auto& d : per_axis) {
          out.dp_part = std::max(out.dp_part, detail::weighted_sup(d, 0.0, ldp, cg));
          out.tail_violation = out.tail_violation || detail::violates(d.tail, ldp);
        }
    } else if (f.params.size() >= 2) {
      out.dp_source = "difference";
      const std::size_t P = f.params.size();
      for (std::size_t i = 0; i < P; ++i) {
        std::size_t best = i == 0 ? 1 : 0;
        for (std::size_t j = 0; j < P; ++j)
          if (j != i && (f.params[j] - f.params[i]).norm() < (f.params[best] - f.params[i]).norm()) best = j;
        TimeFamily diff = f.values[best];
        diff.axpy(-1.0, f.values[i]);
        const double h = (f.params[best] - f.params[i]).norm();
        out.dp_part = std::max(out.dp_part, detail::weighted_sup(diff, 0.0, ldp, cg) / h);
      }
    } else {
      throw InvalidDataError("weighted_norm: parameter data missing for the d/dp part");
    }
  }
  out.total = out.c0_part + out.dp_part;
  return out;
}

inline WeightedNorm weighted_norm(const TimeFamily& f, double sigma, double l, const NormOptions& opt = {}) {
  return weighted_norm(ParamFamily::independent(f), sigma, l, opt);
}

namespace detail {

inline TimeFamily differentiate_family(const TimeFamily& f, int axis) {
  TimeFamily out = f;
  for (auto& s : out.slices) s = differentiate(s, axis);
  // |d_theta slice| <= 2 pi K |slice| on trigonometric polynomials of order K
  out.tail = f.tail.scaled(two_pi * std::max(1, f.order()) * f.dim());
  return out;
}

inline ParamFamily differentiate_param(const ParamFamily& f, int axis) {
  ParamFamily out = f;
  for (auto& v : out.values) v = differentiate_family(v, axis);
  for (auto& per_axis : out.dp)
    for (auto& d : per_axis) d = differentiate_family(d, axis);
  return out;
}

inline void collect_derivatives(const ParamFamily& f, int order, int first_axis, std::vector<ParamFamily>& out) {
  if (order == 0) {
    out.push_back(f);
    return;
  }
  for (int a = first_axis; a < f.values.front().dim(); ++a)
    collect_derivatives(differentiate_param(f, a), order - 1, a, out);
}

}  // namespace detail

/// ||f||_{sigma,k,l} = max_i |d_theta^i f|_{sigma+k-i,l}, maximized over multi-indices.
inline double family_norm(const ParamFamily& f, double sigma, int k, double l, const NormOptions& opt = {}) {
  if (k < 0 || k > 3) throw InvalidDataError("family_norm: k must be in 0..3");
  if (f.values.empty()) return 0.0;
  double best = 0.0;
  for (int i = 0; i <= k; ++i) {
    std::vector<ParamFamily> ders;
    detail::collect_derivatives(f, i, 0, ders);
    for (const auto& d : ders) best = std::max(best, weighted_norm(d, sigma + k - i, l, opt).total);
  }
  return best;
}

inline double family_norm(const TimeFamily& f, double sigma, int k, double l, const NormOptions& opt = {}) {
  return family_norm(ParamFamily::independent(f), sigma, k, l, opt);
}

/// |f|_{sigma,l,L(A)} split into its pieces; lipschitz_part = sup_t (quotient + C0)(1+|t|^{l-1}).
struct LipschitzNorm {
  double sigma = 1, l = 0;
  double holder_part = 0;     // sup_{p,t} |f_p^t|_{C^sigma}(1+|t|^l)
  double quotient_part = 0;   // sup_t sup_{x!=y} |f^t(.,x)-f^t(.,y)|_C0/|x-y| (1+|t|^{l-1})
  double lipschitz_part = 0;  // sup_t |f^t|_{L(A)}(1+|t|^{l-1})
  double total = 0;
};

inline LipschitzNorm lipschitz_param_norm(const ParamFamily& f, double sigma, double l, const NormOptions& opt = {}) {
  if (f.params.size() < 2) throw InvalidDataError("lipschitz_param_norm: parameter set needs >= 2 points");
  if (!(l >= 1.0 || l == 0.0)) throw InvalidDataError("lipschitz_param_norm: need l >= 1 or l = 0");
  LipschitzNorm out;
  out.sigma = sigma;
  out.l = l;
  const CollocationGrid cg = detail::norm_grid(f.values.front(), opt);
  const std::size_t P = f.params.size(), M = f.values.front().size();
  const double ldp = l == 0 ? 0.0 : l - 1.0;
  for (const auto& v : f.values) out.holder_part = std::max(out.holder_part, detail::weighted_sup(v, sigma, l, cg));
  std::vector<double> quotient(M, 0.0), sup0(M, 0.0);
  parallel_for(M, [&](std::size_t j) {
    std::vector<SampleArray> s;
    for (std::size_t i = 0; i < P; ++i) s.push_back(synthesize(f.values[i].slices[j], cg));
    for (std::size_t i = 0; i < P; ++i) {
      sup0[j] = std::max(sup0[j], detail::grid_sup(s[i]));
      for (std::size_t k = i + 1; k < P; ++k) {
        double d = 0.0;
        for (std::size_t q = 0; q < s[i].values.size(); ++q) d = std::max(d, std::abs(s[i].values[q] - s[k].values[q]));
        quotient[j] = std::max(quotient[j], d / (f.params[i] - f.params[k]).norm());
      }
    }
  });
  for (std::size_t j = 0; j < M; ++j) {
    const double w = detail::weight(f.values.front().grid->s(j), ldp);
    out.quotient_part = std::max(out.quotient_part, quotient[j] * w);
    out.lipschitz_part = std::max(out.lipschitz_part, (quotient[j] + sup0[j]) * w);
  }
  out.total = out.holder_part + out.lipschitz_part;
  return out;
}

// ---------------------------------------------------------------------------
// McShane extension

/// x -> min_i (v_i + L|x - x_i|): agrees with the samples and keeps the Lipschitz constant L.
class McShaneExtension {
 public:
  McShaneExtension(std::vector<Eigen::VectorXd> points, std::vector<double> values, double L)
      : x_(std::move(points)), v_(std::move(values)), L_(L) {
    if (x_.empty() || x_.size() != v_.size()) throw InvalidDataError("mcshane_extend: empty or mismatched samples");
    if (!(L >= 0)) throw InvalidDataError("mcshane_extend: L must be nonnegative");
    for (std::size_t i = 0; i < x_.size(); ++i)
      for (std::size_t j = i + 1; j < x_.size(); ++j) {
        const double d = (x_[i] - x_[j]).norm();
        if (std::abs(v_[i] - v_[j]) > L_ * d * (1 + 1e-12) + 1e-15)
          throw InvalidDataError("mcshane_extend: samples " + std::to_string(i) + " and " +
                                 std::to_string(j) + " violate the declared Lipschitz constant");
      }
  }
  double operator()(const Eigen::VectorXd& x) const {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < x_.size(); ++i) best = std::min(best, v_[i] + L_ * (x - x_[i]).norm());
    return best;
  }
  double lipschitz() const { return L_; }

 private:
  std::vector<Eigen::VectorXd> x_;
  std::vector<double> v_;
  double L_;
};

inline McShaneExtension mcshane_extend(std::vector<Eigen::VectorXd> points, std::vector<double> values, double L) {
  return McShaneExtension(std::move(points), std::move(values), L);
}

/// Smallest L for which the samples are L-Lipschitz.
inline double lipschitz_constant(const std::vector<Eigen::VectorXd>& x, const std::vector<double>& v) {
  double L = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      const double d = (x[i] - x[j]).norm();
      if (d > 0) L = std::max(L, std::abs(v[i] - v[j]) / d);
    }
  return L;
}

}  // namespace kamflow
