#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "decay_norms.hpp"

namespace kamflow {

/// Constant used for both bounded-ratio checks (products and compositions).
inline constexpr double kNormAlgebraConstant = 4.0;

struct NormSuiteReport {
  int instances = 0;
  bool sigma_monotone = true;
  bool weight_inequality = true;
  double product_max_ratio = 0;
  double composition_max_ratio = 0;
  double constant = kNormAlgebraConstant;
  bool passed() const {
    return sigma_monotone && weight_inequality && product_max_ratio <= constant &&
           composition_max_ratio <= constant;
  }
};

namespace detail {

inline TorusFun random_torus_fun(int n, int m, int K, double amp, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  TorusFun f(n, m, K);
  for (std::size_t i = 0; i < f.mode_count(); ++i) {
    const std::size_t j = f.mirror_mode(i);
    if (j < i) continue;
    for (int c = 0; c < m; ++c) {
      if (i == j) {
        f.coeff(i, c) = amp * u(rng);
      } else {
        f.coeff(i, c) = 0.5 * amp * cplx(u(rng), u(rng));
        f.coeff(j, c) = std::conj(f.coeff(i, c));
      }
    }
  }
  return f;
}

// (theta, p, s) -> F(theta) (1 + a p_0) / (1 + s^e) with analytic d/dp
struct Separable {
  TorusFun F;
  double a, e;
  double alpha(const Eigen::VectorXd& p) const { return 1.0 + a * p[0]; }
  double w(double s) const { return 1.0 / (1.0 + std::pow(s, e)); }
};

inline ParamFamily sample_family(const GridPtr& g, const std::vector<Eigen::VectorXd>& params, int n, int range,
                                 int order, const TailModel& tail,
                                 const std::function<TorusFun(const Eigen::VectorXd&, double)>& value,
                                 const std::function<TorusFun(const Eigen::VectorXd&, double)>& dp0) {
  ParamFamily pf;
  pf.params = params;
  for (const auto& p : params) {
    TimeFamily v(g, n, range, order, tail);
    std::vector<TimeFamily> d(n, TimeFamily(g, n, range, order, tail));
    for (std::size_t j = 0; j < g->size(); ++j) {
      v.slices[j] = value(p, g->s(j));
      d[0].slices[j] = dp0(p, g->s(j));
    }
    pf.values.push_back(std::move(v));
    pf.dp.push_back(std::move(d));
  }
  return pf;
}

}  // namespace detail

/// Property checks for the weighted norms on random trigonometric families.
inline NormSuiteReport run_norm_suite(std::uint64_t seed, int instances = 100) {
  NormSuiteReport rep;
  rep.instances = instances;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> pick_n(1, 2), pick_K(1, 3), pick_lm(1, 2), pick_sigma(0, 2);
  std::uniform_real_distribution<double> pick_a(-1.0, 1.0);
  const GridPtr g = std::make_shared<const TimeGrid>(TimeGrid::log_uniform(Branch::plus, 0.15, 60.0));
  const double sigmas[] = {1.0, 1.5, 2.0};
  for (int it = 0; it < instances; ++it) {
    const int n = pick_n(rng);
    const double sigma = sigmas[pick_sigma(rng)];
    const double l = pick_lm(rng), m = pick_lm(rng);
    std::vector<Eigen::VectorXd> params;
    for (double p : {-0.5, 0.0, 0.5}) {
      Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
      v[0] = p;
      params.push_back(v);
    }
    const detail::Separable f{detail::random_torus_fun(n, 1, pick_K(rng), 1.0, rng), pick_a(rng), l + m + 0.5};
    const detail::Separable h{detail::random_torus_fun(n, 1, pick_K(rng), 1.0, rng), pick_a(rng), m + 0.5};
    const TailModel tf = TailModel::poly(f.e, 2 * f.F.coefficient_bound());
    const TailModel th = TailModel::poly(h.e, 2 * h.F.coefficient_bound());
    auto fam = [&](const detail::Separable& s, const TailModel& t) {
      return detail::sample_family(
          g, params, n, 1, s.F.order(), t,
          [&](const Eigen::VectorXd& p, double x) { return (s.alpha(p) * s.w(x)) * s.F; },
          [&](const Eigen::VectorXd&, double x) { return (s.a * s.w(x)) * s.F; });
    };
    const ParamFamily pf = fam(f, tf), ph = fam(h, th);

    // (a) monotone in sigma, (b) weight inequality with constant 2
    const double n1 = weighted_norm(pf, 1.0, l).total, n15 = weighted_norm(pf, 1.5, l).total,
                 n2 = weighted_norm(pf, 2.0, l).total;
    rep.sigma_monotone = rep.sigma_monotone && n1 <= n15 && n15 <= n2;
    rep.weight_inequality = rep.weight_inequality && weighted_norm(pf, sigma, l).total <= 2.0 * weighted_norm(pf, sigma, l + m).total;

    // (c) product
    const TorusFun FH = multiply(f.F, h.F, f.F.order() + h.F.order());
    const ParamFamily prod = detail::sample_family(
        g, params, n, 1, FH.order(), tf + th,
        [&](const Eigen::VectorXd& p, double x) { return (f.alpha(p) * h.alpha(p) * f.w(x) * h.w(x)) * FH; },
        [&](const Eigen::VectorXd& p, double x) {
          return ((f.a * h.alpha(p) + f.alpha(p) * h.a) * f.w(x) * h.w(x)) * FH;
        });
    // f carries weight l, h weight m
    const ParamFamily& F = pf;
    const ParamFamily& H = ph;
    const double lhs_c = weighted_norm(prod, sigma, l + m).total;
    const double rhs_c = weighted_norm(F, 0.0, l).total * weighted_norm(H, sigma, m).total +
                         weighted_norm(F, sigma, l).total * weighted_norm(H, 0.0, m).total;
    rep.product_max_ratio = std::max(rep.product_max_ratio, lhs_c / rhs_c);

    // (d) composition f(g(theta,p,t), p, t) with a small decaying map g into R^n
    const TorusFun U = detail::random_torus_fun(n, n, pick_K(rng), 0.05, rng);
    const detail::Separable gmap{U, pick_a(rng), m + 0.5};
    const ParamFamily pg = detail::sample_family(
        g, params, n, n, U.order(), TailModel::poly(gmap.e, 2 * U.coefficient_bound()),
        [&](const Eigen::VectorXd& p, double x) { return (gmap.alpha(p) * gmap.w(x)) * U; },
        [&](const Eigen::VectorXd&, double x) { return (gmap.a * gmap.w(x)) * U; });
    const int Kout = 8;
    const CollocationGrid cg = CollocationGrid::dealiasing(n, Kout);
    auto composed = [&](const Eigen::VectorXd& p, double x, bool derivative) {
      const double scale = gmap.alpha(p) * gmap.w(x);
      return sample_and_analyze(n, 1, Kout, cg, [&](std::size_t, std::span<const double> th, std::span<double> out) {
        Eigen::VectorXd uval, fval;
        Eigen::MatrixXd fgrad;
        U.evaluate(th, uval);
        const Eigen::VectorXd y = scale * uval;
        f.F.evaluate(as_span(y), fval, &fgrad);
        if (!derivative) {
          out[0] = f.alpha(p) * f.w(x) * fval[0];
        } else {
          const double dg = (fgrad.row(0) * (gmap.a * gmap.w(x) * uval))(0);
          out[0] = f.w(x) * (f.alpha(p) * dg + f.a * fval[0]);
        }
      });
    };
    const ParamFamily comp = detail::sample_family(
        g, params, n, 1, Kout, tf,
        [&](const Eigen::VectorXd& p, double x) { return composed(p, x, false); },
        [&](const Eigen::VectorXd& p, double x) { return composed(p, x, true); });
    const double lhs_d = weighted_norm(comp, sigma, l + m).total;
    const double rhs_d = weighted_norm(F, sigma, l).total * std::pow(weighted_norm(pg, 1.0, m).total, sigma) +
                         weighted_norm(F, 1.0, l).total * weighted_norm(pg, sigma, m).total +
                         weighted_norm(F, 0.0, l + m).total;
    rep.composition_max_ratio = std::max(rep.composition_max_ratio, lhs_d / rhs_d);
  }
  return rep;
}

}  // namespace kamflow
