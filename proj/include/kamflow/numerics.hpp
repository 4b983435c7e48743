#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>

#include "errors.hpp"

namespace kamflow {

using cplx = std::complex<double>;
inline constexpr double two_pi = 2.0 * std::numbers::pi;

/// Finite-difference weights (Fornberg) for derivatives 0..max_order at z using nodes x.
/// Result w[d][i] multiplies f(x[i]) in the d-th derivative.
inline std::vector<std::vector<double>> fornberg_weights(double z, std::span<const double> x,
                                                         int max_order) {
  const int n = static_cast<int>(x.size()) - 1;
  std::vector<std::vector<double>> c(max_order + 1, std::vector<double>(n + 1, 0.0));
  double c1 = 1.0, c4 = x[0] - z;
  c[0][0] = 1.0;
  for (int i = 1; i <= n; ++i) {
    const int mn = std::min(i, max_order);
    double c2 = 1.0;
    const double c5 = c4;
    c4 = x[i] - z;
    for (int j = 0; j < i; ++j) {
      const double c3 = x[i] - x[j];
      c2 *= c3;
      if (j == i - 1) {
        for (int k = mn; k >= 1; --k)
          c[k][i] = c1 * (k * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
        c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
      }
      for (int k = mn; k >= 1; --k) c[k][j] = (c4 * c[k][j] - k * c[k - 1][j]) / c3;
      c[0][j] = c4 * c[0][j] / c3;
    }
    c1 = c2;
  }
  return c;
}

/// First `count` indices of a stencil of `width` points around `center` inside [0, size).
inline int stencil_start(int center, int width, int size, int left_bias) {
  int start = center - left_bias;
  start = std::max(0, std::min(start, size - width));
  return start;
}

/// mu_j(theta) = int_0^1 x^j e^{i theta x} dx for j = 0..degree.
inline void filon_moments(double theta, int degree, std::span<cplx> out) {
  const cplx i1(0.0, 1.0);
  if (std::abs(theta) <= degree + 1.0) {
    for (int j = 0; j <= degree; ++j) {
      cplx sum = 0.0, term = 1.0;  // (i theta)^m / m!
      for (int m = 0; m < 200; ++m) {
        const cplx add = term / double(j + m + 1);
        sum += add;
        if (std::abs(add) < 1e-18 * std::max(1.0, std::abs(sum)) && m > 2) break;
        term *= i1 * theta / double(m + 1);
      }
      out[j] = sum;
    }
    return;
  }
  const cplx e = std::exp(i1 * theta), it = i1 * theta;
  out[0] = (e - 1.0) / it;
  for (int j = 1; j <= degree; ++j) out[j] = (e - double(j) * out[j - 1]) / it;
}

/// Gauss-Legendre rule with 16 points mapped to [0, 1].
struct UnitGaussLegendre {
  std::array<double, 16> x{}, w{};
  UnitGaussLegendre() {
    using rule = boost::math::quadrature::gauss<double, 16>;
    const auto& a = rule::abscissa();
    const auto& wt = rule::weights();
    std::size_t k = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      x[k] = 0.5 * (1.0 - a[i]);
      w[k++] = 0.5 * wt[i];
      x[k] = 0.5 * (1.0 + a[i]);
      w[k++] = 0.5 * wt[i];
    }
  }
  static const UnitGaussLegendre& get() {
    static const UnitGaussLegendre rule;
    return rule;
  }
};

/// Least-squares slope of log(y) against log(x); nonpositive y are skipped.
inline double loglog_slope(std::span<const double> x, std::span<const double> y) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int n = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0 && y[i] > 0)) continue;
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
    ++n;
  }
  if (n < 2) return std::nan("");
  const double den = n * sxx - sx * sx;
  return den == 0 ? std::nan("") : (n * sxy - sx * sy) / den;
}

}  // namespace kamflow
