#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <functional>
#include <map>
#include <tuple>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "errors.hpp"
#include "numerics.hpp"

namespace kamflow {

inline std::span<const double> as_span(const Eigen::VectorXd& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }

/// Map T^n -> R^m held as Fourier coefficients c_k, |k|_inf <= K, period 1 per axis.
/// Modes are stored row-major with k_0 slowest; each mode owns m consecutive entries.
class TorusFun {
 public:
  TorusFun() = default;
  TorusFun(int dim, int range, int order)
      : n_(dim), m_(range), K_(order) {
    if (dim < 1 || range < 1 || order < 0) throw InvalidDataError("TorusFun: bad shape");
    std::size_t modes = 1;
    for (int a = 0; a < n_; ++a) modes *= side();
    c_.assign(modes * m_, cplx(0.0));
  }

  static TorusFun constant(int dim, const Eigen::VectorXd& value, int order = 0) {
    TorusFun f(dim, static_cast<int>(value.size()), order);
    const std::size_t z = f.zero_mode();
    for (int c = 0; c < f.m_; ++c) f.c_[z * f.m_ + c] = value[c];
    return f;
  }

  int dim() const { return n_; }
  int range() const { return m_; }
  int order() const { return K_; }
  int side() const { return 2 * K_ + 1; }
  std::size_t mode_count() const { return m_ ? c_.size() / m_ : 0; }
  bool empty() const { return c_.empty(); }

  std::size_t mode_index(std::span<const int> k) const {
    std::size_t idx = 0;
    for (int a = 0; a < n_; ++a) {
      if (std::abs(k[a]) > K_) throw DomainError("TorusFun: mode outside truncation");
      idx = idx * side() + (k[a] + K_);
    }
    return idx;
  }
  void mode_of(std::size_t idx, std::span<int> k) const {
    for (int a = n_ - 1; a >= 0; --a) {
      k[a] = static_cast<int>(idx % side()) - K_;
      idx /= side();
    }
  }
  std::size_t zero_mode() const {
    std::size_t idx = 0;
    for (int a = 0; a < n_; ++a) idx = idx * side() + K_;
    return idx;
  }
  std::size_t mirror_mode(std::size_t idx) const { return mode_count() - 1 - idx; }

  cplx& coeff(std::size_t mode, int comp) { return c_[mode * m_ + comp]; }
  cplx coeff(std::size_t mode, int comp) const { return c_[mode * m_ + comp]; }
  cplx coeff(std::span<const int> k, int comp = 0) const {
    for (int a = 0; a < n_; ++a)
      if (std::abs(k[a]) > K_) return 0.0;
    return coeff(mode_index(k), comp);
  }
  std::vector<cplx>& data() { return c_; }
  const std::vector<cplx>& data() const { return c_; }

  /// Adds a cos(2 pi k.theta) + b sin(2 pi k.theta) to component comp.
  void add_real_mode(std::span<const int> k, int comp, double a, double b) {
    const std::size_t i = mode_index(k), j = mirror_mode(i);
    if (i == j) {
      coeff(i, comp) += a;
      return;
    }
    coeff(i, comp) += cplx(0.5 * a, -0.5 * b);
    coeff(j, comp) += cplx(0.5 * a, 0.5 * b);
  }

  /// Largest |c(-k) - conj(c(k))| over all stored entries.
  double symmetry_defect() const {
    double d = 0.0;
    for (std::size_t i = 0; i < mode_count(); ++i)
      for (int c = 0; c < m_; ++c)
        d = std::max(d, std::abs(coeff(mirror_mode(i), c) - std::conj(coeff(i, c))));
    return d;
  }

  /// Sum of |c_k| per component, maximized over components: an upper bound for the sup norm.
  double coefficient_bound() const {
    double best = 0.0;
    for (int c = 0; c < m_; ++c) {
      double s = 0.0;
      for (std::size_t i = 0; i < mode_count(); ++i) s += std::abs(coeff(i, c));
      best = std::max(best, s);
    }
    return best;
  }

  /// Value and (optionally) Jacobian grad(c, axis) at an arbitrary point.
  void evaluate(std::span<const double> theta, Eigen::VectorXd& value,
                Eigen::MatrixXd* grad = nullptr) const {
    value.setZero(m_);
    if (grad) grad->setZero(m_, n_);
    if (empty()) return;
    const int s = side();
    // per-axis tables e^{2 pi i k theta_a}
    thread_local std::vector<cplx> table;
    table.resize(static_cast<std::size_t>(n_) * s);
    for (int a = 0; a < n_; ++a) {
      const cplx z = std::polar(1.0, two_pi * theta[a]);
      cplx* row = table.data() + a * s;
      row[K_] = 1.0;
      for (int k = 1; k <= K_; ++k) {
        row[K_ + k] = row[K_ + k - 1] * z;
        row[K_ - k] = std::conj(row[K_ + k]);
      }
    }
    thread_local std::vector<int> digit;
    digit.assign(n_, 0);
    const std::size_t modes = mode_count();
    for (std::size_t idx = 0; idx < modes; ++idx) {
      cplx phase = 1.0;
      for (int a = 0; a < n_; ++a) phase *= table[a * s + digit[a]];
      const cplx* cf = c_.data() + idx * m_;
      for (int c = 0; c < m_; ++c) {
        const cplx term = cf[c] * phase;
        value[c] += term.real();
        if (grad)
          for (int a = 0; a < n_; ++a)
            (*grad)(c, a) -= two_pi * (digit[a] - K_) * term.imag();
      }
      for (int a = n_ - 1; a >= 0; --a) {
        if (++digit[a] < s) break;
        digit[a] = 0;
      }
    }
  }

  Eigen::VectorXd operator()(std::span<const double> theta) const {
    Eigen::VectorXd v;
    evaluate(theta, v);
    return v;
  }
  double value(std::span<const double> theta, int comp = 0) const { return (*this)(theta)[comp]; }

  /// Zero-padded or truncated copy with order K.
  TorusFun resized(int order) const {
    TorusFun out(n_, m_, order);
    std::vector<int> k(n_);
    for (std::size_t i = 0; i < out.mode_count(); ++i) {
      out.mode_of(i, k);
      bool inside = true;
      for (int a = 0; a < n_; ++a) inside = inside && std::abs(k[a]) <= K_;
      if (!inside) continue;
      const std::size_t j = mode_index(k);
      for (int c = 0; c < m_; ++c) out.coeff(i, c) = coeff(j, c);
    }
    return out;
  }

  TorusFun component(int comp) const {
    TorusFun out(n_, 1, K_);
    for (std::size_t i = 0; i < mode_count(); ++i) out.coeff(i, 0) = coeff(i, comp);
    return out;
  }

  TorusFun& operator+=(const TorusFun& o) { return axpy(1.0, o); }
  TorusFun& operator-=(const TorusFun& o) { return axpy(-1.0, o); }
  TorusFun& operator*=(double s) {
    for (auto& z : c_) z *= s;
    return *this;
  }
  /// this += s * o, widening the order when o has more modes.
  TorusFun& axpy(double s, const TorusFun& o) {
    if (o.empty()) return *this;
    if (empty()) {
      *this = o;
      return *this *= s;
    }
    if (o.n_ != n_ || o.m_ != m_) throw InvalidDataError("TorusFun: shape mismatch");
    if (o.K_ > K_) *this = resized(o.K_);
    if (o.K_ == K_) {
      for (std::size_t i = 0; i < c_.size(); ++i) c_[i] += s * o.c_[i];
      return *this;
    }
    const TorusFun w = o.resized(K_);
    for (std::size_t i = 0; i < c_.size(); ++i) c_[i] += s * w.c_[i];
    return *this;
  }
  friend TorusFun operator+(TorusFun a, const TorusFun& b) { return a += b; }
  friend TorusFun operator-(TorusFun a, const TorusFun& b) { return a -= b; }
  friend TorusFun operator*(double s, TorusFun a) { return a *= s; }

 private:
  int n_ = 0, m_ = 0, K_ = 0;
  std::vector<cplx> c_;
};

/// Uniform grid with N nodes per axis, theta_j = j/N.
struct CollocationGrid {
  int dim = 1;
  int N = 2;

  std::size_t size() const {
    std::size_t s = 1;
    for (int a = 0; a < dim; ++a) s *= N;
    return s;
  }
  void point(std::size_t idx, std::span<double> theta) const {
    for (int a = dim - 1; a >= 0; --a) {
      theta[a] = double(idx % N) / N;
      idx /= N;
    }
  }
  /// Grid adequate for products of order-K functions: N >= max(3K, 2K+2).
  static CollocationGrid dealiasing(int dim, int K) { return {dim, std::max({3 * K, 2 * K + 2, 2})}; }
  /// Default norm grid: power of two >= max(2K+2, 16).
  static CollocationGrid for_norms(int dim, int K) {
    int N = 16;
    while (N < 2 * K + 2) N *= 2;
    return {dim, N};
  }
};

/// Real samples on a CollocationGrid, stored [point][component].
struct SampleArray {
  CollocationGrid grid;
  int range = 1;
  std::vector<double> values;

  double& at(std::size_t point, int comp) { return values[point * range + comp]; }
  double at(std::size_t point, int comp) const { return values[point * range + comp]; }
};

namespace detail {

// Applies matrix M (rows x cols) along `axis` of a tensor with extents `shape` (last extent = m).
inline std::vector<cplx> transform_axis(const std::vector<cplx>& in, std::vector<int>& shape,
                                        int axis, const std::vector<cplx>& M, int rows) {
  const int cols = shape[axis];
  std::size_t outer = 1, inner = 1;
  for (int a = 0; a < axis; ++a) outer *= shape[a];
  for (std::size_t a = axis + 1; a < shape.size(); ++a) inner *= shape[a];
  std::vector<cplx> out(outer * rows * inner, cplx(0.0));
  for (std::size_t o = 0; o < outer; ++o)
    for (int r = 0; r < rows; ++r) {
      cplx* dst = out.data() + (o * rows + r) * inner;
      for (int c = 0; c < cols; ++c) {
        const cplx w = M[static_cast<std::size_t>(r) * cols + c];
        const cplx* src = in.data() + (o * cols + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) dst[i] += w * src[i];
      }
    }
  shape[axis] = rows;
  return out;
}

inline std::vector<cplx> build_synthesis_matrix(int N, int K) {
  std::vector<cplx> M(static_cast<std::size_t>(N) * (2 * K + 1));
  for (int j = 0; j < N; ++j)
    for (int k = -K; k <= K; ++k)
      M[static_cast<std::size_t>(j) * (2 * K + 1) + (k + K)] =
          std::polar(1.0, two_pi * double((static_cast<long long>(k) * j) % N) / N);
  return M;
}

inline std::vector<cplx> build_analysis_matrix(int N, int K) {
  std::vector<cplx> M(static_cast<std::size_t>(2 * K + 1) * N);
  for (int k = -K; k <= K; ++k)
    for (int j = 0; j < N; ++j)
      M[static_cast<std::size_t>(k + K) * N + j] =
          std::polar(1.0 / N, -two_pi * double((static_cast<long long>(k) * j) % N) / N);
  return M;
}

// Per-thread cache keyed by (N, K, direction).
inline const std::vector<cplx>& dft_matrix(int N, int K, bool synthesis) {
  thread_local std::map<std::tuple<int, int, bool>, std::vector<cplx>> cache;
  auto key = std::make_tuple(N, K, synthesis);
  auto it = cache.find(key);
  if (it == cache.end())
    it = cache.emplace(key, synthesis ? build_synthesis_matrix(N, K) : build_analysis_matrix(N, K)).first;
  return it->second;
}

}  // namespace detail

inline SampleArray synthesize(const TorusFun& f, const CollocationGrid& grid) {
  if (grid.dim != f.dim()) throw InvalidDataError("synthesize: dimension mismatch");
  if (grid.N < 2 * f.order() + 1)
    throw AliasingError("synthesize: N=" + std::to_string(grid.N) + " < 2K+1 for K=" +
                        std::to_string(f.order()));
  std::vector<int> shape(f.dim(), f.side());
  shape.push_back(f.range());
  std::vector<cplx> t = f.data();
  const auto& M = detail::dft_matrix(grid.N, f.order(), true);
  for (int a = 0; a < f.dim(); ++a) t = detail::transform_axis(t, shape, a, M, grid.N);
  SampleArray s{grid, f.range(), std::vector<double>(t.size())};
  for (std::size_t i = 0; i < t.size(); ++i) s.values[i] = t[i].real();
  return s;
}

inline TorusFun analyze(const SampleArray& s, int order) {
  const CollocationGrid& g = s.grid;
  if (g.N < 2 * order + 1)
    throw AliasingError("analyze: N=" + std::to_string(g.N) + " < 2K+1 for K=" +
                        std::to_string(order));
  std::vector<int> shape(g.dim, g.N);
  shape.push_back(s.range);
  std::vector<cplx> t(s.values.begin(), s.values.end());
  const auto& M = detail::dft_matrix(g.N, order, false);
  for (int a = 0; a < g.dim; ++a) t = detail::transform_axis(t, shape, a, M, 2 * order + 1);
  TorusFun f(g.dim, s.range, order);
  f.data() = std::move(t);
  // Nyquist-free grids give exact symmetry up to rounding; enforce it.
  for (std::size_t i = 0; i < f.mode_count(); ++i) {
    const std::size_t j = f.mirror_mode(i);
    if (j < i) continue;
    for (int c = 0; c < f.range(); ++c) {
      const cplx avg = 0.5 * (f.coeff(i, c) + std::conj(f.coeff(j, c)));
      f.coeff(i, c) = avg;
      f.coeff(j, c) = std::conj(avg);
    }
  }
  return f;
}

/// Samples fn(theta, out) on the grid and returns the order-K interpolant.
inline TorusFun sample_and_analyze(
    int dim, int range, int order, const CollocationGrid& grid,
    const std::function<void(std::size_t, std::span<const double>, std::span<double>)>& fn) {
  SampleArray s{grid, range, std::vector<double>(grid.size() * range)};
  std::vector<double> theta(dim);
  for (std::size_t p = 0; p < grid.size(); ++p) {
    grid.point(p, theta);
    fn(p, theta, std::span<double>(s.values.data() + p * range, range));
  }
  return analyze(s, order);
}

inline TorusFun differentiate(const TorusFun& f, int axis) {
  if (axis < 0 || axis >= f.dim()) throw DomainError("differentiate: axis out of range");
  TorusFun out = f;
  std::vector<int> k(f.dim());
  for (std::size_t i = 0; i < f.mode_count(); ++i) {
    f.mode_of(i, k);
    const cplx factor(0.0, two_pi * k[axis]);
    for (int c = 0; c < f.range(); ++c) out.coeff(i, c) *= factor;
  }
  return out;
}

/// Pointwise product of a scalar function with a vector function, dealiased and truncated.
inline TorusFun multiply(const TorusFun& scalar, const TorusFun& f, int out_order = -1) {
  if (scalar.range() != 1) throw InvalidDataError("multiply: first factor must be scalar");
  if (out_order < 0) out_order = std::max(scalar.order(), f.order());
  const int Kmax = std::max({scalar.order(), f.order(), out_order});
  const CollocationGrid grid = CollocationGrid::dealiasing(f.dim(), Kmax);
  const SampleArray a = synthesize(scalar, grid), b = synthesize(f, grid);
  SampleArray p = b;
  for (std::size_t i = 0; i < grid.size(); ++i)
    for (int c = 0; c < f.range(); ++c) p.at(i, c) *= a.at(i, 0);
  return analyze(p, out_order);
}

/// theta -> f(theta + u(theta)), evaluated pseudo-spectrally and truncated to out_order.
inline TorusFun compose_shift(const TorusFun& f, const TorusFun& u, int out_order = -1) {
  if (u.range() != f.dim() || u.dim() != f.dim())
    throw InvalidDataError("compose_shift: u must map T^n to R^n");
  if (out_order < 0) out_order = f.order();
  const int Kmax = std::max({f.order(), u.order(), out_order});
  const CollocationGrid grid = CollocationGrid::dealiasing(f.dim(), Kmax);
  const SampleArray us = synthesize(u, grid);
  double sup = 0.0;
  for (double x : us.values) sup = std::max(sup, std::abs(x));
  if (sup >= 0.5) throw DomainError("compose_shift: |u|_C0 >= 1/2");
  return sample_and_analyze(f.dim(), f.range(), out_order, grid,
                            [&](std::size_t p, std::span<const double> theta, std::span<double> out) {
                              thread_local std::vector<double> x;
                              x.resize(theta.size());
                              for (std::size_t a = 0; a < theta.size(); ++a)
                                x[a] = theta[a] + us.at(p, static_cast<int>(a));
                              Eigen::VectorXd v;
                              f.evaluate(x, v);
                              for (int c = 0; c < f.range(); ++c) out[c] = v[c];
                            });
}

namespace detail {

inline double grid_sup(const SampleArray& s) {
  double m = 0.0;
  for (double x : s.values) m = std::max(m, std::abs(x));
  return m;
}

// Largest |g(x) - g(x + d e_a)| / (d/N)^mu over axes and dyadic d <= N/2.
inline double holder_quotient(const SampleArray& s, double mu) {
  const CollocationGrid& g = s.grid;
  double best = 0.0;
  std::vector<double> theta(g.dim);
  for (int d = 1; 2 * d <= g.N; d *= 2) {
    const double scale = std::pow(double(d) / g.N, -mu);
    for (int a = 0; a < g.dim; ++a) {
      std::size_t stride = 1;
      for (int b = a + 1; b < g.dim; ++b) stride *= g.N;
      for (std::size_t p = 0; p < g.size(); ++p) {
        const int ja = static_cast<int>((p / stride) % g.N);
        const std::size_t q = p + stride * (((ja + d) % g.N) - ja);
        for (int c = 0; c < s.range; ++c)
          best = std::max(best, std::abs(s.at(p, c) - s.at(q, c)) * scale);
      }
    }
  }
  return best;
}

inline void derivatives_of_order(const TorusFun& f, int order, int first_axis,
                                 std::vector<TorusFun>& out) {
  if (order == 0) {
    out.push_back(f);
    return;
  }
  for (int a = first_axis; a < f.dim(); ++a)
    derivatives_of_order(differentiate(f, a), order - 1, a, out);
}

}  // namespace detail

/// Lower-bound surrogate of |f|_{C^sigma}: grid sups of derivatives up to floor(sigma) plus,
/// for non-integer sigma, the dyadic Hoelder quotient. That value is capped by the integer
/// surrogate at ceil(sigma), which keeps the result nondecreasing in sigma.
inline double holder_surrogate(const TorusFun& f, double sigma, const CollocationGrid& grid) {
  if (sigma < 0) throw InvalidDataError("holder_surrogate: sigma < 0");
  if (f.empty()) return 0.0;
  const int k = static_cast<int>(std::floor(sigma));
  const double mu = sigma - k;
  const int top = mu > 0 ? k + 1 : k;
  double below = 0.0, quotient = 0.0, at_top = 0.0;
  for (int i = 0; i <= top; ++i) {
    std::vector<TorusFun> ders;
    detail::derivatives_of_order(f, i, 0, ders);
    for (const auto& d : ders) {
      const SampleArray s = synthesize(d, grid);
      const double sup = detail::grid_sup(s);
      if (i <= k) below = std::max(below, sup);
      if (i == top) at_top = std::max(at_top, sup);
      if (i == k && mu > 0) quotient = std::max(quotient, detail::holder_quotient(s, mu));
    }
  }
  if (mu == 0) return below;
  return std::min(below + quotient, std::max(below, at_top));
}

}  // namespace kamflow
