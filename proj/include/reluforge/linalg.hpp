#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <vector>

#include "reluforge/common.hpp"

namespace reluforge {

using Vec = std::vector<double>;

struct Mat {
  std::size_t rows = 0, cols = 0;
  std::vector<double> data;  // row-major

  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  Mat(std::size_t r, std::size_t c, std::initializer_list<double> vals)
      : rows(r), cols(c), data(vals) {
    if (data.size() != r * c) throw ShapeMismatch("matrix literal size");
  }

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  static Mat identity(std::size_t n) {
    Mat m(n, n);
    for (std::size_t i = 0; i < n; ++i) m.at(i, i) = 1.0;
    return m;
  }
};

inline double dot(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) throw ShapeMismatch("dot: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(const Vec& v) { return std::sqrt(dot(v, v)); }

inline double norm_inf(const Vec& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::fabs(x));
  return m;
}

inline Vec matvec(const Mat& m, const Vec& x) {
  if (m.cols != x.size()) throw ShapeMismatch("matvec: size mismatch");
  Vec y(m.rows, 0.0);
  for (std::size_t r = 0; r < m.rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < m.cols; ++c) s += m.at(r, c) * x[c];
    y[r] = s;
  }
  return y;
}

inline double frobenius_sq(const Mat& m) {
  double s = 0.0;
  for (double x : m.data) s += x * x;
  return s;
}

inline double max_abs(const Mat& m) {
  double v = 0.0;
  for (double x : m.data) v = std::max(v, std::fabs(x));
  return v;
}

namespace detail {
// Largest eigenvalue of a symmetric 2x2 [[a, b], [b, c]].
inline double sym2_lambda_max(double a, double b, double c) {
  const double mean = 0.5 * (a + c);
  const double disc = std::sqrt(0.25 * (a - c) * (a - c) + b * b);
  return mean + disc;
}
}  // namespace detail

// Spectral norm (largest singular value). Matrices here are tiny: rank-1
// shapes and 2-column/2-row cases have closed forms, everything else gets a
// deterministic power iteration on the Gram matrix.
inline double spectral_norm(const Mat& m) {
  if (m.rows == 0 || m.cols == 0) return 0.0;
  if (m.rows == 1 || m.cols == 1) {
    double s = 0.0;
    for (double x : m.data) s += x * x;
    return std::sqrt(s);
  }
  if (m.cols == 2) {
    double a = 0.0, b = 0.0, c = 0.0;
    for (std::size_t r = 0; r < m.rows; ++r) {
      a += m.at(r, 0) * m.at(r, 0);
      b += m.at(r, 0) * m.at(r, 1);
      c += m.at(r, 1) * m.at(r, 1);
    }
    return std::sqrt(std::max(0.0, detail::sym2_lambda_max(a, b, c)));
  }
  if (m.rows == 2) {
    double a = 0.0, b = 0.0, c = 0.0;
    for (std::size_t k = 0; k < m.cols; ++k) {
      a += m.at(0, k) * m.at(0, k);
      b += m.at(0, k) * m.at(1, k);
      c += m.at(1, k) * m.at(1, k);
    }
    return std::sqrt(std::max(0.0, detail::sym2_lambda_max(a, b, c)));
  }
  // Power iteration on A^T A with a fixed start vector.
  Vec v(m.cols, 1.0 / std::sqrt(double(m.cols)));
  double lambda = 0.0;
  for (int iter = 0; iter < 500; ++iter) {
    Vec av = matvec(m, v);
    Vec atav(m.cols, 0.0);
    for (std::size_t r = 0; r < m.rows; ++r)
      for (std::size_t c = 0; c < m.cols; ++c)
        atav[c] += m.at(r, c) * av[r];
    const double nrm = norm2(atav);
    if (nrm == 0.0) return 0.0;
    for (auto& x : atav) x /= nrm;
    const double drift = [&] {
      double d = 0.0;
      for (std::size_t i = 0; i < v.size(); ++i)
        d = std::max(d, std::fabs(std::fabs(atav[i]) - std::fabs(v[i])));
      return d;
    }();
    v = atav;
    lambda = nrm;
    if (drift < 1e-15 && iter > 4) break;
  }
  return std::sqrt(lambda);
}

}  // namespace reluforge
