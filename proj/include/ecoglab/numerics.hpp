#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "ecoglab/errors.hpp"

namespace ecoglab {

// Dense row-major matrix of doubles. All numerics in this project are
// 64-bit; there is deliberately no mixed-precision path.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double* row(std::size_t i) { return data_.data() + i * cols_; }
  const double* row(std::size_t i) const { return data_.data() + i * cols_; }

  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  bool all_finite() const {
    for (const double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Dense 3-way tensor, first index slowest-varying: (i, j, k) -> (i*d2 + j)*d3 + k.
class Tensor3 {
 public:
  Tensor3() = default;
  Tensor3(std::size_t d1, std::size_t d2, std::size_t d3, double fill = 0.0)
      : d1_(d1), d2_(d2), d3_(d3), data_(d1 * d2 * d3, fill) {}

  std::size_t d1() const { return d1_; }
  std::size_t d2() const { return d2_; }
  std::size_t d3() const { return d3_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * d2_ + j) * d3_ + k];
  }
  double operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * d2_ + j) * d3_ + k];
  }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

 private:
  std::size_t d1_ = 0, d2_ = 0, d3_ = 0;
  std::vector<double> data_;
};

inline double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(const std::vector<double>& v) {
  return std::sqrt(dot(v.data(), v.data(), v.size()));
}

inline void scale(std::vector<double>& v, double s) {
  for (double& x : v) x *= s;
}

// v := v / ||v||; returns the norm. Zero vectors are left untouched.
inline double normalize(std::vector<double>& v) {
  const double n = norm2(v);
  if (n > 0.0) scale(v, 1.0 / n);
  return n;
}

// C = A * B
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw ContractViolation("matmul: inner dimensions differ");
  Matrix c(a.rows(), b.cols());
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double* ci = c.row(i);
    const double* ai = a.row(i);
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      if (aip == 0.0) continue;
      const double* bp = b.row(p);
      for (std::size_t j = 0; j < m; ++j) ci[j] += aip * bp[j];
    }
  }
  return c;
}

// C = A^T * B
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw ContractViolation("matmul_tn: row counts differ");
  Matrix c(a.cols(), b.cols());
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  for (std::size_t p = 0; p < n; ++p) {
    const double* ap = a.row(p);
    const double* bp = b.row(p);
    for (std::size_t i = 0; i < k; ++i) {
      const double api = ap[i];
      if (api == 0.0) continue;
      double* ci = c.row(i);
      for (std::size_t j = 0; j < m; ++j) ci[j] += api * bp[j];
    }
  }
  return c;
}

inline std::vector<double> matvec(const Matrix& a, const std::vector<double>& x) {
  if (a.cols() != x.size()) throw ContractViolation("matvec: shape mismatch");
  std::vector<double> y(a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) y[i] = dot(a.row(i), x.data(), a.cols());
  return y;
}

inline std::vector<double> matvec_t(const Matrix& a, const std::vector<double>& x) {
  if (a.rows() != x.size()) throw ContractViolation("matvec_t: shape mismatch");
  std::vector<double> y(a.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double xi = x[i];
    if (xi == 0.0) continue;
    const double* ai = a.row(i);
    for (std::size_t j = 0; j < a.cols(); ++j) y[j] += xi * ai[j];
  }
  return y;
}

namespace detail {

// In-place Cholesky of the lower triangle; returns false on a non-positive
// pivot (rank deficiency).
inline bool cholesky(Matrix& g) {
  const std::size_t n = g.rows();
  for (std::size_t j = 0; j < n; ++j) {
    double d = g(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= g(j, k) * g(j, k);
    if (!(d > 0.0)) return false;
    const double l = std::sqrt(d);
    g(j, j) = l;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = g(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= g(i, k) * g(j, k);
      g(i, j) = s / l;
    }
  }
  return true;
}

inline void cholesky_solve_inplace(const Matrix& l, std::vector<double>& b) {
  const std::size_t n = l.rows();
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[i];
    for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * b[k];
    b[i] = s / l(i, i);
  }
  for (std::size_t ii = n; ii > 0; --ii) {
    const std::size_t i = ii - 1;
    double s = b[i];
    for (std::size_t k = i + 1; k < n; ++k) s -= l(k, i) * b[k];
    b[i] = s / l(i, i);
  }
}

}  // namespace detail

// Solves the symmetric positive (semi-)definite system G X = C, adding a
// ridge jitter of 1e-10 * mean diagonal when the factorization fails.
inline Matrix solve_spd(Matrix g, const Matrix& c) {
  if (g.rows() != g.cols() || g.rows() != c.rows())
    throw ContractViolation("solve_spd: shape mismatch");
  const std::size_t n = g.rows();
  double diag_mean = 0.0;
  for (std::size_t i = 0; i < n; ++i) diag_mean += g(i, i);
  diag_mean = std::max(1.0, diag_mean / static_cast<double>(n));

  Matrix l = g;
  double jitter = 1e-10 * diag_mean;
  for (int attempt = 0; !detail::cholesky(l); ++attempt) {
    if (attempt >= 16) throw DegenerateInput("solve_spd: matrix is numerically indefinite");
    l = g;
    for (std::size_t i = 0; i < n; ++i) l(i, i) += jitter;
    jitter *= 100.0;
  }

  Matrix x(n, c.cols());
  std::vector<double> col(n);
  for (std::size_t j = 0; j < c.cols(); ++j) {
    for (std::size_t i = 0; i < n; ++i) col[i] = c(i, j);
    detail::cholesky_solve_inplace(l, col);
    for (std::size_t i = 0; i < n; ++i) x(i, j) = col[i];
  }
  return x;
}

// Least squares min ||A X - B||_F via normal equations. Rank-deficient
// systems fall back to a tiny ridge, which lands on (a close approximation
// of) the minimum-norm solution.
inline Matrix solve_least_squares(const Matrix& a, const Matrix& b) {
  if (a.rows() == 0 || a.cols() == 0) throw ContractViolation("solve_least_squares: empty A");
  if (a.rows() != b.rows())
    throw ContractViolation("solve_least_squares: A and B row counts differ");
  if (!a.all_finite() || !b.all_finite())
    throw ContractViolation("solve_least_squares: non-finite input");
  return solve_spd(matmul_tn(a, a), matmul_tn(a, b));
}

struct SingularTriplet {
  std::vector<double> u;
  double s = 0.0;
  std::vector<double> v;
};

namespace detail {

// Flip sign so the first entry with non-negligible magnitude is positive.
// Returns the applied sign.
inline double fix_sign(std::vector<double>& v) {
  double amax = 0.0;
  for (const double x : v) amax = std::max(amax, std::abs(x));
  if (amax == 0.0) return 1.0;
  for (const double x : v) {
    if (std::abs(x) > 1e-12 * amax) {
      if (x < 0.0) {
        for (double& y : v) y = -y;
        return -1.0;
      }
      return 1.0;
    }
  }
  return 1.0;
}

inline double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (const double x : v) m = std::max(m, std::abs(x));
  return m;
}

}  // namespace detail

// Dominant singular triplet by power iteration on A^T A. Sign convention:
// first non-negligible entry of u is positive, s >= 0.
inline SingularTriplet top_singular_triplet(const Matrix& m) {
  if (m.rows() == 0 || m.cols() == 0) throw ContractViolation("top_singular_triplet: empty matrix");
  if (!m.all_finite()) throw ContractViolation("top_singular_triplet: non-finite input");
  if (detail::max_abs(m.storage()) == 0.0)
    throw DegenerateInput("top_singular_triplet: all-zero matrix");

  const std::size_t n = m.cols();
  // Deterministic, generic start: graded positive entries.
  std::vector<double> v(n);
  for (std::size_t j = 0; j < n; ++j) v[j] = 1.0 + 1e-3 * static_cast<double>(j % 97);
  normalize(v);

  std::vector<double> v_prev(n);
  for (int iter = 0; iter < 5000; ++iter) {
    v_prev = v;
    std::vector<double> av = matvec(m, v);
    v = matvec_t(m, av);
    if (normalize(v) == 0.0) {
      // v landed in the null space; restart orthogonal to it.
      for (std::size_t j = 0; j < n; ++j) v[j] = std::cos(static_cast<double>(j + iter));
      normalize(v);
      continue;
    }
    double diff = 0.0;
    for (std::size_t j = 0; j < n; ++j) diff += (v[j] - v_prev[j]) * (v[j] - v_prev[j]);
    if (std::sqrt(diff) < 1e-14 && iter > 2) break;
  }

  SingularTriplet t;
  std::vector<double> av = matvec(m, v);
  t.s = norm2(av);
  if (t.s == 0.0) throw DegenerateInput("top_singular_triplet: zero dominant value");
  t.u = av;
  scale(t.u, 1.0 / t.s);
  t.v = std::move(v);
  const double sgn = detail::fix_sign(t.u);
  if (sgn < 0.0) {
    for (double& x : t.v) x = -x;
  }
  return t;
}

struct Rank1Tensor {
  std::vector<double> w1, w2, w3;
  double s = 0.0;
};

namespace detail {

// w_out[i] = sum_{j,k} T(i,j,k) * a[j] * b[k] and the two rotations of it.
inline std::vector<double> contract_23(const Tensor3& t, const std::vector<double>& a,
                                       const std::vector<double>& b) {
  std::vector<double> out(t.d1(), 0.0);
  const double* p = t.data();
  for (std::size_t i = 0; i < t.d1(); ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < t.d2(); ++j) {
      const double aj = a[j];
      double inner = 0.0;
      for (std::size_t k = 0; k < t.d3(); ++k) inner += p[k] * b[k];
      acc += aj * inner;
      p += t.d3();
    }
    out[i] = acc;
  }
  return out;
}

inline std::vector<double> contract_13(const Tensor3& t, const std::vector<double>& a,
                                       const std::vector<double>& b) {
  std::vector<double> out(t.d2(), 0.0);
  const double* p = t.data();
  for (std::size_t i = 0; i < t.d1(); ++i) {
    const double ai = a[i];
    for (std::size_t j = 0; j < t.d2(); ++j) {
      double inner = 0.0;
      for (std::size_t k = 0; k < t.d3(); ++k) inner += p[k] * b[k];
      out[j] += ai * inner;
      p += t.d3();
    }
  }
  return out;
}

inline std::vector<double> contract_12(const Tensor3& t, const std::vector<double>& a,
                                       const std::vector<double>& b) {
  std::vector<double> out(t.d3(), 0.0);
  const double* p = t.data();
  for (std::size_t i = 0; i < t.d1(); ++i) {
    const double ai = a[i];
    for (std::size_t j = 0; j < t.d2(); ++j) {
      const double w = ai * b[j];
      for (std::size_t k = 0; k < t.d3(); ++k) out[k] += w * p[k];
      p += t.d3();
    }
  }
  return out;
}

inline double mode_change(const std::vector<double>& a, const std::vector<double>& b) {
  // Distance up to sign; plain power steps may alternate sign at a
  // negative-weight fixed point.
  double dp = 0.0, dm = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dp += (a[i] - b[i]) * (a[i] - b[i]);
    dm += (a[i] + b[i]) * (a[i] + b[i]);
  }
  return std::sqrt(std::min(dp, dm));
}

// Mode-n unfolding as a matrix with the chosen mode on rows.
inline Matrix unfold(const Tensor3& t, int mode) {
  const std::size_t d1 = t.d1(), d2 = t.d2(), d3 = t.d3();
  if (mode == 1) {
    Matrix m(d1, d2 * d3);
    std::copy(t.data(), t.data() + t.size(), m.data());
    return m;
  }
  if (mode == 2) {
    Matrix m(d2, d1 * d3);
    for (std::size_t i = 0; i < d1; ++i)
      for (std::size_t j = 0; j < d2; ++j)
        for (std::size_t k = 0; k < d3; ++k) m(j, i * d3 + k) = t(i, j, k);
    return m;
  }
  Matrix m(d3, d1 * d2);
  for (std::size_t i = 0; i < d1; ++i)
    for (std::size_t j = 0; j < d2; ++j)
      for (std::size_t k = 0; k < d3; ++k) m(k, i * d2 + j) = t(i, j, k);
  return m;
}

}  // namespace detail

// Best rank-1 approximation s * w1 (x) w2 (x) w3 by alternating power
// iteration (HOPM), initialized from the leading mode-2/mode-3 unfolding
// directions. Convention: w1 and w2 have their first non-negligible entry
// positive; s >= 0 with the residual sign absorbed into w3.
inline Rank1Tensor rank1_tensor_approx(const Tensor3& t, double tol = 1e-10,
                                       int max_iterations = 200) {
  if (t.size() == 0) throw ContractViolation("rank1_tensor_approx: empty tensor");
  if (detail::max_abs(t.storage()) == 0.0)
    throw DegenerateInput("rank1_tensor_approx: all-zero tensor");

  Rank1Tensor r;
  r.w2 = top_singular_triplet(detail::unfold(t, 2)).u;
  r.w3 = top_singular_triplet(detail::unfold(t, 3)).u;
  r.w1.assign(t.d1(), 0.0);

  for (int iter = 0; iter < max_iterations; ++iter) {
    std::vector<double> w1 = detail::contract_23(t, r.w2, r.w3);
    normalize(w1);
    std::vector<double> w2 = detail::contract_13(t, w1, r.w3);
    normalize(w2);
    std::vector<double> w3 = detail::contract_12(t, w1, w2);
    normalize(w3);
    const double change = std::max({detail::mode_change(w1, r.w1),
                                    detail::mode_change(w2, r.w2),
                                    detail::mode_change(w3, r.w3)});
    r.w1 = std::move(w1);
    r.w2 = std::move(w2);
    r.w3 = std::move(w3);
    if (change < tol) break;
  }

  double sgn = detail::fix_sign(r.w1);
  sgn *= detail::fix_sign(r.w2);
  if (sgn < 0.0) {
    for (double& x : r.w3) x = -x;
  }
  const std::vector<double> proj = detail::contract_12(t, r.w1, r.w2);
  r.s = dot(proj.data(), r.w3.data(), r.w3.size());
  if (r.s < 0.0) {
    r.s = -r.s;
    for (double& x : r.w3) x = -x;
  }
  return r;
}

// Vectorization of w1 (x) w2 (x) w3, laid out to match Tensor3 storage order.
inline std::vector<double> outer3(const std::vector<double>& w1, const std::vector<double>& w2,
                                  const std::vector<double>& w3) {
  std::vector<double> out;
  out.reserve(w1.size() * w2.size() * w3.size());
  for (const double a : w1)
    for (const double b : w2) {
      const double ab = a * b;
      for (const double c : w3) out.push_back(ab * c);
    }
  return out;
}

}  // namespace ecoglab
