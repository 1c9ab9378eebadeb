#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <vector>

#include "ecoglab/errors.hpp"

namespace ecoglab {

inline double mean(const std::vector<double>& v) {
  if (v.empty()) throw ContractViolation("mean: empty input");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double sample_variance(const std::vector<double>& v) {
  if (v.size() < 2) throw ContractViolation("sample_variance: need at least 2 values");
  const double m = mean(v);
  double s = 0.0;
  for (const double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size() - 1);
}

inline double sample_stddev(const std::vector<double>& v) { return std::sqrt(sample_variance(v)); }

inline double median(std::vector<double> v) {
  if (v.empty()) throw ContractViolation("median: empty input");
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  std::nth_element(v.begin(), v.begin() + mid - 1, v.end());
  return 0.5 * (v[mid - 1] + hi);
}

namespace detail {

inline double log_gamma(double x) { return std::lgamma(x); }

// Regularized incomplete beta I_x(a, b) via Lentz's continued fraction.
inline double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-14;
  constexpr double kFpMin = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace detail

inline double regularized_incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_front = detail::log_gamma(a + b) - detail::log_gamma(a) -
                          detail::log_gamma(b) + a * std::log(x) + b * std::log(1.0 - x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * detail::betacf(a, b, x) / a;
  return 1.0 - front * detail::betacf(b, a, 1.0 - x) / b;
}

// Two-sided p-value of a Student-t statistic with nu degrees of freedom.
inline double student_t_two_sided_p(double t, double nu) {
  if (nu <= 0.0) return 1.0;
  const double x = nu / (nu + t * t);
  return regularized_incomplete_beta(0.5 * nu, 0.5, x);
}

inline double pearson_r(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw ContractViolation("pearson_r: need two aligned series of length >= 2");
  const double mx = mean(x), my = mean(y);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

// p-value of r under the null of no correlation (t transform, n - 2 dof).
inline double pearson_p_value(double r, std::size_t n) {
  if (n < 3) return 1.0;
  const double r2 = std::min(r * r, 1.0 - 1e-15);
  const double t = r * std::sqrt(static_cast<double>(n - 2) / (1.0 - r2));
  return student_t_two_sided_p(t, static_cast<double>(n - 2));
}

inline std::vector<double> ranks_with_ties(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = mid_rank;
    i = j + 1;
  }
  return ranks;
}

inline double spearman_rho(const std::vector<double>& x, const std::vector<double>& y) {
  return pearson_r(ranks_with_ties(x), ranks_with_ties(y));
}

struct TrendFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r = 0.0;
  double p_value = 1.0;
  std::size_t n = 0;
};

// Ordinary least-squares line with the Pearson r of (x, y) and its p-value.
inline TrendFit linear_trend(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw ContractViolation("linear_trend: need two aligned series of length >= 2");
  TrendFit fit;
  fit.n = x.size();
  const double mx = mean(x), my = mean(y);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  if (sxx == 0.0) throw ContractViolation("linear_trend: x has zero variance");
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.r = pearson_r(x, y);
  fit.p_value = pearson_p_value(fit.r, x.size());
  return fit;
}

struct TTestResult {
  double t = 0.0;
  double p_value = 1.0;
  std::size_t n = 0;
};

// One-sample t-test of mean(diffs) > 0; returns the one-sided p-value.
inline TTestResult paired_t_test_greater(const std::vector<double>& diffs) {
  if (diffs.size() < 2) throw ContractViolation("paired_t_test: need >= 2 differences");
  TTestResult res;
  res.n = diffs.size();
  const double m = mean(diffs);
  const double sd = sample_stddev(diffs);
  if (sd == 0.0) {
    res.t = m > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
    res.p_value = m > 0.0 ? 0.0 : 1.0;
    return res;
  }
  res.t = m / (sd / std::sqrt(static_cast<double>(res.n)));
  const double two_sided = student_t_two_sided_p(res.t, static_cast<double>(res.n - 1));
  res.p_value = res.t > 0.0 ? 0.5 * two_sided : 1.0 - 0.5 * two_sided;
  return res;
}

// Convenience overload over aligned paired samples: tests mean(a - b) > 0.
inline TTestResult paired_t_test_greater(const std::vector<double>& a,
                                         const std::vector<double>& b) {
  if (a.size() != b.size()) throw ContractViolation("paired_t_test: samples must be aligned");
  std::vector<double> diffs(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) diffs[i] = a[i] - b[i];
  return paired_t_test_greater(diffs);
}

}  // namespace ecoglab
