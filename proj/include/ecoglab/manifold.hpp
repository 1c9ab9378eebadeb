#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "ecoglab/errors.hpp"
#include "ecoglab/numerics.hpp"
#include "ecoglab/parallel.hpp"
#include "ecoglab/rng.hpp"

namespace ecoglab {

// A set of flattened feature epochs ready for geometry diagnostics. Labels
// are optional (empty = unlabeled); subsample_step records how the cloud was
// thinned from the session stream.
struct PointCloud {
  Matrix points;
  std::vector<int> labels;
  std::size_t subsample_step = 10;

  void validate() const {
    if (points.rows() < 3) throw ContractViolation("PointCloud: need at least 3 points");
    if (!points.all_finite()) throw ContractViolation("PointCloud: non-finite coordinates");
    if (!labels.empty() && labels.size() != points.rows())
      throw ContractViolation("PointCloud: label count does not match point count");
  }
};

enum class IdMethod { twonn, ess };

inline std::string to_string(IdMethod m) { return m == IdMethod::twonn ? "twonn" : "ess"; }

struct IdEstimate {
  IdMethod method = IdMethod::twonn;
  double global_value = 0.0;
  std::vector<double> local_values;  // per-point for ess; empty for twonn
  std::size_t k = 0;
};

struct KnnResult {
  // indices(i, j) = j-th nearest neighbor of point i (self excluded),
  // distances(i, j) = its Euclidean distance; both sorted ascending with
  // ties broken toward the lower index.
  std::vector<std::vector<std::size_t>> indices;
  std::vector<std::vector<double>> distances;
};

inline KnnResult knn(const Matrix& points, std::size_t k, std::size_t jobs = 1) {
  const std::size_t n = points.rows();
  const std::size_t d = points.cols();
  if (n == 0 || d == 0) throw ContractViolation("knn: empty point set");
  if (k == 0) throw ContractViolation("knn: k must be positive");
  if (k >= n) throw ContractViolation("knn: k must be smaller than the point count");

  KnnResult result;
  result.indices.assign(n, {});
  result.distances.assign(n, {});

  parallel_for(n, jobs, [&](std::size_t i) {
    std::vector<std::pair<double, std::size_t>> order;
    order.reserve(n - 1);
    const double* pi = points.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double* pj = points.row(j);
      double acc = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = pi[c] - pj[c];
        acc += diff * diff;
      }
      order.emplace_back(acc, j);
    }
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k),
                      order.end());
    auto& idx = result.indices[i];
    auto& dist = result.distances[i];
    idx.resize(k);
    dist.resize(k);
    for (std::size_t j = 0; j < k; ++j) {
      idx[j] = order[j].second;
      dist[j] = std::sqrt(order[j].first);
    }
  });
  return result;
}

// Global intrinsic dimension from the ratio of the two nearest-neighbor
// distances: mu_i = r2/r1 follows a Pareto law with shape equal to the ID,
// i.e. ln mu is exponential with rate d. The noisy upper tail is discarded,
// and the maximum-likelihood estimate treats the discarded ratios as
// censored at the cutoff (each contributes ln of the largest retained mu);
// dropping them from the sum outright would inflate the estimate by ~34%
// at the default fraction. Duplicate points (r1 = 0) carry no ratio and are
// skipped.
inline IdEstimate twonn_id(const Matrix& points, double discard_fraction = 0.1) {
  const std::size_t n = points.rows();
  if (n < 20) throw ContractViolation("twonn_id: need at least 20 points");
  if (discard_fraction < 0.0 || discard_fraction >= 1.0)
    throw ContractViolation("twonn_id: discard fraction must lie in [0, 1)");

  const KnnResult nn = knn(points, 2);
  std::vector<double> mu;
  mu.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double r1 = nn.distances[i][0];
    const double r2 = nn.distances[i][1];
    if (r1 <= 0.0) continue;
    mu.push_back(r2 / r1);
  }
  if (mu.empty()) throw DegenerateInput("twonn_id: every point is duplicated");

  std::sort(mu.begin(), mu.end());
  const std::size_t discard = static_cast<std::size_t>(
      std::floor(discard_fraction * static_cast<double>(mu.size())));
  const std::size_t m = mu.size() - discard;
  if (m == 0) throw DegenerateInput("twonn_id: no ratios left after the discard");

  double log_sum = 0.0;
  for (std::size_t i = 0; i < m; ++i) log_sum += std::log(mu[i]);
  log_sum += static_cast<double>(discard) * std::log(mu[m - 1]);
  if (log_sum <= 0.0)
    throw DegenerateInput("twonn_id: neighbor ratios carry no spread");

  IdEstimate est;
  est.method = IdMethod::twonn;
  est.global_value = static_cast<double>(m) / log_sum;
  est.k = 2;
  return est;
}

// Reference table S(d) = E|sin(angle)| between independent standard gaussian
// vectors in R^d, estimated by Monte Carlo with common random numbers: one
// pool of pairs in R^d_max is reused for every d via coordinate prefixes.
// Sharing the pairs makes neighbouring entries strongly correlated, which
// keeps the table strictly increasing at realistic sample counts.
struct EssCalibration {
  std::size_t d_max = 0;
  std::size_t samples_per_d = 0;
  std::uint64_t seed = 0;
  std::vector<double> table;  // table[d - 1] = S(d)

  void validate() const {
    if (d_max < 2) throw ContractViolation("EssCalibration: d_max must be >= 2");
    if (table.size() != d_max) throw ContractViolation("EssCalibration: table size mismatch");
    for (std::size_t i = 1; i < table.size(); ++i)
      if (!(table[i] > table[i - 1]))
        throw DataError("EssCalibration: table is not strictly increasing");
  }

  // Continuous dimension whose reference skewness equals the statistic,
  // clamped to [1, d_max] outside the table.
  double dimension_for(double statistic) const {
    if (table.empty()) throw StateError("EssCalibration: empty table");
    if (statistic <= table.front()) return 1.0;
    if (statistic >= table.back()) return static_cast<double>(d_max);
    std::size_t hi = 1;
    while (table[hi] < statistic) ++hi;
    const double lo_s = table[hi - 1];
    const double hi_s = table[hi];
    const double t = (statistic - lo_s) / (hi_s - lo_s);
    return static_cast<double>(hi) + t;  // dimensions are 1-based
  }
};

inline EssCalibration build_ess_calibration(std::size_t d_max, std::size_t samples_per_d = 200000,
                                            std::uint64_t seed = 20240901) {
  if (d_max < 2) throw ContractViolation("build_ess_calibration: d_max must be >= 2");
  if (samples_per_d < 100000)
    throw ContractViolation("build_ess_calibration: need at least 1e5 pairs per dimension");

  EssCalibration cal;
  cal.d_max = d_max;
  cal.samples_per_d = samples_per_d;
  cal.seed = seed;
  cal.table.assign(d_max, 0.0);

  Rng rng(derive_seed(seed, seed_tag("ess-calibration")));
  std::vector<double> u(d_max), v(d_max);
  for (std::size_t s = 0; s < samples_per_d; ++s) {
    for (double& x : u) x = rng.normal();
    for (double& x : v) x = rng.normal();
    double uu = 0.0, vv = 0.0, uv = 0.0;
    for (std::size_t d = 0; d < d_max; ++d) {
      uu += u[d] * u[d];
      vv += v[d] * v[d];
      uv += u[d] * v[d];
      // 1-D vectors are collinear by definition; rounding in uv^2 vs uu*vv
      // would otherwise leak ~1e-9 into the S(1) = 0 anchor.
      if (d == 0) continue;
      const double cos2 = (uv * uv) / std::max(uu * vv, 1e-300);
      cal.table[d] += std::sqrt(std::max(0.0, 1.0 - std::min(cos2, 1.0)));
    }
  }
  for (double& s : cal.table) s /= static_cast<double>(samples_per_d);
  cal.validate();
  return cal;
}

// Process-wide default table, large enough for any cloud dimension the
// diagnostics are pointed at in practice.
inline const EssCalibration& default_ess_calibration() {
  static const EssCalibration cal = build_ess_calibration(64);
  return cal;
}

// Local intrinsic dimension by expected simplex skewness: in each k-point
// neighborhood, the mean |sin| of the angle between centered neighbor pairs
// rises toward 1 with dimension; inverting the calibration turns the
// statistic into a continuous local ID. The global value is the mean.
inline IdEstimate ess_local_id(const Matrix& points, std::size_t k,
                               const EssCalibration& calibration, std::size_t jobs = 1) {
  const std::size_t n = points.rows();
  const std::size_t d = points.cols();
  if (k < 2) throw ContractViolation("ess_local_id: neighborhoods need at least 2 points");
  if (k >= n) throw ContractViolation("ess_local_id: k must be smaller than the point count");
  calibration.validate();

  const KnnResult nn = knn(points, k, jobs);
  std::vector<double> statistic(n, std::numeric_limits<double>::quiet_NaN());

  parallel_for(n, jobs, [&](std::size_t i) {
    // Center the neighborhood on its own mean.
    Matrix centered(k, d);
    std::vector<double> mean(d, 0.0);
    for (std::size_t j = 0; j < k; ++j) {
      const double* p = points.row(nn.indices[i][j]);
      for (std::size_t c = 0; c < d; ++c) mean[c] += p[c];
    }
    for (double& m : mean) m /= static_cast<double>(k);
    std::vector<double> norms(k, 0.0);
    for (std::size_t j = 0; j < k; ++j) {
      const double* p = points.row(nn.indices[i][j]);
      for (std::size_t c = 0; c < d; ++c) {
        const double x = p[c] - mean[c];
        centered(j, c) = x;
        norms[j] += x * x;
      }
      norms[j] = std::sqrt(norms[j]);
    }

    double acc = 0.0;
    std::size_t pairs = 0;
    for (std::size_t a = 0; a < k; ++a) {
      if (norms[a] <= 0.0) continue;
      for (std::size_t b = a + 1; b < k; ++b) {
        if (norms[b] <= 0.0) continue;
        double uv = 0.0;
        for (std::size_t c = 0; c < d; ++c) uv += centered(a, c) * centered(b, c);
        const double cosv = uv / (norms[a] * norms[b]);
        acc += std::sqrt(std::max(0.0, 1.0 - std::min(cosv * cosv, 1.0)));
        ++pairs;
      }
    }
    if (pairs > 0) statistic[i] = acc / static_cast<double>(pairs);
  });

  IdEstimate est;
  est.method = IdMethod::ess;
  est.k = k;
  for (const double s : statistic)
    if (std::isfinite(s)) est.local_values.push_back(calibration.dimension_for(s));
  if (est.local_values.empty())
    throw DegenerateInput("ess_local_id: no neighborhood produced a statistic");
  est.global_value = std::accumulate(est.local_values.begin(), est.local_values.end(), 0.0) /
                     static_cast<double>(est.local_values.size());
  return est;
}

inline IdEstimate ess_local_id(const Matrix& points, std::size_t k = 100, std::size_t jobs = 1) {
  return ess_local_id(points, k, default_ess_calibration(), jobs);
}

// Projects centered points onto the top two principal directions. Each
// direction's sign is canonicalized by the singular-vector convention, so
// the orientation is deterministic.
inline Matrix pca_embed_2d(const Matrix& points) {
  const std::size_t n = points.rows();
  const std::size_t d = points.cols();
  if (n < 3) throw ContractViolation("pca_embed_2d: need at least 3 points");
  if (!points.all_finite()) throw ContractViolation("pca_embed_2d: non-finite coordinates");

  Matrix centered(n, d);
  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) mean[c] += points(i, c);
  for (double& m : mean) m /= static_cast<double>(n);
  double spread = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) {
      centered(i, c) = points(i, c) - mean[c];
      spread = std::max(spread, std::abs(centered(i, c)));
    }
  if (spread == 0.0) throw DegenerateInput("pca_embed_2d: zero-variance cloud");

  Matrix embedded(n, 2);
  double leading_scale = 0.0;
  for (std::size_t axis = 0; axis < 2; ++axis) {
    SingularTriplet triplet;
    try {
      triplet = top_singular_triplet(centered);
    } catch (const DegenerateInput&) {
      break;  // rank-1 cloud: the second coordinate stays zero
    }
    if (axis == 0)
      leading_scale = triplet.s;
    else if (triplet.s <= 1e-10 * leading_scale)
      break;  // residual is deflation round-off, not a real second direction
    const std::vector<double>& direction = triplet.v;
    for (std::size_t i = 0; i < n; ++i) {
      double score = 0.0;
      for (std::size_t c = 0; c < d; ++c) score += centered(i, c) * direction[c];
      embedded(i, axis) = score;
      for (std::size_t c = 0; c < d; ++c) centered(i, c) -= score * direction[c];
    }
  }
  return embedded;
}

struct SvmResult {
  std::vector<double> weights;
  double bias = 0.0;
  double accuracy = 0.0;
};

// Linear SVM (hinge loss + L2 regularization, weight 1.0) fit by full-batch
// projected subgradient descent on a fixed 1/(lambda*t) schedule: no
// sampling, no cross-validation; the returned accuracy is measured on the
// training points themselves.
inline SvmResult svm_separability(const Matrix& points, const std::vector<int>& labels,
                                  double regularization = 1.0, std::size_t steps = 10000) {
  const std::size_t n = points.rows();
  const std::size_t d = points.cols();
  if (n == 0 || d == 0) throw ContractViolation("svm_separability: empty input");
  if (labels.size() != n) throw ContractViolation("svm_separability: label count mismatch");
  if (!(regularization > 0.0)) throw ConfigError("svm_separability: regularization must be > 0");

  const auto [lo_it, hi_it] = std::minmax_element(labels.begin(), labels.end());
  if (*lo_it == *hi_it) throw ContractViolation("svm_separability: both classes must be present");
  const int lo = *lo_it, hi = *hi_it;
  for (const int label : labels)
    if (label != lo && label != hi)
      throw ContractViolation("svm_separability: labels must be binary");

  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = labels[i] == hi ? 1.0 : -1.0;

  std::vector<double> w(d, 0.0);
  double b = 0.0;
  std::vector<double> grad(d);
  for (std::size_t t = 1; t <= steps; ++t) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double grad_b = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double margin = b;
      for (std::size_t c = 0; c < d; ++c) margin += w[c] * points(i, c);
      if (y[i] * margin < 1.0) {
        for (std::size_t c = 0; c < d; ++c) grad[c] -= y[i] * points(i, c);
        grad_b -= y[i];
      }
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    const double eta = 1.0 / (regularization * static_cast<double>(t));
    for (std::size_t c = 0; c < d; ++c)
      w[c] -= eta * (regularization * w[c] + grad[c] * inv_n);
    b -= eta * grad_b * inv_n;
  }

  SvmResult result;
  result.weights = std::move(w);
  result.bias = b;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    double margin = result.bias;
    for (std::size_t c = 0; c < d; ++c) margin += result.weights[c] * points(i, c);
    const double sign = margin >= 0.0 ? 1.0 : -1.0;
    if (sign == y[i]) ++correct;
  }
  result.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  return result;
}

}  // namespace ecoglab
