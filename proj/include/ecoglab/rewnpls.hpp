#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "ecoglab/errors.hpp"
#include "ecoglab/numerics.hpp"

namespace ecoglab {

struct RewNplsConfig {
  std::size_t max_factors = 10;
  double forgetting = 1.0;  // lambda on old mass, in (0, 1]
  double chunk_seconds = 15.0;

  void validate() const {
    if (max_factors < 1) throw ConfigError("RewNplsConfig: max_factors must be >= 1");
    if (!(forgetting > 0.0) || forgetting > 1.0)
      throw ConfigError("RewNplsConfig: forgetting must lie in (0, 1]");
    if (chunk_seconds <= 0.0) throw ConfigError("RewNplsConfig: chunk_seconds must be > 0");
  }

  // Epochs per training chunk at the 10 windows-per-second framing.
  std::size_t chunk_epochs() const {
    return static_cast<std::size_t>(std::llround(chunk_seconds * 10.0));
  }
};

// Recursive exponentially weighted N-way PLS. The model keeps exponentially
// weighted raw moments of (x, y); each chunk update re-extracts up to
// max_factors multilinear factors from the centered/scaled cross-covariance
// Z by rank-1 tensor approximation with projection deflation, and rebuilds
// the per-count regressions as rank truncations of Z (the deflation
// projections), so the coefficients always match the current basis.
// Before a chunk is absorbed it serves as validation data: the stored
// predictors for every factor count are scored on it, the scores are folded
// into an exponentially weighted running tally, and the count with the best
// tally is selected. Accumulating (rather than trusting the latest chunk
// alone) keeps the deployed factor count stable when a single chunk happens
// to favour an unrepresentative predictor.
class RewNpls {
 public:
  RewNpls(RewNplsConfig config, std::size_t d1, std::size_t d2, std::size_t d3)
      : cfg_(config), d1_(d1), d2_(d2), d3_(d3), n_x_(d1 * d2 * d3) {
    cfg_.validate();
    if (n_x_ == 0) throw ConfigError("RewNpls: empty feature dimensions");
    sum_x_.assign(n_x_, 0.0);
    sum_xx_.assign(n_x_, 0.0);
    sum_y_.fill(0.0);
    sum_xy_.assign(n_x_ * 3, 0.0);
    validation_sum_.assign(cfg_.max_factors, 0.0);
  }

  std::size_t coefficient_count() const { return n_x_ * 3; }
  std::size_t selected_factors() const { return selected_factors_; }
  bool trained() const { return trained_; }
  std::size_t available_factors() const { return factors_.size(); }

  // Mean cosine similarity of each stored factor-count predictor on the most
  // recent validation (= incoming) chunk; empty before the second chunk.
  const std::vector<double>& last_validation_scores() const { return validation_scores_; }

  void update_chunk(const std::vector<const Tensor3*>& x,
                    const std::vector<std::array<double, 3>>& y) {
    if (x.empty() || x.size() != y.size())
      throw ContractViolation("RewNpls: chunk empty or misaligned");
    for (const Tensor3* t : x) {
      if (t == nullptr || t->d1() != d1_ || t->d2() != d2_ || t->d3() != d3_)
        throw ContractViolation("RewNpls: epoch shape mismatch");
      for (const double v : t->storage())
        if (!std::isfinite(v)) throw DataError("RewNpls: non-finite feature value");
    }
    for (const auto& t : y)
      for (const double v : t)
        if (!std::isfinite(v)) throw DataError("RewNpls: non-finite target value");

    // (1) Recursive factor-count validation on the incoming chunk. Each
    // stored predictor is scored on the unseen chunk; the per-count cosine
    // sums join an exponentially weighted tally whose argmax drives the
    // deployed factor count.
    if (trained_) {
      validation_scores_.assign(factors_.size(), 0.0);
      std::size_t scored = 0;
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double ny = std::sqrt(y[i][0] * y[i][0] + y[i][1] * y[i][1] + y[i][2] * y[i][2]);
        if (ny < 1e-12) continue;
        ++scored;
        const std::vector<double> t = latents(*x[i]);
        for (std::size_t f = 1; f <= factors_.size(); ++f) {
          const std::array<double, 3> p = predict_latent(t, f);
          validation_scores_[f - 1] += cosine(p, y[i]);
        }
      }
      if (scored > 0) {
        for (double& v : validation_sum_) v *= cfg_.forgetting;
        validation_mass_ = cfg_.forgetting * validation_mass_ + static_cast<double>(scored);
        for (std::size_t f = 1; f <= validation_scores_.size(); ++f) {
          validation_sum_[f - 1] += validation_scores_[f - 1];
          validation_scores_[f - 1] /= static_cast<double>(scored);
        }
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_f = selected_factors_;
        for (std::size_t f = 1; f <= validation_sum_.size(); ++f) {
          if (validation_sum_[f - 1] > best + 1e-12) {
            best = validation_sum_[f - 1];
            best_f = f;
          }
        }
        selected_factors_ = best_f;
      }
    }

    // (2) Exponentially weighted raw-moment update.
    const double lambda = cfg_.forgetting;
    mass_ *= lambda;
    for (double& v : sum_x_) v *= lambda;
    for (double& v : sum_xx_) v *= lambda;
    for (double& v : sum_y_) v *= lambda;
    for (double& v : sum_xy_) v *= lambda;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const std::vector<double>& xv = x[i]->storage();
      for (std::size_t j = 0; j < n_x_; ++j) {
        sum_x_[j] += xv[j];
        sum_xx_[j] += xv[j] * xv[j];
        double* row = sum_xy_.data() + j * 3;
        row[0] += xv[j] * y[i][0];
        row[1] += xv[j] * y[i][1];
        row[2] += xv[j] * y[i][2];
      }
      for (std::size_t k = 0; k < 3; ++k) sum_y_[k] += y[i][k];
    }
    mass_ += static_cast<double>(x.size());

    // (3) Refresh means/scales and re-extract the factor basis from the
    // centered, per-feature-scaled cross-covariance.
    rebuild_from_moments();
  }

 private:
  void rebuild_from_moments() {
    mean_x_.assign(n_x_, 0.0);
    scale_x_.assign(n_x_, 1.0);
    for (std::size_t j = 0; j < n_x_; ++j) {
      mean_x_[j] = sum_x_[j] / mass_;
      const double var = std::max(sum_xx_[j] / mass_ - mean_x_[j] * mean_x_[j], 0.0);
      scale_x_[j] = std::max(std::sqrt(var), 1e-6);
    }
    for (std::size_t k = 0; k < 3; ++k) mean_y_[k] = sum_y_[k] / mass_;

    Matrix z(n_x_, 3);
    for (std::size_t j = 0; j < n_x_; ++j)
      for (std::size_t k = 0; k < 3; ++k)
        z(j, k) = (sum_xy_[j * 3 + k] / mass_ - mean_x_[j] * mean_y_[k]) / scale_x_[j];

    // Each factor's deflation projection w'Z is also its regression row:
    // with per-feature scaling acting as an approximate whitener, the least
    // squares map from scaled features to centered targets is Z itself, so
    // the f-factor predictor is the rank-f truncation of Z. Rebuilding the
    // rows from the accumulated Z every chunk keeps the regression exactly
    // consistent with the refreshed basis, however much it rotated.
    factors_.clear();
    std::vector<std::array<double, 3>> regression_rows;
    for (std::size_t f = 0; f < cfg_.max_factors; ++f) {
      std::vector<double> w;
      try {
        const SingularTriplet output_dir = top_singular_triplet(z);
        Tensor3 zq(d1_, d2_, d3_);
        for (std::size_t j = 0; j < n_x_; ++j) {
          double acc = 0.0;
          for (std::size_t k = 0; k < 3; ++k) acc += z(j, k) * output_dir.v[k];
          zq.storage()[j] = acc;
        }
        const Rank1Tensor r1 = rank1_tensor_approx(zq);
        w = outer3(r1.w1, r1.w2, r1.w3);
      } catch (const DegenerateInput&) {
        break;  // nothing left to explain (e.g. constant targets)
      }
      // Projection deflation: remove the new direction from Z.
      std::array<double, 3> row{};
      for (std::size_t k = 0; k < 3; ++k) {
        double proj = 0.0;
        for (std::size_t j = 0; j < n_x_; ++j) proj += w[j] * z(j, k);
        for (std::size_t j = 0; j < n_x_; ++j) z(j, k) -= w[j] * proj;
        row[k] = proj;
      }
      regression_rows.push_back(row);
      factors_.push_back(std::move(w));
    }

    beta_.assign(factors_.size(), Matrix());
    for (std::size_t f = 1; f <= factors_.size(); ++f) {
      Matrix b(f, 3);
      for (std::size_t r = 0; r < f; ++r)
        for (std::size_t c = 0; c < 3; ++c) b(r, c) = regression_rows[r][c];
      beta_[f - 1] = b;
    }

    if (!trained_) selected_factors_ = 1;
    if (factors_.empty()) selected_factors_ = 0;
    selected_factors_ = std::min(selected_factors_, factors_.size());
    trained_ = true;
  }

 public:
  std::array<double, 3> predict(const Tensor3& x) const {
    if (!trained_) throw StateError("RewNpls: predict before any chunk");
    if (x.d1() != d1_ || x.d2() != d2_ || x.d3() != d3_)
      throw ContractViolation("RewNpls: epoch shape mismatch");
    return predict_latent(latents(x), selected_factors_);
  }

  std::array<double, 3> predict_with_factors(const Tensor3& x, std::size_t n_factors) const {
    if (!trained_) throw StateError("RewNpls: predict before any chunk");
    return predict_latent(latents(x), std::min(n_factors, factors_.size()));
  }

  // Materialized coefficient tensor for the selected factor count, as an
  // n_x x 3 matrix over the centered/scaled feature space.
  Matrix coefficients() const {
    if (!trained_) throw StateError("RewNpls: untrained model has no coefficients");
    Matrix b(n_x_, 3);
    if (selected_factors_ == 0) return b;
    const Matrix& beta = beta_[selected_factors_ - 1];
    for (std::size_t f = 0; f < selected_factors_; ++f) {
      const std::vector<double>& w = factors_[f];
      for (std::size_t j = 0; j < n_x_; ++j)
        for (std::size_t k = 0; k < 3; ++k) b(j, k) += w[j] * beta(f, k);
    }
    return b;
  }

  const std::array<double, 3>& output_mean() const { return mean_y_; }

  // Flat recursion state for checkpointing: the exponentially weighted
  // moments, the validation tally, and the current selection. Factor bases
  // and regressions are derived quantities and are rebuilt on restore.
  std::vector<double> recursion_state() const {
    if (!trained_) throw StateError("RewNpls: untrained model has no state to export");
    std::vector<double> state;
    state.reserve(recursion_state_size());
    state.push_back(mass_);
    state.insert(state.end(), sum_x_.begin(), sum_x_.end());
    state.insert(state.end(), sum_xx_.begin(), sum_xx_.end());
    state.insert(state.end(), sum_y_.begin(), sum_y_.end());
    state.insert(state.end(), sum_xy_.begin(), sum_xy_.end());
    state.insert(state.end(), validation_sum_.begin(), validation_sum_.end());
    state.push_back(validation_mass_);
    state.push_back(static_cast<double>(selected_factors_));
    return state;
  }

  std::size_t recursion_state_size() const {
    return 1 + n_x_ + n_x_ + 3 + n_x_ * 3 + cfg_.max_factors + 2;
  }

  void restore_recursion_state(const std::vector<double>& state) {
    if (state.size() != recursion_state_size())
      throw DataError("RewNpls: recursion state length mismatch");
    for (const double v : state)
      if (!std::isfinite(v)) throw DataError("RewNpls: non-finite recursion state");
    std::size_t at = 0;
    mass_ = state[at++];
    if (!(mass_ > 0.0)) throw DataError("RewNpls: restored mass must be positive");
    for (std::size_t j = 0; j < n_x_; ++j) sum_x_[j] = state[at++];
    for (std::size_t j = 0; j < n_x_; ++j) sum_xx_[j] = state[at++];
    for (std::size_t k = 0; k < 3; ++k) sum_y_[k] = state[at++];
    for (std::size_t j = 0; j < n_x_ * 3; ++j) sum_xy_[j] = state[at++];
    for (std::size_t f = 0; f < cfg_.max_factors; ++f) validation_sum_[f] = state[at++];
    validation_mass_ = state[at++];
    const double selected = state[at++];
    if (selected < 0.0 || selected > static_cast<double>(cfg_.max_factors))
      throw DataError("RewNpls: restored factor selection out of range");
    trained_ = true;
    selected_factors_ = static_cast<std::size_t>(selected);
    rebuild_from_moments();
  }

 private:
  std::vector<double> latents(const Tensor3& x) const {
    const std::vector<double>& xv = x.storage();
    std::vector<double> t(factors_.size(), 0.0);
    for (std::size_t f = 0; f < factors_.size(); ++f) {
      const std::vector<double>& w = factors_[f];
      double acc = 0.0;
      for (std::size_t j = 0; j < n_x_; ++j)
        acc += w[j] * (xv[j] - mean_x_[j]) / scale_x_[j];
      t[f] = acc;
    }
    return t;
  }

  std::array<double, 3> predict_latent(const std::vector<double>& t,
                                       std::size_t n_factors) const {
    std::array<double, 3> out = mean_y_;
    if (n_factors == 0 || beta_.empty()) return out;
    n_factors = std::min(n_factors, beta_.size());
    const Matrix& beta = beta_[n_factors - 1];
    for (std::size_t f = 0; f < n_factors; ++f)
      for (std::size_t k = 0; k < 3; ++k) out[k] += t[f] * beta(f, k);
    return out;
  }

  static double cosine(const std::array<double, 3>& a, const std::array<double, 3>& b) {
    const double na = std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
    const double nb = std::sqrt(b[0] * b[0] + b[1] * b[1] + b[2] * b[2]);
    if (na < 1e-12 || nb < 1e-12) return 0.0;
    return (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]) / (na * nb);
  }

  RewNplsConfig cfg_;
  std::size_t d1_, d2_, d3_, n_x_;
  bool trained_ = false;
  std::size_t selected_factors_ = 1;

  double mass_ = 0.0;
  std::vector<double> sum_x_, sum_xx_;
  std::array<double, 3> sum_y_{};
  std::vector<double> sum_xy_;  // n_x x 3, row-major

  std::vector<double> mean_x_, scale_x_;
  std::array<double, 3> mean_y_{};

  std::vector<std::vector<double>> factors_;  // unit vectors in scaled space
  std::vector<Matrix> beta_;  // beta_[f-1]: (f x 3) regression on latents
  std::vector<double> validation_scores_;
  std::vector<double> validation_sum_;
  double validation_mass_ = 0.0;
};

}  // namespace ecoglab
