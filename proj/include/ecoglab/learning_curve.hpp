#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <utility>
#include <vector>

#include "ecoglab/errors.hpp"
#include "ecoglab/numerics.hpp"

namespace ecoglab {

// Saturating power law CS(l) = a - b * l^(-c): a is the asymptotic score, b
// the learning rate and c the decay rate. The asymptote is a cosine
// similarity, so it lives in [-1, 1]; the rates are positive, with an
// internal ceiling that keeps the trust region bounded when a handful of
// noisy points would otherwise send them to infinity.
inline constexpr double kCurveAsymptoteMin = -1.0;
inline constexpr double kCurveAsymptoteMax = 1.0;
inline constexpr double kCurveRateMin = 1e-9;
inline constexpr double kCurveRateMax = 1e3;

struct PowerLawFit {
  double a = 0.0;
  double b = kCurveRateMin;
  double c = kCurveRateMin;
  double residual_sse = 0.0;
  bool converged = false;
  std::size_t n_points = 0;
};

// One aggregated observation: mean score at training size l. Weights scale
// the squared residuals (1.0 = ordinary least squares).
struct CurvePoint {
  double l = 0.0;
  double cs = 0.0;
  double weight = 1.0;
};

inline double eval_power_law(double a, double b, double c, double l) {
  if (!(l > 0.0)) throw ContractViolation("eval_power_law: training size must be > 0");
  return a - b * std::pow(l, -c);
}

inline double eval_power_law(const PowerLawFit& fit, double l) {
  return eval_power_law(fit.a, fit.b, fit.c, l);
}

namespace detail {

inline double clamp_asymptote(double a) {
  return std::clamp(a, kCurveAsymptoteMin, kCurveAsymptoteMax);
}

inline double clamp_rate(double r) { return std::clamp(r, kCurveRateMin, kCurveRateMax); }

inline double curve_sse(const std::vector<CurvePoint>& pts, double a, double b, double c) {
  double sse = 0.0;
  for (const CurvePoint& p : pts) {
    const double r = p.cs - (a - b * std::pow(p.l, -c));
    sse += p.weight * r * r;
  }
  return sse;
}

// Weighted linear least squares for (a, b) at fixed c: cs ~= a - b * l^(-c).
// Closed-form 2x2 normal equations; a near-singular system (c so small that
// every l^(-c) is indistinguishable) falls back to a flat initial guess.
inline std::pair<double, double> linear_init(const std::vector<CurvePoint>& pts, double c) {
  double sw = 0.0, su = 0.0, suu = 0.0, sy = 0.0, suy = 0.0;
  double cs_max = -1.0;
  for (const CurvePoint& p : pts) {
    const double u = std::pow(p.l, -c);
    sw += p.weight;
    su += p.weight * u;
    suu += p.weight * u * u;
    sy += p.weight * p.cs;
    suy += p.weight * u * p.cs;
    cs_max = std::max(cs_max, p.cs);
  }
  const double det = sw * suu - su * su;
  if (std::abs(det) < 1e-12 * std::max(1.0, sw * suu))
    return {clamp_asymptote(cs_max), 1.0};
  // Solve [sw -su; su -suu] [a; b] = [sy; suy] for cs = a - b*u.
  const double a = (suy * su - sy * suu) / (su * su - sw * suu);
  const double b = (sw * suy - su * sy) / (su * su - sw * suu);
  return {clamp_asymptote(a), clamp_rate(b)};
}

struct CurveCandidate {
  double a = 0.0, b = 0.0, c = 0.0;
  double sse = 0.0;
  bool converged = false;
};

// Projected Levenberg-Marquardt descent on the weighted residuals. Steps are
// clamped back into the box; a step whose projected norm drops below 1e-10
// ends the iteration with the converged flag set.
inline CurveCandidate refine(const std::vector<CurvePoint>& pts, double a, double b, double c) {
  double sse = curve_sse(pts, a, b, c);
  double mu = 1e-3;
  bool converged = false;

  for (int iter = 0; iter < 500; ++iter) {
    Matrix h(3, 3);
    Matrix g(3, 1);
    for (const CurvePoint& p : pts) {
      const double u = std::pow(p.l, -c);
      const double r = (a - b * u) - p.cs;
      const std::array<double, 3> j{1.0, -u, b * u * std::log(p.l)};
      for (std::size_t row = 0; row < 3; ++row) {
        g(row, 0) += p.weight * j[row] * r;
        for (std::size_t col = 0; col < 3; ++col) h(row, col) += p.weight * j[row] * j[col];
      }
    }

    bool accepted = false;
    double step_norm = 0.0;
    for (int damp = 0; damp < 40 && !accepted; ++damp) {
      Matrix lhs = h;
      for (std::size_t d = 0; d < 3; ++d)
        lhs(d, d) += mu * std::max(h(d, d), 1e-12);
      Matrix rhs(3, 1);
      for (std::size_t d = 0; d < 3; ++d) rhs(d, 0) = -g(d, 0);
      Matrix delta = solve_spd(lhs, rhs);

      const double a2 = clamp_asymptote(a + delta(0, 0));
      const double b2 = clamp_rate(b + delta(1, 0));
      const double c2 = clamp_rate(c + delta(2, 0));
      const double da = a2 - a, db = b2 - b, dc = c2 - c;
      step_norm = std::sqrt(da * da + db * db + dc * dc);

      const double sse2 = curve_sse(pts, a2, b2, c2);
      if (sse2 < sse) {
        a = a2;
        b = b2;
        c = c2;
        sse = sse2;
        mu = std::max(mu / 3.0, 1e-12);
        accepted = true;
      } else {
        mu *= 4.0;
        if (step_norm < 1e-10) break;  // pinned against the bounds or a minimum
      }
    }
    if (step_norm < 1e-10) {
      converged = true;
      break;
    }
    if (!accepted) {
      converged = true;  // no damping level improves: stationary point
      break;
    }
  }

  return {a, b, c, sse, converged};
}

}  // namespace detail

// The multi-start initial guesses mandated for the fit. Each start solves the
// linear subproblem for (a, b) at the fixed decay rate before refinement.
inline const std::array<double, 4>& power_law_start_decays() {
  static const std::array<double, 4> starts{0.1, 0.5, 1.0, 2.0};
  return starts;
}

inline PowerLawFit fit_power_law(const std::vector<CurvePoint>& points) {
  std::vector<double> distinct;
  for (const CurvePoint& p : points) {
    if (!(p.l > 0.0) || !std::isfinite(p.l))
      throw ContractViolation("fit_power_law: training sizes must be positive and finite");
    if (!std::isfinite(p.cs)) throw DataError("fit_power_law: non-finite score");
    if (!(p.weight > 0.0) || !std::isfinite(p.weight))
      throw ContractViolation("fit_power_law: weights must be positive and finite");
    distinct.push_back(p.l);
  }
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (distinct.size() < 3)
    throw IdentifiabilityError("fit_power_law: need at least 3 distinct training sizes");

  detail::CurveCandidate best;
  bool have_best = false;
  for (const double c0 : power_law_start_decays()) {
    const auto [a0, b0] = detail::linear_init(points, c0);
    const detail::CurveCandidate cand = detail::refine(points, a0, b0, c0);
    if (!have_best || cand.sse < best.sse ||
        (cand.sse == best.sse && cand.c < best.c)) {
      best = cand;
      have_best = true;
    }
  }

  PowerLawFit fit;
  fit.a = best.a;
  fit.b = best.b;
  fit.c = best.c;
  fit.residual_sse = best.sse;
  fit.converged = best.converged;
  fit.n_points = points.size();
  return fit;
}

inline PowerLawFit fit_power_law(const std::vector<std::pair<double, double>>& points) {
  std::vector<CurvePoint> pts;
  pts.reserve(points.size());
  for (const auto& [l, cs] : points) pts.push_back({l, cs, 1.0});
  return fit_power_law(pts);
}

// Collapses raw (size, score) samples -- e.g. one row per RI repetition --
// into one point per distinct size. Inverse-variance weighting needs at
// least two samples per size.
inline std::vector<CurvePoint> aggregate_curve_points(
    const std::vector<std::pair<double, double>>& samples, bool inverse_variance = false) {
  if (samples.empty()) throw ContractViolation("aggregate_curve_points: no samples");
  std::map<double, std::vector<double>> groups;
  for (const auto& [l, cs] : samples) {
    if (!(l > 0.0) || !std::isfinite(l))
      throw ContractViolation("aggregate_curve_points: sizes must be positive and finite");
    groups[l].push_back(cs);
  }

  std::vector<CurvePoint> out;
  out.reserve(groups.size());
  for (const auto& [l, scores] : groups) {
    double mean = 0.0;
    for (const double s : scores) mean += s;
    mean /= static_cast<double>(scores.size());

    double weight = 1.0;
    if (inverse_variance) {
      if (scores.size() < 2)
        throw ContractViolation(
            "aggregate_curve_points: inverse-variance weights need >= 2 samples per size");
      double var = 0.0;
      for (const double s : scores) var += (s - mean) * (s - mean);
      var /= static_cast<double>(scores.size() - 1);
      weight = 1.0 / std::max(var, 1e-12);
    }
    out.push_back({l, mean, weight});
  }
  return out;
}

}  // namespace ecoglab
