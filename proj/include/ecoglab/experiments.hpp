#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "ecoglab/decoders.hpp"
#include "ecoglab/errors.hpp"
#include "ecoglab/features.hpp"
#include "ecoglab/parallel.hpp"
#include "ecoglab/rng.hpp"
#include "ecoglab/stats.hpp"

namespace ecoglab {

enum class ExperimentKind { forward_increase, backward_increase, random_increase, translation };

inline std::string to_string(ExperimentKind kind) {
  switch (kind) {
    case ExperimentKind::forward_increase: return "fi";
    case ExperimentKind::backward_increase: return "bi";
    case ExperimentKind::random_increase: return "ri";
    case ExperimentKind::translation: return "translation";
  }
  throw ContractViolation("to_string: unknown experiment kind");
}

inline ExperimentKind experiment_kind_from_string(const std::string& name) {
  if (name == "fi" || name == "forward_increase") return ExperimentKind::forward_increase;
  if (name == "bi" || name == "backward_increase") return ExperimentKind::backward_increase;
  if (name == "ri" || name == "random_increase") return ExperimentKind::random_increase;
  if (name == "translation") return ExperimentKind::translation;
  throw ConfigError("unknown experiment kind: " + name);
}

struct ExperimentPlan {
  ExperimentKind kind = ExperimentKind::forward_increase;
  DecoderSpec decoder;
  std::size_t test_session_count = 22;
  std::size_t translation_train_sessions = 6;
  std::size_t translation_test_sessions = 6;
  std::size_t translation_stride = 3;
  std::size_t repetitions = 0;  // 0 -> kind/decoder-dependent default
  std::vector<std::size_t> ri_size_grid;  // epoch counts; empty -> log-spaced default
  std::optional<double> session_exclusion_threshold;  // CS floor; disabled by default
  std::uint64_t seed = 1;
  unsigned jobs = 1;

  std::size_t effective_repetitions() const {
    if (repetitions > 0) return repetitions;
    if (kind == ExperimentKind::random_increase) return 10;
    return decoder.kind == DecoderKind::rewnpls ? 1 : 5;
  }
};

struct ExperimentPoint {
  double x_minutes = 0.0;  // training minutes; window start index for translation
  std::size_t repetition = 0;
  double mean_cs = 0.0;
  std::string train_range;
  std::string test_range;
  // Half-open session index ranges behind the labels above.
  std::size_t train_begin = 0, train_end = 0;
  std::size_t test_begin = 0, test_end = 0;
};

struct ExperimentResult {
  ExperimentKind kind = ExperimentKind::forward_increase;
  std::vector<ExperimentPoint> points;
  std::uint64_t plan_hash = 0;
  std::optional<TrendFit> trend;  // translation only
};

// Mean per-epoch cosine similarity. Predictions of vanishing norm score 0;
// epochs whose target has vanishing norm (rest periods) carry no direction
// information and are excluded from the mean.
inline double mean_cosine_similarity(const std::vector<std::array<double, 3>>& preds,
                                     const std::vector<std::array<double, 3>>& targets) {
  if (preds.empty() || preds.size() != targets.size())
    throw ContractViolation("mean_cosine_similarity: empty or misaligned inputs");
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto& y = targets[i];
    const double ny = std::sqrt(y[0] * y[0] + y[1] * y[1] + y[2] * y[2]);
    if (ny < 1e-12) continue;
    ++counted;
    const auto& p = preds[i];
    const double np = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
    if (np < 1e-12) continue;  // contributes zero similarity
    total += (p[0] * y[0] + p[1] * y[1] + p[2] * y[2]) / (np * ny);
  }
  return counted == 0 ? 0.0 : total / static_cast<double>(counted);
}

namespace detail {

// Chronological epoch pool over a contiguous session range [begin, end).
struct EpochPool {
  std::vector<const FeatureEpoch*> epochs;
  std::vector<std::array<double, 3>> targets;

  void add_session(const FeatureSet& session) {
    for (std::size_t i = 0; i < session.size(); ++i) {
      epochs.push_back(&session.epochs[i]);
      targets.push_back(session.targets[i]);
    }
  }
};

inline EpochPool pool_sessions(const std::vector<FeatureSet>& sessions, std::size_t begin,
                               std::size_t end) {
  EpochPool pool;
  for (std::size_t s = begin; s < end; ++s) pool.add_session(sessions[s]);
  return pool;
}

// 1-based inclusive session range label, e.g. "s3-s8".
inline std::string session_range_label(std::size_t begin, std::size_t end) {
  std::ostringstream os;
  os << "s" << begin + 1 << "-s" << end;
  return os.str();
}

inline double epochs_to_minutes(std::size_t n_epochs) {
  return static_cast<double>(n_epochs) * 0.1 / 60.0;
}

// Seed shared by any point that trains on the same session range and
// repetition, so protocols that meet at a common configuration (FI's last
// point and BI's first) reproduce each other exactly.
inline std::uint64_t range_seed(const ExperimentPlan& plan, std::size_t train_begin,
                                std::size_t train_end, std::size_t repetition) {
  return derive_seed(plan.seed, seed_tag("train-range"), train_begin, train_end, repetition);
}

inline double evaluate_range(const ExperimentPlan& plan, const EpochPool& train,
                             const EpochPool& test, std::uint64_t seed) {
  auto decoder = train_decoder(plan.decoder, train.epochs, train.targets, seed);
  return mean_cosine_similarity(decoder->predict(test.epochs), test.targets);
}

inline void check_dataset(const std::vector<FeatureSet>& sessions, std::size_t minimum,
                          const char* what) {
  if (sessions.size() < minimum) {
    std::ostringstream os;
    os << what << ": need at least " << minimum << " sessions, got " << sessions.size();
    throw ConfigError(os.str());
  }
  for (const FeatureSet& s : sessions)
    if (s.size() == 0) throw DataError("experiment dataset contains an empty session");
}

}  // namespace detail

// FNV-style digest of everything that determines an experiment's outcome.
inline std::uint64_t plan_hash(const ExperimentPlan& plan) {
  std::ostringstream os;
  os << to_string(plan.kind) << "|" << to_string(plan.decoder.kind) << "|"
     << plan.test_session_count << "|" << plan.translation_train_sessions << "|"
     << plan.translation_test_sessions << "|" << plan.translation_stride << "|"
     << plan.effective_repetitions() << "|" << plan.seed << "|";
  for (std::size_t s : plan.ri_size_grid) os << s << ",";
  os << "|" << plan.decoder.rewnpls.max_factors << "|" << plan.decoder.rewnpls.forgetting
     << "|" << plan.decoder.rewnpls.chunk_seconds << "|" << plan.decoder.mlp_hidden << "|"
     << plan.decoder.dropout << "|" << plan.decoder.train.learning_rate << "|"
     << plan.decoder.train.batch_size << "|" << plan.decoder.train.max_epochs;
  if (plan.session_exclusion_threshold) os << "|excl=" << *plan.session_exclusion_threshold;
  return seed_tag(os.str());
}

// Default RI size grid: roughly log-spaced epoch counts from five minutes of
// signal (or the whole pool if smaller) up to the full pool, deduplicated.
inline std::vector<std::size_t> default_ri_grid(std::size_t pool_size, std::size_t n_sizes = 10) {
  if (pool_size == 0) throw ContractViolation("default_ri_grid: empty pool");
  const std::size_t lo = std::min<std::size_t>(pool_size, 3000);  // 5 min at 0.1 s steps
  std::vector<std::size_t> grid;
  if (lo == pool_size || n_sizes == 1) {
    grid.push_back(pool_size);
    return grid;
  }
  const double log_lo = std::log(static_cast<double>(lo));
  const double log_hi = std::log(static_cast<double>(pool_size));
  for (std::size_t i = 0; i < n_sizes; ++i) {
    const double f = static_cast<double>(i) / static_cast<double>(n_sizes - 1);
    const auto size = static_cast<std::size_t>(std::llround(std::exp(log_lo + f * (log_hi - log_lo))));
    if (grid.empty() || size > grid.back()) grid.push_back(size);
  }
  grid.back() = pool_size;
  return grid;
}

// Drops sessions whose within-session decoder score falls below the floor:
// the decoder trains on the first 80% of the session and is scored on the
// rest. Mirrors the removal of corrupted recording days before planning.
inline std::vector<FeatureSet> exclude_outlier_sessions(const std::vector<FeatureSet>& sessions,
                                                        const DecoderSpec& spec,
                                                        double cs_floor, std::uint64_t seed) {
  std::vector<FeatureSet> kept;
  for (const FeatureSet& session : sessions) {
    const std::size_t n = session.size();
    const std::size_t split = n - n / 5;
    if (split == 0 || split >= n)
      throw ConfigError("exclude_outlier_sessions: session too short to split");
    detail::EpochPool train, test;
    for (std::size_t i = 0; i < n; ++i) {
      auto& dst = i < split ? train : test;
      dst.epochs.push_back(&session.epochs[i]);
      dst.targets.push_back(session.targets[i]);
    }
    auto decoder = train_decoder(spec, train.epochs, train.targets,
                                 derive_seed(seed, seed_tag("exclusion"), session.session_index));
    const double cs = mean_cosine_similarity(decoder->predict(test.epochs), test.targets);
    if (cs >= cs_floor) kept.push_back(session);
  }
  return kept;
}

// ---------------------------------------------------------------------------
// The four protocols. Points are independent jobs executed via parallel_for
// with per-point seeds; assembly is by precomputed index, so the job count
// never changes the result.
// ---------------------------------------------------------------------------

inline ExperimentResult run_forward_increase(const ExperimentPlan& plan,
                                             const std::vector<FeatureSet>& sessions) {
  detail::check_dataset(sessions, plan.test_session_count + 1, "forward_increase");
  const std::size_t n = sessions.size();
  const std::size_t reps = plan.effective_repetitions();
  const std::size_t n_k = n - plan.test_session_count;

  ExperimentResult result;
  result.kind = ExperimentKind::forward_increase;
  result.plan_hash = plan_hash(plan);
  result.points.resize(n_k * reps);
  parallel_for(n_k * reps, plan.jobs, [&](std::size_t job) {
    const std::size_t k = 1 + job / reps;
    const std::size_t rep = job % reps;
    const auto train = detail::pool_sessions(sessions, 0, k);
    const auto test = detail::pool_sessions(sessions, k, k + plan.test_session_count);
    ExperimentPoint& pt = result.points[job];
    pt.x_minutes = detail::epochs_to_minutes(train.epochs.size());
    pt.repetition = rep;
    pt.mean_cs = detail::evaluate_range(plan, train, test, detail::range_seed(plan, 0, k, rep));
    pt.train_range = detail::session_range_label(0, k);
    pt.test_range = detail::session_range_label(k, k + plan.test_session_count);
    pt.train_begin = 0;
    pt.train_end = k;
    pt.test_begin = k;
    pt.test_end = k + plan.test_session_count;
  });
  return result;
}

inline ExperimentResult run_backward_increase(const ExperimentPlan& plan,
                                              const std::vector<FeatureSet>& sessions) {
  detail::check_dataset(sessions, plan.test_session_count + 1, "backward_increase");
  const std::size_t n = sessions.size();
  const std::size_t reps = plan.effective_repetitions();
  const std::size_t m = n - plan.test_session_count;  // train-eligible sessions

  ExperimentResult result;
  result.kind = ExperimentKind::backward_increase;
  result.plan_hash = plan_hash(plan);
  result.points.resize(m * reps);
  parallel_for(m * reps, plan.jobs, [&](std::size_t job) {
    const std::size_t k = m - job / reps;  // k = m .. 1: train on sessions [k .. m]
    const std::size_t rep = job % reps;
    const auto train = detail::pool_sessions(sessions, k - 1, m);
    const auto test = detail::pool_sessions(sessions, m, n);
    ExperimentPoint& pt = result.points[job];
    pt.x_minutes = detail::epochs_to_minutes(train.epochs.size());
    pt.repetition = rep;
    pt.mean_cs =
        detail::evaluate_range(plan, train, test, detail::range_seed(plan, k - 1, m, rep));
    pt.train_range = detail::session_range_label(k - 1, m);
    pt.test_range = detail::session_range_label(m, n);
    pt.train_begin = k - 1;
    pt.train_end = m;
    pt.test_begin = m;
    pt.test_end = n;
  });
  return result;
}

inline ExperimentResult run_random_increase(const ExperimentPlan& plan,
                                            const std::vector<FeatureSet>& sessions) {
  detail::check_dataset(sessions, plan.test_session_count + 1, "random_increase");
  const std::size_t n = sessions.size();
  const std::size_t m = n - plan.test_session_count;
  const auto pool = detail::pool_sessions(sessions, 0, m);
  const auto test = detail::pool_sessions(sessions, m, n);

  std::vector<std::size_t> grid =
      plan.ri_size_grid.empty() ? default_ri_grid(pool.epochs.size()) : plan.ri_size_grid;
  for (std::size_t size : grid)
    if (size == 0 || size > pool.epochs.size())
      throw ConfigError("random_increase: grid size outside the training pool");

  const std::size_t reps = plan.effective_repetitions();
  ExperimentResult result;
  result.kind = ExperimentKind::random_increase;
  result.plan_hash = plan_hash(plan);
  result.points.resize(grid.size() * reps);
  parallel_for(grid.size() * reps, plan.jobs, [&](std::size_t job) {
    const std::size_t size = grid[job / reps];
    const std::size_t rep = job % reps;

    // Partial Fisher-Yates draw of `size` distinct epochs, then restored to
    // chronological order so the decoder sees a plausible recording.
    Rng rng(derive_seed(plan.seed, seed_tag("ri-sample"), size, rep));
    std::vector<std::size_t> indices(pool.epochs.size());
    std::iota(indices.begin(), indices.end(), 0);
    for (std::size_t i = 0; i < size; ++i) {
      const std::size_t j = i + rng.below(indices.size() - i);
      std::swap(indices[i], indices[j]);
    }
    indices.resize(size);
    std::sort(indices.begin(), indices.end());

    detail::EpochPool train;
    train.epochs.reserve(size);
    train.targets.reserve(size);
    for (std::size_t idx : indices) {
      train.epochs.push_back(pool.epochs[idx]);
      train.targets.push_back(pool.targets[idx]);
    }

    ExperimentPoint& pt = result.points[job];
    pt.x_minutes = detail::epochs_to_minutes(size);
    pt.repetition = rep;
    pt.mean_cs = detail::evaluate_range(
        plan, train, test, derive_seed(plan.seed, seed_tag("ri-train"), size, rep));
    std::ostringstream os;
    os << detail::session_range_label(0, m) << ":" << size << "ep";
    pt.train_range = os.str();
    pt.test_range = detail::session_range_label(m, n);
    pt.train_begin = 0;
    pt.train_end = m;
    pt.test_begin = m;
    pt.test_end = n;
  });
  return result;
}

inline ExperimentResult run_dataset_translation(const ExperimentPlan& plan,
                                                const std::vector<FeatureSet>& sessions) {
  const std::size_t window =
      plan.translation_train_sessions + plan.translation_test_sessions;
  detail::check_dataset(sessions, window, "translation");
  if (plan.translation_stride == 0) throw ConfigError("translation: stride must be positive");
  const std::size_t n = sessions.size();
  const std::size_t n_windows = (n - window) / plan.translation_stride + 1;
  const std::size_t reps = plan.effective_repetitions();

  ExperimentResult result;
  result.kind = ExperimentKind::translation;
  result.plan_hash = plan_hash(plan);
  result.points.resize(n_windows * reps);
  parallel_for(n_windows * reps, plan.jobs, [&](std::size_t job) {
    const std::size_t w = job / reps;
    const std::size_t rep = job % reps;
    const std::size_t start = w * plan.translation_stride;
    const std::size_t train_end = start + plan.translation_train_sessions;
    const std::size_t test_end = train_end + plan.translation_test_sessions;
    const auto train = detail::pool_sessions(sessions, start, train_end);
    const auto test = detail::pool_sessions(sessions, train_end, test_end);
    ExperimentPoint& pt = result.points[job];
    pt.x_minutes = static_cast<double>(w);  // window index, as plotted
    pt.repetition = rep;
    pt.mean_cs = detail::evaluate_range(plan, train, test,
                                        detail::range_seed(plan, start, train_end, rep));
    pt.train_range = detail::session_range_label(start, train_end);
    pt.test_range = detail::session_range_label(train_end, test_end);
    pt.train_begin = start;
    pt.train_end = train_end;
    pt.test_begin = train_end;
    pt.test_end = test_end;
  });

  std::vector<double> xs, ys;
  for (const ExperimentPoint& pt : result.points) {
    xs.push_back(pt.x_minutes);
    ys.push_back(pt.mean_cs);
  }
  if (xs.size() >= 2 && n_windows >= 2) result.trend = linear_trend(xs, ys);
  return result;
}

inline ExperimentResult run_experiment(const ExperimentPlan& plan,
                                       const std::vector<FeatureSet>& sessions) {
  const std::vector<FeatureSet>* data = &sessions;
  std::vector<FeatureSet> filtered;
  if (plan.session_exclusion_threshold) {
    filtered = exclude_outlier_sessions(sessions, plan.decoder,
                                        *plan.session_exclusion_threshold, plan.seed);
    data = &filtered;
  }
  switch (plan.kind) {
    case ExperimentKind::forward_increase: return run_forward_increase(plan, *data);
    case ExperimentKind::backward_increase: return run_backward_increase(plan, *data);
    case ExperimentKind::random_increase: return run_random_increase(plan, *data);
    case ExperimentKind::translation: return run_dataset_translation(plan, *data);
  }
  throw ContractViolation("run_experiment: unknown experiment kind");
}

}  // namespace ecoglab
