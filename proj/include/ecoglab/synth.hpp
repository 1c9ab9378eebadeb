#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "ecoglab/errors.hpp"
#include "ecoglab/framing.hpp"
#include "ecoglab/numerics.hpp"
#include "ecoglab/rng.hpp"
#include "ecoglab/stats.hpp"

namespace ecoglab {

// One narrowband oscillation a state expresses: center frequency and how
// strongly it is modulated relative to the noise floor.
struct BandProfile {
  double frequency_hz = 0.0;
  double depth = 0.0;
};

struct GeneratorConfig {
  double sampling_rate = 586.0;
  std::size_t n_channels = 64;
  double session_length = 420.0;  // seconds
  std::size_t n_sessions = 43;
  std::vector<State> states{State::idle, State::left_hand, State::right_hand};
  std::map<State, std::vector<BandProfile>> band_profiles{
      {State::left_hand, {{20.0, 0.8}, {70.0, 1.0}}},
      {State::right_hand, {{20.0, 0.8}, {70.0, 1.0}}},
  };
  double mixing_drift_rate = 0.05;      // in [0, 1]
  std::vector<double> adaptation_schedule;  // empty = all sessions at 1.0
  double noise_floor = 1.0;
  std::uint64_t seed = 1;

  // Concrete knobs not pinned down by the high-level description above.
  double state_block_mean_s = 10.0;       // mean alternating block length
  double separability_max_angle = 0.7853981633974483;  // pi/4
  std::array<double, 3> direction_bands{30.0, 40.0, 50.0};
  double direction_depth = 1.0;
  double target_nonlinearity = 0.0;  // kappa in h(d) = (1 - kappa) d + kappa d^3
  double hand_speed = 0.35;          // reach speed, arena units per second

  double adaptation(std::size_t session_index) const {
    if (adaptation_schedule.empty()) return 1.0;
    if (session_index >= adaptation_schedule.size())
      throw ConfigError("GeneratorConfig: adaptation_schedule shorter than n_sessions");
    return adaptation_schedule[session_index];
  }

  void validate() const {
    if (sampling_rate <= 0.0) throw ConfigError("GeneratorConfig: sampling_rate must be > 0");
    if (session_length <= 1.0) throw ConfigError("GeneratorConfig: session_length must be > 1 s");
    if (n_channels == 0 || n_channels % 2 != 0)
      throw ConfigError("GeneratorConfig: n_channels must be even and positive");
    if (n_sessions == 0) throw ConfigError("GeneratorConfig: n_sessions must be positive");
    if (mixing_drift_rate < 0.0 || mixing_drift_rate > 1.0)
      throw ConfigError("GeneratorConfig: mixing_drift_rate must lie in [0, 1]");
    for (const double m : adaptation_schedule)
      if (!(m >= 0.0)) throw ConfigError("GeneratorConfig: adaptation multipliers must be >= 0");
    if (noise_floor < 0.0) throw ConfigError("GeneratorConfig: noise_floor must be >= 0");
    if (states.empty()) throw ConfigError("GeneratorConfig: need at least one state");
    if (state_block_mean_s <= 0.0)
      throw ConfigError("GeneratorConfig: state_block_mean_s must be > 0");
    if (target_nonlinearity < 0.0 || target_nonlinearity > 1.0)
      throw ConfigError("GeneratorConfig: target_nonlinearity must lie in [0, 1]");
    for (const auto& [state, profiles] : band_profiles) {
      (void)state;
      for (const BandProfile& p : profiles) {
        if (p.frequency_hz <= 0.0 || p.frequency_hz >= sampling_rate / 2.0)
          throw ConfigError("GeneratorConfig: profile frequency must lie below Nyquist");
        if (p.depth < 0.0) throw ConfigError("GeneratorConfig: profile depth must be >= 0");
      }
    }
    for (const double f : direction_bands)
      if (f <= 0.0 || f >= sampling_rate / 2.0)
        throw ConfigError("GeneratorConfig: direction band must lie below Nyquist");
  }

  static std::vector<double> ramp_schedule(double lo, double hi, std::size_t n) {
    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i)
      s[i] = n > 1 ? lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1) : lo;
    return s;
  }

  static std::vector<double> flat_schedule(double level, std::size_t n) {
    return std::vector<double>(n, level);
  }
};

// Stable hash of every generator setting; lets a manifest prove which
// configuration produced a session.
inline std::uint64_t config_hash(const GeneratorConfig& c) {
  std::string s;
  char buf[64];
  const auto add = [&](double v) {
    std::snprintf(buf, sizeof buf, "%.17g;", v);
    s += buf;
  };
  const auto add_u = [&](std::uint64_t v) {
    std::snprintf(buf, sizeof buf, "%llu;", static_cast<unsigned long long>(v));
    s += buf;
  };
  add(c.sampling_rate);
  add_u(c.n_channels);
  add(c.session_length);
  add_u(c.n_sessions);
  for (const State st : c.states) s += to_string(st) + ";";
  for (const auto& [state, profiles] : c.band_profiles) {
    s += to_string(state) + ":";
    for (const BandProfile& p : profiles) {
      add(p.frequency_hz);
      add(p.depth);
    }
  }
  add(c.mixing_drift_rate);
  for (const double m : c.adaptation_schedule) add(m);
  add(c.noise_floor);
  add_u(c.seed);
  add(c.state_block_mean_s);
  add(c.separability_max_angle);
  for (const double f : c.direction_bands) add(f);
  add(c.direction_depth);
  add(c.target_nonlinearity);
  add(c.hand_speed);
  return seed_tag(s);
}

struct SessionManifest {
  int schema_version = 1;
  std::uint64_t seed = 0;
  std::uint64_t config_digest = 0;
  std::size_t session_index = 0;
  // Injected artifact sample ranges [begin, end), shared across channels.
  std::vector<std::pair<std::size_t, std::size_t>> artifact_spans;
};

struct Session {
  std::size_t session_index = 0;
  double sampling_rate = 0.0;
  Matrix raw;  // n_samples x n_channels, sample-major
  std::vector<std::array<double, 3>> epoch_targets;
  std::vector<State> epoch_states;
  GridLayout grid;
  SessionManifest manifest;

  std::size_t n_samples() const { return raw.rows(); }
  std::size_t n_channels() const { return raw.cols(); }
};

inline std::array<double, 3> optimal_direction(const std::array<double, 3>& hand,
                                               const std::array<double, 3>& target) {
  std::array<double, 3> d{target[0] - hand[0], target[1] - hand[1], target[2] - hand[2]};
  const double n = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
  if (n == 0.0) throw DegenerateInput("optimal_direction: hand coincides with target");
  return {d[0] / n, d[1] / n, d[2] / n};
}

namespace detail {

// Target map shaping: identity at kappa = 0, cubic-flavored at kappa = 1.
inline double shaped_component(double d, double kappa) {
  return (1.0 - kappa) * d + kappa * d * d * d;
}

struct StateBlock {
  State state;
  std::size_t begin;
  std::size_t end;
};

// Alternating idle/movement blocks with exponential lengths (mean as
// configured, clipped to [2 s, 30 s]). Movement blocks draw uniformly from
// the configured movement states.
inline std::vector<StateBlock> draw_state_blocks(const GeneratorConfig& cfg,
                                                 std::size_t n_samples, Rng& rng) {
  std::vector<State> movement;
  bool has_idle = false;
  for (const State s : cfg.states) {
    if (s == State::idle)
      has_idle = true;
    else
      movement.push_back(s);
  }
  std::vector<StateBlock> blocks;
  bool idle_turn = has_idle;
  std::size_t cursor = 0;
  while (cursor < n_samples) {
    const double len_s =
        std::clamp(rng.exponential(cfg.state_block_mean_s), 2.0, 30.0);
    std::size_t len = static_cast<std::size_t>(std::llround(len_s * cfg.sampling_rate));
    len = std::min(len, n_samples - cursor);
    if (len == 0) break;
    State s = State::idle;
    if (!idle_turn && !movement.empty())
      s = movement[rng.below(movement.size())];
    blocks.push_back({s, cursor, cursor + len});
    cursor += len;
    if (has_idle && !movement.empty()) idle_turn = !idle_turn;
  }
  return blocks;
}

// Random-waypoint reach trajectory: per-sample optimal direction toward the
// current target; hand frozen (zero direction) while idle.
inline void simulate_reaches(const GeneratorConfig& cfg, const std::vector<StateBlock>& blocks,
                             std::size_t n_samples, Rng& rng,
                             std::vector<std::array<double, 3>>& direction) {
  direction.assign(n_samples, {0.0, 0.0, 0.0});
  std::array<double, 3> hand{0.0, 0.0, 0.0};
  std::array<double, 3> target{0.0, 0.0, 0.0};
  bool have_target = false;
  const double step = cfg.hand_speed / cfg.sampling_rate;

  const auto draw_target = [&] {
    for (int attempt = 0; attempt < 100; ++attempt) {
      std::array<double, 3> g{rng.normal(), rng.normal(), rng.normal()};
      const double n = std::sqrt(g[0] * g[0] + g[1] * g[1] + g[2] * g[2]);
      if (n < 1e-9) continue;
      const double radius = rng.uniform(0.4, 1.0);
      target = {g[0] / n * radius, g[1] / n * radius, g[2] / n * radius};
      const double dx = target[0] - hand[0], dy = target[1] - hand[1], dz = target[2] - hand[2];
      if (std::sqrt(dx * dx + dy * dy + dz * dz) > 0.1) return;
    }
    throw StateError("simulate_reaches: could not place a reachable target");
  };

  for (const StateBlock& b : blocks) {
    if (b.state == State::idle) continue;
    for (std::size_t t = b.begin; t < b.end; ++t) {
      if (!have_target) {
        draw_target();
        have_target = true;
      }
      double dx = target[0] - hand[0], dy = target[1] - hand[1], dz = target[2] - hand[2];
      double dist = std::sqrt(dx * dx + dy * dy + dz * dz);
      if (dist < 0.05) {
        draw_target();
        dx = target[0] - hand[0];
        dy = target[1] - hand[1];
        dz = target[2] - hand[2];
        dist = std::sqrt(dx * dx + dy * dy + dz * dz);
      }
      const std::array<double, 3> dir{dx / dist, dy / dist, dz / dist};
      direction[t] = dir;
      const double advance = std::min(step, dist);
      hand[0] += advance * dir[0];
      hand[1] += advance * dir[1];
      hand[2] += advance * dir[2];
    }
  }
}

// Slew-rate limit an envelope so block on/off edges ramp over ~100 ms
// instead of injecting broadband clicks.
inline void smooth_envelope(std::vector<double>& env, double sampling_rate, double peak) {
  const double ramp_samples = std::max(1.0, sampling_rate / 10.0);
  const double max_step = peak > 0.0 ? peak / ramp_samples : 0.0;
  if (max_step <= 0.0) return;
  double prev = 0.0;
  for (double& e : env) {
    const double delta = std::clamp(e - prev, -max_step, max_step);
    prev += delta;
    e = prev;
  }
}

inline std::vector<double> random_unit(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  if (normalize(v) == 0.0) throw StateError("random_unit: degenerate draw");
  return v;
}

}  // namespace detail

// Deterministic synthesis of one session: state-gated narrowband sources and
// direction-modulated sources are mixed into channels through a slowly
// drifting mixing matrix, on top of white noise. Pure in (config, index).
inline Session generate_session(const GeneratorConfig& cfg, std::size_t session_index) {
  cfg.validate();
  if (session_index >= cfg.n_sessions)
    throw ContractViolation("generate_session: session_index out of range");
  if (!cfg.adaptation_schedule.empty() && cfg.adaptation_schedule.size() < cfg.n_sessions)
    throw ConfigError("GeneratorConfig: adaptation_schedule shorter than n_sessions");

  const double fs = cfg.sampling_rate;
  const std::size_t n_samples = static_cast<std::size_t>(std::llround(cfg.session_length * fs));
  const double adapt = cfg.adaptation(session_index);
  // Pattern separation angle grows with the adaptation multiplier and
  // saturates at the configured maximum.
  const double phi = cfg.separability_max_angle * adapt / (adapt + 1.0);

  Session session;
  session.session_index = session_index;
  session.sampling_rate = fs;
  session.grid = layout_for_channels(cfg.n_channels);
  session.manifest.seed = cfg.seed;
  session.manifest.config_digest = config_hash(cfg);
  session.manifest.session_index = session_index;

  Rng rng_blocks(derive_seed(cfg.seed, seed_tag("blocks"), session_index));
  Rng rng_traj(derive_seed(cfg.seed, seed_tag("trajectory"), session_index));
  Rng rng_phases(derive_seed(cfg.seed, seed_tag("phases"), session_index));
  Rng rng_noise(derive_seed(cfg.seed, seed_tag("noise"), session_index));
  Rng rng_patterns(derive_seed(cfg.seed, seed_tag("patterns")));  // shared across sessions

  const std::vector<detail::StateBlock> blocks =
      detail::draw_state_blocks(cfg, n_samples, rng_blocks);
  std::vector<State> sample_state(n_samples, State::idle);
  for (const detail::StateBlock& b : blocks)
    for (std::size_t t = b.begin; t < b.end; ++t) sample_state[t] = b.state;

  std::vector<std::array<double, 3>> direction;
  detail::simulate_reaches(cfg, blocks, n_samples, rng_traj, direction);

  // Channel-space patterns. The two movement states start from a common
  // direction u and rotate apart (by +-phi toward v) as adaptation grows;
  // the three reach-direction sources keep fixed patterns.
  const std::vector<double> u = detail::random_unit(cfg.n_channels, rng_patterns);
  std::vector<double> v = detail::random_unit(cfg.n_channels, rng_patterns);
  const double uv = dot(u.data(), v.data(), v.size());
  for (std::size_t c = 0; c < v.size(); ++c) v[c] -= uv * u[c];
  if (normalize(v) == 0.0) throw StateError("generate_session: degenerate pattern pair");
  std::array<std::vector<double>, 3> q;
  for (auto& qi : q) qi = detail::random_unit(cfg.n_channels, rng_patterns);

  const auto state_pattern = [&](State s) {
    std::vector<double> p(cfg.n_channels);
    const double sign = s == State::left_hand ? 1.0 : -1.0;
    for (std::size_t c = 0; c < cfg.n_channels; ++c)
      p[c] = std::cos(phi) * u[c] + sign * std::sin(phi) * v[c];
    return p;
  };

  // Assemble sources: one per (movement state, band profile), then one per
  // reach-direction component.
  struct Source {
    std::vector<double> pattern;
    double frequency;
    double phase0;
    std::vector<double> envelope;
  };
  std::vector<Source> sources;
  for (const State s : cfg.states) {
    if (s == State::idle) continue;
    const auto it = cfg.band_profiles.find(s);
    if (it == cfg.band_profiles.end()) continue;
    for (const BandProfile& p : it->second) {
      Source src;
      src.pattern = state_pattern(s);
      src.frequency = p.frequency_hz;
      src.phase0 = rng_phases.uniform(0.0, 6.283185307179586);
      src.envelope.assign(n_samples, 0.0);
      for (std::size_t t = 0; t < n_samples; ++t)
        if (sample_state[t] == s) src.envelope[t] = p.depth * adapt;
      detail::smooth_envelope(src.envelope, fs, p.depth * adapt);
      sources.push_back(std::move(src));
    }
  }
  for (std::size_t j = 0; j < 3; ++j) {
    Source src;
    src.pattern = q[j];
    src.frequency = cfg.direction_bands[j];
    src.phase0 = rng_phases.uniform(0.0, 6.283185307179586);
    src.envelope.assign(n_samples, 0.0);
    const double peak = cfg.direction_depth * adapt;
    for (std::size_t t = 0; t < n_samples; ++t)
      if (sample_state[t] != State::idle)
        src.envelope[t] =
            peak * (1.0 + detail::shaped_component(direction[t][j], cfg.target_nonlinearity)) / 2.0;
    detail::smooth_envelope(src.envelope, fs, peak);
    sources.push_back(std::move(src));
  }

  // Session-to-session mixing drift: an accumulating sequence of small Givens
  // rotations in channel space, replayed up to this session's index so the
  // walk is consistent across independently generated sessions.
  Matrix mixing(cfg.n_channels, sources.size());
  for (std::size_t k = 0; k < sources.size(); ++k)
    for (std::size_t c = 0; c < cfg.n_channels; ++c) mixing(c, k) = sources[k].pattern[c];
  for (std::size_t step = 1; step <= session_index; ++step) {
    Rng rng_drift(derive_seed(cfg.seed, seed_tag("drift"), step));
    for (int r = 0; r < 8; ++r) {
      const std::size_t a = rng_drift.below(cfg.n_channels);
      std::size_t b = rng_drift.below(cfg.n_channels);
      const double angle = rng_drift.normal() * 0.2 * cfg.mixing_drift_rate;
      if (b == a) b = (a + 1) % cfg.n_channels;
      const double cs = std::cos(angle), sn = std::sin(angle);
      for (std::size_t k = 0; k < sources.size(); ++k) {
        const double xa = mixing(a, k), xb = mixing(b, k);
        mixing(a, k) = cs * xa - sn * xb;
        mixing(b, k) = sn * xa + cs * xb;
      }
    }
  }

  session.raw = Matrix(n_samples, cfg.n_channels);
  const double two_pi = 6.283185307179586;
  std::vector<double> wave(sources.size());
  for (std::size_t t = 0; t < n_samples; ++t) {
    for (std::size_t k = 0; k < sources.size(); ++k) {
      const Source& src = sources[k];
      wave[k] = src.envelope[t] *
                std::sin(two_pi * src.frequency * static_cast<double>(t) / fs + src.phase0);
    }
    double* row = session.raw.data() + t * cfg.n_channels;
    for (std::size_t c = 0; c < cfg.n_channels; ++c) {
      double acc = cfg.noise_floor * rng_noise.normal();
      for (std::size_t k = 0; k < sources.size(); ++k) acc += mixing(c, k) * wave[k];
      row[c] = acc;
    }
  }

  const std::size_t n_epochs = epoch_count(n_samples, fs);
  session.epoch_states.resize(n_epochs);
  session.epoch_targets.resize(n_epochs);
  for (std::size_t i = 0; i < n_epochs; ++i) {
    const std::size_t label = epoch_label_sample(i, fs);
    session.epoch_states[i] = sample_state[label];
    session.epoch_targets[i] =
        sample_state[label] == State::idle ? std::array<double, 3>{0.0, 0.0, 0.0}
                                           : direction[label];
  }
  return session;
}

// Connection-loss artifacts: at Poisson times, every channel freezes at its
// current value for the drawn duration, then swings to +-20 sigma for ~50 ms.
// The injected ranges are recorded in the manifest as ground truth.
inline Session inject_artifacts(const Session& input, double rate_per_minute,
                                double duration_lo_s, double duration_hi_s) {
  if (rate_per_minute < 0.0) throw ContractViolation("inject_artifacts: rate must be >= 0");
  if (duration_lo_s < 0.0 || duration_hi_s < duration_lo_s)
    throw ConfigError("inject_artifacts: bad duration range");
  const double fs = input.sampling_rate;
  const double session_s = static_cast<double>(input.n_samples()) / fs;
  if (duration_hi_s >= session_s)
    throw ConfigError("inject_artifacts: duration range exceeds session length");

  Session out = input;
  if (rate_per_minute == 0.0) return out;

  const std::size_t n = out.n_samples();
  const std::size_t n_ch = out.n_channels();
  std::vector<double> sigma(n_ch);
  for (std::size_t c = 0; c < n_ch; ++c) {
    std::vector<double> col(n);
    for (std::size_t t = 0; t < n; ++t) col[t] = out.raw(t, c);
    sigma[c] = sample_stddev(col);
  }

  Rng rng(derive_seed(out.manifest.seed, seed_tag("artifacts"), out.session_index));
  const double minutes = session_s / 60.0;
  const std::uint64_t n_events = rng.poisson(rate_per_minute * minutes);
  const std::size_t spike_len =
      std::max<std::size_t>(3, static_cast<std::size_t>(std::llround(0.05 * fs)));
  for (std::uint64_t e = 0; e < n_events; ++e) {
    const std::size_t onset = rng.below(n);
    const std::size_t flat_len = static_cast<std::size_t>(
        std::llround(rng.uniform(duration_lo_s, duration_hi_s) * fs));
    const double spike_sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    const std::size_t flat_end = std::min(n, onset + std::max<std::size_t>(flat_len, 1));
    const std::size_t spike_end = std::min(n, flat_end + spike_len);
    for (std::size_t c = 0; c < n_ch; ++c) {
      const double frozen = out.raw(onset, c);
      for (std::size_t t = onset; t < flat_end; ++t) out.raw(t, c) = frozen;
      for (std::size_t t = flat_end; t < spike_end; ++t)
        out.raw(t, c) = spike_sign * 20.0 * sigma[c];
    }
    out.manifest.artifact_spans.emplace_back(onset, spike_end);
  }
  return out;
}

// Expand manifest spans into a per-sample mask.
inline std::vector<std::uint8_t> artifact_mask(const Session& s) {
  std::vector<std::uint8_t> mask(s.n_samples(), 0);
  for (const auto& [begin, end] : s.manifest.artifact_spans)
    for (std::size_t t = begin; t < end && t < mask.size(); ++t) mask[t] = 1;
  return mask;
}

}  // namespace ecoglab
