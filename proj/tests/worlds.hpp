#pragma once

// Small synthetic regression worlds shared by the decoder test suites.

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "ecoglab/features.hpp"
#include "ecoglab/framing.hpp"
#include "ecoglab/numerics.hpp"
#include "ecoglab/rng.hpp"

namespace worlds {

struct LinearWorld {
  std::vector<ecoglab::Tensor3> x;
  std::vector<std::array<double, 3>> y;
  ecoglab::Matrix b_true;  // n_x x 3
};

// Iso-Gaussian features, targets = normalize(B* x) + small isotropic noise.
// Each output column of B* is a rank-1 tensor (channel pattern x band
// response x flat time mode), the structure a multilinear decoder is built
// to capture.
inline LinearWorld linear_world(std::uint64_t seed, std::size_t n, std::size_t d1,
                                std::size_t d2, std::size_t d3, double noise = 0.05) {
  ecoglab::Rng rng(seed);
  const std::size_t n_x = d1 * d2 * d3;
  LinearWorld w;
  w.b_true = ecoglab::Matrix(n_x, 3);
  for (std::size_t k = 0; k < 3; ++k) {
    std::vector<double> a(d1), b(d2);
    for (auto& v : a) v = rng.normal();
    for (auto& v : b) v = rng.normal();
    for (std::size_t i = 0; i < d1; ++i)
      for (std::size_t j = 0; j < d2; ++j)
        for (std::size_t t = 0; t < d3; ++t)
          w.b_true((i * d2 + j) * d3 + t, k) = a[i] * b[j];
  }
  w.x.reserve(n);
  w.y.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    ecoglab::Tensor3 t(d1, d2, d3);
    for (auto& v : t.storage()) v = rng.normal();
    std::array<double, 3> target{0.0, 0.0, 0.0};
    for (std::size_t j = 0; j < n_x; ++j)
      for (std::size_t k = 0; k < 3; ++k) target[k] += w.b_true(j, k) * t.storage()[j];
    const double norm =
        std::sqrt(target[0] * target[0] + target[1] * target[1] + target[2] * target[2]);
    for (std::size_t k = 0; k < 3; ++k)
      target[k] = (norm > 0 ? target[k] / norm : 0.0) + noise * rng.normal();
    w.x.push_back(std::move(t));
    w.y.push_back(target);
  }
  return w;
}

inline double cosine3(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  const double na = std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
  const double nb = std::sqrt(b[0] * b[0] + b[1] * b[1] + b[2] * b[2]);
  if (na < 1e-12 || nb < 1e-12) return 0.0;
  return (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]) / (na * nb);
}

// Feature-space stand-in for a recorded dataset: sessions of tiny linear-map
// epochs, so experiment-protocol logic can run in milliseconds. All sessions
// share one ground-truth map; per-session target noise follows
// noise_schedule (constant 0.05 when empty), which makes rising-quality
// datasets easy to fake. Every zero_target_every-th epoch gets a zero target
// (a rest-period stand-in) when that knob is nonzero.
inline std::vector<ecoglab::FeatureSet> stub_sessions(std::uint64_t seed,
                                                      std::size_t n_sessions,
                                                      std::size_t epochs_per_session,
                                                      std::vector<double> noise_schedule = {},
                                                      std::size_t zero_target_every = 0,
                                                      std::size_t channels = 2,
                                                      std::size_t bands = 1,
                                                      std::size_t bins = 2) {
  using namespace ecoglab;
  const std::size_t n_x = channels * bands * bins;
  Rng map_rng(derive_seed(seed, seed_tag("stub-map")));
  Matrix b(n_x, 3);
  for (std::size_t k = 0; k < 3; ++k) {
    std::vector<double> a(channels), c(bands);
    for (auto& v : a) v = map_rng.normal();
    for (auto& v : c) v = map_rng.normal();
    for (std::size_t i = 0; i < channels; ++i)
      for (std::size_t j = 0; j < bands; ++j)
        for (std::size_t t = 0; t < bins; ++t) b((i * bands + j) * bins + t, k) = a[i] * c[j];
  }

  std::vector<FeatureSet> sessions;
  sessions.reserve(n_sessions);
  for (std::size_t s = 0; s < n_sessions; ++s) {
    const double noise = noise_schedule.empty()
                             ? 0.05
                             : noise_schedule[std::min(s, noise_schedule.size() - 1)];
    Rng rng(derive_seed(seed, seed_tag("stub-session"), s));
    FeatureSet set;
    set.sampling_rate = 200.0;
    set.session_index = s;
    set.grid = layout_for_channels(channels);
    for (std::size_t i = 0; i < epochs_per_session; ++i) {
      FeatureEpoch ep;
      ep.values = Tensor3(channels, bands, bins);
      for (auto& v : ep.values.storage()) v = rng.normal();
      ep.epoch_index = i;
      ep.session_index = s;
      std::array<double, 3> target{0.0, 0.0, 0.0};
      for (std::size_t j = 0; j < n_x; ++j)
        for (std::size_t k = 0; k < 3; ++k) target[k] += b(j, k) * ep.values.storage()[j];
      const double norm =
          std::sqrt(target[0] * target[0] + target[1] * target[1] + target[2] * target[2]);
      for (std::size_t k = 0; k < 3; ++k)
        target[k] = (norm > 0 ? target[k] / norm : 0.0) + noise * rng.normal();
      State state = State::left_hand;
      if (zero_target_every > 0 && i % zero_target_every == 0) {
        target = {0.0, 0.0, 0.0};
        state = State::idle;
      }
      set.epochs.push_back(std::move(ep));
      set.targets.push_back(target);
      set.states.push_back(state);
    }
    sessions.push_back(std::move(set));
  }
  return sessions;
}

}  // namespace worlds
