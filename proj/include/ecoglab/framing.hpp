#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "ecoglab/errors.hpp"

namespace ecoglab {

// Behavioural state active during a block of a session.
enum class State { idle = 0, left_hand = 1, right_hand = 2 };

inline std::string to_string(State s) {
  switch (s) {
    case State::idle: return "idle";
    case State::left_hand: return "left_hand";
    case State::right_hand: return "right_hand";
  }
  throw ContractViolation("to_string: unknown state");
}

inline State state_from_string(const std::string& name) {
  if (name == "idle") return State::idle;
  if (name == "left_hand") return State::left_hand;
  if (name == "right_hand") return State::right_hand;
  throw DataError("state_from_string: unknown state '" + name + "'");
}

// Sliding-window framing: 1-second windows stepped every 100 ms, each split
// into ten 100 ms sub-bins. Starts and bin edges are rounded per index, not
// accumulated, so non-integer steps (e.g. 58.6 samples at 586 Hz) do not
// drift.
constexpr std::size_t kBinsPerEpoch = 10;

inline std::size_t epoch_start(std::size_t epoch_index, double sampling_rate) {
  return static_cast<std::size_t>(std::llround(static_cast<double>(epoch_index) * sampling_rate /
                                               static_cast<double>(kBinsPerEpoch)));
}

inline std::size_t epoch_length(double sampling_rate) {
  return static_cast<std::size_t>(std::llround(sampling_rate));
}

// Number of complete 1 s windows that fit when stepping every 100 ms.
inline std::size_t epoch_count(std::size_t n_samples, double sampling_rate) {
  const std::size_t win = epoch_length(sampling_rate);
  if (n_samples < win) return 0;
  std::size_t n = 0;
  while (epoch_start(n, sampling_rate) + win <= n_samples) ++n;
  return n;
}

// Sub-bin boundaries within one window: round(j * fs / 10), j = 0..10.
inline std::array<std::size_t, kBinsPerEpoch + 1> bin_edges(double sampling_rate) {
  std::array<std::size_t, kBinsPerEpoch + 1> edges{};
  for (std::size_t j = 0; j <= kBinsPerEpoch; ++j)
    edges[j] = static_cast<std::size_t>(
        std::llround(static_cast<double>(j) * sampling_rate / kBinsPerEpoch));
  return edges;
}

// Sample whose state/target labels an epoch: the window's last sample.
inline std::size_t epoch_label_sample(std::size_t epoch_index, double sampling_rate) {
  return epoch_start(epoch_index, sampling_rate) + epoch_length(sampling_rate) - 1;
}

// Electrode geometry: two implant grids of rows x cols channels, laid side by
// side into a full rows x (2*cols) view (implant 0 on the left column block).
// Channel ids are assigned implant-major, then row-major within an implant.
struct GridLayout {
  std::size_t rows = 8;
  std::size_t cols = 4;  // per implant

  std::size_t channels() const { return 2 * rows * cols; }

  struct Position {
    std::size_t implant;
    std::size_t row;
    std::size_t col;  // within the implant
  };

  Position position(std::size_t channel) const {
    if (channel >= channels()) throw ContractViolation("GridLayout: channel out of range");
    const std::size_t per = rows * cols;
    Position p;
    p.implant = channel / per;
    p.row = (channel % per) / cols;
    p.col = channel % cols;
    return p;
  }

  std::size_t channel_at(std::size_t implant, std::size_t row, std::size_t col) const {
    if (implant >= 2 || row >= rows || col >= cols)
      throw ContractViolation("GridLayout: position out of range");
    return implant * rows * cols + row * cols + col;
  }

  // Column index in the combined rows x (2*cols) view.
  std::size_t full_col(std::size_t implant, std::size_t col) const {
    return implant * cols + col;
  }
};

inline GridLayout layout_for_channels(std::size_t n_channels) {
  // Keep the default 8x4-per-implant aspect where possible; reduced channel
  // counts shrink the grid while preserving two implants and rows >= cols.
  if (n_channels == 0 || n_channels % 2 != 0)
    throw ConfigError("layout_for_channels: channel count must be even and positive");
  const std::size_t per = n_channels / 2;
  GridLayout g;
  // Widest column count <= sqrt(per) that divides per, so rows >= cols.
  g.cols = 1;
  for (std::size_t c = 1; c * c <= per; ++c)
    if (per % c == 0) g.cols = c;
  g.rows = per / g.cols;
  return g;
}

}  // namespace ecoglab
