#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "ecoglab/errors.hpp"
#include "ecoglab/framing.hpp"
#include "ecoglab/numerics.hpp"
#include "ecoglab/synth.hpp"

namespace ecoglab {

// Complex Morlet kernel sampled around its center; stored as separate
// real/imaginary parts for the convolution inner loop.
struct WaveletKernel {
  double frequency_hz = 0.0;
  std::vector<double> real;
  std::vector<double> imag;

  std::size_t length() const { return real.size(); }
  std::size_t center() const { return real.size() / 2; }
};

struct WaveletBank {
  double sampling_rate = 0.0;
  double cycles = 7.0;
  std::vector<WaveletKernel> kernels;

  std::size_t n_bands() const { return kernels.size(); }
};

inline std::vector<double> default_center_frequencies() {
  std::vector<double> f(15);
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = 10.0 * static_cast<double>(i + 1);
  return f;
}

// Gaussian-windowed complex exponentials with sigma_t = cycles / (2 pi f);
// length ceil(6 sigma_t fs) rounded up to odd, L2-normalized.
inline WaveletBank build_wavelet_bank(double sampling_rate,
                                      const std::vector<double>& frequencies,
                                      double cycles = 7.0) {
  if (sampling_rate <= 0.0) throw ConfigError("build_wavelet_bank: sampling_rate must be > 0");
  if (cycles <= 0.0) throw ConfigError("build_wavelet_bank: cycles must be > 0");
  if (frequencies.empty()) throw ConfigError("build_wavelet_bank: no frequencies");
  WaveletBank bank;
  bank.sampling_rate = sampling_rate;
  bank.cycles = cycles;
  const double two_pi = 6.283185307179586;
  for (const double f : frequencies) {
    if (f <= 0.0 || f >= sampling_rate / 2.0)
      throw ConfigError("build_wavelet_bank: frequency must lie in (0, Nyquist)");
    const double sigma_t = cycles / (two_pi * f);
    std::size_t len = static_cast<std::size_t>(std::ceil(6.0 * sigma_t * sampling_rate));
    if (len % 2 == 0) ++len;
    WaveletKernel k;
    k.frequency_hz = f;
    k.real.resize(len);
    k.imag.resize(len);
    const double half = static_cast<double>(len - 1) / 2.0;
    double energy = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
      const double t = (static_cast<double>(i) - half) / sampling_rate;
      const double g = std::exp(-t * t / (2.0 * sigma_t * sigma_t));
      k.real[i] = g * std::cos(two_pi * f * t);
      k.imag[i] = g * std::sin(two_pi * f * t);
      energy += g * g;
    }
    const double inv = 1.0 / std::sqrt(energy);
    for (std::size_t i = 0; i < len; ++i) {
      k.real[i] *= inv;
      k.imag[i] *= inv;
    }
    bank.kernels.push_back(std::move(k));
  }
  return bank;
}

// One observation window: modulus features as [channels x bands x time_bins].
struct FeatureEpoch {
  Tensor3 values;
  std::size_t epoch_index = 0;
  std::size_t session_index = 0;
};

// Per-feature affine normalization (train-set statistics), used by the
// gradient-trained decoders.
struct Normalization {
  std::vector<double> mean;
  std::vector<double> stddev;

  void apply(std::vector<double>& x) const {
    if (x.size() != mean.size()) throw ContractViolation("Normalization: size mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = (x[i] - mean[i]) / stddev[i];
  }
};

struct FeatureSet {
  std::vector<FeatureEpoch> epochs;
  std::vector<std::array<double, 3>> targets;
  std::vector<State> states;
  double sampling_rate = 0.0;
  GridLayout grid;
  std::size_t session_index = 0;

  std::size_t size() const { return epochs.size(); }
  std::size_t features_per_epoch() const {
    return epochs.empty() ? 0 : epochs.front().values.size();
  }

  std::vector<double> flat(std::size_t i) const { return epochs.at(i).values.storage(); }
};

namespace detail {

// Modulus of the zero-padded complex correlation of one cut window with one
// kernel, averaged into the framing sub-bins. Windows are processed
// independently: samples outside [0, window) are treated as zero.
inline void window_band_features(const double* window, std::size_t window_len,
                                 const WaveletKernel& kernel,
                                 const std::array<std::size_t, kBinsPerEpoch + 1>& edges,
                                 double* out_bins) {
  const std::size_t len = kernel.length();
  const std::ptrdiff_t center = static_cast<std::ptrdiff_t>(kernel.center());
  for (std::size_t bin = 0; bin < kBinsPerEpoch; ++bin) {
    double acc = 0.0;
    const std::size_t lo = edges[bin], hi = edges[bin + 1];
    for (std::size_t n = lo; n < hi; ++n) {
      double re = 0.0, im = 0.0;
      const std::ptrdiff_t base = static_cast<std::ptrdiff_t>(n) - center;
      const std::size_t k_lo =
          base < 0 ? static_cast<std::size_t>(-base) : 0;
      const std::size_t k_hi = std::min(
          len, static_cast<std::size_t>(static_cast<std::ptrdiff_t>(window_len) - base));
      for (std::size_t k = k_lo; k < k_hi; ++k) {
        const double x = window[base + static_cast<std::ptrdiff_t>(k)];
        re += x * kernel.real[k];
        im += x * kernel.imag[k];
      }
      acc += std::sqrt(re * re + im * im);
    }
    out_bins[bin] = hi > lo ? acc / static_cast<double>(hi - lo) : 0.0;
  }
}

}  // namespace detail

// Slide 1 s windows every 100 ms over the session, cut each window, convolve
// per channel and band, and average moduli into ten 100 ms sub-bins. Epochs
// are labeled by the state/target at the window's last sample.
inline FeatureSet extract_features(const Session& session, const WaveletBank& bank) {
  const double fs = session.sampling_rate;
  if (bank.sampling_rate != fs)
    throw ContractViolation("extract_features: bank built for a different sampling rate");
  const std::size_t win = epoch_length(fs);
  if (session.n_samples() < win)
    throw DataError("extract_features: session shorter than one window");

  const std::size_t n_epochs = epoch_count(session.n_samples(), fs);
  const std::size_t n_ch = session.n_channels();
  const std::size_t n_bands = bank.n_bands();
  const auto edges = bin_edges(fs);

  FeatureSet set;
  set.sampling_rate = fs;
  set.grid = session.grid;
  set.session_index = session.session_index;
  set.epochs.resize(n_epochs);
  set.targets.resize(n_epochs);
  set.states.resize(n_epochs);

  std::vector<double> window(win);
  for (std::size_t i = 0; i < n_epochs; ++i) {
    FeatureEpoch& epoch = set.epochs[i];
    epoch.values = Tensor3(n_ch, n_bands, kBinsPerEpoch);
    epoch.epoch_index = i;
    epoch.session_index = session.session_index;
    const std::size_t start = epoch_start(i, fs);
    for (std::size_t c = 0; c < n_ch; ++c) {
      for (std::size_t t = 0; t < win; ++t) window[t] = session.raw(start + t, c);
      for (std::size_t b = 0; b < n_bands; ++b)
        detail::window_band_features(window.data(), win, bank.kernels[b], edges,
                                     &epoch.values(c, b, 0));
    }
    if (i < session.epoch_states.size()) {
      set.states[i] = session.epoch_states[i];
      set.targets[i] = session.epoch_targets[i];
    } else {
      set.states[i] = State::idle;
      set.targets[i] = {0.0, 0.0, 0.0};
    }
  }
  return set;
}

struct RepairResult {
  Session session;
  std::vector<std::uint8_t> detected_mask;     // per sample, any channel
  std::vector<std::size_t> unrecoverable_channels;  // zero-filled
};

// Artifact repair in the raw domain: per channel, samples whose robust
// z-score (median/MAD) exceeds the threshold, plus exact constant runs (a
// frozen amplifier never reproduces noise), are dilated by +-5 samples and
// replaced by linear interpolation between flanking clean samples.
inline RepairResult repair_artifacts(const Session& input, double z_threshold = 8.0) {
  if (z_threshold <= 0.0) throw ContractViolation("repair_artifacts: threshold must be > 0");
  RepairResult result;
  result.session = input;
  const std::size_t n = input.n_samples();
  const std::size_t n_ch = input.n_channels();
  result.detected_mask.assign(n, 0);
  if (n == 0) return result;

  const std::size_t min_run =
      std::max<std::size_t>(4, static_cast<std::size_t>(std::llround(0.02 * input.sampling_rate)));
  std::vector<double> col(n);
  std::vector<std::uint8_t> flag(n);
  for (std::size_t c = 0; c < n_ch; ++c) {
    for (std::size_t t = 0; t < n; ++t) col[t] = input.raw(t, c);
    const double med = median(col);
    std::vector<double> dev(n);
    for (std::size_t t = 0; t < n; ++t) dev[t] = std::abs(col[t] - med);
    const double mad = median(dev);
    const double scale = 1.4826 * mad;

    std::fill(flag.begin(), flag.end(), std::uint8_t{0});
    if (scale > 0.0) {
      for (std::size_t t = 0; t < n; ++t)
        if (std::abs(col[t] - med) > z_threshold * scale) flag[t] = 1;
    } else {
      // A constant channel has no clean reference level at all.
      std::fill(flag.begin(), flag.end(), std::uint8_t{1});
    }
    // Frozen-value runs: consecutive identical samples of length >= min_run.
    std::size_t run_start = 0;
    for (std::size_t t = 1; t <= n; ++t) {
      if (t == n || col[t] != col[run_start]) {
        if (t - run_start >= min_run)
          for (std::size_t s = run_start; s < t; ++s) flag[s] = 1;
        run_start = t;
      }
    }

    // Dilate by +-5 samples.
    std::vector<std::uint8_t> dilated(n, 0);
    for (std::size_t t = 0; t < n; ++t) {
      if (!flag[t]) continue;
      const std::size_t lo = t >= 5 ? t - 5 : 0;
      const std::size_t hi = std::min(n, t + 6);
      for (std::size_t s = lo; s < hi; ++s) dilated[s] = 1;
    }

    std::size_t flagged = 0;
    for (std::size_t t = 0; t < n; ++t) flagged += dilated[t];
    if (flagged == n) {
      for (std::size_t t = 0; t < n; ++t) result.session.raw(t, c) = 0.0;
      result.unrecoverable_channels.push_back(c);
      for (std::size_t t = 0; t < n; ++t) result.detected_mask[t] = 1;
      continue;
    }

    // Linear interpolation across each flagged run; runs touching an edge
    // extend the nearest clean value.
    std::size_t t = 0;
    while (t < n) {
      if (!dilated[t]) {
        ++t;
        continue;
      }
      std::size_t end = t;
      while (end < n && dilated[end]) ++end;
      const bool has_left = t > 0;
      const bool has_right = end < n;
      const double left = has_left ? col[t - 1] : col[end];
      const double right = has_right ? col[end] : col[t - 1];
      const double span = static_cast<double>(end - t + 1);
      for (std::size_t s = t; s < end; ++s) {
        const double w = static_cast<double>(s - t + 1) / span;
        result.session.raw(s, c) = has_left && has_right ? left + (right - left) * w
                                   : has_left            ? left
                                                         : right;
      }
      for (std::size_t s = t; s < end; ++s) result.detected_mask[s] = 1;
      t = end;
    }
  }
  return result;
}

// Grid view of one epoch: [bands x rows x 2*cols x bins], implant 0 in the
// left column block. With the default two 8x4 implants this is the full
// 8x8 view; unpopulated cells (never present with bijective layouts) stay 0.
struct GridTensor {
  std::size_t bands = 0, rows = 0, cols = 0, bins = 0;
  std::vector<double> data;

  double& at(std::size_t b, std::size_t r, std::size_t c, std::size_t t) {
    return data[((b * rows + r) * cols + c) * bins + t];
  }
  double at(std::size_t b, std::size_t r, std::size_t c, std::size_t t) const {
    return data[((b * rows + r) * cols + c) * bins + t];
  }
};

inline GridTensor to_grid(const FeatureEpoch& epoch, const GridLayout& layout) {
  const std::size_t n_ch = epoch.values.d1();
  if (layout.channels() != n_ch) throw ConfigError("to_grid: layout does not cover channels");
  GridTensor g;
  g.bands = epoch.values.d2();
  g.rows = layout.rows;
  g.cols = 2 * layout.cols;
  g.bins = epoch.values.d3();
  g.data.assign(g.bands * g.rows * g.cols * g.bins, 0.0);
  for (std::size_t c = 0; c < n_ch; ++c) {
    const GridLayout::Position p = layout.position(c);
    const std::size_t col = layout.full_col(p.implant, p.col);
    for (std::size_t b = 0; b < g.bands; ++b)
      for (std::size_t t = 0; t < g.bins; ++t) g.at(b, p.row, col, t) = epoch.values(c, b, t);
  }
  return g;
}

// Train-set feature statistics for z-scoring; a zero-variance feature gets
// unit scale so it maps to a constant 0.
inline Normalization fit_normalization(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw DegenerateInput("fit_normalization: no rows");
  const std::size_t d = rows.front().size();
  Normalization norm;
  norm.mean.assign(d, 0.0);
  norm.stddev.assign(d, 0.0);
  for (const auto& r : rows) {
    if (r.size() != d) throw ContractViolation("fit_normalization: ragged rows");
    for (std::size_t j = 0; j < d; ++j) norm.mean[j] += r[j];
  }
  for (double& m : norm.mean) m /= static_cast<double>(rows.size());
  for (const auto& r : rows)
    for (std::size_t j = 0; j < d; ++j) {
      const double dmean = r[j] - norm.mean[j];
      norm.stddev[j] += dmean * dmean;
    }
  for (double& s : norm.stddev) {
    s = std::sqrt(s / static_cast<double>(rows.size()));
    if (s == 0.0) s = 1.0;
  }
  return norm;
}

}  // namespace ecoglab
