#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "ecoglab/features.hpp"
#include "ecoglab/rng.hpp"
#include "ecoglab/synth.hpp"

using namespace ecoglab;

namespace {

Session manual_session(Matrix raw, double fs) {
  Session s;
  s.sampling_rate = fs;
  s.grid = layout_for_channels(raw.cols());
  s.raw = std::move(raw);
  return s;
}

Matrix sinusoid_raw(std::size_t n, std::size_t n_ch, double fs, double f, double phase) {
  Matrix raw(n, n_ch);
  for (std::size_t t = 0; t < n; ++t)
    raw(t, 0) = std::sin(2.0 * 3.141592653589793 * f * static_cast<double>(t) / fs + phase);
  return raw;
}

// Expected band values for epoch 3 of a 40 Hz unit sinusoid (phase 0.3) at
// 200 Hz, bank {20, 40}; frozen from an independent reference pipeline.
constexpr double kBand0Expected[10] = {
    0.159770190998512,   0.0133064842828249,  0.00358617431461707, 0.00358617431461753,
    0.00358617431461673, 0.00358617431461736, 0.00358617431461747, 0.00358617431461733,
    0.0122209703803299,  0.154730067325747};
constexpr double kBand1Expected[10] = {
    1.95684259943367, 2.21818865233809, 2.21818865233809, 2.2181886523381, 2.21818865233809,
    2.21818865233809, 2.2181886523381, 2.21818865233809, 2.2181886523381, 1.99240135498446};

}  // namespace

TEST_CASE("wavelet bank defaults at 586 Hz", "[features]") {
  const WaveletBank bank = build_wavelet_bank(586.0, default_center_frequencies());
  REQUIRE(bank.n_bands() == 15);
  for (std::size_t b = 0; b < bank.n_bands(); ++b) {
    const WaveletKernel& k = bank.kernels[b];
    CHECK(k.length() % 2 == 1);
    double energy = 0.0;
    for (std::size_t i = 0; i < k.length(); ++i)
      energy += k.real[i] * k.real[i] + k.imag[i] * k.imag[i];
    CHECK(energy == Catch::Approx(1.0).margin(1e-12));
    // The center sample carries the maximum modulus.
    double center_mod = std::hypot(k.real[k.center()], k.imag[k.center()]);
    for (std::size_t i = 0; i < k.length(); ++i)
      CHECK(std::hypot(k.real[i], k.imag[i]) <= center_mod + 1e-15);
  }
  CHECK(bank.kernels.front().length() == 393);  // 10 Hz, 7 cycles
  CHECK(bank.kernels.back().length() == 27);    // 150 Hz
}

TEST_CASE("wavelet bank rejects frequencies at or above Nyquist", "[features]") {
  CHECK_THROWS_AS(build_wavelet_bank(200.0, {10.0, 100.0}), ConfigError);
  CHECK_THROWS_AS(build_wavelet_bank(200.0, {0.0}), ConfigError);
  CHECK_THROWS_AS(build_wavelet_bank(0.0, {10.0}), ConfigError);
}

TEST_CASE("kernel lengths at 200 Hz", "[features]") {
  const WaveletBank bank = build_wavelet_bank(200.0, {20.0, 40.0});
  CHECK(bank.kernels[0].length() == 67);
  CHECK(bank.kernels[1].length() == 35);
}

TEST_CASE("50 Hz kernel prefers a 50 Hz input", "[features]") {
  const double fs = 586.0;
  const WaveletBank bank = build_wavelet_bank(fs, {50.0});
  double response[3];
  const double inputs[3] = {30.0, 50.0, 70.0};
  for (int i = 0; i < 3; ++i) {
    const Session s = manual_session(sinusoid_raw(2930, 2, fs, inputs[i], 0.0), fs);
    const FeatureSet set = extract_features(s, bank);
    // Interior epoch, interior bins only.
    double acc = 0.0;
    for (std::size_t t = 2; t < 8; ++t) acc += set.epochs[20].values(0, 0, t);
    response[i] = acc;
  }
  CHECK(response[1] > response[0]);
  CHECK(response[1] > response[2]);
}

TEST_CASE("extraction matches the frozen reference pipeline", "[features]") {
  const double fs = 200.0;
  const Session s = manual_session(sinusoid_raw(1200, 2, fs, 40.0, 0.3), fs);
  const WaveletBank bank = build_wavelet_bank(fs, {20.0, 40.0});
  const FeatureSet set = extract_features(s, bank);
  REQUIRE(set.size() == epoch_count(1200, fs));
  const Tensor3& v = set.epochs[3].values;
  REQUIRE(v.d1() == 2);
  REQUIRE(v.d2() == 2);
  REQUIRE(v.d3() == 10);
  for (std::size_t t = 0; t < 10; ++t) {
    CHECK(v(0, 0, t) == Catch::Approx(kBand0Expected[t]).margin(1e-9));
    CHECK(v(0, 1, t) == Catch::Approx(kBand1Expected[t]).margin(1e-9));
    // Channel 1 is silent.
    CHECK(v(1, 0, t) == 0.0);
    CHECK(v(1, 1, t) == 0.0);
  }
}

TEST_CASE("a 10 s session at 586 Hz yields 91 epochs of 9600-like shape", "[features]") {
  const double fs = 586.0;
  const Session s = manual_session(Matrix(5860, 2), fs);
  const WaveletBank bank = build_wavelet_bank(fs, {20.0, 40.0});
  const FeatureSet set = extract_features(s, bank);
  CHECK(set.size() == 91);
  // All-zero raw -> all-zero features.
  for (const FeatureEpoch& e : set.epochs)
    for (const double x : e.values.storage()) CHECK(x == 0.0);
}

TEST_CASE("features shift with the signal by one epoch step", "[features]") {
  const double fs = 200.0;
  const std::size_t shift = 20;  // fs / 10
  Rng rng(77);
  Matrix a(1000, 2);
  for (auto& x : a.storage()) x = rng.normal();
  Matrix b(1000, 2);
  for (std::size_t t = 0; t < 1000; ++t)
    for (std::size_t c = 0; c < 2; ++c)
      b(t, c) = t >= shift ? a(t - shift, c) : 0.5;

  const WaveletBank bank = build_wavelet_bank(fs, {20.0, 40.0});
  const FeatureSet fa = extract_features(manual_session(std::move(a), fs), bank);
  const FeatureSet fb = extract_features(manual_session(std::move(b), fs), bank);
  REQUIRE(fb.size() >= fa.size());
  for (std::size_t i = 1; i + 1 < fa.size(); ++i) {
    const auto& va = fa.epochs[i].values.storage();
    const auto& vb = fb.epochs[i + 1].values.storage();
    REQUIRE(va.size() == vb.size());
    for (std::size_t j = 0; j < va.size(); ++j)
      CHECK(std::abs(va[j] - vb[j]) < 1e-9);
  }
}

TEST_CASE("features are non-negative", "[features]") {
  Rng rng(5);
  Matrix raw(800, 4);
  for (auto& x : raw.storage()) x = rng.normal();
  const FeatureSet set =
      extract_features(manual_session(std::move(raw), 200.0), build_wavelet_bank(200.0, {20.0}));
  for (const FeatureEpoch& e : set.epochs)
    for (const double x : e.values.storage()) CHECK(x >= 0.0);
}

TEST_CASE("extraction contract errors", "[features]") {
  const WaveletBank bank = build_wavelet_bank(200.0, {20.0});
  CHECK_THROWS_AS(extract_features(manual_session(Matrix(150, 2), 200.0), bank), DataError);
  CHECK_THROWS_AS(extract_features(manual_session(Matrix(400, 2), 250.0), bank),
                  ContractViolation);
}

TEST_CASE("artifact repair recovers injected connection losses", "[features]") {
  GeneratorConfig cfg;
  cfg.sampling_rate = 200.0;
  cfg.n_channels = 8;
  cfg.session_length = 300.0;
  cfg.n_sessions = 2;
  cfg.band_profiles = {{State::left_hand, {{20.0, 1.0}}}, {State::right_hand, {{20.0, 1.0}}}};
  cfg.direction_bands = {30.0, 40.0, 50.0};
  cfg.seed = 13;
  const Session clean = generate_session(cfg, 0);

  SECTION("artifact-free input is untouched") {
    const RepairResult r = repair_artifacts(clean);
    CHECK(r.session.raw.storage() == clean.raw.storage());
    for (const auto flagged : r.detected_mask) CHECK(flagged == 0);
    CHECK(r.unrecoverable_channels.empty());
  }

  SECTION("injected samples are detected and repaired") {
    const Session hit = inject_artifacts(clean, 2.0, 0.2, 0.5);
    REQUIRE(!hit.manifest.artifact_spans.empty());
    const RepairResult r = repair_artifacts(hit);
    const auto truth = artifact_mask(hit);
    std::size_t injected = 0, caught = 0;
    for (std::size_t t = 0; t < truth.size(); ++t) {
      if (!truth[t]) continue;
      ++injected;
      if (r.detected_mask[t]) ++caught;
    }
    REQUIRE(injected > 0);
    CHECK(static_cast<double>(caught) / static_cast<double>(injected) >= 0.9);

    // Repair must bring the signal back near the clean amplitude range.
    double max_clean = 0.0, max_repaired = 0.0;
    for (const double x : clean.raw.storage()) max_clean = std::max(max_clean, std::abs(x));
    for (const double x : r.session.raw.storage())
      max_repaired = std::max(max_repaired, std::abs(x));
    CHECK(max_repaired <= max_clean * 1.5);
  }

  SECTION("a constant channel is zero-filled and reported") {
    Session broken = clean;
    for (std::size_t t = 0; t < broken.n_samples(); ++t) broken.raw(t, 3) = 2.5;
    const RepairResult r = repair_artifacts(broken);
    REQUIRE(r.unrecoverable_channels.size() == 1);
    CHECK(r.unrecoverable_channels[0] == 3);
    for (std::size_t t = 0; t < broken.n_samples(); ++t) CHECK(r.session.raw(t, 3) == 0.0);
  }
}

TEST_CASE("grid scatter covers both implants and round-trips", "[features]") {
  const GridLayout layout = layout_for_channels(64);
  FeatureEpoch epoch;
  epoch.values = Tensor3(64, 15, 10, 1.0);
  const GridTensor g = to_grid(epoch, layout);
  CHECK(g.rows == 8);
  CHECK(g.cols == 8);
  double sum = 0.0;
  for (const double x : g.data) sum += x;
  CHECK(sum == Catch::Approx(64.0 * 15.0 * 10.0));

  // Distinct per-channel values round-trip through the grid view.
  for (std::size_t c = 0; c < 64; ++c) epoch.values(c, 0, 0) = static_cast<double>(c) + 1.0;
  const GridTensor g2 = to_grid(epoch, layout);
  for (std::size_t c = 0; c < 64; ++c) {
    const auto p = layout.position(c);
    CHECK(g2.at(0, p.row, layout.full_col(p.implant, p.col), 0) ==
          static_cast<double>(c) + 1.0);
  }

  // Layout not covering the epoch's channels is a configuration error.
  CHECK_THROWS_AS(to_grid(epoch, layout_for_channels(32)), ConfigError);
}
