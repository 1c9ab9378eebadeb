#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <utility>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "ecoglab/features.hpp"
#include "ecoglab/manifold.hpp"
#include "ecoglab/rng.hpp"
#include "ecoglab/stats.hpp"
#include "ecoglab/synth.hpp"

using namespace ecoglab;

namespace {

Matrix gaussian_cloud(std::uint64_t seed, std::size_t n, std::size_t d) {
  Rng rng(derive_seed(seed, seed_tag("cloud")));
  Matrix m(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) m(i, c) = rng.normal();
  return m;
}

// Rigid motion built from exact Givens rotations plus a translation.
Matrix rotate_and_shift(const Matrix& points, const std::vector<double>& shift) {
  const std::size_t n = points.rows();
  const std::size_t d = points.cols();
  Matrix out = points;
  const std::array<std::pair<std::size_t, std::size_t>, 3> planes{
      {{0, 1}, {1, 2}, {0, 2}}};
  double theta = 0.7;
  for (const auto& [p, q] : planes) {
    if (p >= d || q >= d) continue;
    const double cs = std::cos(theta), sn = std::sin(theta);
    for (std::size_t i = 0; i < n; ++i) {
      const double a = out(i, p), b = out(i, q);
      out(i, p) = cs * a - sn * b;
      out(i, q) = sn * a + cs * b;
    }
    theta += 0.4;
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d && c < shift.size(); ++c) out(i, c) += shift[c];
  return out;
}

double column_variance(const Matrix& m, std::size_t col) {
  double mean = 0.0;
  for (std::size_t i = 0; i < m.rows(); ++i) mean += m(i, col);
  mean /= static_cast<double>(m.rows());
  double var = 0.0;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double d = m(i, col) - mean;
    var += d * d;
  }
  return var / static_cast<double>(m.rows());
}

}  // namespace

TEST_CASE("knn finds exact euclidean neighbors", "[manifold]") {
  Matrix line(3, 1);
  line(0, 0) = 0.0;
  line(1, 0) = 1.0;
  line(2, 0) = 3.0;
  const auto nn = knn(line, 1);
  CHECK(nn.indices[0][0] == 1);
  CHECK(nn.indices[1][0] == 0);
  CHECK(nn.indices[2][0] == 1);
  CHECK(nn.distances[0][0] == 1.0);
  CHECK(nn.distances[2][0] == 2.0);

  // Duplicates produce zero-distance neighbors but never a self-match.
  Matrix dup(3, 2);
  dup(0, 0) = 0.0;
  dup(0, 1) = 0.0;
  dup(1, 0) = 0.0;
  dup(1, 1) = 0.0;
  dup(2, 0) = 5.0;
  dup(2, 1) = 0.0;
  const auto dn = knn(dup, 2);
  CHECK(dn.indices[0][0] == 1);
  CHECK(dn.distances[0][0] == 0.0);
  CHECK(dn.indices[1][0] == 0);
  CHECK(dn.distances[1][0] == 0.0);
  CHECK(dn.indices[2][0] == 0);  // tie on distance 5 broken by lower index

  CHECK_THROWS_AS(knn(line, 3), ContractViolation);
  CHECK_THROWS_AS(knn(line, 0), ContractViolation);
}

TEST_CASE("knn matches a quadratic-scan oracle", "[manifold]") {
  Rng rng(derive_seed(51, seed_tag("knn-oracle")));
  Matrix cloud(200, 5);
  for (std::size_t i = 0; i < cloud.rows(); ++i)
    for (std::size_t c = 0; c < 5; ++c) cloud(i, c) = rng.uniform();

  const std::size_t k = 7;
  const auto nn = knn(cloud, k, 3);
  for (std::size_t i = 0; i < cloud.rows(); ++i) {
    std::vector<std::pair<double, std::size_t>> all;
    for (std::size_t j = 0; j < cloud.rows(); ++j) {
      if (j == i) continue;
      double acc = 0.0;
      for (std::size_t c = 0; c < 5; ++c) {
        const double d = cloud(i, c) - cloud(j, c);
        acc += d * d;
      }
      all.emplace_back(acc, j);
    }
    std::sort(all.begin(), all.end());
    for (std::size_t j = 0; j < k; ++j) {
      CHECK(nn.indices[i][j] == all[j].second);
      CHECK(nn.distances[i][j] == std::sqrt(all[j].first));
    }
  }
}

TEST_CASE("twonn recovers known manifold dimensions", "[manifold]") {
  // Uniform unit square.
  Rng rng(derive_seed(52, seed_tag("square")));
  Matrix square(2000, 2);
  for (std::size_t i = 0; i < square.rows(); ++i) {
    square(i, 0) = rng.uniform();
    square(i, 1) = rng.uniform();
  }
  const double d_square = twonn_id(square).global_value;
  CHECK(d_square > 1.8);
  CHECK(d_square < 2.2);

  // Line segment embedded in 10-D.
  Rng lrng(derive_seed(53, seed_tag("line")));
  std::array<double, 10> direction{};
  double norm = 0.0;
  for (double& v : direction) {
    v = lrng.normal();
    norm += v * v;
  }
  norm = std::sqrt(norm);
  Matrix line(2000, 10);
  for (std::size_t i = 0; i < line.rows(); ++i) {
    const double t = lrng.uniform();
    for (std::size_t c = 0; c < 10; ++c) line(i, c) = t * direction[c] / norm + 0.25;
  }
  const double d_line = twonn_id(line).global_value;
  CHECK(d_line > 0.9);
  CHECK(d_line < 1.1);

  // Full-dimensional gaussian in R^10.
  const double d_gauss = twonn_id(gaussian_cloud(54, 2000, 10)).global_value;
  CHECK(d_gauss > 8.5);
  CHECK(d_gauss < 11.5);
}

TEST_CASE("twonn rejects undersized or collapsed clouds", "[manifold]") {
  CHECK_THROWS_AS(twonn_id(gaussian_cloud(55, 19, 3)), ContractViolation);

  Matrix same(30, 4);
  for (std::size_t i = 0; i < same.rows(); ++i)
    for (std::size_t c = 0; c < 4; ++c) same(i, c) = 1.5;
  CHECK_THROWS_AS(twonn_id(same), DegenerateInput);
}

TEST_CASE("ess calibration matches analytic anchors", "[manifold]") {
  const EssCalibration& cal = default_ess_calibration();
  CHECK(cal.table[0] == 0.0);  // 1-D vectors are collinear
  CHECK(std::abs(cal.table[1] - 2.0 / 3.141592653589793) < 0.003);
  for (std::size_t i = 1; i < cal.table.size(); ++i) CHECK(cal.table[i] > cal.table[i - 1]);
  CHECK(cal.table.back() > 0.97);  // near-orthogonality at high dimension
  CHECK(cal.table.back() < 1.0);

  // Seeded: rebuilding with the same key reproduces the table bit for bit.
  const auto a = build_ess_calibration(8, 100000, 7);
  const auto b = build_ess_calibration(8, 100000, 7);
  CHECK(a.table == b.table);

  CHECK_THROWS_AS(build_ess_calibration(1), ContractViolation);
  CHECK_THROWS_AS(build_ess_calibration(8, 50000), ContractViolation);
}

TEST_CASE("ess local id recovers gaussian and planar dimensions", "[manifold]") {
  const auto d5 = ess_local_id(gaussian_cloud(56, 2000, 5), 100, 3);
  CHECK(d5.global_value > 4.0);
  CHECK(d5.global_value < 6.0);
  CHECK(d5.local_values.size() == 2000);

  const auto d20 = ess_local_id(gaussian_cloud(57, 2000, 20), 100, 3);
  CHECK(d20.global_value > 17.0);
  CHECK(d20.global_value < 23.0);

  // 2-D plane embedded in R^50.
  Rng rng(derive_seed(58, seed_tag("plane")));
  Matrix plane(2000, 50);
  for (std::size_t i = 0; i < plane.rows(); ++i) {
    const double a = rng.normal(), b = rng.normal();
    for (std::size_t c = 0; c < 50; ++c) plane(i, c) = 0.0;
    plane(i, 3) = a;
    plane(i, 11) = 0.6 * a + 0.8 * b;
  }
  const auto d_plane = ess_local_id(plane, 100, 3);
  CHECK(d_plane.global_value > 1.7);
  CHECK(d_plane.global_value < 2.4);

  CHECK_THROWS_AS(ess_local_id(gaussian_cloud(59, 50, 3), 50), ContractViolation);
  CHECK_THROWS_AS(ess_local_id(gaussian_cloud(59, 50, 3), 1), ContractViolation);
}

TEST_CASE("ess estimates increase with true dimension", "[manifold]") {
  double prev = 0.0;
  for (const std::size_t d : {2ul, 5ul, 10ul, 20ul}) {
    const auto est = ess_local_id(gaussian_cloud(60, 1200, d), 100, 3);
    CHECK(est.global_value > prev);
    prev = est.global_value;
  }
}

TEST_CASE("id estimators are invariant to rigid motions", "[manifold]") {
  const Matrix cloud = gaussian_cloud(61, 400, 3);
  const Matrix moved = rotate_and_shift(cloud, {5.0, -3.0, 2.0});

  const double t0 = twonn_id(cloud).global_value;
  const double t1 = twonn_id(moved).global_value;
  CHECK(std::abs(t0 - t1) < 1e-9);

  const double e0 = ess_local_id(cloud, 60).global_value;
  const double e1 = ess_local_id(moved, 60).global_value;
  CHECK(std::abs(e0 - e1) < 1e-9);
}

TEST_CASE("pca embedding preserves 2-d geometry and orders variance", "[manifold]") {
  Rng rng(derive_seed(62, seed_tag("pca-2d")));
  Matrix flat(200, 2);
  for (std::size_t i = 0; i < flat.rows(); ++i) {
    flat(i, 0) = 3.0 * rng.normal() + 1.0;
    flat(i, 1) = 0.8 * rng.normal() - 2.0;
  }
  const Matrix emb = pca_embed_2d(flat);
  REQUIRE(emb.rows() == 200);

  for (std::size_t i = 0; i < 40; ++i)
    for (std::size_t j = i + 1; j < 40; ++j) {
      const double dx0 = flat(i, 0) - flat(j, 0), dy0 = flat(i, 1) - flat(j, 1);
      const double dx1 = emb(i, 0) - emb(j, 0), dy1 = emb(i, 1) - emb(j, 1);
      CHECK(std::abs(std::sqrt(dx0 * dx0 + dy0 * dy0) - std::sqrt(dx1 * dx1 + dy1 * dy1)) <
            1e-9);
    }

  CHECK(column_variance(emb, 0) >= column_variance(emb, 1));
}

TEST_CASE("pca embedding separates distant blobs in feature space", "[manifold]") {
  Rng rng(derive_seed(63, seed_tag("blobs")));
  const std::size_t dim = 9600, per_blob = 80;
  std::vector<double> offset(dim);
  double norm = 0.0;
  for (double& v : offset) {
    v = rng.normal();
    norm += v * v;
  }
  norm = std::sqrt(norm);

  Matrix cloud(2 * per_blob, dim);
  for (std::size_t i = 0; i < 2 * per_blob; ++i) {
    const double shift = i < per_blob ? 0.0 : 100.0;
    for (std::size_t c = 0; c < dim; ++c)
      cloud(i, c) = rng.normal() + shift * offset[c] / norm;
  }

  const Matrix emb = pca_embed_2d(cloud);
  std::array<double, 2> mean_a{}, mean_b{};
  for (std::size_t i = 0; i < per_blob; ++i)
    for (std::size_t c = 0; c < 2; ++c) {
      mean_a[c] += emb(i, c) / per_blob;
      mean_b[c] += emb(per_blob + i, c) / per_blob;
    }
  double within = 0.0;
  for (std::size_t i = 0; i < 2 * per_blob; ++i) {
    const auto& mean = i < per_blob ? mean_a : mean_b;
    const double dx = emb(i, 0) - mean[0], dy = emb(i, 1) - mean[1];
    within += dx * dx + dy * dy;
  }
  within = std::sqrt(within / (2.0 * per_blob));
  const double dx = mean_a[0] - mean_b[0], dy = mean_a[1] - mean_b[1];
  CHECK(std::sqrt(dx * dx + dy * dy) > 5.0 * within);
}

TEST_CASE("pca embedding rejects degenerate clouds", "[manifold]") {
  Matrix constant(10, 3);
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t c = 0; c < 3; ++c) constant(i, c) = 4.0;
  CHECK_THROWS_AS(pca_embed_2d(constant), DegenerateInput);

  Matrix two(2, 3);
  CHECK_THROWS_AS(pca_embed_2d(two), ContractViolation);

  // A rank-1 cloud embeds on one axis; the other stays zero.
  Matrix rank1(12, 4);
  for (std::size_t i = 0; i < 12; ++i)
    for (std::size_t c = 0; c < 4; ++c) rank1(i, c) = static_cast<double>(i) * (c + 1.0);
  const Matrix emb = pca_embed_2d(rank1);
  for (std::size_t i = 0; i < 12; ++i) CHECK(emb(i, 1) == 0.0);
}

TEST_CASE("svm separates blobs and flails on shuffled labels", "[manifold]") {
  Rng rng(derive_seed(64, seed_tag("svm")));
  Matrix blobs(200, 2);
  std::vector<int> labels(200);
  for (std::size_t i = 0; i < 200; ++i) {
    const bool right = i >= 100;
    blobs(i, 0) = rng.normal() * 0.5 + (right ? 3.0 : -3.0);
    blobs(i, 1) = rng.normal() * 0.5;
    labels[i] = right ? 1 : 0;
  }
  const auto sep = svm_separability(blobs, labels);
  CHECK(sep.accuracy == 1.0);
  CHECK(sep.weights.size() == 2);

  // Permutation null: balanced labels, no structure.
  Matrix noise(400, 2);
  std::vector<int> shuffled(400);
  for (std::size_t i = 0; i < 400; ++i) {
    noise(i, 0) = rng.normal();
    noise(i, 1) = rng.normal();
    shuffled[i] = i < 200 ? 0 : 1;
  }
  rng.shuffle(shuffled);
  const auto null = svm_separability(noise, shuffled);
  CHECK(null.accuracy > 0.45);
  CHECK(null.accuracy < 0.65);

  std::vector<int> mono(200, 1);
  CHECK_THROWS_AS(svm_separability(blobs, mono), ContractViolation);
  std::vector<int> trinary(200, 1);
  trinary[0] = 0;
  trinary[1] = 2;
  CHECK_THROWS_AS(svm_separability(blobs, trinary), ContractViolation);
  std::vector<int> short_labels(100, 0);
  CHECK_THROWS_AS(svm_separability(blobs, short_labels), ContractViolation);
}

TEST_CASE("separability accuracy tracks the adaptation schedule", "[manifold]") {
  GeneratorConfig config;
  config.sampling_rate = 200.0;
  config.n_channels = 4;
  config.session_length = 60.0;
  config.n_sessions = 6;
  config.band_profiles = {{State::left_hand, {{20.0, 1.0}}}, {State::right_hand, {{20.0, 1.0}}}};
  config.mixing_drift_rate = 0.0;
  config.state_block_mean_s = 4.0;
  config.adaptation_schedule = {0.1, 0.35, 0.6, 0.85, 1.1, 1.35};
  config.seed = 91;

  auto bank = build_wavelet_bank(200.0, {10.0, 20.0, 30.0, 40.0, 50.0});
  std::vector<double> session_ids, accuracies;
  for (std::size_t s = 0; s < config.n_sessions; ++s) {
    const FeatureSet fs = extract_features(generate_session(config, s), bank);
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < fs.size(); ++i)
      if (fs.states[i] == State::left_hand || fs.states[i] == State::right_hand)
        keep.push_back(i);
    REQUIRE(keep.size() > 20);

    Matrix cloud(keep.size(), fs.features_per_epoch());
    std::vector<int> labels(keep.size());
    for (std::size_t r = 0; r < keep.size(); ++r) {
      const auto flat = fs.flat(keep[r]);
      for (std::size_t c = 0; c < flat.size(); ++c) cloud(r, c) = flat[c];
      labels[r] = fs.states[keep[r]] == State::right_hand ? 1 : 0;
    }
    const auto sep = svm_separability(pca_embed_2d(cloud), labels);
    session_ids.push_back(static_cast<double>(s));
    accuracies.push_back(sep.accuracy);
  }

  const TrendFit trend = linear_trend(session_ids, accuracies);
  CHECK(trend.slope > 0.0);
  CHECK(accuracies.back() > accuracies.front());
}

TEST_CASE("point cloud validation catches malformed input", "[manifold]") {
  PointCloud cloud;
  cloud.points = gaussian_cloud(65, 10, 3);
  cloud.validate();

  cloud.labels.assign(4, 1);
  CHECK_THROWS_AS(cloud.validate(), ContractViolation);
  cloud.labels.assign(10, 1);
  cloud.validate();

  PointCloud tiny;
  tiny.points = Matrix(2, 3);
  CHECK_THROWS_AS(tiny.validate(), ContractViolation);
}
