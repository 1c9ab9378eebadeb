#include <unistd.h>

#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "ecoglab/io.hpp"
#include "ecoglab/rng.hpp"

using namespace ecoglab;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static std::atomic<int> counter{0};
    path = fs::temp_directory_path() / ("ecoglab-io-" + std::to_string(::getpid()) + "-" +
                                        std::to_string(counter.fetch_add(1)));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

GeneratorConfig small_world(std::uint64_t seed) {
  GeneratorConfig config;
  config.sampling_rate = 200.0;
  config.n_channels = 4;
  config.session_length = 10.0;
  config.n_sessions = 2;
  config.band_profiles = {{State::left_hand, {{20.0, 1.0}}},
                          {State::right_hand, {{20.0, 1.0}}}};
  config.seed = seed;
  return config;
}

void corrupt_byte(const fs::path& path, std::size_t offset) {
  std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
  REQUIRE(f.good());
  f.seekg(static_cast<std::streamoff>(offset));
  char c = 0;
  f.read(&c, 1);
  c = static_cast<char>(c ^ 0x5a);
  f.seekp(static_cast<std::streamoff>(offset));
  f.write(&c, 1);
}

}  // namespace

TEST_CASE("atomic file write round trips and cleans up", "[io]") {
  TempDir tmp;
  const fs::path file = tmp.path / "nested" / "blob.bin";
  const std::string payload("\x00\x01\xff helso\n\r\n binary", 22);
  write_file_atomic(file, payload);
  CHECK(read_file(file) == payload);

  // Overwrite keeps the newest content and leaves no temp litter behind.
  write_file_atomic(file, "second");
  CHECK(read_file(file) == "second");
  std::size_t entries = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(file.parent_path())) ++entries;
  CHECK(entries == 1);

  CHECK_THROWS_AS(read_file(tmp.path / "absent.bin"), IoError);
}

TEST_CASE("fnv1a64 matches published test vectors", "[io]") {
  CHECK(fnv1a64("") == 0xcbf29ce484222325ull);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cull);
  CHECK(fnv1a64("foobar") == 0x85944171f73967e8ull);
  CHECK(hex64(0xcbf29ce484222325ull) == "cbf29ce484222325");
}

TEST_CASE("csv writer and reader round trip with schema tags", "[io]") {
  TempDir tmp;
  const fs::path file = tmp.path / "table.csv";
  write_csv(file, "experiment", {"kind", "x_minutes"}, {{"ri", "1.5"}, {"ri", "3"}});
  const CsvTable table = read_csv(file);
  CHECK(table.schema == "ecoglab.experiment.v1");
  REQUIRE(table.header == std::vector<std::string>{"kind", "x_minutes"});
  REQUIRE(table.rows.size() == 2);
  CHECK(table.rows[1][1] == "3");
  CHECK(table.column("x_minutes") == 1);
  CHECK_THROWS_AS(table.column("absent"), DataError);

  require_csv_schema(table, "experiment", "test");
  CHECK_THROWS_AS(require_csv_schema(table, "embedding", "test"), DataError);

  CHECK_THROWS_AS(write_csv(file, "x", {"a"}, {{"has,comma"}}), ContractViolation);
  CHECK_THROWS_AS(write_csv(file, "x", {"a", "b"}, {{"lonely"}}), ContractViolation);

  write_file_atomic(tmp.path / "empty.csv", "# schema: none\n");
  CHECK_THROWS_AS(read_csv(tmp.path / "empty.csv"), DataError);
  write_file_atomic(tmp.path / "ragged.csv", "a,b\n1,2\n3\n");
  CHECK_THROWS_AS(read_csv(tmp.path / "ragged.csv"), DataError);
}

TEST_CASE("numeric formatting honours the documented precisions", "[io]") {
  CHECK(format_sig9(0.123456789123) == "0.123456789");
  CHECK(format_sig9(1.0) == "1");
  const double tricky = 0.1 + 0.2;
  CHECK(parse_double(format_full(tricky)) == tricky);
  CHECK_THROWS_AS(parse_double("12x"), DataError);
  CHECK_THROWS_AS(parse_double("nope"), DataError);
  CHECK_THROWS_AS(parse_index("-3"), DataError);
}

TEST_CASE("session directory round trips through disk", "[io]") {
  TempDir tmp;
  const GeneratorConfig config = small_world(5);
  Session session = generate_session(config, 1);
  session = inject_artifacts(session, 6.0, 0.2, 0.5);

  const fs::path dir = tmp.path / "session-001";
  save_session(dir, session, config);
  const LoadedSession loaded = load_session(dir);

  CHECK(loaded.session.session_index == 1);
  CHECK(loaded.session.sampling_rate == 200.0);
  CHECK(loaded.session.grid.rows == session.grid.rows);
  CHECK(loaded.session.manifest.seed == session.manifest.seed);
  CHECK(loaded.session.manifest.config_digest == session.manifest.config_digest);
  CHECK(loaded.session.manifest.artifact_spans == session.manifest.artifact_spans);

  // The on-disk raw stream is float32; loading returns exactly the cast.
  REQUIRE(loaded.session.raw.rows() == session.raw.rows());
  REQUIRE(loaded.session.raw.cols() == session.raw.cols());
  for (std::size_t i = 0; i < session.raw.size(); ++i)
    CHECK(loaded.session.raw.storage()[i] ==
          static_cast<double>(static_cast<float>(session.raw.storage()[i])));

  REQUIRE(loaded.session.epoch_states == session.epoch_states);
  REQUIRE(loaded.session.epoch_targets.size() == session.epoch_targets.size());
  for (std::size_t i = 0; i < session.epoch_targets.size(); ++i)
    for (std::size_t k = 0; k < 3; ++k)
      CHECK(std::abs(loaded.session.epoch_targets[i][k] - session.epoch_targets[i][k]) <=
            1e-8 * std::max(1.0, std::abs(session.epoch_targets[i][k])));

  CHECK(generator_config_to_json(loaded.config) == generator_config_to_json(config));

  // Re-saving the loaded session reproduces raw.f32le byte for byte.
  const fs::path dir2 = tmp.path / "session-copy";
  save_session(dir2, loaded.session, loaded.config);
  CHECK(read_file(dir2 / "raw.f32le") == read_file(dir / "raw.f32le"));
}

TEST_CASE("session loader rejects tampered or mislabeled data", "[io]") {
  TempDir tmp;
  const GeneratorConfig config = small_world(6);
  const Session session = generate_session(config, 0);
  const fs::path dir = tmp.path / "s";
  save_session(dir, session, config);

  corrupt_byte(dir / "raw.f32le", 100);
  CHECK_THROWS_AS(load_session(dir), DataError);

  save_session(dir, session, config);
  json manifest = read_json_file(dir / "manifest.json");
  manifest["kind"] = "experiment";
  write_json_file(dir / "manifest.json", manifest);
  CHECK_THROWS_AS(load_session(dir), DataError);

  CHECK_THROWS_AS(load_session(tmp.path / "missing"), IoError);
}

TEST_CASE("feature cache round trips bit for bit", "[io]") {
  TempDir tmp;
  const GeneratorConfig config = small_world(7);
  const Session session = generate_session(config, 0);
  const auto bank = build_wavelet_bank(200.0, {10.0, 20.0, 30.0});
  const FeatureSet set = extract_features(session, bank);

  const fs::path file = tmp.path / "features.bin";
  save_feature_cache(file, set);
  const FeatureSet loaded = load_feature_cache(file);

  CHECK(loaded.session_index == set.session_index);
  CHECK(loaded.sampling_rate == set.sampling_rate);
  CHECK(loaded.grid.rows == set.grid.rows);
  REQUIRE(loaded.size() == set.size());
  REQUIRE(loaded.features_per_epoch() == set.features_per_epoch());
  for (std::size_t i = 0; i < set.size(); ++i) {
    CHECK(loaded.epochs[i].epoch_index == set.epochs[i].epoch_index);
    CHECK(loaded.epochs[i].values.storage() == set.epochs[i].values.storage());
  }

  corrupt_byte(file, 4);  // inside the magic/version header
  CHECK_THROWS_AS(load_feature_cache(file), DataError);
}

TEST_CASE("features csv export lists every tensor entry", "[io]") {
  TempDir tmp;
  FeatureSet set;
  FeatureEpoch ep;
  ep.epoch_index = 3;
  ep.values = Tensor3(2, 2, 1);
  ep.values(0, 0, 0) = 0.5;
  ep.values(1, 1, 0) = -2.25;
  set.epochs.push_back(ep);

  const fs::path file = tmp.path / "features.csv";
  export_features_csv(file, set);
  const CsvTable table = read_csv(file);
  require_csv_schema(table, "features", "test");
  REQUIRE(table.rows.size() == 4);
  CHECK(table.rows[0] == std::vector<std::string>{"3", "0", "0", "0", "0.5"});
  CHECK(table.rows[3] == std::vector<std::string>{"3", "1", "1", "0", "-2.25"});
}

TEST_CASE("recursive decoder checkpoint restores an identical model", "[io]") {
  TempDir tmp;
  Rng rng(derive_seed(88, seed_tag("ckpt")));
  const std::size_t d1 = 3, d2 = 2, d3 = 2, n = 160;
  std::vector<Tensor3> xs;
  std::vector<std::array<double, 3>> ys;
  std::vector<double> truth(d1 * d2 * d3 * 3);
  for (double& v : truth) v = rng.normal();
  for (std::size_t i = 0; i < n; ++i) {
    Tensor3 t(d1, d2, d3);
    for (double& v : t.storage()) v = rng.normal();
    std::array<double, 3> y{};
    for (std::size_t j = 0; j < t.size(); ++j)
      for (std::size_t k = 0; k < 3; ++k) y[k] += truth[j * 3 + k] * t.storage()[j];
    xs.push_back(std::move(t));
    ys.push_back(y);
  }

  RewNplsConfig config;
  config.max_factors = 4;
  RewNpls model(config, d1, d2, d3);
  const std::size_t half = n / 2;
  for (const std::size_t start : {std::size_t{0}, half}) {
    std::vector<const Tensor3*> px;
    std::vector<std::array<double, 3>> py;
    for (std::size_t i = start; i < start + half; ++i) {
      px.push_back(&xs[i]);
      py.push_back(ys[i]);
    }
    model.update_chunk(px, py);
  }

  const fs::path file = tmp.path / "linear.ckpt";
  save_rewnpls_checkpoint(file, model, config, {d1, d2, d3});
  const RewNpls restored = load_rewnpls_checkpoint(file);

  CHECK(restored.selected_factors() == model.selected_factors());
  CHECK(restored.available_factors() == model.available_factors());
  for (std::size_t i = 0; i < 10; ++i) {
    const auto a = model.predict(xs[i]);
    const auto b = restored.predict(xs[i]);
    for (std::size_t k = 0; k < 3; ++k) CHECK(a[k] == b[k]);
  }

  // Flipping a payload byte trips the coefficient agreement check.
  corrupt_byte(file, fs::file_size(file) / 2);
  CHECK_THROWS_AS(load_rewnpls_checkpoint(file), DataError);

  RewNpls fresh(config, d1, d2, d3);
  CHECK_THROWS_AS(fresh.recursion_state(), StateError);
  CHECK_THROWS_AS(fresh.restore_recursion_state(std::vector<double>(3, 0.0)), DataError);
}

TEST_CASE("net checkpoint restores parameters, norm stats, and predictions", "[io]") {
  TempDir tmp;
  const std::size_t features = 12, hidden = 6, n = 40;
  Rng rng(derive_seed(99, seed_tag("net-ckpt")));
  std::vector<double> x(n * features), y(n * 3);
  for (double& v : x) v = rng.normal();
  for (double& v : y) v = rng.normal();

  MlpNet net(features, hidden, 0.3, 17);
  TrainConfig tc;
  tc.max_epochs = 4;
  tc.batch_size = 10;
  tc.seed = 3;
  const TrainHistory history = train(net, x, y, n, tc);

  Normalization norm;
  norm.mean.assign(features, 0.25);
  norm.stddev.assign(features, 2.0);

  const fs::path file = tmp.path / "mlp.ckpt";
  save_net_checkpoint(file, net, "mlp", json{{"hidden", hidden}}, 17, history, norm);

  MlpNet twin(features, hidden, 0.3, 4444);  // different init seed on purpose
  const Normalization restored_norm = load_net_checkpoint(file, twin, "mlp");
  CHECK(restored_norm.mean == norm.mean);
  CHECK(restored_norm.stddev == norm.stddev);
  CHECK(net.predict(x, n) == twin.predict(x, n));

  const Checkpoint raw = load_checkpoint(file);
  CHECK(raw.manifest.at("best_epoch").get<std::size_t>() == history.best_epoch);
  CHECK(raw.manifest.at("kind").get<std::string>() == "mlp");

  // Wrong kind and wrong architecture are both rejected.
  CHECK_THROWS_AS(load_net_checkpoint(file, twin, "cnn_lstm"), DataError);
  MlpNet other(features, hidden + 1, 0.3, 17);
  CHECK_THROWS_AS(load_net_checkpoint(file, other, "mlp"), DataError);
}

TEST_CASE("training history csv round trips", "[io]") {
  TempDir tmp;
  TrainHistory history;
  history.epochs.push_back({0, 0.25, 0.2});
  history.epochs.push_back({1, 0.5, 0.4});
  const fs::path file = tmp.path / "history.csv";
  save_history_csv(file, history);
  const CsvTable table = read_csv(file);
  require_csv_schema(table, "history", "test");
  REQUIRE(table.rows.size() == 2);
  CHECK(parse_double(table.rows[1][table.column("val_cs")]) == 0.4);
}

TEST_CASE("experiment csv round trips and rejects mixed kinds", "[io]") {
  TempDir tmp;
  ExperimentResult result;
  result.kind = ExperimentKind::random_increase;
  for (std::size_t rep = 0; rep < 3; ++rep) {
    ExperimentPoint p;
    p.x_minutes = 2.5 * static_cast<double>(rep + 1);
    p.repetition = rep;
    p.mean_cs = 0.1 * static_cast<double>(rep) + 0.3;
    p.train_range = "sessions 0-20";
    p.test_range = "sessions 21-42";
    result.points.push_back(p);
  }
  const fs::path file = tmp.path / "ri.csv";
  save_experiment_csv(file, result);
  const ExperimentResult loaded = load_experiment_csv(file);
  CHECK(loaded.kind == ExperimentKind::random_increase);
  REQUIRE(loaded.points.size() == 3);
  CHECK(loaded.points[2].x_minutes == 7.5);
  CHECK(loaded.points[2].mean_cs == 0.5);
  CHECK(loaded.points[0].train_range == "sessions 0-20");

  write_csv(tmp.path / "mixed.csv", "experiment",
            {"kind", "x_minutes", "repetition", "mean_cs", "train_range", "test_range"},
            {{"ri", "1", "0", "0.5", "a", "b"}, {"fi", "2", "0", "0.6", "a", "b"}});
  CHECK_THROWS_AS(load_experiment_csv(tmp.path / "mixed.csv"), DataError);

  write_csv(tmp.path / "empty.csv", "experiment",
            {"kind", "x_minutes", "repetition", "mean_cs", "train_range", "test_range"}, {});
  CHECK_THROWS_AS(load_experiment_csv(tmp.path / "empty.csv"), DataError);
}

TEST_CASE("fit json and curve samples round trip", "[io]") {
  TempDir tmp;
  PowerLawFit fit;
  fit.a = 0.85;
  fit.b = 0.6;
  fit.c = 0.75;
  fit.residual_sse = 1.25e-4;
  fit.converged = true;
  fit.n_points = 12;

  const fs::path file = tmp.path / "fit.json";
  save_fit_json(file, fit);
  const PowerLawFit loaded = load_fit_json(file);
  CHECK(loaded.a == fit.a);
  CHECK(loaded.b == fit.b);
  CHECK(loaded.c == fit.c);
  CHECK(loaded.residual_sse == fit.residual_sse);
  CHECK(loaded.converged);
  CHECK(loaded.n_points == 12);

  const fs::path curve = tmp.path / "curve.csv";
  save_curve_samples_csv(curve, fit, 1.0, 64.0, 50);
  const CsvTable table = read_csv(curve);
  require_csv_schema(table, "curve_samples", "test");
  REQUIRE(table.rows.size() == 50);
  CHECK(parse_double(table.rows.front()[0]) == 1.0);
  CHECK(parse_double(table.rows.back()[0]) == 64.0);
  CHECK(parse_double(table.rows.back()[1]) == eval_power_law(fit, 64.0));
  CHECK_THROWS_AS(save_curve_samples_csv(curve, fit, 0.0, 4.0), ContractViolation);

  write_json_file(tmp.path / "other.json", json{{"kind", "other"}});
  CHECK_THROWS_AS(load_fit_json(tmp.path / "other.json"), DataError);
}

TEST_CASE("embedding and id report csvs carry their columns", "[io]") {
  TempDir tmp;
  Matrix emb(3, 2);
  emb(0, 0) = 1.5;
  emb(2, 1) = -0.5;
  save_embedding_csv(tmp.path / "emb.csv", emb, {1, 0, 1});
  const CsvTable table = read_csv(tmp.path / "emb.csv");
  require_csv_schema(table, "embedding", "test");
  REQUIRE(table.rows.size() == 3);
  CHECK(table.rows[0][table.column("x")] == "1.5");
  CHECK(table.rows[2][table.column("label")] == "1");

  save_embedding_csv(tmp.path / "unlabeled.csv", emb, {});
  CHECK(read_csv(tmp.path / "unlabeled.csv").rows[0][3] == "-1");
  CHECK_THROWS_AS(save_embedding_csv(tmp.path / "bad.csv", emb, {1}), ContractViolation);

  std::vector<IdReportRow> rows;
  rows.push_back({4, IdMethod::ess, 100, 7.25});
  save_id_report_csv(tmp.path / "id.csv", rows);
  const CsvTable id = read_csv(tmp.path / "id.csv");
  require_csv_schema(id, "id_report", "test");
  CHECK(id.rows[0] == std::vector<std::string>{"4", "ess", "100", "7.25"});
}

TEST_CASE("ess calibration cache is keyed and reused", "[io]") {
  TempDir tmp;
  const EssCalibration built = load_or_build_ess_calibration(tmp.path, 6, 100000, 42);
  const fs::path file = tmp.path / ess_calibration_cache_name(6, 100000, 42);
  REQUIRE(fs::exists(file));

  const EssCalibration reloaded = load_or_build_ess_calibration(tmp.path, 6, 100000, 42);
  CHECK(reloaded.table == built.table);

  // A cache whose stored key disagrees with its filename is refused.
  fs::rename(file, tmp.path / ess_calibration_cache_name(6, 100000, 43));
  CHECK_THROWS_AS(load_or_build_ess_calibration(tmp.path, 6, 100000, 43), DataError);
}

TEST_CASE("point cloud csv round trips exactly", "[io]") {
  TempDir tmp;
  Rng rng(derive_seed(31, seed_tag("cloud-io")));
  Matrix cloud(20, 4);
  for (double& v : cloud.storage()) v = rng.normal();
  const fs::path file = tmp.path / "cloud.csv";
  save_cloud_csv(file, cloud);
  const Matrix loaded = load_cloud_csv(file);
  REQUIRE(loaded.rows() == 20);
  REQUIRE(loaded.cols() == 4);
  CHECK(loaded.storage() == cloud.storage());

  write_csv(tmp.path / "empty.csv", "cloud", {"x0"}, {});
  CHECK_THROWS_AS(load_cloud_csv(tmp.path / "empty.csv"), DataError);
}
