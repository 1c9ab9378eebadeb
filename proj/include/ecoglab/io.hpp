#pragma once

#include <atomic>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ecoglab/errors.hpp"
#include "ecoglab/experiments.hpp"
#include "ecoglab/features.hpp"
#include "ecoglab/learning_curve.hpp"
#include "ecoglab/manifold.hpp"
#include "ecoglab/nets.hpp"
#include "ecoglab/rewnpls.hpp"
#include "ecoglab/synth.hpp"

namespace ecoglab {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kToolVersion = "ecoglab 0.1.0";

// ---------------------------------------------------------------------------
// Low-level plumbing: atomic writes, content hashing, endian-stable numbers.
// ---------------------------------------------------------------------------

// Writes via a uniquely named sibling temp file and renames into place, so a
// reader never observes a half-written file and a crashed writer leaves the
// previous version intact.
inline void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
  namespace fs = std::filesystem;
  static std::atomic<std::uint64_t> counter{0};
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string());
  }
  fs::path tmp = path;
  tmp += ".tmp" + std::to_string(counter.fetch_add(1));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot rename into " + path.string());
  }
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  if (in.bad()) throw IoError("read failure on " + path.string());
  return buf.str();
}

inline std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

namespace detail {

template <class UInt>
inline void append_le(std::string& out, UInt v) {
  for (std::size_t i = 0; i < sizeof(UInt); ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <class UInt>
inline UInt read_le(const std::string& in, std::size_t& at) {
  if (at + sizeof(UInt) > in.size()) throw DataError("binary payload truncated");
  UInt v = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i)
    v |= static_cast<UInt>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  at += sizeof(UInt);
  return v;
}

inline void append_f64(std::string& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  append_le(out, bits);
}

inline double read_f64(const std::string& in, std::size_t& at) {
  const std::uint64_t bits = read_le<std::uint64_t>(in, at);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

inline void append_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  append_le(out, bits);
}

inline float read_f32(const std::string& in, std::size_t& at) {
  const std::uint32_t bits = read_le<std::uint32_t>(in, at);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace detail

// Nine significant digits, the precision contract of targets.csv.
inline std::string format_sig9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

// Shortest round-trippable form for all other numeric CSV fields.
inline std::string format_full(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline double parse_double(const std::string& s) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw DataError("trailing characters in number '" + s + "'");
    return v;
  } catch (const std::invalid_argument&) {
    throw DataError("not a number: '" + s + "'");
  } catch (const std::out_of_range&) {
    throw DataError("number out of range: '" + s + "'");
  }
}

inline std::size_t parse_index(const std::string& s) {
  // stoull would silently wrap a negative input, so demand plain digits.
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
    throw DataError("not an index: '" + s + "'");
  try {
    return static_cast<std::size_t>(std::stoull(s));
  } catch (const std::out_of_range&) {
    throw DataError("index out of range: '" + s + "'");
  }
}

// ---------------------------------------------------------------------------
// CSV: comma-separated, a `# schema:` tag line, then the header row. Fields
// never contain commas or quotes, so no escaping dialect is needed.
// ---------------------------------------------------------------------------

struct CsvTable {
  std::string schema;  // e.g. "ecoglab.experiment.v1"
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return i;
    throw DataError("csv column '" + name + "' missing");
  }
};

inline std::string csv_schema_tag(const std::string& name) {
  return "ecoglab." + name + ".v" + std::to_string(kSchemaVersion);
}

inline void write_csv(const std::filesystem::path& path, const std::string& schema_name,
                      const std::vector<std::string>& header,
                      const std::vector<std::vector<std::string>>& rows) {
  std::string out = "# schema: " + csv_schema_tag(schema_name) + "\n";
  const auto append_row = [&out](const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (fields[i].find_first_of(",\"\n") != std::string::npos)
        throw ContractViolation("csv field needs escaping: '" + fields[i] + "'");
      if (i) out.push_back(',');
      out += fields[i];
    }
    out.push_back('\n');
  };
  append_row(header);
  for (const auto& row : rows) {
    if (row.size() != header.size())
      throw ContractViolation("csv row width does not match the header");
    append_row(row);
  }
  write_file_atomic(path, out);
}

inline CsvTable read_csv(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  CsvTable table;
  std::size_t pos = 0;
  bool saw_header = false;
  while (pos < text.size()) {
    std::size_t eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    std::string line = text.substr(pos, eol - pos);
    pos = eol + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      const std::string prefix = "# schema: ";
      if (line.rfind(prefix, 0) == 0) table.schema = line.substr(prefix.size());
      continue;
    }
    std::vector<std::string> fields;
    std::size_t at = 0;
    while (true) {
      const std::size_t comma = line.find(',', at);
      fields.push_back(line.substr(at, comma == std::string::npos ? comma : comma - at));
      if (comma == std::string::npos) break;
      at = comma + 1;
    }
    if (!saw_header) {
      table.header = std::move(fields);
      saw_header = true;
    } else {
      if (fields.size() != table.header.size())
        throw DataError("csv row width mismatch in " + path.string());
      table.rows.push_back(std::move(fields));
    }
  }
  if (!saw_header) throw DataError("csv has no header: " + path.string());
  return table;
}

// Verifies the `# schema:` tag, the gate the report collator relies on.
inline void require_csv_schema(const CsvTable& table, const std::string& name,
                               const std::string& origin) {
  if (table.schema != csv_schema_tag(name))
    throw DataError(origin + ": expected schema " + csv_schema_tag(name) + ", found '" +
                    table.schema + "'");
}

inline void write_json_file(const std::filesystem::path& path, const json& value) {
  write_file_atomic(path, value.dump(2) + "\n");
}

inline json read_json_file(const std::filesystem::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw DataError("malformed json in " + path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Generator config <-> JSON (the config snapshot embedded in manifests).
// ---------------------------------------------------------------------------

inline json generator_config_to_json(const GeneratorConfig& c) {
  json profiles = json::object();
  for (const auto& [state, bands] : c.band_profiles) {
    json list = json::array();
    for (const auto& b : bands) list.push_back({{"frequency_hz", b.frequency_hz}, {"depth", b.depth}});
    profiles[to_string(state)] = list;
  }
  json states = json::array();
  for (const State s : c.states) states.push_back(to_string(s));
  return json{{"sampling_rate", c.sampling_rate},
              {"n_channels", c.n_channels},
              {"session_length", c.session_length},
              {"n_sessions", c.n_sessions},
              {"states", states},
              {"band_profiles", profiles},
              {"mixing_drift_rate", c.mixing_drift_rate},
              {"adaptation_schedule", c.adaptation_schedule},
              {"noise_floor", c.noise_floor},
              {"seed", c.seed},
              {"state_block_mean_s", c.state_block_mean_s},
              {"separability_max_angle", c.separability_max_angle},
              {"direction_bands", c.direction_bands},
              {"direction_depth", c.direction_depth},
              {"target_nonlinearity", c.target_nonlinearity},
              {"hand_speed", c.hand_speed}};
}

inline GeneratorConfig generator_config_from_json(const json& j) {
  GeneratorConfig c;
  try {
    c.sampling_rate = j.at("sampling_rate").get<double>();
    c.n_channels = j.at("n_channels").get<std::size_t>();
    c.session_length = j.at("session_length").get<double>();
    c.n_sessions = j.at("n_sessions").get<std::size_t>();
    c.states.clear();
    for (const auto& s : j.at("states")) c.states.push_back(state_from_string(s.get<std::string>()));
    c.band_profiles.clear();
    for (const auto& [name, list] : j.at("band_profiles").items()) {
      std::vector<BandProfile> bands;
      for (const auto& b : list)
        bands.push_back({b.at("frequency_hz").get<double>(), b.at("depth").get<double>()});
      c.band_profiles[state_from_string(name)] = std::move(bands);
    }
    c.mixing_drift_rate = j.at("mixing_drift_rate").get<double>();
    c.adaptation_schedule = j.at("adaptation_schedule").get<std::vector<double>>();
    c.noise_floor = j.at("noise_floor").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.state_block_mean_s = j.at("state_block_mean_s").get<double>();
    c.separability_max_angle = j.at("separability_max_angle").get<double>();
    c.direction_bands = j.at("direction_bands").get<std::array<double, 3>>();
    c.direction_depth = j.at("direction_depth").get<double>();
    c.target_nonlinearity = j.at("target_nonlinearity").get<double>();
    c.hand_speed = j.at("hand_speed").get<double>();
  } catch (const json::exception& e) {
    throw DataError(std::string("generator config json: ") + e.what());
  }
  return c;
}

// ---------------------------------------------------------------------------
// Session directory: manifest.json + raw.f32le + targets.csv.
// ---------------------------------------------------------------------------

inline std::string encode_raw_f32le(const Matrix& raw) {
  std::string bytes;
  bytes.reserve(raw.size() * 4);
  for (const double v : raw.storage()) detail::append_f32(bytes, static_cast<float>(v));
  return bytes;
}

inline void save_session(const std::filesystem::path& dir, const Session& session,
                         const GeneratorConfig& config) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create session directory " + dir.string());

  const std::string raw_bytes = encode_raw_f32le(session.raw);
  write_file_atomic(dir / "raw.f32le", raw_bytes);

  std::vector<std::vector<std::string>> rows;
  rows.reserve(session.epoch_targets.size());
  if (session.epoch_targets.size() != session.epoch_states.size())
    throw ContractViolation("save_session: epoch targets and states misaligned");
  for (std::size_t i = 0; i < session.epoch_targets.size(); ++i) {
    const auto& t = session.epoch_targets[i];
    rows.push_back({std::to_string(i), to_string(session.epoch_states[i]), format_sig9(t[0]),
                    format_sig9(t[1]), format_sig9(t[2])});
  }
  write_csv(dir / "targets.csv", "targets", {"epoch_index", "state", "tx", "ty", "tz"}, rows);

  json spans = json::array();
  for (const auto& [begin, end] : session.manifest.artifact_spans)
    spans.push_back({begin, end});
  const json manifest{{"schema_version", kSchemaVersion},
                      {"tool", kToolVersion},
                      {"kind", "session"},
                      {"session_index", session.session_index},
                      {"sampling_rate", session.sampling_rate},
                      {"n_samples", session.n_samples()},
                      {"n_channels", session.n_channels()},
                      {"grid", {{"rows", session.grid.rows}, {"cols", session.grid.cols}}},
                      {"seed", session.manifest.seed},
                      {"config_digest", hex64(session.manifest.config_digest)},
                      {"artifact_spans", spans},
                      {"config", generator_config_to_json(config)},
                      {"hashes",
                       {{"raw.f32le", hex64(fnv1a64(raw_bytes))},
                        {"targets.csv", hex64(fnv1a64(read_file(dir / "targets.csv")))}}}};
  write_json_file(dir / "manifest.json", manifest);
}

struct LoadedSession {
  Session session;
  GeneratorConfig config;
};

inline LoadedSession load_session(const std::filesystem::path& dir) {
  const json manifest = read_json_file(dir / "manifest.json");
  LoadedSession loaded;
  try {
    if (manifest.at("schema_version").get<int>() != kSchemaVersion)
      throw DataError("session manifest schema version mismatch in " + dir.string());
    if (manifest.at("kind").get<std::string>() != "session")
      throw DataError(dir.string() + " is not a session directory");
    Session& s = loaded.session;
    s.session_index = manifest.at("session_index").get<std::size_t>();
    s.sampling_rate = manifest.at("sampling_rate").get<double>();
    s.grid.rows = manifest.at("grid").at("rows").get<std::size_t>();
    s.grid.cols = manifest.at("grid").at("cols").get<std::size_t>();
    s.manifest.schema_version = kSchemaVersion;
    s.manifest.seed = manifest.at("seed").get<std::uint64_t>();
    s.manifest.config_digest =
        std::stoull(manifest.at("config_digest").get<std::string>(), nullptr, 16);
    s.manifest.session_index = s.session_index;
    for (const auto& span : manifest.at("artifact_spans"))
      s.manifest.artifact_spans.emplace_back(span.at(0).get<std::size_t>(),
                                             span.at(1).get<std::size_t>());
    loaded.config = generator_config_from_json(manifest.at("config"));

    const std::size_t n_samples = manifest.at("n_samples").get<std::size_t>();
    const std::size_t n_channels = manifest.at("n_channels").get<std::size_t>();
    const std::string raw_bytes = read_file(dir / "raw.f32le");
    if (manifest.at("hashes").at("raw.f32le").get<std::string>() != hex64(fnv1a64(raw_bytes)))
      throw DataError("raw.f32le hash mismatch in " + dir.string());
    if (raw_bytes.size() != n_samples * n_channels * 4)
      throw DataError("raw.f32le size mismatch in " + dir.string());
    s.raw = Matrix(n_samples, n_channels);
    std::size_t at = 0;
    for (double& v : s.raw.storage()) v = detail::read_f32(raw_bytes, at);

    const CsvTable targets = read_csv(dir / "targets.csv");
    require_csv_schema(targets, "targets", dir.string());
    const std::size_t ci = targets.column("epoch_index");
    const std::size_t cs = targets.column("state");
    const std::size_t cx = targets.column("tx");
    const std::size_t cy = targets.column("ty");
    const std::size_t cz = targets.column("tz");
    s.epoch_targets.reserve(targets.rows.size());
    s.epoch_states.reserve(targets.rows.size());
    for (std::size_t i = 0; i < targets.rows.size(); ++i) {
      const auto& row = targets.rows[i];
      if (parse_index(row[ci]) != i)
        throw DataError("targets.csv epoch indices out of order in " + dir.string());
      s.epoch_states.push_back(state_from_string(row[cs]));
      s.epoch_targets.push_back(
          {parse_double(row[cx]), parse_double(row[cy]), parse_double(row[cz])});
    }
  } catch (const json::exception& e) {
    throw DataError("session manifest in " + dir.string() + ": " + e.what());
  }
  return loaded;
}

// ---------------------------------------------------------------------------
// Feature cache: fixed binary header + flat little-endian doubles. Targets
// and states are not duplicated here; they stay in the session's targets.csv.
// ---------------------------------------------------------------------------

inline constexpr char kFeatureMagic[9] = "ECOGFEAT";

inline void save_feature_cache(const std::filesystem::path& path, const FeatureSet& set) {
  std::string bytes(kFeatureMagic, 8);
  detail::append_le<std::uint32_t>(bytes, static_cast<std::uint32_t>(kSchemaVersion));
  const std::size_t channels = set.epochs.empty() ? 0 : set.epochs.front().values.d1();
  const std::size_t bands = set.epochs.empty() ? 0 : set.epochs.front().values.d2();
  const std::size_t bins = set.epochs.empty() ? 0 : set.epochs.front().values.d3();
  detail::append_le<std::uint32_t>(bytes, static_cast<std::uint32_t>(channels));
  detail::append_le<std::uint32_t>(bytes, static_cast<std::uint32_t>(bands));
  detail::append_le<std::uint32_t>(bytes, static_cast<std::uint32_t>(bins));
  detail::append_le<std::uint64_t>(bytes, set.epochs.size());
  detail::append_le<std::uint64_t>(bytes, set.session_index);
  detail::append_f64(bytes, set.sampling_rate);
  detail::append_le<std::uint32_t>(bytes, static_cast<std::uint32_t>(set.grid.rows));
  detail::append_le<std::uint32_t>(bytes, static_cast<std::uint32_t>(set.grid.cols));
  for (const FeatureEpoch& ep : set.epochs) {
    if (ep.values.d1() != channels || ep.values.d2() != bands || ep.values.d3() != bins)
      throw ContractViolation("save_feature_cache: ragged epoch shapes");
    for (const double v : ep.values.storage()) detail::append_f64(bytes, v);
  }
  write_file_atomic(path, bytes);
}

// Rebuilds the cached epochs; targets/states are filled by the caller from
// the session they belong to.
inline FeatureSet load_feature_cache(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < 8 || bytes.compare(0, 8, kFeatureMagic, 8) != 0)
    throw DataError(path.string() + " is not a feature cache");
  std::size_t at = 8;
  if (detail::read_le<std::uint32_t>(bytes, at) != static_cast<std::uint32_t>(kSchemaVersion))
    throw DataError("feature cache schema version mismatch in " + path.string());
  const std::size_t channels = detail::read_le<std::uint32_t>(bytes, at);
  const std::size_t bands = detail::read_le<std::uint32_t>(bytes, at);
  const std::size_t bins = detail::read_le<std::uint32_t>(bytes, at);
  const std::size_t count = detail::read_le<std::uint64_t>(bytes, at);

  FeatureSet set;
  set.session_index = detail::read_le<std::uint64_t>(bytes, at);
  set.sampling_rate = detail::read_f64(bytes, at);
  set.grid.rows = detail::read_le<std::uint32_t>(bytes, at);
  set.grid.cols = detail::read_le<std::uint32_t>(bytes, at);
  const std::size_t per_epoch = channels * bands * bins;
  if (bytes.size() != at + count * per_epoch * 8)
    throw DataError("feature cache payload size mismatch in " + path.string());
  set.epochs.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    FeatureEpoch ep;
    ep.epoch_index = i;
    ep.session_index = set.session_index;
    ep.values = Tensor3(channels, bands, bins);
    for (double& v : ep.values.storage()) v = detail::read_f64(bytes, at);
    set.epochs.push_back(std::move(ep));
  }
  return set;
}

inline void export_features_csv(const std::filesystem::path& path, const FeatureSet& set) {
  std::vector<std::vector<std::string>> rows;
  for (const FeatureEpoch& ep : set.epochs) {
    const Tensor3& t = ep.values;
    for (std::size_t c = 0; c < t.d1(); ++c)
      for (std::size_t b = 0; b < t.d2(); ++b)
        for (std::size_t n = 0; n < t.d3(); ++n)
          rows.push_back({std::to_string(ep.epoch_index), std::to_string(c), std::to_string(b),
                          std::to_string(n), format_full(t(c, b, n))});
  }
  write_csv(path, "features", {"epoch_index", "channel", "band", "bin", "value"}, rows);
}

// ---------------------------------------------------------------------------
// Checkpoint container: magic + version + JSON manifest + flat doubles. The
// same envelope carries the recursive decoder, both nets, and the ESS
// calibration table; `kind` in the manifest tells them apart.
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[9] = "ECOGCKPT";

inline void save_checkpoint(const std::filesystem::path& path, const json& manifest,
                            const std::vector<double>& values) {
  std::string bytes(kCheckpointMagic, 8);
  detail::append_le<std::uint32_t>(bytes, static_cast<std::uint32_t>(kSchemaVersion));
  const std::string header = manifest.dump();
  detail::append_le<std::uint64_t>(bytes, header.size());
  bytes += header;
  detail::append_le<std::uint64_t>(bytes, values.size());
  for (const double v : values) detail::append_f64(bytes, v);
  write_file_atomic(path, bytes);
}

struct Checkpoint {
  json manifest;
  std::vector<double> values;
};

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < 8 || bytes.compare(0, 8, kCheckpointMagic, 8) != 0)
    throw DataError(path.string() + " is not a checkpoint");
  std::size_t at = 8;
  if (detail::read_le<std::uint32_t>(bytes, at) != static_cast<std::uint32_t>(kSchemaVersion))
    throw DataError("checkpoint schema version mismatch in " + path.string());
  const std::size_t header_size = detail::read_le<std::uint64_t>(bytes, at);
  if (at + header_size > bytes.size()) throw DataError("checkpoint header truncated");
  Checkpoint ckpt;
  try {
    ckpt.manifest = json::parse(bytes.substr(at, header_size));
  } catch (const json::parse_error& e) {
    throw DataError("checkpoint manifest in " + path.string() + ": " + e.what());
  }
  at += header_size;
  const std::size_t count = detail::read_le<std::uint64_t>(bytes, at);
  if (bytes.size() != at + count * 8) throw DataError("checkpoint payload size mismatch");
  ckpt.values.resize(count);
  for (double& v : ckpt.values) v = detail::read_f64(bytes, at);
  return ckpt;
}

// --- recursive decoder ------------------------------------------------------

// Payload layout: materialized coefficients B (n_x x 3, for inspection and
// integrity) followed by the recursion state the model resumes from.
inline void save_rewnpls_checkpoint(const std::filesystem::path& path, const RewNpls& model,
                                    const RewNplsConfig& config,
                                    std::array<std::size_t, 3> dims) {
  const Matrix b = model.coefficients();
  std::vector<double> values(b.storage());
  const std::vector<double> state = model.recursion_state();
  values.insert(values.end(), state.begin(), state.end());
  const json manifest{{"schema_version", kSchemaVersion},
                      {"tool", kToolVersion},
                      {"kind", "rewnpls"},
                      {"dims", dims},
                      {"coefficient_count", b.size()},
                      {"selected_factors", model.selected_factors()},
                      {"config",
                       {{"max_factors", config.max_factors},
                        {"forgetting", config.forgetting},
                        {"chunk_seconds", config.chunk_seconds}}}};
  save_checkpoint(path, manifest, values);
}

inline RewNpls load_rewnpls_checkpoint(const std::filesystem::path& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  try {
    if (ckpt.manifest.at("kind").get<std::string>() != "rewnpls")
      throw DataError(path.string() + " is not a recursive-decoder checkpoint");
    const auto dims = ckpt.manifest.at("dims").get<std::array<std::size_t, 3>>();
    RewNplsConfig config;
    config.max_factors = ckpt.manifest.at("config").at("max_factors").get<std::size_t>();
    config.forgetting = ckpt.manifest.at("config").at("forgetting").get<double>();
    config.chunk_seconds = ckpt.manifest.at("config").at("chunk_seconds").get<double>();
    RewNpls model(config, dims[0], dims[1], dims[2]);
    const std::size_t b_count = ckpt.manifest.at("coefficient_count").get<std::size_t>();
    if (ckpt.values.size() < b_count) throw DataError("checkpoint payload shorter than B");
    model.restore_recursion_state(
        std::vector<double>(ckpt.values.begin() + static_cast<std::ptrdiff_t>(b_count),
                            ckpt.values.end()));
    // The stored B must match the one the restored moments rebuild.
    const Matrix b = model.coefficients();
    for (std::size_t i = 0; i < b.size(); ++i)
      if (std::abs(b.storage()[i] - ckpt.values[i]) > 1e-9)
        throw DataError("checkpoint coefficients disagree with restored state");
    return model;
  } catch (const json::exception& e) {
    throw DataError("rewnpls checkpoint manifest: " + std::string(e.what()));
  }
}

// --- gradient-trained nets ---------------------------------------------------

template <class Net>
inline std::vector<double> flat_parameters(Net& net) {
  std::vector<double> flat;
  for (const Param* p : net.params()) flat.insert(flat.end(), p->value.begin(), p->value.end());
  return flat;
}

template <class Net>
inline void load_flat_parameters(Net& net, const std::vector<double>& flat) {
  std::size_t at = 0;
  for (Param* p : net.params()) {
    if (at + p->size() > flat.size()) throw DataError("parameter array too short");
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(at),
              flat.begin() + static_cast<std::ptrdiff_t>(at + p->size()), p->value.begin());
    at += p->size();
  }
  if (at != flat.size()) throw DataError("parameter array longer than the architecture");
}

// Digest of the layer names and shapes; a checkpoint only loads into the
// architecture it was saved from.
template <class Net>
inline std::uint64_t architecture_hash(Net& net) {
  std::string desc;
  for (const Param* p : net.params()) desc += p->name + ":" + std::to_string(p->size()) + ";";
  return fnv1a64(desc);
}

template <class Net>
inline void save_net_checkpoint(const std::filesystem::path& path, Net& net,
                                const std::string& kind, const json& config,
                                std::uint64_t seed, const TrainHistory& history,
                                const Normalization& norm) {
  std::vector<double> values = flat_parameters(net);
  const std::size_t param_count = values.size();
  std::size_t state_count = 0;
  for (const std::vector<double>* buf : net.state_buffers()) {
    values.insert(values.end(), buf->begin(), buf->end());
    state_count += buf->size();
  }
  values.insert(values.end(), norm.mean.begin(), norm.mean.end());
  values.insert(values.end(), norm.stddev.begin(), norm.stddev.end());
  const json manifest{{"schema_version", kSchemaVersion},
                      {"tool", kToolVersion},
                      {"kind", kind},
                      {"architecture_hash", hex64(architecture_hash(net))},
                      {"config", config},
                      {"seed", seed},
                      {"best_epoch", history.best_epoch},
                      {"best_val_cs", history.best_val_cs},
                      {"parameter_count", param_count},
                      {"state_count", state_count},
                      {"normalization_size", norm.mean.size()}};
  save_checkpoint(path, manifest, values);
}

// Restores parameters, batch-norm state, and normalization into a freshly
// constructed net of the same architecture (the caller rebuilds it from the
// manifest's config).
template <class Net>
inline Normalization load_net_checkpoint(const std::filesystem::path& path, Net& net,
                                         const std::string& kind) {
  const Checkpoint ckpt = load_checkpoint(path);
  try {
    if (ckpt.manifest.at("kind").get<std::string>() != kind)
      throw DataError(path.string() + " holds a '" +
                      ckpt.manifest.at("kind").get<std::string>() + "' model, expected '" +
                      kind + "'");
    if (ckpt.manifest.at("architecture_hash").get<std::string>() !=
        hex64(architecture_hash(net)))
      throw DataError("checkpoint architecture does not match the constructed net");
    const std::size_t param_count = ckpt.manifest.at("parameter_count").get<std::size_t>();
    const std::size_t state_count = ckpt.manifest.at("state_count").get<std::size_t>();
    const std::size_t norm_size = ckpt.manifest.at("normalization_size").get<std::size_t>();
    if (ckpt.values.size() != param_count + state_count + 2 * norm_size)
      throw DataError("net checkpoint payload size mismatch");
    load_flat_parameters(
        net, std::vector<double>(ckpt.values.begin(),
                                 ckpt.values.begin() + static_cast<std::ptrdiff_t>(param_count)));
    std::size_t at = param_count;
    for (std::vector<double>* buf : net.state_buffers()) {
      if (at + buf->size() > param_count + state_count)
        throw DataError("net checkpoint state buffers too short");
      std::copy(ckpt.values.begin() + static_cast<std::ptrdiff_t>(at),
                ckpt.values.begin() + static_cast<std::ptrdiff_t>(at + buf->size()),
                buf->begin());
      at += buf->size();
    }
    if (at != param_count + state_count)
      throw DataError("net checkpoint state buffers misaligned");
    Normalization norm;
    norm.mean.assign(ckpt.values.begin() + static_cast<std::ptrdiff_t>(at),
                     ckpt.values.begin() + static_cast<std::ptrdiff_t>(at + norm_size));
    norm.stddev.assign(ckpt.values.begin() + static_cast<std::ptrdiff_t>(at + norm_size),
                       ckpt.values.end());
    return norm;
  } catch (const json::exception& e) {
    throw DataError("net checkpoint manifest: " + std::string(e.what()));
  }
}

inline void save_history_csv(const std::filesystem::path& path, const TrainHistory& history) {
  std::vector<std::vector<std::string>> rows;
  rows.reserve(history.epochs.size());
  for (const EpochStats& e : history.epochs)
    rows.push_back({std::to_string(e.epoch), format_full(e.train_cs), format_full(e.val_cs)});
  write_csv(path, "history", {"epoch", "train_cs", "val_cs"}, rows);
}

// ---------------------------------------------------------------------------
// Experiment results CSV + run manifests.
// ---------------------------------------------------------------------------

inline void save_experiment_csv(const std::filesystem::path& path,
                                const ExperimentResult& result) {
  std::vector<std::vector<std::string>> rows;
  rows.reserve(result.points.size());
  for (const ExperimentPoint& p : result.points)
    rows.push_back({to_string(result.kind), format_full(p.x_minutes),
                    std::to_string(p.repetition), format_full(p.mean_cs), p.train_range,
                    p.test_range});
  write_csv(path, "experiment",
            {"kind", "x_minutes", "repetition", "mean_cs", "train_range", "test_range"}, rows);
}

inline ExperimentResult load_experiment_csv(const std::filesystem::path& path) {
  const CsvTable table = read_csv(path);
  require_csv_schema(table, "experiment", path.string());
  const std::size_t ck = table.column("kind");
  const std::size_t cx = table.column("x_minutes");
  const std::size_t cr = table.column("repetition");
  const std::size_t cm = table.column("mean_cs");
  const std::size_t ct = table.column("train_range");
  const std::size_t ce = table.column("test_range");
  if (table.rows.empty()) throw DataError("experiment csv has no data rows: " + path.string());
  ExperimentResult result;
  result.kind = experiment_kind_from_string(table.rows.front()[ck]);
  for (const auto& row : table.rows) {
    if (experiment_kind_from_string(row[ck]) != result.kind)
      throw DataError("experiment csv mixes kinds: " + path.string());
    ExperimentPoint p;
    p.x_minutes = parse_double(row[cx]);
    p.repetition = parse_index(row[cr]);
    p.mean_cs = parse_double(row[cm]);
    p.train_range = row[ct];
    p.test_range = row[ce];
    result.points.push_back(std::move(p));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Learning-curve fit artifacts.
// ---------------------------------------------------------------------------

inline void save_fit_json(const std::filesystem::path& path, const PowerLawFit& fit) {
  write_json_file(path, json{{"schema_version", kSchemaVersion},
                             {"tool", kToolVersion},
                             {"kind", "power_law_fit"},
                             {"a", fit.a},
                             {"b", fit.b},
                             {"c", fit.c},
                             {"sse", fit.residual_sse},
                             {"converged", fit.converged},
                             {"n_points", fit.n_points}});
}

inline PowerLawFit load_fit_json(const std::filesystem::path& path) {
  const json j = read_json_file(path);
  try {
    if (j.at("kind").get<std::string>() != "power_law_fit")
      throw DataError(path.string() + " is not a fit file");
    if (j.at("schema_version").get<int>() != kSchemaVersion)
      throw DataError("fit schema version mismatch in " + path.string());
    PowerLawFit fit;
    fit.a = j.at("a").get<double>();
    fit.b = j.at("b").get<double>();
    fit.c = j.at("c").get<double>();
    fit.residual_sse = j.at("sse").get<double>();
    fit.converged = j.at("converged").get<bool>();
    fit.n_points = j.at("n_points").get<std::size_t>();
    return fit;
  } catch (const json::exception& e) {
    throw DataError("fit json in " + path.string() + ": " + e.what());
  }
}

// Dense samples of the fitted curve across the observed size range, the
// data-only stand-in for a rendered figure.
inline void save_curve_samples_csv(const std::filesystem::path& path, const PowerLawFit& fit,
                                   double l_min, double l_max, std::size_t n_samples = 200) {
  if (!(l_min > 0.0) || !(l_max >= l_min))
    throw ContractViolation("save_curve_samples_csv: bad sample range");
  if (n_samples < 2) throw ContractViolation("save_curve_samples_csv: need >= 2 samples");
  std::vector<std::vector<std::string>> rows;
  rows.reserve(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) {
    const double t = static_cast<double>(i) / static_cast<double>(n_samples - 1);
    const double l = l_min + (l_max - l_min) * t;
    rows.push_back({format_full(l), format_full(eval_power_law(fit, l))});
  }
  write_csv(path, "curve_samples", {"x_minutes", "cs_fit"}, rows);
}

// ---------------------------------------------------------------------------
// Diagnostics artifacts: embeddings, ID reports, calibration cache.
// ---------------------------------------------------------------------------

inline void save_embedding_csv(const std::filesystem::path& path, const Matrix& embedded,
                               const std::vector<int>& labels) {
  if (embedded.cols() != 2) throw ContractViolation("save_embedding_csv: expected 2 columns");
  if (!labels.empty() && labels.size() != embedded.rows())
    throw ContractViolation("save_embedding_csv: label count mismatch");
  std::vector<std::vector<std::string>> rows;
  rows.reserve(embedded.rows());
  for (std::size_t i = 0; i < embedded.rows(); ++i)
    rows.push_back({std::to_string(i), format_full(embedded(i, 0)), format_full(embedded(i, 1)),
                    labels.empty() ? std::string("-1") : std::to_string(labels[i])});
  write_csv(path, "embedding", {"epoch_index", "x", "y", "label"}, rows);
}

struct IdReportRow {
  std::size_t session_index = 0;
  IdMethod method = IdMethod::twonn;
  std::size_t k = 0;
  double value = 0.0;
};

inline void save_id_report_csv(const std::filesystem::path& path,
                               const std::vector<IdReportRow>& rows) {
  std::vector<std::vector<std::string>> out;
  out.reserve(rows.size());
  for (const IdReportRow& r : rows)
    out.push_back({std::to_string(r.session_index), to_string(r.method), std::to_string(r.k),
                   format_full(r.value)});
  write_csv(path, "id_report", {"session_index", "method", "k", "value"}, out);
}

inline std::string ess_calibration_cache_name(std::size_t d_max, std::size_t samples_per_d,
                                              std::uint64_t seed) {
  return "ess-calibration-d" + std::to_string(d_max) + "-n" + std::to_string(samples_per_d) +
         "-s" + std::to_string(seed) + ".ckpt";
}

inline void save_ess_calibration(const std::filesystem::path& path, const EssCalibration& cal) {
  const json manifest{{"schema_version", kSchemaVersion},
                      {"tool", kToolVersion},
                      {"kind", "ess_calibration"},
                      {"d_max", cal.d_max},
                      {"samples_per_d", cal.samples_per_d},
                      {"seed", cal.seed}};
  save_checkpoint(path, manifest, cal.table);
}

inline EssCalibration load_ess_calibration(const std::filesystem::path& path) {
  const Checkpoint ckpt = load_checkpoint(path);
  try {
    if (ckpt.manifest.at("kind").get<std::string>() != "ess_calibration")
      throw DataError(path.string() + " is not a calibration cache");
    EssCalibration cal;
    cal.d_max = ckpt.manifest.at("d_max").get<std::size_t>();
    cal.samples_per_d = ckpt.manifest.at("samples_per_d").get<std::size_t>();
    cal.seed = ckpt.manifest.at("seed").get<std::uint64_t>();
    cal.table = ckpt.values;
    cal.validate();
    return cal;
  } catch (const json::exception& e) {
    throw DataError("calibration manifest: " + std::string(e.what()));
  }
}

// Returns the cached table when one with the exact key exists; otherwise
// builds it and leaves the cache behind for the next run.
inline EssCalibration load_or_build_ess_calibration(const std::filesystem::path& cache_dir,
                                                    std::size_t d_max,
                                                    std::size_t samples_per_d = 200000,
                                                    std::uint64_t seed = 20240901) {
  const std::filesystem::path path =
      cache_dir / ess_calibration_cache_name(d_max, samples_per_d, seed);
  if (std::filesystem::exists(path)) {
    EssCalibration cal = load_ess_calibration(path);
    if (cal.d_max == d_max && cal.samples_per_d == samples_per_d && cal.seed == seed) return cal;
    throw DataError("calibration cache key mismatch in " + path.string());
  }
  EssCalibration cal = build_ess_calibration(d_max, samples_per_d, seed);
  save_ess_calibration(path, cal);
  return cal;
}

// ---------------------------------------------------------------------------
// Generic point-cloud CSV (idim/embed input interchange format): all-numeric
// columns, one point per row.
// ---------------------------------------------------------------------------

inline void save_cloud_csv(const std::filesystem::path& path, const Matrix& points) {
  std::vector<std::string> header;
  header.reserve(points.cols());
  for (std::size_t c = 0; c < points.cols(); ++c) header.push_back("x" + std::to_string(c));
  std::vector<std::vector<std::string>> rows;
  rows.reserve(points.rows());
  for (std::size_t i = 0; i < points.rows(); ++i) {
    std::vector<std::string> row;
    row.reserve(points.cols());
    for (std::size_t c = 0; c < points.cols(); ++c) row.push_back(format_full(points(i, c)));
    rows.push_back(std::move(row));
  }
  write_csv(path, "cloud", header, rows);
}

inline Matrix load_cloud_csv(const std::filesystem::path& path) {
  const CsvTable table = read_csv(path);
  require_csv_schema(table, "cloud", path.string());
  if (table.rows.empty()) throw DataError("cloud csv has no points: " + path.string());
  Matrix points(table.rows.size(), table.header.size());
  for (std::size_t i = 0; i < table.rows.size(); ++i)
    for (std::size_t c = 0; c < table.header.size(); ++c)
      points(i, c) = parse_double(table.rows[i][c]);
  return points;
}

}  // namespace ecoglab
