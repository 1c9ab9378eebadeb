#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "ecoglab/errors.hpp"
#include "ecoglab/features.hpp"
#include "ecoglab/framing.hpp"
#include "ecoglab/nets.hpp"
#include "ecoglab/rewnpls.hpp"
#include "ecoglab/rng.hpp"

namespace ecoglab {

enum class DecoderKind { rewnpls, mlp, cnn_lstm };

inline std::string to_string(DecoderKind kind) {
  switch (kind) {
    case DecoderKind::rewnpls: return "rewnpls";
    case DecoderKind::mlp: return "mlp";
    case DecoderKind::cnn_lstm: return "cnn_lstm";
  }
  throw ContractViolation("to_string: unknown decoder kind");
}

inline DecoderKind decoder_kind_from_string(const std::string& name) {
  if (name == "rewnpls") return DecoderKind::rewnpls;
  if (name == "mlp") return DecoderKind::mlp;
  if (name == "cnn_lstm" || name == "cnn-lstm") return DecoderKind::cnn_lstm;
  throw ConfigError("unknown decoder kind: " + name);
}

// Everything needed to train any of the three decoders from scratch. The
// recursive decoder ignores the net settings and vice versa.
struct DecoderSpec {
  DecoderKind kind = DecoderKind::rewnpls;
  RewNplsConfig rewnpls;
  TrainConfig train;
  std::size_t mlp_hidden = 50;
  double dropout = 0.5;
  std::size_t conv1_channels = 32;
  std::size_t conv2_channels = 64;
  std::size_t lstm_hidden = 50;

  // Identical (data, seed) inputs reproduce the recursive decoder exactly
  // regardless of the seed; the nets additionally depend on it.
  bool seed_sensitive() const { return kind != DecoderKind::rewnpls; }
};

// A frozen decoder: one 3-vector prediction per feature epoch.
class TrainedDecoder {
 public:
  virtual ~TrainedDecoder() = default;
  virtual std::vector<std::array<double, 3>> predict(
      const std::vector<const FeatureEpoch*>& epochs) = 0;
};

namespace detail {

class RewNplsDecoder final : public TrainedDecoder {
 public:
  RewNplsDecoder(const RewNplsConfig& config, const std::vector<const FeatureEpoch*>& epochs,
                 const std::vector<std::array<double, 3>>& targets)
      : model_(config, epochs.front()->values.d1(), epochs.front()->values.d2(),
               epochs.front()->values.d3()) {
    const std::size_t chunk = config.chunk_epochs();
    for (std::size_t start = 0; start < epochs.size(); start += chunk) {
      const std::size_t stop = std::min(epochs.size(), start + chunk);
      std::vector<const Tensor3*> xs;
      std::vector<std::array<double, 3>> ys;
      xs.reserve(stop - start);
      ys.reserve(stop - start);
      for (std::size_t i = start; i < stop; ++i) {
        xs.push_back(&epochs[i]->values);
        ys.push_back(targets[i]);
      }
      model_.update_chunk(xs, ys);
    }
  }

  std::vector<std::array<double, 3>> predict(
      const std::vector<const FeatureEpoch*>& epochs) override {
    std::vector<std::array<double, 3>> out;
    out.reserve(epochs.size());
    for (const FeatureEpoch* ep : epochs) out.push_back(model_.predict(ep->values));
    return out;
  }

 private:
  RewNpls model_;
};

class MlpDecoder final : public TrainedDecoder {
 public:
  MlpDecoder(const DecoderSpec& spec, const std::vector<const FeatureEpoch*>& epochs,
             const std::vector<std::array<double, 3>>& targets, std::uint64_t seed)
      : norm_(fit_feature_normalization(epochs)),
        net_(epochs.front()->values.size(), spec.mlp_hidden, spec.dropout,
             derive_seed(seed, seed_tag("mlp-init"))) {
    std::vector<double> x = assemble_flat_batch(epochs, norm_);
    std::vector<double> y = flatten_targets(targets);
    TrainConfig config = spec.train;
    config.seed = derive_seed(seed, seed_tag("mlp-train"));
    train(net_, x, y, epochs.size(), config);
  }

  std::vector<std::array<double, 3>> predict(
      const std::vector<const FeatureEpoch*>& epochs) override {
    std::vector<double> x = assemble_flat_batch(epochs, norm_);
    return unflatten_predictions(net_.predict(x, epochs.size()));
  }

  static Normalization fit_feature_normalization(
      const std::vector<const FeatureEpoch*>& epochs) {
    std::vector<std::vector<double>> rows;
    rows.reserve(epochs.size());
    for (const FeatureEpoch* ep : epochs) rows.push_back(ep->values.storage());
    return fit_normalization(rows);
  }

  static std::vector<double> flatten_targets(const std::vector<std::array<double, 3>>& t) {
    std::vector<double> y(t.size() * 3);
    for (std::size_t i = 0; i < t.size(); ++i)
      for (int d = 0; d < 3; ++d) y[i * 3 + d] = t[i][d];
    return y;
  }

  static std::vector<std::array<double, 3>> unflatten_predictions(
      const std::vector<double>& p) {
    std::vector<std::array<double, 3>> out(p.size() / 3);
    for (std::size_t i = 0; i < out.size(); ++i)
      for (int d = 0; d < 3; ++d) out[i][d] = p[i * 3 + d];
    return out;
  }

 private:
  Normalization norm_;
  MlpNet net_;
};

class CnnLstmDecoder final : public TrainedDecoder {
 public:
  CnnLstmDecoder(const DecoderSpec& spec, const std::vector<const FeatureEpoch*>& epochs,
                 const std::vector<std::array<double, 3>>& targets, std::uint64_t seed)
      : norm_(MlpDecoder::fit_feature_normalization(epochs)),
        layout_(layout_for_channels(epochs.front()->values.d1())),
        net_(epochs.front()->values.d2(), layout_.rows, layout_.cols,
             epochs.front()->values.d3(), spec.conv1_channels, spec.conv2_channels,
             spec.lstm_hidden, spec.dropout, derive_seed(seed, seed_tag("cnn-init"))) {
    std::vector<double> x = assemble_grid_batch(epochs, norm_, layout_);
    std::vector<double> y = MlpDecoder::flatten_targets(targets);
    TrainConfig config = spec.train;
    config.seed = derive_seed(seed, seed_tag("cnn-train"));
    train(net_, x, y, epochs.size(), config);
  }

  std::vector<std::array<double, 3>> predict(
      const std::vector<const FeatureEpoch*>& epochs) override {
    std::vector<double> x = assemble_grid_batch(epochs, norm_, layout_);
    return MlpDecoder::unflatten_predictions(net_.predict(x, epochs.size()));
  }

 private:
  Normalization norm_;
  GridLayout layout_;
  CnnLstmNet net_;
};

}  // namespace detail

// Trains the decoder named by the spec from scratch on the given epochs
// (chronological order expected) and returns it frozen.
inline std::unique_ptr<TrainedDecoder> train_decoder(
    const DecoderSpec& spec, const std::vector<const FeatureEpoch*>& epochs,
    const std::vector<std::array<double, 3>>& targets, std::uint64_t seed) {
  if (epochs.empty()) throw ContractViolation("train_decoder: empty training set");
  if (epochs.size() != targets.size())
    throw ContractViolation("train_decoder: epochs/targets misaligned");
  switch (spec.kind) {
    case DecoderKind::rewnpls:
      return std::make_unique<detail::RewNplsDecoder>(spec.rewnpls, epochs, targets);
    case DecoderKind::mlp:
      return std::make_unique<detail::MlpDecoder>(spec, epochs, targets, seed);
    case DecoderKind::cnn_lstm:
      return std::make_unique<detail::CnnLstmDecoder>(spec, epochs, targets, seed);
  }
  throw ContractViolation("train_decoder: unknown decoder kind");
}

}  // namespace ecoglab
