#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "ecoglab/errors.hpp"
#include "ecoglab/features.hpp"
#include "ecoglab/framing.hpp"
#include "ecoglab/layers.hpp"
#include "ecoglab/rng.hpp"

namespace ecoglab {

// ---------------------------------------------------------------------------
// Cosine-similarity loss shared by both decoders. Predictions are [n x 3]
// (steps = 1) or [n x steps x 3]; targets are one 3-vector per sample,
// repeated across time steps. Degenerate predictions (norm below 1e-12)
// contribute zero similarity and zero gradient.
// ---------------------------------------------------------------------------

inline double cosine_sim3(const double* p, const double* y) {
  const double np = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
  const double ny = std::sqrt(y[0] * y[0] + y[1] * y[1] + y[2] * y[2]);
  if (np < 1e-12 || ny < 1e-12) return 0.0;
  return (p[0] * y[0] + p[1] * y[1] + p[2] * y[2]) / (np * ny);
}

struct CosineLossResult {
  double loss = 0.0;
  std::vector<double> grad;  // same shape as predictions
};

inline CosineLossResult cosine_loss_with_grad(const std::vector<double>& pred,
                                              const std::vector<double>& targets,
                                              std::size_t n, std::size_t steps) {
  if (pred.size() != n * steps * 3 || targets.size() != n * 3)
    throw ContractViolation("cosine_loss: prediction/target shapes misaligned");
  for (double v : pred)
    if (!std::isfinite(v)) throw DataError("cosine_loss: non-finite prediction");
  for (double v : targets)
    if (!std::isfinite(v)) throw DataError("cosine_loss: non-finite target");
  CosineLossResult out;
  out.grad.assign(pred.size(), 0.0);
  const double weight = 1.0 / static_cast<double>(n * steps);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* y = targets.data() + i * 3;
    const double ny = std::sqrt(y[0] * y[0] + y[1] * y[1] + y[2] * y[2]);
    for (std::size_t t = 0; t < steps; ++t) {
      const double* p = pred.data() + (i * steps + t) * 3;
      const double np = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
      if (np < 1e-12 || ny < 1e-12) continue;
      const double dot = p[0] * y[0] + p[1] * y[1] + p[2] * y[2];
      total += dot / (np * ny);
      // d/dp of (p.y)/(|p||y|) = y/(|p||y|) - (p.y) p / (|p|^3 |y|)
      double* g = out.grad.data() + (i * steps + t) * 3;
      const double k = dot / (np * np * np * ny);
      for (int d = 0; d < 3; ++d) g[d] = -weight * (y[d] / (np * ny) - k * p[d]);
    }
  }
  out.loss = -total * weight;
  return out;
}

inline double cosine_loss(const std::vector<double>& pred, const std::vector<double>& targets,
                          std::size_t n, std::size_t steps) {
  return cosine_loss_with_grad(pred, targets, n, steps).loss;
}

// ---------------------------------------------------------------------------
// MLP: dense(h) -> batchnorm -> relu -> dropout, twice, then dense(3).
// ---------------------------------------------------------------------------

class MlpNet {
 public:
  MlpNet(std::size_t n_features, std::size_t hidden, double dropout_rate, std::uint64_t seed)
      : n_features_(n_features),
        hidden_(hidden),
        rng_(seed),
        d1_("d1", n_features, hidden, rng_, std::sqrt(2.0 / static_cast<double>(n_features))),
        bn1_("bn1", hidden),
        drop1_(dropout_rate),
        d2_("d2", hidden, hidden, rng_, std::sqrt(2.0 / static_cast<double>(hidden))),
        bn2_("bn2", hidden),
        drop2_(dropout_rate),
        d3_("d3", hidden, 3, rng_, std::sqrt(1.0 / static_cast<double>(hidden))) {
    if (n_features == 0 || hidden == 0) throw ConfigError("MlpNet: zero-sized layer");
  }

  std::size_t input_dim() const { return n_features_; }
  static constexpr std::size_t time_steps() { return 1; }

  std::vector<Param*> params() {
    return {&d1_.weight, &d1_.bias, &bn1_.gamma, &bn1_.beta, &d2_.weight,
            &d2_.bias,   &bn2_.gamma, &bn2_.beta, &d3_.weight, &d3_.bias};
  }

  // Non-parameter state a frozen copy of the net depends on (batch-norm
  // running statistics); checkpoints persist these alongside the parameters.
  std::vector<std::vector<double>*> state_buffers() {
    return {&bn1_.running_mean, &bn1_.running_var, &bn2_.running_mean, &bn2_.running_var};
  }

  std::size_t parameter_count() {
    std::size_t total = 0;
    for (const Param* p : params()) total += p->size();
    return total;
  }

  // x: [n x n_features] -> [n x 3]
  std::vector<double> forward(const std::vector<double>& x, std::size_t n, bool train) {
    if (x.size() != n * n_features_)
      throw ContractViolation("MlpNet: batch shape mismatch");
    train_ = train;
    auto a = d1_.forward(x, n);
    a = bn1_.forward(a, n, train);
    a = relu1_.forward(a);
    a = drop1_.forward(a, train, rng_);
    a = d2_.forward(a, n);
    a = bn2_.forward(a, n, train);
    a = relu2_.forward(a);
    a = drop2_.forward(a, train, rng_);
    return d3_.forward(a, n);
  }

  void backward(const std::vector<double>& dpred) {
    auto g = d3_.backward(dpred);
    g = drop2_.backward(g);
    g = relu2_.backward(g);
    g = train_ ? bn2_.backward(g) : bn2_.eval_backward(g);
    g = d2_.backward(g);
    g = drop1_.backward(g);
    g = relu1_.backward(g);
    g = train_ ? bn1_.backward(g) : bn1_.eval_backward(g);
    d1_.backward(g);
  }

  // Inference: eval-mode forward, one 3-vector per sample.
  std::vector<double> predict(const std::vector<double>& x, std::size_t n) {
    return forward(x, n, false);
  }

  std::string architecture_id() const {
    std::ostringstream os;
    os << "mlp/" << n_features_ << "x" << hidden_;
    return os.str();
  }

  // Full state (trainable parameters followed by batchnorm running stats) for
  // snapshots and checkpoints.
  std::vector<double> flat_state() {
    std::vector<double> s;
    for (const Param* p : params()) s.insert(s.end(), p->value.begin(), p->value.end());
    for (const BatchNorm* bn : {&bn1_, &bn2_}) {
      s.insert(s.end(), bn->running_mean.begin(), bn->running_mean.end());
      s.insert(s.end(), bn->running_var.begin(), bn->running_var.end());
    }
    return s;
  }

  void set_flat_state(const std::vector<double>& s) {
    std::size_t pos = 0;
    for (Param* p : params()) {
      if (pos + p->size() > s.size()) throw ContractViolation("MlpNet: state vector too short");
      std::copy(s.begin() + pos, s.begin() + pos + p->size(), p->value.begin());
      pos += p->size();
    }
    for (BatchNorm* bn : {&bn1_, &bn2_}) {
      for (auto* vec : {&bn->running_mean, &bn->running_var}) {
        if (pos + vec->size() > s.size())
          throw ContractViolation("MlpNet: state vector too short");
        std::copy(s.begin() + pos, s.begin() + pos + vec->size(), vec->begin());
        pos += vec->size();
      }
    }
    if (pos != s.size()) throw ContractViolation("MlpNet: state vector too long");
  }

 private:
  std::size_t n_features_, hidden_;
  Rng rng_;
  Dense d1_;
  BatchNorm bn1_;
  Relu relu1_;
  Dropout drop1_;
  Dense d2_;
  BatchNorm bn2_;
  Relu relu2_;
  Dropout drop2_;
  Dense d3_;
  bool train_ = false;
};

// ---------------------------------------------------------------------------
// CNN+LSTM. Per sample the input is a [bands x rows x 2*cols x bins] grid
// (two implant blocks side by side). Each implant's [bands x rows x cols]
// slice at each time bin runs through a shared convolutional stack
//   conv(3x3, valid rows / same cols) -> relu -> batchnorm -> dropout ->
//   conv(3x3, valid) -> relu -> dropout,
// the two implants' maps are flattened and concatenated per time bin, and the
// sequence feeds a two-layer LSTM whose second layer's hidden state is the
// per-step 3-vector output. Loss averages over all time steps; inference
// takes the last step.
// ---------------------------------------------------------------------------

class CnnLstmNet {
 public:
  CnnLstmNet(std::size_t bands, std::size_t rows, std::size_t cols, std::size_t bins,
             std::size_t conv1_out, std::size_t conv2_out, std::size_t lstm_hidden,
             double dropout_rate, std::uint64_t seed)
      : bands_(bands),
        rows_(rows),
        cols_(cols),
        bins_(bins),
        rng_(seed),
        conv1_("conv1", bands, conv1_out, /*pad_cols=*/true, rng_),
        bn1_("bn1", conv1_out),
        drop1_(dropout_rate),
        conv2_("conv2", conv1_out, conv2_out, /*pad_cols=*/false, rng_),
        drop2_(dropout_rate),
        lstm1_("lstm1", 0, 0, rng_),  // replaced below once dims are known
        lstm2_("lstm2", 0, 0, rng_) {
    if (rows < 5 || cols < 3)
      throw ConfigError("CnnLstmNet: implant grid must be at least 5x3 for two valid-row convolutions");
    oh1_ = rows - 2;
    ow1_ = cols;  // same-padded columns
    oh2_ = oh1_ - 2;
    ow2_ = ow1_ - 2;
    c1_ = conv1_out;
    c2_ = conv2_out;
    feat_per_step_ = 2 * c2_ * oh2_ * ow2_;
    lstm1_ = Lstm("lstm1", feat_per_step_, lstm_hidden, rng_);
    lstm2_ = Lstm("lstm2", lstm_hidden, 3, rng_);
  }

  std::size_t input_dim() const { return bands_ * rows_ * 2 * cols_ * bins_; }
  std::size_t time_steps() const { return bins_; }
  std::size_t conv1_out_h() const { return oh1_; }
  std::size_t conv1_out_w() const { return ow1_; }
  std::size_t conv2_out_h() const { return oh2_; }
  std::size_t conv2_out_w() const { return ow2_; }

  std::vector<Param*> params() {
    return {&conv1_.weight, &conv1_.bias, &bn1_.gamma, &bn1_.beta,
            &conv2_.weight, &conv2_.bias, &lstm1_.w_x, &lstm1_.w_h,
            &lstm1_.b_x,    &lstm1_.b_h,  &lstm2_.w_x, &lstm2_.w_h,
            &lstm2_.b_x,    &lstm2_.b_h};
  }

  // Non-parameter state a frozen copy of the net depends on (batch-norm
  // running statistics); checkpoints persist these alongside the parameters.
  std::vector<std::vector<double>*> state_buffers() {
    return {&bn1_.running_mean, &bn1_.running_var};
  }

  std::size_t parameter_count() {
    std::size_t total = 0;
    for (const Param* p : params()) total += p->size();
    return total;
  }

  // x: [n x bands x rows x 2*cols x bins] -> [n x bins x 3]
  std::vector<double> forward(const std::vector<double>& x, std::size_t n, bool train) {
    if (x.size() != n * input_dim())
      throw ContractViolation("CnnLstmNet: batch shape mismatch");
    train_ = train;
    n_ = n;
    const std::size_t inst = n * 2 * bins_;  // (sample, implant, time) instances
    const std::size_t cols2 = 2 * cols_;

    // Scatter the grid into convolution instances [inst x bands x rows x cols].
    std::vector<double> conv_in(inst * bands_ * rows_ * cols_);
    for (std::size_t i = 0; i < n; ++i) {
      const double* xi = x.data() + i * input_dim();
      for (std::size_t im = 0; im < 2; ++im)
        for (std::size_t t = 0; t < bins_; ++t) {
          double* dst = conv_in.data() +
                        (((i * 2 + im) * bins_ + t) * bands_) * rows_ * cols_;
          for (std::size_t b = 0; b < bands_; ++b)
            for (std::size_t r = 0; r < rows_; ++r)
              for (std::size_t c = 0; c < cols_; ++c)
                dst[(b * rows_ + r) * cols_ + c] =
                    xi[((b * rows_ + r) * cols2 + im * cols_ + c) * bins_ + t];
        }
    }

    auto a = conv1_.forward(conv_in, inst, rows_, cols_);
    a = relu1_.forward(a);
    a = channels_last(a, inst, c1_, oh1_ * ow1_);
    a = bn1_.forward(a, inst * oh1_ * ow1_, train);
    a = channels_first(a, inst, c1_, oh1_ * ow1_);
    a = drop1_.forward(a, train, rng_);
    a = conv2_.forward(a, inst, oh1_, ow1_);
    a = relu2_.forward(a);
    a = drop2_.forward(a, train, rng_);

    // Regroup [inst x c2 x oh2 x ow2] into sequences [n x bins x feat].
    const std::size_t block = c2_ * oh2_ * ow2_;
    std::vector<double> seq(n * bins_ * feat_per_step_);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t t = 0; t < bins_; ++t)
        for (std::size_t im = 0; im < 2; ++im) {
          const double* src = a.data() + ((i * 2 + im) * bins_ + t) * block;
          double* dst = seq.data() + (i * bins_ + t) * feat_per_step_ + im * block;
          std::copy(src, src + block, dst);
        }

    auto h = lstm1_.forward(seq, n, bins_);
    return lstm2_.forward(h, n, bins_);  // hidden dim 3 is the output head
  }

  void backward(const std::vector<double>& dpred) {
    auto g = lstm2_.backward(dpred);
    g = lstm1_.backward(g);

    // Undo the sequence regrouping back to conv instances.
    const std::size_t inst = n_ * 2 * bins_;
    const std::size_t block = c2_ * oh2_ * ow2_;
    std::vector<double> ga(inst * block);
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t t = 0; t < bins_; ++t)
        for (std::size_t im = 0; im < 2; ++im) {
          const double* src = g.data() + (i * bins_ + t) * feat_per_step_ + im * block;
          double* dst = ga.data() + ((i * 2 + im) * bins_ + t) * block;
          std::copy(src, src + block, dst);
        }

    ga = drop2_.backward(ga);
    ga = relu2_.backward(ga);
    ga = conv2_.backward(ga);
    ga = drop1_.backward(ga);
    ga = channels_last(ga, inst, c1_, oh1_ * ow1_);
    ga = train_ ? bn1_.backward(ga) : bn1_.eval_backward(ga);
    ga = channels_first(ga, inst, c1_, oh1_ * ow1_);
    ga = relu1_.backward(ga);
    conv1_.backward(ga);  // input gradient unused
  }

  // Inference: last time step of the eval-mode forward pass, [n x 3].
  std::vector<double> predict(const std::vector<double>& x, std::size_t n) {
    auto full = forward(x, n, false);
    std::vector<double> out(n * 3);
    for (std::size_t i = 0; i < n; ++i)
      for (int d = 0; d < 3; ++d) out[i * 3 + d] = full[(i * bins_ + bins_ - 1) * 3 + d];
    return out;
  }

  std::string architecture_id() const {
    std::ostringstream os;
    os << "cnnlstm/" << bands_ << "x" << rows_ << "x" << cols_ << "x" << bins_ << "/" << c1_
       << "-" << c2_ << "-" << lstm1_.hidden_dim();
    return os.str();
  }

  std::vector<double> flat_state() {
    std::vector<double> s;
    for (const Param* p : params()) s.insert(s.end(), p->value.begin(), p->value.end());
    s.insert(s.end(), bn1_.running_mean.begin(), bn1_.running_mean.end());
    s.insert(s.end(), bn1_.running_var.begin(), bn1_.running_var.end());
    return s;
  }

  void set_flat_state(const std::vector<double>& s) {
    std::size_t pos = 0;
    for (Param* p : params()) {
      if (pos + p->size() > s.size())
        throw ContractViolation("CnnLstmNet: state vector too short");
      std::copy(s.begin() + pos, s.begin() + pos + p->size(), p->value.begin());
      pos += p->size();
    }
    for (auto* vec : {&bn1_.running_mean, &bn1_.running_var}) {
      if (pos + vec->size() > s.size())
        throw ContractViolation("CnnLstmNet: state vector too short");
      std::copy(s.begin() + pos, s.begin() + pos + vec->size(), vec->begin());
      pos += vec->size();
    }
    if (pos != s.size()) throw ContractViolation("CnnLstmNet: state vector too long");
  }

 private:
  // [n x C x S] <-> [n*S x C] so BatchNorm sees one row per spatial position.
  static std::vector<double> channels_last(const std::vector<double>& x, std::size_t n,
                                           std::size_t c, std::size_t s) {
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t j = 0; j < s; ++j)
          y[(i * s + j) * c + ch] = x[(i * c + ch) * s + j];
    return y;
  }

  static std::vector<double> channels_first(const std::vector<double>& x, std::size_t n,
                                            std::size_t c, std::size_t s) {
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t j = 0; j < s; ++j)
          y[(i * c + ch) * s + j] = x[(i * s + j) * c + ch];
    return y;
  }

  std::size_t bands_, rows_, cols_, bins_;
  Rng rng_;
  Conv3x3 conv1_;
  Relu relu1_;
  BatchNorm bn1_;
  Dropout drop1_;
  Conv3x3 conv2_;
  Relu relu2_;
  Dropout drop2_;
  Lstm lstm1_;
  Lstm lstm2_;
  std::size_t oh1_ = 0, ow1_ = 0, oh2_ = 0, ow2_ = 0, c1_ = 0, c2_ = 0;
  std::size_t feat_per_step_ = 0;
  bool train_ = false;
  std::size_t n_ = 0;
};

inline MlpNet make_default_mlp(std::uint64_t seed, std::size_t n_features = 9600,
                               std::size_t hidden = 50, double dropout = 0.5) {
  return MlpNet(n_features, hidden, dropout, seed);
}

inline CnnLstmNet make_default_cnn_lstm(std::uint64_t seed, std::size_t bands = 15,
                                        std::size_t rows = 8, std::size_t cols = 4,
                                        std::size_t bins = 10, double dropout = 0.5) {
  return CnnLstmNet(bands, rows, cols, bins, 32, 64, 50, dropout, seed);
}

// ---------------------------------------------------------------------------
// Batch assembly from feature epochs.
// ---------------------------------------------------------------------------

inline std::vector<double> assemble_flat_batch(const std::vector<const FeatureEpoch*>& epochs,
                                               const Normalization& norm) {
  if (epochs.empty()) throw ContractViolation("assemble_flat_batch: empty batch");
  const std::size_t d = epochs.front()->values.size();
  std::vector<double> out(epochs.size() * d);
  for (std::size_t i = 0; i < epochs.size(); ++i) {
    if (epochs[i]->values.size() != d)
      throw ContractViolation("assemble_flat_batch: inconsistent epoch shapes");
    std::vector<double> row(epochs[i]->values.storage().begin(),
                            epochs[i]->values.storage().end());
    norm.apply(row);
    std::copy(row.begin(), row.end(), out.begin() + i * d);
  }
  return out;
}

inline std::vector<double> assemble_grid_batch(const std::vector<const FeatureEpoch*>& epochs,
                                               const Normalization& norm,
                                               const GridLayout& layout) {
  if (epochs.empty()) throw ContractViolation("assemble_grid_batch: empty batch");
  std::vector<double> out;
  for (const FeatureEpoch* ep : epochs) {
    FeatureEpoch scaled = *ep;
    std::vector<double> row(scaled.values.storage().begin(), scaled.values.storage().end());
    norm.apply(row);
    std::copy(row.begin(), row.end(), scaled.values.storage().begin());
    GridTensor grid = to_grid(scaled, layout);
    out.insert(out.end(), grid.data.begin(), grid.data.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training loop: adaptive moments with decoupled weight decay, chronological
// last-fraction validation split, early stopping with best-epoch restoration.
// ---------------------------------------------------------------------------

struct TrainConfig {
  double learning_rate = 0.001;
  double weight_decay = 0.01;
  std::size_t batch_size = 200;
  std::size_t max_epochs = 100;
  std::size_t patience = 10;
  double validation_fraction = 0.1;
  std::uint64_t seed = 1;

  void validate() const {
    if (learning_rate < 0.0) throw ConfigError("TrainConfig: negative learning rate");
    if (batch_size == 0) throw ConfigError("TrainConfig: batch size must be positive");
    if (max_epochs == 0) throw ConfigError("TrainConfig: max_epochs must be positive");
    if (validation_fraction <= 0.0 || validation_fraction >= 1.0)
      throw ConfigError("TrainConfig: validation fraction must lie in (0, 1)");
  }
};

struct EpochStats {
  std::size_t epoch = 0;
  double train_cs = 0.0;
  double val_cs = 0.0;
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  std::size_t best_epoch = 0;
  double best_val_cs = 0.0;
};

namespace detail {

// Mean inference-time CS of `net` over samples [begin, end), batched.
template <class Net>
double evaluate_split(Net& net, const std::vector<double>& x, const std::vector<double>& y,
                      std::size_t begin, std::size_t end, std::size_t batch_size) {
  const std::size_t d = net.input_dim();
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t start = begin; start < end; start += batch_size) {
    const std::size_t stop = std::min(end, start + batch_size);
    const std::size_t bn = stop - start;
    std::vector<double> xb(x.begin() + start * d, x.begin() + stop * d);
    auto preds = net.predict(xb, bn);
    for (std::size_t i = 0; i < bn; ++i) {
      total += cosine_sim3(preds.data() + i * 3, y.data() + (start + i) * 3);
      ++count;
    }
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

}  // namespace detail

// x: [n x net.input_dim()] in chronological order; y: [n x 3].
template <class Net>
TrainHistory train(Net& net, const std::vector<double>& x, const std::vector<double>& y,
                   std::size_t n, const TrainConfig& config) {
  config.validate();
  if (x.size() != n * net.input_dim() || y.size() != n * 3)
    throw ContractViolation("train: data shapes misaligned");
  const std::size_t n_val =
      static_cast<std::size_t>(std::llround(static_cast<double>(n) * config.validation_fraction));
  if (n_val == 0 || n_val >= n)
    throw ConfigError("train: validation split is empty or swallows the training data");
  const std::size_t n_train = n - n_val;

  const std::size_t d = net.input_dim();
  const std::size_t steps = net.time_steps();
  AdamW opt(config.learning_rate, config.weight_decay);
  Rng shuffle_rng(derive_seed(config.seed, seed_tag("train-shuffle")));
  std::vector<std::size_t> order(n_train);
  std::iota(order.begin(), order.end(), 0);

  TrainHistory history;
  std::vector<double> best_state = net.flat_state();
  double best_val = -std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    double train_cs_sum = 0.0;
    std::size_t train_cs_count = 0;
    for (std::size_t start = 0; start < n_train; start += config.batch_size) {
      const std::size_t stop = std::min(n_train, start + config.batch_size);
      const std::size_t bn = stop - start;
      // Train-mode batchnorm needs at least two rows; drop a trailing
      // singleton batch rather than feed it degenerate statistics.
      if (bn < 2) continue;
      std::vector<double> xb(bn * d), yb(bn * 3);
      for (std::size_t i = 0; i < bn; ++i) {
        const std::size_t src = order[start + i];
        std::copy(x.begin() + src * d, x.begin() + (src + 1) * d, xb.begin() + i * d);
        std::copy(y.begin() + src * 3, y.begin() + (src + 1) * 3, yb.begin() + i * 3);
      }
      auto preds = net.forward(xb, bn, /*train=*/true);
      auto loss = cosine_loss_with_grad(preds, yb, bn, steps);
      for (Param* p : net.params()) p->zero_grad();
      net.backward(loss.grad);
      auto params = net.params();
      opt.step(params);
      // Track train-mode CS on the last time step, mirroring inference.
      for (std::size_t i = 0; i < bn; ++i) {
        train_cs_sum +=
            cosine_sim3(preds.data() + (i * steps + steps - 1) * 3, yb.data() + i * 3);
        ++train_cs_count;
      }
    }
    const double val_cs = detail::evaluate_split(net, x, y, n_train, n, config.batch_size);
    EpochStats stats;
    stats.epoch = epoch;
    stats.train_cs = train_cs_count ? train_cs_sum / static_cast<double>(train_cs_count) : 0.0;
    stats.val_cs = val_cs;
    history.epochs.push_back(stats);
    if (val_cs > best_val) {
      best_val = val_cs;
      best_epoch = epoch;
      best_state = net.flat_state();
    } else if (epoch - best_epoch >= config.patience) {
      break;
    }
  }

  net.set_flat_state(best_state);
  history.best_epoch = best_epoch;
  history.best_val_cs = best_val;
  return history;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient verification. Runs the net in eval mode (fixed
// batchnorm statistics, no dropout) and compares the analytic gradient of the
// cosine loss against central differences on every trainable scalar.
// ---------------------------------------------------------------------------

template <class Net>
double gradient_check(Net& net, const std::vector<double>& x, const std::vector<double>& y,
                      std::size_t n, double step = 1e-5) {
  const std::size_t steps = net.time_steps();
  if (net.parameter_count() > 2000)
    throw ContractViolation("gradient_check: reduce the net below 2000 parameters");

  auto preds = net.forward(x, n, /*train=*/false);
  auto loss = cosine_loss_with_grad(preds, y, n, steps);
  for (Param* p : net.params()) p->zero_grad();
  net.backward(loss.grad);

  double max_rel = 0.0;
  for (Param* p : net.params()) {
    for (std::size_t i = 0; i < p->size(); ++i) {
      const double saved = p->value[i];
      p->value[i] = saved + step;
      const double lp = cosine_loss(net.forward(x, n, false), y, n, steps);
      p->value[i] = saved - step;
      const double lm = cosine_loss(net.forward(x, n, false), y, n, steps);
      p->value[i] = saved;
      const double numeric = (lp - lm) / (2.0 * step);
      const double analytic = p->grad[i];
      const double rel =
          std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace ecoglab
