#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "ecoglab/errors.hpp"
#include "ecoglab/rng.hpp"

namespace ecoglab {

// One named block of trainable scalars with its gradient and optimizer state.
struct Param {
  std::string name;
  std::vector<double> value;
  std::vector<double> grad;
  std::vector<double> m;  // first moment
  std::vector<double> v;  // second moment

  explicit Param(std::string n = {}, std::size_t size = 0)
      : name(std::move(n)), value(size, 0.0), grad(size, 0.0), m(size, 0.0), v(size, 0.0) {}

  std::size_t size() const { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

// Adaptive-moment optimizer with decoupled weight decay: the decay term is
// applied directly to the parameter, outside the moment estimates.
class AdamW {
 public:
  AdamW(double lr = 0.001, double weight_decay = 0.01, double beta1 = 0.9,
        double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<Param*>& params) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (Param* p : params) {
      for (std::size_t i = 0; i < p->size(); ++i) {
        const double g = p->grad[i];
        p->m[i] = beta1_ * p->m[i] + (1.0 - beta1_) * g;
        p->v[i] = beta2_ * p->v[i] + (1.0 - beta2_) * g * g;
        const double mhat = p->m[i] / bc1;
        const double vhat = p->v[i] / bc2;
        p->value[i] -= lr_ * (mhat / (std::sqrt(vhat) + eps_) + wd_ * p->value[i]);
      }
    }
  }

  double learning_rate() const { return lr_; }

 private:
  double lr_, wd_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Layers. Each caches whatever its backward pass needs; backward() consumes
// the output gradient and returns the input gradient, accumulating parameter
// gradients along the way. Buffers are batch-major flat arrays.
// ---------------------------------------------------------------------------

class Dense {
 public:
  Dense(std::string name, std::size_t in, std::size_t out, Rng& rng, double init_scale)
      : weight(name + ".w", in * out), bias(name + ".b", out), in_(in), out_(out) {
    for (double& w : weight.value) w = rng.normal() * init_scale;
  }

  // x: [n x in] -> [n x out]
  std::vector<double> forward(const std::vector<double>& x, std::size_t n) {
    x_ = x;
    n_ = n;
    std::vector<double> y(n * out_);
    for (std::size_t i = 0; i < n; ++i) {
      const double* xi = x.data() + i * in_;
      double* yi = y.data() + i * out_;
      for (std::size_t o = 0; o < out_; ++o) {
        double acc = bias.value[o];
        const double* wrow = weight.value.data() + o * in_;
        for (std::size_t j = 0; j < in_; ++j) acc += wrow[j] * xi[j];
        yi[o] = acc;
      }
    }
    return y;
  }

  std::vector<double> backward(const std::vector<double>& dy) {
    std::vector<double> dx(n_ * in_, 0.0);
    for (std::size_t i = 0; i < n_; ++i) {
      const double* xi = x_.data() + i * in_;
      const double* dyi = dy.data() + i * out_;
      double* dxi = dx.data() + i * in_;
      for (std::size_t o = 0; o < out_; ++o) {
        const double g = dyi[o];
        bias.grad[o] += g;
        double* wgrad = weight.grad.data() + o * in_;
        const double* wrow = weight.value.data() + o * in_;
        for (std::size_t j = 0; j < in_; ++j) {
          wgrad[j] += g * xi[j];
          dxi[j] += g * wrow[j];
        }
      }
    }
    return dx;
  }

  std::size_t in_dim() const { return in_; }
  std::size_t out_dim() const { return out_; }

  Param weight;
  Param bias;

 private:
  std::size_t in_, out_;
  std::vector<double> x_;
  std::size_t n_ = 0;
};

// Batch normalization over the leading (instance) axis: every trailing
// feature index is normalized across the n instances it sees in a batch.
// Works for both the dense case (d features) and the convolutional case by
// passing per-channel views.
class BatchNorm {
 public:
  BatchNorm(std::string name, std::size_t d, double momentum = 0.1, double eps = 1e-5)
      : gamma(name + ".gamma", d),
        beta(name + ".beta", d),
        running_mean(d, 0.0),
        running_var(d, 1.0),
        d_(d),
        momentum_(momentum),
        eps_(eps) {
    std::fill(gamma.value.begin(), gamma.value.end(), 1.0);
  }

  // x: [n x d]. Training mode uses batch statistics and updates the running
  // estimates; eval mode is a fixed affine map from the running statistics.
  std::vector<double> forward(const std::vector<double>& x, std::size_t n, bool train) {
    n_ = n;
    train_ = train;
    x_ = x;
    std::vector<double> y(n * d_);
    if (train) {
      if (n < 2) throw ContractViolation("BatchNorm: training batch must have >= 2 rows");
      mean_.assign(d_, 0.0);
      var_.assign(d_, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d_; ++j) mean_[j] += x[i * d_ + j];
      for (double& m : mean_) m /= static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d_; ++j) {
          const double c = x[i * d_ + j] - mean_[j];
          var_[j] += c * c;
        }
      for (double& v : var_) v /= static_cast<double>(n);
      for (std::size_t j = 0; j < d_; ++j) {
        running_mean[j] = (1.0 - momentum_) * running_mean[j] + momentum_ * mean_[j];
        running_var[j] = (1.0 - momentum_) * running_var[j] + momentum_ * var_[j];
      }
      inv_std_.resize(d_);
      for (std::size_t j = 0; j < d_; ++j) inv_std_[j] = 1.0 / std::sqrt(var_[j] + eps_);
      xhat_.resize(n * d_);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d_; ++j) {
          const double xh = (x[i * d_ + j] - mean_[j]) * inv_std_[j];
          xhat_[i * d_ + j] = xh;
          y[i * d_ + j] = gamma.value[j] * xh + beta.value[j];
        }
    } else {
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d_; ++j) {
          const double inv = 1.0 / std::sqrt(running_var[j] + eps_);
          y[i * d_ + j] = gamma.value[j] * (x[i * d_ + j] - running_mean[j]) * inv +
                          beta.value[j];
        }
    }
    return y;
  }

  std::vector<double> backward(const std::vector<double>& dy) {
    if (!train_) throw StateError("BatchNorm: backward in eval mode requires eval_backward");
    std::vector<double> dx(n_ * d_);
    const double inv_n = 1.0 / static_cast<double>(n_);
    for (std::size_t j = 0; j < d_; ++j) {
      double sum_dy = 0.0, sum_dy_xhat = 0.0;
      for (std::size_t i = 0; i < n_; ++i) {
        const double g = dy[i * d_ + j];
        sum_dy += g;
        sum_dy_xhat += g * xhat_[i * d_ + j];
      }
      gamma.grad[j] += sum_dy_xhat;
      beta.grad[j] += sum_dy;
      const double k1 = gamma.value[j] * inv_std_[j];
      for (std::size_t i = 0; i < n_; ++i) {
        const double g = dy[i * d_ + j];
        dx[i * d_ + j] =
            k1 * (g - inv_n * sum_dy - inv_n * xhat_[i * d_ + j] * sum_dy_xhat);
      }
    }
    return dx;
  }

  // Backward through the eval-mode affine map (used by the gradient checker,
  // where batch statistics must not participate).
  std::vector<double> eval_backward(const std::vector<double>& dy) {
    std::vector<double> dx(n_ * d_);
    for (std::size_t j = 0; j < d_; ++j) {
      const double inv = 1.0 / std::sqrt(running_var[j] + eps_);
      for (std::size_t i = 0; i < n_; ++i) {
        const double g = dy[i * d_ + j];
        gamma.grad[j] += g * (x_[i * d_ + j] - running_mean[j]) * inv;
        beta.grad[j] += g;
        dx[i * d_ + j] = g * gamma.value[j] * inv;
      }
    }
    return dx;
  }

  std::size_t dim() const { return d_; }

  Param gamma;
  Param beta;
  std::vector<double> running_mean;
  std::vector<double> running_var;

 private:
  std::size_t d_;
  double momentum_, eps_;
  std::size_t n_ = 0;
  bool train_ = false;
  std::vector<double> x_, mean_, var_, inv_std_, xhat_;
};

class Relu {
 public:
  std::vector<double> forward(const std::vector<double>& x) {
    mask_.assign(x.size(), 0);
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (x[i] > 0.0) {
        mask_[i] = 1;
        y[i] = x[i];
      }
    }
    return y;
  }

  std::vector<double> backward(const std::vector<double>& dy) const {
    std::vector<double> dx(dy.size());
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = mask_[i] ? dy[i] : 0.0;
    return dx;
  }

 private:
  std::vector<std::uint8_t> mask_;
};

// Inverted dropout: active units are scaled by 1/(1-rate) at train time so
// eval mode is the identity.
class Dropout {
 public:
  explicit Dropout(double rate) : rate_(rate) {
    if (rate < 0.0 || rate >= 1.0) throw ConfigError("Dropout: rate must lie in [0, 1)");
  }

  std::vector<double> forward(const std::vector<double>& x, bool train, Rng& rng) {
    if (!train || rate_ == 0.0) {
      active_ = false;
      return x;
    }
    active_ = true;
    const double keep = 1.0 - rate_;
    mask_.assign(x.size(), 0.0);
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (rng.uniform() < keep) {
        mask_[i] = 1.0 / keep;
        y[i] = x[i] * mask_[i];
      }
    }
    return y;
  }

  std::vector<double> backward(const std::vector<double>& dy) const {
    if (!active_) return dy;
    std::vector<double> dx(dy.size());
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * mask_[i];
    return dx;
  }

 private:
  double rate_;
  bool active_ = false;
  std::vector<double> mask_;
};

// 3x3 convolution over [n x C_in x H x W] instances. Rows are always valid
// (no padding); columns are optionally same-padded. Output is
// [n x C_out x (H-2) x (W or W-2)].
class Conv3x3 {
 public:
  Conv3x3(std::string name, std::size_t c_in, std::size_t c_out, bool pad_cols, Rng& rng)
      : weight(name + ".w", c_out * c_in * 9),
        bias(name + ".b", c_out),
        c_in_(c_in),
        c_out_(c_out),
        pad_cols_(pad_cols) {
    const double scale = std::sqrt(2.0 / static_cast<double>(c_in * 9));
    for (double& w : weight.value) w = rng.normal() * scale;
  }

  std::size_t out_h(std::size_t h) const { return h - 2; }
  std::size_t out_w(std::size_t w) const { return pad_cols_ ? w : w - 2; }

  std::vector<double> forward(const std::vector<double>& x, std::size_t n, std::size_t h,
                              std::size_t w) {
    if (h < 3 || (!pad_cols_ && w < 3))
      throw ContractViolation("Conv3x3: spatial input too small");
    x_ = x;
    n_ = n;
    h_ = h;
    w_ = w;
    const std::size_t oh = out_h(h), ow = out_w(w);
    std::vector<double> y(n * c_out_ * oh * ow, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      const double* xi = x.data() + i * c_in_ * h * w;
      double* yi = y.data() + i * c_out_ * oh * ow;
      for (std::size_t co = 0; co < c_out_; ++co) {
        for (std::size_t r = 0; r < oh; ++r) {
          for (std::size_t c = 0; c < ow; ++c) {
            double acc = bias.value[co];
            const std::ptrdiff_t col0 =
                static_cast<std::ptrdiff_t>(c) - (pad_cols_ ? 1 : 0);
            for (std::size_t ci = 0; ci < c_in_; ++ci) {
              const double* xch = xi + ci * h * w;
              const double* wk = weight.value.data() + (co * c_in_ + ci) * 9;
              for (std::size_t kr = 0; kr < 3; ++kr) {
                const std::size_t rr = r + kr;  // rows valid: r+kr < h
                for (std::size_t kc = 0; kc < 3; ++kc) {
                  const std::ptrdiff_t cc = col0 + static_cast<std::ptrdiff_t>(kc);
                  if (cc < 0 || cc >= static_cast<std::ptrdiff_t>(w)) continue;
                  acc += wk[kr * 3 + kc] * xch[rr * w + static_cast<std::size_t>(cc)];
                }
              }
            }
            yi[(co * oh + r) * ow + c] = acc;
          }
        }
      }
    }
    return y;
  }

  std::vector<double> backward(const std::vector<double>& dy) {
    const std::size_t oh = out_h(h_), ow = out_w(w_);
    std::vector<double> dx(n_ * c_in_ * h_ * w_, 0.0);
    for (std::size_t i = 0; i < n_; ++i) {
      const double* xi = x_.data() + i * c_in_ * h_ * w_;
      const double* dyi = dy.data() + i * c_out_ * oh * ow;
      double* dxi = dx.data() + i * c_in_ * h_ * w_;
      for (std::size_t co = 0; co < c_out_; ++co) {
        for (std::size_t r = 0; r < oh; ++r) {
          for (std::size_t c = 0; c < ow; ++c) {
            const double g = dyi[(co * oh + r) * ow + c];
            if (g == 0.0) continue;
            bias.grad[co] += g;
            const std::ptrdiff_t col0 =
                static_cast<std::ptrdiff_t>(c) - (pad_cols_ ? 1 : 0);
            for (std::size_t ci = 0; ci < c_in_; ++ci) {
              const double* xch = xi + ci * h_ * w_;
              double* dxch = dxi + ci * h_ * w_;
              const double* wk = weight.value.data() + (co * c_in_ + ci) * 9;
              double* wg = weight.grad.data() + (co * c_in_ + ci) * 9;
              for (std::size_t kr = 0; kr < 3; ++kr) {
                const std::size_t rr = r + kr;
                for (std::size_t kc = 0; kc < 3; ++kc) {
                  const std::ptrdiff_t cc = col0 + static_cast<std::ptrdiff_t>(kc);
                  if (cc < 0 || cc >= static_cast<std::ptrdiff_t>(w_)) continue;
                  wg[kr * 3 + kc] += g * xch[rr * w_ + static_cast<std::size_t>(cc)];
                  dxch[rr * w_ + static_cast<std::size_t>(cc)] += g * wk[kr * 3 + kc];
                }
              }
            }
          }
        }
      }
    }
    return dx;
  }

  Param weight;
  Param bias;

 private:
  std::size_t c_in_, c_out_;
  bool pad_cols_;
  std::vector<double> x_;
  std::size_t n_ = 0, h_ = 0, w_ = 0;
};

// LSTM with separate input and recurrent bias vectors:
//   gates = W_x x_t + b_x + W_h h_{t-1} + b_h, gate order (i, f, g, o).
// Processes [n x T x D] -> [n x T x H] with full backpropagation through
// time. Initial state is zero.
class Lstm {
 public:
  Lstm(std::string name, std::size_t in, std::size_t hidden, Rng& rng)
      : w_x(name + ".wx", 4 * hidden * in),
        w_h(name + ".wh", 4 * hidden * hidden),
        b_x(name + ".bx", 4 * hidden),
        b_h(name + ".bh", 4 * hidden),
        in_(in),
        hidden_(hidden) {
    const double sx = 1.0 / std::sqrt(static_cast<double>(in));
    const double sh = 1.0 / std::sqrt(static_cast<double>(hidden));
    for (double& w : w_x.value) w = rng.normal() * sx;
    for (double& w : w_h.value) w = rng.normal() * sh;
    // Forget-gate bias starts at 1 (split across the two bias vectors).
    for (std::size_t j = hidden; j < 2 * hidden; ++j) b_x.value[j] = 1.0;
  }

  std::vector<double> forward(const std::vector<double>& x, std::size_t n, std::size_t steps) {
    x_ = x;
    n_ = n;
    steps_ = steps;
    const std::size_t g4 = 4 * hidden_;
    gates_.assign(n * steps * g4, 0.0);
    cells_.assign(n * steps * hidden_, 0.0);
    hidden_states_.assign(n * steps * hidden_, 0.0);
    std::vector<double> y(n * steps * hidden_);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> h_prev(hidden_, 0.0), c_prev(hidden_, 0.0);
      for (std::size_t t = 0; t < steps; ++t) {
        const double* xt = x.data() + (i * steps + t) * in_;
        double* gate = gates_.data() + (i * steps + t) * g4;
        for (std::size_t j = 0; j < g4; ++j) {
          double acc = b_x.value[j] + b_h.value[j];
          const double* wx = w_x.value.data() + j * in_;
          for (std::size_t k = 0; k < in_; ++k) acc += wx[k] * xt[k];
          const double* wh = w_h.value.data() + j * hidden_;
          for (std::size_t k = 0; k < hidden_; ++k) acc += wh[k] * h_prev[k];
          gate[j] = acc;
        }
        double* ct = cells_.data() + (i * steps + t) * hidden_;
        double* ht = hidden_states_.data() + (i * steps + t) * hidden_;
        for (std::size_t j = 0; j < hidden_; ++j) {
          const double ig = sigmoid(gate[j]);
          const double fg = sigmoid(gate[hidden_ + j]);
          const double gg = std::tanh(gate[2 * hidden_ + j]);
          const double og = sigmoid(gate[3 * hidden_ + j]);
          gate[j] = ig;  // cache activated gates in place
          gate[hidden_ + j] = fg;
          gate[2 * hidden_ + j] = gg;
          gate[3 * hidden_ + j] = og;
          ct[j] = fg * c_prev[j] + ig * gg;
          ht[j] = og * std::tanh(ct[j]);
          y[(i * steps + t) * hidden_ + j] = ht[j];
        }
        h_prev.assign(ht, ht + hidden_);
        c_prev.assign(ct, ct + hidden_);
      }
    }
    return y;
  }

  std::vector<double> backward(const std::vector<double>& dy) {
    const std::size_t g4 = 4 * hidden_;
    std::vector<double> dx(n_ * steps_ * in_, 0.0);
    std::vector<double> dgate(g4);
    for (std::size_t i = 0; i < n_; ++i) {
      std::vector<double> dh_next(hidden_, 0.0), dc_next(hidden_, 0.0);
      for (std::size_t t = steps_; t-- > 0;) {
        const double* gate = gates_.data() + (i * steps_ + t) * g4;
        const double* ct = cells_.data() + (i * steps_ + t) * hidden_;
        const double* c_prev =
            t > 0 ? cells_.data() + (i * steps_ + t - 1) * hidden_ : nullptr;
        const double* h_prev =
            t > 0 ? hidden_states_.data() + (i * steps_ + t - 1) * hidden_ : nullptr;
        const double* xt = x_.data() + (i * steps_ + t) * in_;
        for (std::size_t j = 0; j < hidden_; ++j) {
          const double dh = dy[(i * steps_ + t) * hidden_ + j] + dh_next[j];
          const double ig = gate[j], fg = gate[hidden_ + j], gg = gate[2 * hidden_ + j],
                       og = gate[3 * hidden_ + j];
          const double tc = std::tanh(ct[j]);
          const double dc = dh * og * (1.0 - tc * tc) + dc_next[j];
          const double cp = t > 0 ? c_prev[j] : 0.0;
          dgate[j] = dc * gg * ig * (1.0 - ig);
          dgate[hidden_ + j] = dc * cp * fg * (1.0 - fg);
          dgate[2 * hidden_ + j] = dc * ig * (1.0 - gg * gg);
          dgate[3 * hidden_ + j] = dh * tc * og * (1.0 - og);
          dc_next[j] = dc * fg;
        }
        std::fill(dh_next.begin(), dh_next.end(), 0.0);
        for (std::size_t j = 0; j < g4; ++j) {
          const double g = dgate[j];
          if (g == 0.0) continue;
          b_x.grad[j] += g;
          b_h.grad[j] += g;
          double* wxg = w_x.grad.data() + j * in_;
          const double* wx = w_x.value.data() + j * in_;
          double* dxt = dx.data() + (i * steps_ + t) * in_;
          for (std::size_t k = 0; k < in_; ++k) {
            wxg[k] += g * xt[k];
            dxt[k] += g * wx[k];
          }
          if (t > 0) {
            double* whg = w_h.grad.data() + j * hidden_;
            const double* wh = w_h.value.data() + j * hidden_;
            for (std::size_t k = 0; k < hidden_; ++k) {
              whg[k] += g * h_prev[k];
              dh_next[k] += g * wh[k];
            }
          }
        }
      }
    }
    return dx;
  }

  std::size_t hidden_dim() const { return hidden_; }

  Param w_x, w_h, b_x, b_h;

 private:
  static double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

  std::size_t in_, hidden_;
  std::vector<double> x_, gates_, cells_, hidden_states_;
  std::size_t n_ = 0, steps_ = 0;
};

}  // namespace ecoglab
