#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "amaut/rng.hpp"
#include "amaut/tensor.hpp"

namespace amaut {

enum class Mode { kTrain, kEval };

template <typename T>
struct Param {
  std::string name;
  Tensor<T>* value;
  Tensor<T>* grad;
};

template <typename T>
using ParamList = std::vector<Param<T>>;

namespace init {

// Uniform(+-1/sqrt(fan_in)) for weight matrices and conv kernels.
template <typename T>
void fan_in_uniform(Tensor<T>& w, std::size_t fan_in, RngStream& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : w.vec()) v = static_cast<T>(rng.uniform(-bound, bound));
}

template <typename T>
void normal(Tensor<T>& w, double stddev, RngStream& rng) {
  for (auto& v : w.vec()) v = static_cast<T>(stddev * rng.normal());
}

}  // namespace init

// ---------------------------------------------------------------------------
// Stateless primitives: forward plus an explicit backward taking the cached
// forward operands.

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y = x;
  for (auto& v : y.vec()) v = v > T(0) ? v : T(0);
  return y;
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& dy) {
  Tensor<T> dx = dy;
  for (std::size_t i = 0; i < x.numel(); ++i)
    if (x[i] <= T(0)) dx[i] = T(0);
  return dx;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  Tensor<T> y = x;
  for (auto& v : y.vec()) {
    const double xv = static_cast<double>(v);
    v = static_cast<T>(0.5 * xv * (1.0 + std::erf(xv / M_SQRT2)));
  }
  return y;
}

template <typename T>
Tensor<T> gelu_backward(const Tensor<T>& x, const Tensor<T>& dy) {
  Tensor<T> dx = dy;
  const double inv_sqrt_2pi = 0.3989422804014326779;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double xv = static_cast<double>(x[i]);
    const double cdf = 0.5 * (1.0 + std::erf(xv / M_SQRT2));
    const double pdf = inv_sqrt_2pi * std::exp(-0.5 * xv * xv);
    dx[i] = static_cast<T>(static_cast<double>(dy[i]) * (cdf + xv * pdf));
  }
  return dx;
}

// Softmax over the last axis.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  Tensor<T> y = x;
  const std::size_t c = x.shape().back();
  const std::size_t rows = x.numel() / c;
  for (std::size_t r = 0; r < rows; ++r) {
    T* row = y.data() + r * c;
    T m = row[0];
    for (std::size_t i = 1; i < c; ++i) m = std::max(m, row[i]);
    T sum = T(0);
    for (std::size_t i = 0; i < c; ++i) {
      row[i] = std::exp(row[i] - m);
      sum += row[i];
    }
    for (std::size_t i = 0; i < c; ++i) row[i] /= sum;
  }
  return y;
}

template <typename T>
Tensor<T> softmax_backward(const Tensor<T>& y, const Tensor<T>& dy) {
  Tensor<T> dx = dy;
  const std::size_t c = y.shape().back();
  const std::size_t rows = y.numel() / c;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* yr = y.data() + r * c;
    const T* dyr = dy.data() + r * c;
    T dot = T(0);
    for (std::size_t i = 0; i < c; ++i) dot += yr[i] * dyr[i];
    T* dxr = dx.data() + r * c;
    for (std::size_t i = 0; i < c; ++i) dxr[i] = yr[i] * (dyr[i] - dot);
  }
  return dx;
}

// Mean over axis 1 of a (B, S, D) tensor -> (B, D).
template <typename T>
Tensor<T> mean_pool(const Tensor<T>& x) {
  const std::size_t b = x.extent(0), s = x.extent(1), d = x.extent(2);
  Tensor<T> y({b, d});
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < s; ++j)
      for (std::size_t k = 0; k < d; ++k) y.at(i, k) += x.at(i, j, k);
  const T inv = T(1) / static_cast<T>(s);
  for (auto& v : y.vec()) v *= inv;
  return y;
}

template <typename T>
Tensor<T> mean_pool_backward(const std::vector<std::size_t>& x_shape, const Tensor<T>& dy) {
  const std::size_t b = x_shape[0], s = x_shape[1], d = x_shape[2];
  Tensor<T> dx({b, s, d});
  const T inv = T(1) / static_cast<T>(s);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < s; ++j)
      for (std::size_t k = 0; k < d; ++k) dx.at(i, j, k) = dy.at(i, k) * inv;
  return dx;
}

// (B, C, L) <-> (B, L, C)
template <typename T>
Tensor<T> transpose12(const Tensor<T>& x) {
  const std::size_t b = x.extent(0), c = x.extent(1), l = x.extent(2);
  Tensor<T> y({b, l, c});
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < c; ++j)
      for (std::size_t k = 0; k < l; ++k) y.at(i, k, j) = x.at(i, j, k);
  return y;
}

// ---------------------------------------------------------------------------
// Parameterised layers. forward() caches what backward() needs; backward()
// accumulates parameter gradients and returns the input gradient.

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, RngStream& rng, std::string name = "linear")
      : in_(in), out_(out), name_(std::move(name)),
        w_({out, in}), b_({out}), dw_({out, in}), db_({out}) {
    init::fan_in_uniform(w_, in, rng);
    init::fan_in_uniform(b_, in, rng);
  }

  // x: (..., in) -> (..., out)
  Tensor<T> forward(const Tensor<T>& x) {
    if (x.shape().back() != in_)
      throw ShapeError(name_ + ": input " + x.shape_str() + " incompatible with in=" +
                       std::to_string(in_));
    x_ = x;
    auto shape = x.shape();
    shape.back() = out_;
    Tensor<T> y(shape);
    const std::size_t rows = x.numel() / in_;
    for (std::size_t r = 0; r < rows; ++r) {
      const T* xr = x.data() + r * in_;
      T* yr = y.data() + r * out_;
      for (std::size_t o = 0; o < out_; ++o) {
        const T* wr = w_.data() + o * in_;
        T acc = b_[o];
        for (std::size_t i = 0; i < in_; ++i) acc += wr[i] * xr[i];
        yr[o] = acc;
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> dx(x_.shape());
    const std::size_t rows = x_.numel() / in_;
    for (std::size_t r = 0; r < rows; ++r) {
      const T* xr = x_.data() + r * in_;
      const T* dyr = dy.data() + r * out_;
      T* dxr = dx.data() + r * in_;
      for (std::size_t o = 0; o < out_; ++o) {
        const T g = dyr[o];
        db_[o] += g;
        T* dwr = dw_.data() + o * in_;
        const T* wr = w_.data() + o * in_;
        for (std::size_t i = 0; i < in_; ++i) {
          dwr[i] += g * xr[i];
          dxr[i] += g * wr[i];
        }
      }
    }
    return dx;
  }

  ParamList<T> params() {
    return {{name_ + ".w", &w_, &dw_}, {name_ + ".b", &b_, &db_}};
  }

  std::size_t in() const { return in_; }
  std::size_t out() const { return out_; }

 private:
  std::size_t in_ = 0, out_ = 0;
  std::string name_;
  Tensor<T> w_, b_, dw_, db_, x_;
};

template <typename T>
class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride,
         std::size_t pad, RngStream& rng, std::string name = "conv")
      : in_ch_(in_ch), out_ch_(out_ch), k_(kernel), stride_(stride), pad_(pad),
        name_(std::move(name)),
        w_({out_ch, in_ch, kernel}), b_({out_ch}),
        dw_({out_ch, in_ch, kernel}), db_({out_ch}) {
    init::fan_in_uniform(w_, in_ch * kernel, rng);
    init::fan_in_uniform(b_, in_ch * kernel, rng);
  }

  static std::size_t out_length(std::size_t l, std::size_t kernel, std::size_t stride,
                                std::size_t pad) {
    const std::size_t padded = l + 2 * pad;
    if (padded < kernel) return 0;
    return (padded - kernel) / stride + 1;
  }

  // x: (B, Cin, L) -> (B, Cout, Lout)
  Tensor<T> forward(const Tensor<T>& x) {
    if (x.ndim() != 3 || x.extent(1) != in_ch_)
      throw ShapeError(name_ + ": input " + x.shape_str() + " incompatible with Cin=" +
                       std::to_string(in_ch_));
    x_ = x;
    const std::size_t batch = x.extent(0), l = x.extent(2);
    const std::size_t lout = out_length(l, k_, stride_, pad_);
    if (lout == 0)
      throw ShapeError(name_ + ": input length " + std::to_string(l) +
                       " shorter than kernel " + std::to_string(k_));
    Tensor<T> y({batch, out_ch_, lout});
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t o = 0; o < out_ch_; ++o)
        for (std::size_t t = 0; t < lout; ++t) {
          T acc = b_[o];
          const std::ptrdiff_t start =
              static_cast<std::ptrdiff_t>(t * stride_) - static_cast<std::ptrdiff_t>(pad_);
          for (std::size_t ci = 0; ci < in_ch_; ++ci) {
            const T* xr = x.data() + (b * in_ch_ + ci) * l;
            const T* wr = w_.data() + (o * in_ch_ + ci) * k_;
            for (std::size_t j = 0; j < k_; ++j) {
              const std::ptrdiff_t p = start + static_cast<std::ptrdiff_t>(j);
              if (p >= 0 && p < static_cast<std::ptrdiff_t>(l)) acc += wr[j] * xr[p];
            }
          }
          y.at(b, o, t) = acc;
        }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    const std::size_t batch = x_.extent(0), l = x_.extent(2), lout = dy.extent(2);
    Tensor<T> dx(x_.shape());
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t o = 0; o < out_ch_; ++o)
        for (std::size_t t = 0; t < lout; ++t) {
          const T g = dy.at(b, o, t);
          db_[o] += g;
          const std::ptrdiff_t start =
              static_cast<std::ptrdiff_t>(t * stride_) - static_cast<std::ptrdiff_t>(pad_);
          for (std::size_t ci = 0; ci < in_ch_; ++ci) {
            const T* xr = x_.data() + (b * in_ch_ + ci) * l;
            T* dxr = dx.data() + (b * in_ch_ + ci) * l;
            const T* wr = w_.data() + (o * in_ch_ + ci) * k_;
            T* dwr = dw_.data() + (o * in_ch_ + ci) * k_;
            for (std::size_t j = 0; j < k_; ++j) {
              const std::ptrdiff_t p = start + static_cast<std::ptrdiff_t>(j);
              if (p >= 0 && p < static_cast<std::ptrdiff_t>(l)) {
                dwr[j] += g * xr[p];
                dxr[p] += g * wr[j];
              }
            }
          }
        }
    return dx;
  }

  ParamList<T> params() {
    return {{name_ + ".w", &w_, &dw_}, {name_ + ".b", &b_, &db_}};
  }

  std::size_t kernel() const { return k_; }
  std::size_t stride() const { return stride_; }
  std::size_t pad() const { return pad_; }
  std::size_t in_channels() const { return in_ch_; }
  std::size_t out_channels() const { return out_ch_; }

 private:
  std::size_t in_ch_ = 0, out_ch_ = 0, k_ = 0, stride_ = 1, pad_ = 0;
  std::string name_;
  Tensor<T> w_, b_, dw_, db_, x_;
};

template <typename T>
class MaxPool1d {
 public:
  MaxPool1d() = default;
  MaxPool1d(std::size_t kernel, std::size_t stride) : k_(kernel), stride_(stride) {}

  Tensor<T> forward(const Tensor<T>& x) {
    const std::size_t batch = x.extent(0), c = x.extent(1), l = x.extent(2);
    if (l < k_) throw ShapeError("maxpool: length " + std::to_string(l) + " < kernel");
    const std::size_t lout = (l - k_) / stride_ + 1;
    x_shape_ = x.shape();
    argmax_.assign(batch * c * lout, 0);
    Tensor<T> y({batch, c, lout});
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t ci = 0; ci < c; ++ci) {
        const T* xr = x.data() + (b * c + ci) * l;
        for (std::size_t t = 0; t < lout; ++t) {
          std::size_t best = t * stride_;
          for (std::size_t j = 1; j < k_; ++j)
            if (xr[t * stride_ + j] > xr[best]) best = t * stride_ + j;
          y.at(b, ci, t) = xr[best];
          argmax_[(b * c + ci) * lout + t] = best;
        }
      }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    const std::size_t batch = x_shape_[0], c = x_shape_[1], l = x_shape_[2];
    const std::size_t lout = dy.extent(2);
    Tensor<T> dx(x_shape_);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t ci = 0; ci < c; ++ci)
        for (std::size_t t = 0; t < lout; ++t)
          dx.data()[(b * c + ci) * l + argmax_[(b * c + ci) * lout + t]] += dy.at(b, ci, t);
    return dx;
  }

  static std::size_t out_length(std::size_t l, std::size_t kernel, std::size_t stride) {
    return l < kernel ? 0 : (l - kernel) / stride + 1;
  }

 private:
  std::size_t k_ = 2, stride_ = 2;
  std::vector<std::size_t> x_shape_;
  std::vector<std::size_t> argmax_;
};

// Batch normalisation over channels; accepts (B, C, L) or (B, C).
// Train mode uses batch statistics and updates the running averages with
// momentum 0.1; eval mode reads the running averages only.
template <typename T>
class BatchNorm1d {
 public:
  BatchNorm1d() = default;
  explicit BatchNorm1d(std::size_t channels, std::string name = "bn")
      : c_(channels), name_(std::move(name)),
        gamma_(Tensor<T>::full({channels}, T(1))), beta_({channels}),
        dgamma_({channels}), dbeta_({channels}),
        running_mean_({channels}), running_var_(Tensor<T>::full({channels}, T(1))) {}

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    const bool has_l = x.ndim() == 3;
    if ((has_l && x.extent(1) != c_) || (!has_l && x.shape().back() != c_))
      throw ShapeError(name_ + ": input " + x.shape_str() + " incompatible with C=" +
                       std::to_string(c_));
    x_ = x;
    mode_ = mode;
    const std::size_t batch = x.extent(0);
    const std::size_t l = has_l ? x.extent(2) : 1;
    const std::size_t n = batch * l;
    mean_ = Tensor<T>({c_});
    var_ = Tensor<T>({c_});
    if (mode == Mode::kTrain) {
      for (std::size_t ci = 0; ci < c_; ++ci) {
        double s = 0;
        for (std::size_t b = 0; b < batch; ++b) {
          const T* xr = x.data() + (b * c_ + ci) * l;
          for (std::size_t t = 0; t < l; ++t) s += xr[t];
        }
        const double m = s / n;
        double v = 0;
        for (std::size_t b = 0; b < batch; ++b) {
          const T* xr = x.data() + (b * c_ + ci) * l;
          for (std::size_t t = 0; t < l; ++t) v += (xr[t] - m) * (xr[t] - m);
        }
        mean_[ci] = static_cast<T>(m);
        var_[ci] = static_cast<T>(v / n);
        running_mean_[ci] = static_cast<T>((1 - kMomentum) * running_mean_[ci] + kMomentum * m);
        running_var_[ci] = static_cast<T>((1 - kMomentum) * running_var_[ci] + kMomentum * v / n);
      }
    } else {
      mean_ = running_mean_;
      var_ = running_var_;
    }
    Tensor<T> y(x.shape());
    inv_std_ = Tensor<T>({c_});
    for (std::size_t ci = 0; ci < c_; ++ci)
      inv_std_[ci] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(var_[ci]) + kEps));
    xhat_ = Tensor<T>(x.shape());
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t ci = 0; ci < c_; ++ci) {
        const T* xr = x.data() + (b * c_ + ci) * l;
        T* hr = xhat_.data() + (b * c_ + ci) * l;
        T* yr = y.data() + (b * c_ + ci) * l;
        for (std::size_t t = 0; t < l; ++t) {
          hr[t] = (xr[t] - mean_[ci]) * inv_std_[ci];
          yr[t] = gamma_[ci] * hr[t] + beta_[ci];
        }
      }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    const bool has_l = x_.ndim() == 3;
    const std::size_t batch = x_.extent(0);
    const std::size_t l = has_l ? x_.extent(2) : 1;
    const std::size_t n = batch * l;
    Tensor<T> dx(x_.shape());
    for (std::size_t ci = 0; ci < c_; ++ci) {
      double sum_dy = 0, sum_dy_xhat = 0;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* dyr = dy.data() + (b * c_ + ci) * l;
        const T* hr = xhat_.data() + (b * c_ + ci) * l;
        for (std::size_t t = 0; t < l; ++t) {
          sum_dy += dyr[t];
          sum_dy_xhat += dyr[t] * hr[t];
        }
      }
      dgamma_[ci] += static_cast<T>(sum_dy_xhat);
      dbeta_[ci] += static_cast<T>(sum_dy);
      const double g = gamma_[ci], is = inv_std_[ci];
      for (std::size_t b = 0; b < batch; ++b) {
        const T* dyr = dy.data() + (b * c_ + ci) * l;
        const T* hr = xhat_.data() + (b * c_ + ci) * l;
        T* dxr = dx.data() + (b * c_ + ci) * l;
        for (std::size_t t = 0; t < l; ++t) {
          if (mode_ == Mode::kTrain) {
            dxr[t] = static_cast<T>(
                g * is * (dyr[t] - sum_dy / n - hr[t] * sum_dy_xhat / n));
          } else {
            dxr[t] = static_cast<T>(g * is * dyr[t]);
          }
        }
      }
    }
    return dx;
  }

  ParamList<T> params() {
    return {{name_ + ".gamma", &gamma_, &dgamma_}, {name_ + ".beta", &beta_, &dbeta_}};
  }

  Tensor<T>& running_mean() { return running_mean_; }
  Tensor<T>& running_var() { return running_var_; }
  const std::string& name() const { return name_; }

  static constexpr double kMomentum = 0.1;
  static constexpr double kEps = 1e-5;

 private:
  std::size_t c_ = 0;
  std::string name_;
  Tensor<T> gamma_, beta_, dgamma_, dbeta_;
  Tensor<T> running_mean_, running_var_;
  Tensor<T> x_, xhat_, mean_, var_, inv_std_;
  Mode mode_ = Mode::kEval;
};

template <typename T>
class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(std::size_t dim, std::string name = "ln")
      : d_(dim), name_(std::move(name)),
        gamma_(Tensor<T>::full({dim}, T(1))), beta_({dim}),
        dgamma_({dim}), dbeta_({dim}) {}

  // Normalises the last axis.
  Tensor<T> forward(const Tensor<T>& x) {
    if (x.shape().back() != d_)
      throw ShapeError(name_ + ": input " + x.shape_str() + " incompatible with D=" +
                       std::to_string(d_));
    x_ = x;
    const std::size_t rows = x.numel() / d_;
    xhat_ = Tensor<T>(x.shape());
    inv_std_.assign(rows, T(0));
    Tensor<T> y(x.shape());
    for (std::size_t r = 0; r < rows; ++r) {
      const T* xr = x.data() + r * d_;
      double m = 0;
      for (std::size_t i = 0; i < d_; ++i) m += xr[i];
      m /= d_;
      double v = 0;
      for (std::size_t i = 0; i < d_; ++i) v += (xr[i] - m) * (xr[i] - m);
      v /= d_;
      const T is = static_cast<T>(1.0 / std::sqrt(v + kEps));
      inv_std_[r] = is;
      T* hr = xhat_.data() + r * d_;
      T* yr = y.data() + r * d_;
      for (std::size_t i = 0; i < d_; ++i) {
        hr[i] = static_cast<T>((xr[i] - m) * is);
        yr[i] = gamma_[i] * hr[i] + beta_[i];
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    const std::size_t rows = x_.numel() / d_;
    Tensor<T> dx(x_.shape());
    for (std::size_t r = 0; r < rows; ++r) {
      const T* dyr = dy.data() + r * d_;
      const T* hr = xhat_.data() + r * d_;
      double sum_g = 0, sum_gh = 0;
      for (std::size_t i = 0; i < d_; ++i) {
        const double g = dyr[i] * gamma_[i];
        sum_g += g;
        sum_gh += g * hr[i];
        dgamma_[i] += dyr[i] * hr[i];
        dbeta_[i] += dyr[i];
      }
      T* dxr = dx.data() + r * d_;
      for (std::size_t i = 0; i < d_; ++i) {
        const double g = dyr[i] * gamma_[i];
        dxr[i] = static_cast<T>(inv_std_[r] * (g - sum_g / d_ - hr[i] * sum_gh / d_));
      }
    }
    return dx;
  }

  ParamList<T> params() {
    return {{name_ + ".gamma", &gamma_, &dgamma_}, {name_ + ".beta", &beta_, &dbeta_}};
  }

  static constexpr double kEps = 1e-5;

 private:
  std::size_t d_ = 0;
  std::string name_;
  Tensor<T> gamma_, beta_, dgamma_, dbeta_, x_, xhat_;
  std::vector<T> inv_std_;
};

// Inverted dropout: surviving activations scaled by 1/(1-p). Identity in
// eval mode and at rate 0.
template <typename T>
class Dropout {
 public:
  Dropout() = default;
  explicit Dropout(double rate) : rate_(rate) {}

  Tensor<T> forward(const Tensor<T>& x, Mode mode, RngStream& rng) {
    if (mode == Mode::kEval || rate_ == 0.0) {
      mask_.clear();
      return x;
    }
    mask_.assign(x.numel(), T(0));
    const T scale = static_cast<T>(1.0 / (1.0 - rate_));
    Tensor<T> y = x;
    for (std::size_t i = 0; i < x.numel(); ++i) {
      if (rng.uniform() >= rate_) {
        mask_[i] = scale;
        y[i] *= scale;
      } else {
        y[i] = T(0);
      }
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    if (mask_.empty()) return dy;
    Tensor<T> dx = dy;
    for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] *= mask_[i];
    return dx;
  }

  double rate() const { return rate_; }

 private:
  double rate_ = 0.0;
  std::vector<T> mask_;
};

// Full (unmasked) multi-head self-attention on (B, S, D).
template <typename T>
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t dim, std::size_t heads, RngStream& rng,
                     std::string name = "attn")
      : d_(dim), h_(heads), name_(name),
        wq_(dim, dim, rng, name + ".q"), wk_(dim, dim, rng, name + ".k"),
        wv_(dim, dim, rng, name + ".v"), wo_(dim, dim, rng, name + ".o") {
    if (dim % heads != 0)
      throw std::invalid_argument(name + ": dim not divisible by head count");
  }

  Tensor<T> forward(const Tensor<T>& x) {
    const std::size_t b = x.extent(0), s = x.extent(1);
    q_ = wq_.forward(x);
    k_ = wk_.forward(x);
    v_ = wv_.forward(x);
    const std::size_t dh = d_ / h_;
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    attn_ = Tensor<T>({b, h_, s, s});
    for (std::size_t bi = 0; bi < b; ++bi)
      for (std::size_t hi = 0; hi < h_; ++hi)
        for (std::size_t i = 0; i < s; ++i) {
          const T* qi = q_.data() + (bi * s + i) * d_ + hi * dh;
          for (std::size_t j = 0; j < s; ++j) {
            const T* kj = k_.data() + (bi * s + j) * d_ + hi * dh;
            T acc = T(0);
            for (std::size_t c = 0; c < dh; ++c) acc += qi[c] * kj[c];
            attn_.data()[((bi * h_ + hi) * s + i) * s + j] = acc * scale;
          }
        }
    attn_ = softmax(attn_);
    Tensor<T> ctx({b, s, d_});
    for (std::size_t bi = 0; bi < b; ++bi)
      for (std::size_t hi = 0; hi < h_; ++hi)
        for (std::size_t i = 0; i < s; ++i) {
          T* out = ctx.data() + (bi * s + i) * d_ + hi * dh;
          const T* ar = attn_.data() + ((bi * h_ + hi) * s + i) * s;
          for (std::size_t j = 0; j < s; ++j) {
            const T* vj = v_.data() + (bi * s + j) * d_ + hi * dh;
            const T a = ar[j];
            for (std::size_t c = 0; c < dh; ++c) out[c] += a * vj[c];
          }
        }
    ctx_ = ctx;
    return wo_.forward(ctx);
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    const std::size_t b = q_.extent(0), s = q_.extent(1);
    const std::size_t dh = d_ / h_;
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    Tensor<T> dctx = wo_.backward(dy);
    Tensor<T> dattn({b, h_, s, s});
    Tensor<T> dv({b, s, d_});
    for (std::size_t bi = 0; bi < b; ++bi)
      for (std::size_t hi = 0; hi < h_; ++hi)
        for (std::size_t i = 0; i < s; ++i) {
          const T* dctx_i = dctx.data() + (bi * s + i) * d_ + hi * dh;
          const T* ar = attn_.data() + ((bi * h_ + hi) * s + i) * s;
          T* dar = dattn.data() + ((bi * h_ + hi) * s + i) * s;
          for (std::size_t j = 0; j < s; ++j) {
            const T* vj = v_.data() + (bi * s + j) * d_ + hi * dh;
            T* dvj = dv.data() + (bi * s + j) * d_ + hi * dh;
            T acc = T(0);
            for (std::size_t c = 0; c < dh; ++c) {
              acc += dctx_i[c] * vj[c];
              dvj[c] += ar[j] * dctx_i[c];
            }
            dar[j] = acc;
          }
        }
    Tensor<T> dscores = softmax_backward(attn_, dattn);
    Tensor<T> dq({b, s, d_});
    Tensor<T> dk({b, s, d_});
    for (std::size_t bi = 0; bi < b; ++bi)
      for (std::size_t hi = 0; hi < h_; ++hi)
        for (std::size_t i = 0; i < s; ++i) {
          const T* dsr = dscores.data() + ((bi * h_ + hi) * s + i) * s;
          const T* qi = q_.data() + (bi * s + i) * d_ + hi * dh;
          T* dqi = dq.data() + (bi * s + i) * d_ + hi * dh;
          for (std::size_t j = 0; j < s; ++j) {
            const T g = dsr[j] * scale;
            const T* kj = k_.data() + (bi * s + j) * d_ + hi * dh;
            T* dkj = dk.data() + (bi * s + j) * d_ + hi * dh;
            for (std::size_t c = 0; c < dh; ++c) {
              dqi[c] += g * kj[c];
              dkj[c] += g * qi[c];
            }
          }
        }
    Tensor<T> dx = wq_.backward(dq);
    Tensor<T> dxk = wk_.backward(dk);
    Tensor<T> dxv = wv_.backward(dv);
    for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] += dxk[i] + dxv[i];
    return dx;
  }

  // Attention matrix of the last forward pass, (B, H, S, S).
  const Tensor<T>& attention() const { return attn_; }

  ParamList<T> params() {
    ParamList<T> out;
    for (auto* l : {&wq_, &wk_, &wv_, &wo_})
      for (auto& p : l->params()) out.push_back(p);
    return out;
  }

 private:
  std::size_t d_ = 0, h_ = 1;
  std::string name_;
  Linear<T> wq_, wk_, wv_, wo_;
  Tensor<T> q_, k_, v_, attn_, ctx_;
};

}  // namespace amaut
