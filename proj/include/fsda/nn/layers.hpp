#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <string>

#include "fsda/nn/params.hpp"

namespace fsda::nn {

/// Output size and leading pad of a "same" convolution: out = ceil(in / stride).
struct SamePadding {
  int out;
  int before;

  static SamePadding of(int in, int kernel, int stride) {
    const int out = (in + stride - 1) / stride;
    const int total = std::max((out - 1) * stride + kernel - in, 0);
    return {out, total / 2};
  }
};

/// 2-D convolution with "same" padding, computed as an im2col GEMM.
template <typename S>
class Conv2d {
 public:
  struct Cache {
    RowMat<S> cols;  // empty for 1x1 stride-1 convolutions (input is reused)
    Tensor<S> input;
  };

  Conv2d() = default;
  Conv2d(ParamStore<S>& store, const std::string& name, int in_channels, int out_channels, int kernel,
         int stride, bool bias, Init init, std::mt19937_64& rng)
      : cin_(in_channels), cout_(out_channels), k_(kernel), stride_(stride) {
    const int fan_in = in_channels * kernel * kernel;
    weight_ = store.add(name + ".weight", init_weights<S>(out_channels, fan_in, fan_in, init, rng));
    if (bias) bias_ = store.add(name + ".bias", Mat<S>::Zero(out_channels, 1));
  }

  int in_channels() const { return cin_; }
  int out_channels() const { return cout_; }
  int weight_index() const { return weight_; }
  int bias_index() const { return bias_; }

  Tensor<S> forward(const ParamStore<S>& p, const Tensor<S>& x, Cache* cache) const {
    if (x.channels() != cin_) {
      throw ConfigError("conv expects " + std::to_string(cin_) + " channels, got " + std::to_string(x.channels()));
    }
    const auto ph = SamePadding::of(x.height, k_, stride_);
    const auto pw = SamePadding::of(x.width, k_, stride_);
    Tensor<S> y;
    y.height = ph.out;
    y.width = pw.out;
    const Mat<S>& w = p.value(weight_);
    if (pointwise()) {
      y.data.noalias() = w * x.data;
      if (cache) cache->input = x;
    } else {
      RowMat<S> cols = im2col(x, ph, pw);
      y.data.noalias() = w * cols;
      if (cache) {
        cache->cols = std::move(cols);
        cache->input.height = x.height;
        cache->input.width = x.width;
      }
    }
    if (bias_ >= 0) y.data.colwise() += p.value(bias_).col(0);
    return y;
  }

  /// Accumulates parameter gradients into `grads` (when non-null) and returns dL/dx
  /// (empty tensor when `need_input_grad` is false).
  Tensor<S> backward(const ParamStore<S>& p, const Cache& cache, const Tensor<S>& dy, Grads<S>* grads,
                     bool need_input_grad = true) const {
    const Mat<S>& w = p.value(weight_);
    if (grads) {
      if (pointwise()) {
        (*grads)[weight_].noalias() += dy.data * cache.input.data.transpose();
      } else {
        (*grads)[weight_].noalias() += dy.data * cache.cols.transpose();
      }
      if (bias_ >= 0) (*grads)[bias_] += dy.data.rowwise().sum();
    }
    if (!need_input_grad) return {};
    const int in_h = cache.input.height;
    const int in_w = cache.input.width;
    if (pointwise()) {
      Tensor<S> dx;
      dx.height = in_h;
      dx.width = in_w;
      dx.data.noalias() = w.transpose() * dy.data;
      return dx;
    }
    RowMat<S> dcols = w.transpose() * dy.data;
    return col2im(dcols, in_h, in_w);
  }

 private:
  bool pointwise() const { return k_ == 1 && stride_ == 1; }

  RowMat<S> im2col(const Tensor<S>& x, const SamePadding& ph, const SamePadding& pw) const {
    const int oh = ph.out, ow = pw.out;
    RowMat<S> cols = RowMat<S>::Zero(static_cast<Eigen::Index>(cin_) * k_ * k_, oh * ow);
    for (int c = 0; c < cin_; ++c) {
      const S* src = x.data.row(c).data();
      for (int ky = 0; ky < k_; ++ky) {
        for (int kx = 0; kx < k_; ++kx) {
          S* dst = cols.row((c * k_ + ky) * k_ + kx).data();
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride_ + ky - ph.before;
            if (iy < 0 || iy >= x.height) continue;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride_ + kx - pw.before;
              if (ix < 0 || ix >= x.width) continue;
              dst[oy * ow + ox] = src[iy * x.width + ix];
            }
          }
        }
      }
    }
    return cols;
  }

  Tensor<S> col2im(const RowMat<S>& dcols, int in_h, int in_w) const {
    const auto ph = SamePadding::of(in_h, k_, stride_);
    const auto pw = SamePadding::of(in_w, k_, stride_);
    const int oh = ph.out, ow = pw.out;
    Tensor<S> dx(cin_, in_h, in_w);
    for (int c = 0; c < cin_; ++c) {
      S* dst = dx.data.row(c).data();
      for (int ky = 0; ky < k_; ++ky) {
        for (int kx = 0; kx < k_; ++kx) {
          const S* src = dcols.row((c * k_ + ky) * k_ + kx).data();
          for (int oy = 0; oy < oh; ++oy) {
            const int iy = oy * stride_ + ky - ph.before;
            if (iy < 0 || iy >= in_h) continue;
            for (int ox = 0; ox < ow; ++ox) {
              const int ix = ox * stride_ + kx - pw.before;
              if (ix < 0 || ix >= in_w) continue;
              dst[iy * in_w + ix] += src[oy * ow + ox];
            }
          }
        }
      }
    }
    return dx;
  }

  int cin_ = 0;
  int cout_ = 0;
  int k_ = 1;
  int stride_ = 1;
  int weight_ = -1;
  int bias_ = -1;
};

/// Group normalization over (channels in group) x H x W of one sample, with a per-channel affine.
template <typename S>
class GroupNorm {
 public:
  struct Cache {
    RowMat<S> xhat;
    Vec<S> inv_std;  // per group
  };

  GroupNorm() = default;
  GroupNorm(ParamStore<S>& store, const std::string& name, int channels, int groups)
      : channels_(channels), groups_(groups) {
    if (groups <= 0 || channels % groups != 0) {
      throw ConfigError("group norm: " + std::to_string(channels) + " channels not divisible into " +
                        std::to_string(groups) + " groups");
    }
    gamma_ = store.add(name + ".gamma", Mat<S>::Ones(channels, 1));
    beta_ = store.add(name + ".beta", Mat<S>::Zero(channels, 1));
  }

  Tensor<S> forward(const ParamStore<S>& p, const Tensor<S>& x, Cache* cache) const {
    const int per = channels_ / groups_;
    const int n = per * x.pixels();
    RowMat<S> xhat(x.data.rows(), x.data.cols());
    Vec<S> inv_std(groups_);
    for (int g = 0; g < groups_; ++g) {
      auto block = x.data.middleRows(g * per, per);
      const S mean = block.sum() / S(n);
      const S var = (block.array() - mean).square().sum() / S(n);
      inv_std[g] = S(1) / std::sqrt(var + S(kEps));
      xhat.middleRows(g * per, per) = (block.array() - mean) * inv_std[g];
    }
    Tensor<S> y;
    y.height = x.height;
    y.width = x.width;
    y.data = (xhat.array().colwise() * p.value(gamma_).col(0).array()).colwise() + p.value(beta_).col(0).array();
    if (cache) {
      cache->xhat = std::move(xhat);
      cache->inv_std = std::move(inv_std);
    }
    return y;
  }

  Tensor<S> backward(const ParamStore<S>& p, const Cache& cache, const Tensor<S>& dy, Grads<S>* grads) const {
    if (grads) {
      (*grads)[gamma_] += (dy.data.array() * cache.xhat.array()).rowwise().sum().matrix();
      (*grads)[beta_] += dy.data.rowwise().sum();
    }
    const int per = channels_ / groups_;
    const S n = S(per * dy.pixels());
    RowMat<S> dxhat = dy.data.array().colwise() * p.value(gamma_).col(0).array();
    Tensor<S> dx;
    dx.height = dy.height;
    dx.width = dy.width;
    dx.data.resize(dy.data.rows(), dy.data.cols());
    for (int g = 0; g < groups_; ++g) {
      auto dxh = dxhat.middleRows(g * per, per).array();
      auto xh = cache.xhat.middleRows(g * per, per).array();
      const S sum_d = dxh.sum();
      const S sum_dx = (dxh * xh).sum();
      dx.data.middleRows(g * per, per) = (cache.inv_std[g] / n) * (n * dxh - sum_d - xh * sum_dx);
    }
    return dx;
  }

 private:
  static constexpr double kEps = 1e-5;
  int channels_ = 0;
  int groups_ = 1;
  int gamma_ = -1;
  int beta_ = -1;
};

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  return Tensor<S>(x.data.cwiseMax(S(0)), x.height, x.width);
}

/// Backward of relu given its forward output y.
template <typename S>
Tensor<S> relu_backward(const Tensor<S>& y, const Tensor<S>& dy) {
  return Tensor<S>((y.data.array() > S(0)).select(dy.data, S(0)), dy.height, dy.width);
}

template <typename S>
S leaky_relu(S x, S slope) {
  return x >= S(0) ? x : slope * x;
}

template <typename S>
Tensor<S> leaky_relu(const Tensor<S>& x, S slope) {
  return Tensor<S>((x.data.array() >= S(0)).select(x.data, slope * x.data), x.height, x.width);
}

/// Backward of leaky relu given its forward input x.
template <typename S>
Tensor<S> leaky_relu_backward(const Tensor<S>& x, const Tensor<S>& dy, S slope) {
  return Tensor<S>((x.data.array() >= S(0)).select(dy.data, slope * dy.data), dy.height, dy.width);
}

template <std::floating_point S>
S sigmoid(S z) {
  return z >= S(0) ? S(1) / (S(1) + std::exp(-z)) : std::exp(z) / (S(1) + std::exp(z));
}

template <typename Derived>
auto sigmoid(const Eigen::ArrayBase<Derived>& z) {
  using S = typename Derived::Scalar;
  return z.unaryExpr([](S v) { return sigmoid(v); });
}

}  // namespace fsda::nn
