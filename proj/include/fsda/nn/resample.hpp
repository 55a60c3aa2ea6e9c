#pragma once

#include <cmath>

#include "fsda/tensor.hpp"

namespace fsda::nn {

/// Separable linear resampling out = R_y * in * R_x^T applied per channel. The adjoint
/// R_y^T * d_out * R_x gives the backward pass.
template <typename S>
struct Resampler {
  Mat<S> rows;  // out_h x in_h
  Mat<S> cols;  // out_w x in_w

  int in_height() const { return static_cast<int>(rows.cols()); }
  int in_width() const { return static_cast<int>(cols.cols()); }
  int out_height() const { return static_cast<int>(rows.rows()); }
  int out_width() const { return static_cast<int>(cols.rows()); }

  Plane<S> apply(const Plane<S>& in) const {
    Mat<S> tmp = rows * in.matrix();
    return (tmp * cols.transpose()).array();
  }

  Plane<S> adjoint(const Plane<S>& dout) const {
    Mat<S> tmp = rows.transpose() * dout.matrix();
    return (tmp * cols).array();
  }

  Tensor<S> apply(const Tensor<S>& in) const {
    Tensor<S> out(in.channels(), out_height(), out_width());
    for (int c = 0; c < in.channels(); ++c) out.set_plane(c, apply(in.plane(c)));
    return out;
  }

  Tensor<S> adjoint(const Tensor<S>& dout) const {
    Tensor<S> din(dout.channels(), in_height(), in_width());
    for (int c = 0; c < dout.channels(); ++c) din.set_plane(c, adjoint(dout.plane(c)));
    return din;
  }
};

/// 1-D bilinear weights with half-pixel centers (align_corners = false).
template <typename S>
Mat<S> bilinear_weights(int out, int in) {
  Mat<S> m = Mat<S>::Zero(out, in);
  const double scale = static_cast<double>(in) / out;
  for (int i = 0; i < out; ++i) {
    double src = (i + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    int i0 = static_cast<int>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const int i1 = i0 + 1 < in ? i0 + 1 : in - 1;
    const double l = src - i0;
    m(i, i0) += static_cast<S>(1.0 - l);
    m(i, i1) += static_cast<S>(l);
  }
  return m;
}

/// 1-D adaptive average pooling weights: output cell i averages [floor(i*in/out), ceil((i+1)*in/out)).
template <typename S>
Mat<S> area_weights(int out, int in) {
  Mat<S> m = Mat<S>::Zero(out, in);
  for (int i = 0; i < out; ++i) {
    const int start = (i * in) / out;
    const int end = ((i + 1) * in + out - 1) / out;
    for (int j = start; j < end; ++j) m(i, j) = static_cast<S>(1.0 / (end - start));
  }
  return m;
}

template <typename S>
Resampler<S> bilinear_resampler(int in_h, int in_w, int out_h, int out_w) {
  return {bilinear_weights<S>(out_h, in_h), bilinear_weights<S>(out_w, in_w)};
}

/// Area-average downsampling; the target must not exceed the source size.
template <typename S>
Resampler<S> area_resampler(int in_h, int in_w, int out_h, int out_w) {
  if (out_h > in_h || out_w > in_w || out_h <= 0 || out_w <= 0) {
    throw ConfigError("area downsampling target " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                      " exceeds source " + std::to_string(in_h) + "x" + std::to_string(in_w));
  }
  return {area_weights<S>(out_h, in_h), area_weights<S>(out_w, in_w)};
}

/// Nearest-neighbor resampling of hard masks (pixel-center sampling).
inline Mask nearest_resize(const Mask& m, int out_h, int out_w) {
  Mask out(out_h, out_w);
  const int in_h = static_cast<int>(m.rows()), in_w = static_cast<int>(m.cols());
  for (int y = 0; y < out_h; ++y) {
    const int sy = std::min(in_h - 1, static_cast<int>(std::floor((y + 0.5) * in_h / out_h)));
    for (int x = 0; x < out_w; ++x) {
      const int sx = std::min(in_w - 1, static_cast<int>(std::floor((x + 0.5) * in_w / out_w)));
      out(y, x) = m(sy, sx);
    }
  }
  return out;
}

}  // namespace fsda::nn
