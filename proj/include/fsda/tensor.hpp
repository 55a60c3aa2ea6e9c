#pragma once

#include <cstdint>
#include <string>

#include <Eigen/Dense>

#include "fsda/errors.hpp"

namespace fsda {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Row-major dynamic matrix; used for tensor storage so each channel plane is contiguous.
template <typename Scalar>
using RowMat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Row-major H x W plane; linear index y * W + x matches Tensor columns.
template <typename Scalar>
using Plane = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Mask = Plane<std::uint8_t>;

/// C x H x W activation stored as a row-major C x (H*W) matrix, column = y * W + x.
template <typename Scalar>
struct Tensor {
  RowMat<Scalar> data;
  int height = 0;
  int width = 0;

  Tensor() = default;
  Tensor(int channels, int h, int w) : data(RowMat<Scalar>::Zero(channels, h * w)), height(h), width(w) {}
  Tensor(RowMat<Scalar> d, int h, int w) : data(std::move(d)), height(h), width(w) {
    if (data.cols() != static_cast<Eigen::Index>(h) * w) {
      throw ConfigError("tensor data does not match " + std::to_string(h) + "x" + std::to_string(w));
    }
  }

  int channels() const { return static_cast<int>(data.rows()); }
  int pixels() const { return height * width; }

  Scalar& at(int c, int y, int x) { return data(c, y * width + x); }
  Scalar at(int c, int y, int x) const { return data(c, y * width + x); }

  /// View of channel c as an H x W plane.
  Plane<Scalar> plane(int c) const {
    return Eigen::Map<const Plane<Scalar>>(data.row(c).data(), height, width);
  }

  void set_plane(int c, const Plane<Scalar>& p) {
    data.row(c) = Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(p.data(), p.size());
  }

  bool same_shape(const Tensor& o) const {
    return channels() == o.channels() && height == o.height && width == o.width;
  }

  bool all_finite() const { return data.allFinite(); }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(data.template cast<Other>(), height, width);
  }
};

/// Flattens an H x W plane into a 1 x (H*W) row.
template <typename Scalar>
Eigen::Matrix<Scalar, 1, Eigen::Dynamic> flat_row(const Plane<Scalar>& p) {
  return Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(p.data(), p.size());
}

template <typename Scalar>
Plane<Scalar> unflat(const Eigen::Ref<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>& row, int h, int w) {
  Plane<Scalar> p(h, w);
  for (int i = 0; i < h * w; ++i) p.data()[i] = row(i);
  return p;
}

}  // namespace fsda
