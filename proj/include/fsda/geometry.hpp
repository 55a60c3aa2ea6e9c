#pragma once

#include <Eigen/Dense>

#include "fsda/tensor.hpp"

namespace fsda {

/// Pinhole intrinsics in pixels.
struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;

  /// Throws ConfigError unless fx, fy > 0 and the principal point lies in [0,w) x [0,h).
  void validate(int height, int width) const;
};

/// Metric depth in meters. Invalid pixels carry exactly 0.
struct DepthMap {
  Plane<double> values;
  Mask valid;

  int height() const { return static_cast<int>(values.rows()); }
  int width() const { return static_cast<int>(values.cols()); }

  /// Builds a depth map whose validity is (value > 0 && finite); invalid entries are zeroed.
  static DepthMap from_values(Plane<double> values);
};

/// Camera-frame 3-D point per pixel.
struct PointMap {
  Tensor<double> points;  // 3 x H x W
  Mask valid;
};

/// Unit normals encoded as (n + 1) / 2 in [0,1]; invalid pixels encode (0,0,0).
struct SurfaceNormalImage {
  Tensor<double> channels;  // 3 x H x W
  Mask valid;

  int height() const { return channels.height; }
  int width() const { return channels.width; }

  /// Decoded unit normal 2c - 1 at (y, x).
  Eigen::Vector3d normal(int y, int x) const;
};

PointMap backproject(const DepthMap& depth, const CameraIntrinsics& K);

/// Central-difference tangent cross product, oriented toward the camera.
/// The one-pixel border ring and any pixel whose stencil touches invalid depth are invalid.
SurfaceNormalImage estimate_normals(const PointMap& points);

/// backproject + estimate_normals.
SurfaceNormalImage depth_to_normals(const DepthMap& depth, const CameraIntrinsics& K);

/// Re-encode 8-bit quantized normals: pixels that are all-zero are invalid, others are
/// decoded, renormalized to unit length and re-encoded.
SurfaceNormalImage normals_from_encoded(const Tensor<double>& encoded);

}  // namespace fsda
