#pragma once

#include <optional>
#include <string>

#include "fsda/geometry.hpp"
#include "fsda/tensor.hpp"

namespace fsda {

/// One scene: RGB in [0,1], metric depth, intrinsics, optional road label and normals.
struct Sample {
  std::string id;
  Tensor<float> rgb;  // 3 x H x W
  DepthMap depth;
  CameraIntrinsics intrinsics;
  std::optional<Mask> label;  // 1 = road
  std::optional<SurfaceNormalImage> normals;

  int height() const { return rgb.height; }
  int width() const { return rgb.width; }

  /// Normals as a float network input; computes them from depth when absent.
  Tensor<float> normal_input() const;
};

inline Tensor<float> Sample::normal_input() const {
  if (normals) return normals->channels.cast<float>();
  return depth_to_normals(depth, intrinsics).channels.cast<float>();
}

}  // namespace fsda
