#include "fsda/geometry.hpp"

#include <cmath>
#include <string>

namespace fsda {

namespace {
constexpr double kDegenerateCross = 1e-12;
}

void CameraIntrinsics::validate(int height, int width) const {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw ConfigError("camera intrinsics require fx > 0 and fy > 0");
  }
  if (!(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height)) {
    throw ConfigError("principal point (" + std::to_string(cx) + ", " + std::to_string(cy) +
                      ") outside " + std::to_string(width) + "x" + std::to_string(height) + " image");
  }
}

DepthMap DepthMap::from_values(Plane<double> values) {
  DepthMap d;
  d.valid = Mask::Zero(values.rows(), values.cols());
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    const double z = values.data()[i];
    if (std::isfinite(z) && z > 0.0) {
      d.valid.data()[i] = 1;
    } else {
      values.data()[i] = 0.0;
    }
  }
  d.values = std::move(values);
  return d;
}

Eigen::Vector3d SurfaceNormalImage::normal(int y, int x) const {
  return Eigen::Vector3d(2.0 * channels.at(0, y, x) - 1.0, 2.0 * channels.at(1, y, x) - 1.0,
                         2.0 * channels.at(2, y, x) - 1.0);
}

PointMap backproject(const DepthMap& depth, const CameraIntrinsics& K) {
  if (!(K.fx > 0.0) || !(K.fy > 0.0)) {
    throw ConfigError("backproject: fx and fy must be positive");
  }
  const int h = depth.height();
  const int w = depth.width();
  if (depth.valid.rows() != h || depth.valid.cols() != w) {
    throw ConfigError("backproject: depth validity mask does not match depth size");
  }
  PointMap out;
  out.points = Tensor<double>(3, h, w);
  out.valid = Mask::Zero(h, w);
  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      const double z = depth.values(v, u);
      if (!depth.valid(v, u) || !(z > 0.0)) continue;
      out.points.at(0, v, u) = (u - K.cx) * z / K.fx;
      out.points.at(1, v, u) = (v - K.cy) * z / K.fy;
      out.points.at(2, v, u) = z;
      out.valid(v, u) = 1;
    }
  }
  return out;
}

SurfaceNormalImage estimate_normals(const PointMap& pm) {
  const int h = pm.points.height;
  const int w = pm.points.width;
  SurfaceNormalImage out;
  out.channels = Tensor<double>(3, h, w);
  out.valid = Mask::Zero(h, w);
  auto point = [&](int y, int x) {
    return Eigen::Vector3d(pm.points.at(0, y, x), pm.points.at(1, y, x), pm.points.at(2, y, x));
  };
  for (int y = 1; y + 1 < h; ++y) {
    for (int x = 1; x + 1 < w; ++x) {
      if (!pm.valid(y, x) || !pm.valid(y, x - 1) || !pm.valid(y, x + 1) || !pm.valid(y - 1, x) ||
          !pm.valid(y + 1, x)) {
        continue;
      }
      const Eigen::Vector3d tu = point(y, x + 1) - point(y, x - 1);
      const Eigen::Vector3d tv = point(y + 1, x) - point(y - 1, x);
      Eigen::Vector3d n = tu.cross(tv);
      const double len = n.norm();
      if (!(len >= kDegenerateCross)) continue;
      n /= len;
      if (n.dot(point(y, x)) > 0.0) n = -n;
      for (int c = 0; c < 3; ++c) out.channels.at(c, y, x) = 0.5 * (n[c] + 1.0);
      out.valid(y, x) = 1;
    }
  }
  return out;
}

SurfaceNormalImage depth_to_normals(const DepthMap& depth, const CameraIntrinsics& K) {
  return estimate_normals(backproject(depth, K));
}

SurfaceNormalImage normals_from_encoded(const Tensor<double>& encoded) {
  if (encoded.channels() != 3) throw ConfigError("normal image must have 3 channels");
  SurfaceNormalImage out;
  out.channels = Tensor<double>(3, encoded.height, encoded.width);
  out.valid = Mask::Zero(encoded.height, encoded.width);
  for (int i = 0; i < encoded.pixels(); ++i) {
    const Eigen::Vector3d c = encoded.data.col(i);
    if (c.isZero(0.0)) continue;
    Eigen::Vector3d n = 2.0 * c - Eigen::Vector3d::Ones();
    const double len = n.norm();
    if (!(len >= kDegenerateCross)) continue;
    n /= len;
    out.channels.data.col(i) = 0.5 * (n + Eigen::Vector3d::Ones());
    out.valid.data()[i] = 1;
  }
  return out;
}

}  // namespace fsda
