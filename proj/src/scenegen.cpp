#include "fsda/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <iomanip>

#include <json.hpp>

#include "fsda/dataio.hpp"
#include "fsda/errors.hpp"

namespace fsda {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr double kFar = 1e4;

/// Axis-aligned planar rectangle: coordinate `axis` equals `value`, the other two axes are
/// bounded by [lo_a, hi_a] x [lo_b, hi_b] (in increasing axis order).
struct AxisRect {
  int axis;
  double value;
  double lo_a, hi_a, lo_b, hi_b;
  Region region;
  Eigen::Vector3d color;
  bool shadowable;
};

std::vector<AxisRect> build_scene(const SceneParams& p) {
  const Palette& pal = palette_by_name(p.palette);
  const double g = p.camera_height;          // road plane y (camera frame, y down)
  const double top = g - p.sidewalk_height;  // sidewalk top plane
  const double wd = p.wall_distance;
  const double off = p.road_offset;
  const double hw = p.road_half_width;
  const double sw = p.sidewalk_width;
  const Eigen::Vector3d terrain = terrain_color(p.background.terrain);
  const Eigen::Vector3d backdrop = backdrop_color(p.background.backdrop);

  std::vector<AxisRect> rects;
  // ground level: axis 1 (y); bounds on x then z
  rects.push_back({1, g, off - hw, off + hw, 0.0, wd, Region::Road, pal.road, true});
  rects.push_back({1, g, off + hw + sw, kFar, 0.0, wd, Region::Terrain, terrain, true});
  rects.push_back({1, g, -kFar, off - hw - sw, 0.0, wd, Region::Terrain, terrain, true});
  // sidewalk tops
  rects.push_back({1, top, off + hw, off + hw + sw, 0.0, wd, Region::Sidewalk, pal.sidewalk, true});
  rects.push_back({1, top, off - hw - sw, off - hw, 0.0, wd, Region::Sidewalk, pal.sidewalk, true});
  if (p.sidewalk_height > 0.0) {
    // curb faces: axis 0 (x); bounds on y then z
    for (double x : {off + hw, off - hw, off + hw + sw, off - hw - sw}) {
      rects.push_back({0, x, top, g, 0.0, wd, Region::Curb, pal.curb, true});
    }
  }
  // backdrop: axis 2 (z); bounds on x then y
  rects.push_back({2, wd, -kFar, kFar, g - p.wall_height, g, Region::Backdrop, backdrop, false});

  for (const auto& ob : p.obstacles) {
    const double x0 = ob.x_center - ob.half_width, x1 = ob.x_center + ob.half_width;
    const double z0 = ob.z_center - ob.half_depth, z1 = ob.z_center + ob.half_depth;
    const double y0 = g - ob.height;
    rects.push_back({2, z0, x0, x1, y0, g, Region::Obstacle, ob.color, false});
    rects.push_back({0, x0, y0, g, z0, z1, Region::Obstacle, ob.color * 0.8, false});
    rects.push_back({0, x1, y0, g, z0, z1, Region::Obstacle, ob.color * 0.8, false});
    rects.push_back({1, y0, x0, x1, z0, z1, Region::Obstacle, ob.color * 1.1, false});
  }
  return rects;
}

/// Ray-rectangle hit distance along `dir` from the origin, or +inf.
double intersect(const AxisRect& r, const Eigen::Vector3d& dir) {
  const double d = dir[r.axis];
  if (std::abs(d) < 1e-12) return std::numeric_limits<double>::infinity();
  const double t = r.value / d;
  if (!(t > 1e-9)) return std::numeric_limits<double>::infinity();
  const int a = r.axis == 0 ? 1 : 0;
  const int b = r.axis == 2 ? 1 : 2;
  const double pa = t * dir[a];
  const double pb = t * dir[b];
  if (pa < r.lo_a || pa > r.hi_a || pb < r.lo_b || pb > r.hi_b) return std::numeric_limits<double>::infinity();
  return t;
}

double uniform(std::mt19937_64& rng, const Range& r) {
  if (r.hi <= r.lo) return r.lo;
  return std::uniform_real_distribution<double>(r.lo, r.hi)(rng);
}

template <typename T>
const T& pick(std::mt19937_64& rng, const std::vector<T>& v) {
  return v[std::uniform_int_distribution<std::size_t>(0, v.size() - 1)(rng)];
}

void check_range(const Range& r, const char* name) {
  if (!(r.lo <= r.hi)) throw ConfigError(std::string("domain range '") + name + "' has lo > hi");
}

Range range_from_json(const json& j) {
  if (j.is_number()) return {j.get<double>(), j.get<double>()};
  return {j.at(0).get<double>(), j.at(1).get<double>()};
}

}  // namespace

const Palette& palette_by_name(const std::string& name) {
  // source-style palettes: saturated synthetic colors, distinct road/sidewalk
  // target-style palettes: darker asphalt, gray sidewalks close to the source road color
  static const std::vector<Palette> palettes = {
      {"synthetic-a", {0.50, 0.50, 0.52}, {0.78, 0.56, 0.50}, {0.85, 0.85, 0.80}, {0.55, 0.75, 0.95}, {0.70, 0.15, 0.15}},
      {"synthetic-b", {0.55, 0.54, 0.56}, {0.80, 0.62, 0.42}, {0.90, 0.90, 0.85}, {0.50, 0.70, 0.98}, {0.15, 0.25, 0.70}},
      {"real-a", {0.30, 0.30, 0.33}, {0.50, 0.50, 0.51}, {0.62, 0.62, 0.62}, {0.82, 0.86, 0.90}, {0.20, 0.20, 0.22}},
      {"real-b", {0.26, 0.27, 0.28}, {0.46, 0.46, 0.45}, {0.58, 0.58, 0.56}, {0.78, 0.82, 0.88}, {0.75, 0.75, 0.78}},
  };
  for (const auto& p : palettes) {
    if (p.name == name) return p;
  }
  throw ConfigError("unknown palette '" + name + "'");
}

Eigen::Vector3d terrain_color(const std::string& category) {
  if (category == "grass") return {0.25, 0.58, 0.20};
  if (category == "sand") return {0.80, 0.72, 0.45};
  if (category == "gravel") return {0.48, 0.42, 0.36};
  if (category == "dry-grass") return {0.55, 0.52, 0.28};
  throw ConfigError("unknown terrain category '" + category + "'");
}

Eigen::Vector3d backdrop_color(const std::string& category) {
  if (category == "building") return {0.72, 0.66, 0.55};
  if (category == "hedge") return {0.14, 0.40, 0.16};
  if (category == "concrete") return {0.62, 0.62, 0.64};
  if (category == "brick") return {0.55, 0.30, 0.24};
  throw ConfigError("unknown backdrop category '" + category + "'");
}

CameraIntrinsics SceneParams::intrinsics() const {
  const double f = focal_scale * width;
  return {f, f, 0.5 * width, 0.5 * height};
}

void SceneParams::validate() const {
  if (height < 32 || width < 32) throw ConfigError("scene size must be at least 32x32");
  if (!(road_half_width > 0.0)) throw ConfigError("road half-width must be positive");
  if (!(sidewalk_height >= 0.0)) throw ConfigError("sidewalk height offset must be non-negative");
  if (!(sidewalk_width >= 0.0)) throw ConfigError("sidewalk width must be non-negative");
  if (!(camera_height > sidewalk_height)) throw ConfigError("camera must be above the sidewalk");
  if (!(wall_distance > 0.0)) throw ConfigError("wall distance must be positive");
  if (!(focal_scale > 0.0)) throw ConfigError("focal scale must be positive");
  const CameraIntrinsics K = intrinsics();
  // bottom image row must look below the horizon
  const double v = height - 1 - K.cy;
  const double down = std::cos(pitch) * v / K.fy + std::sin(pitch);
  if (!(down > 0.0)) throw ConfigError("camera pitch leaves no ground visible");
}

RenderedScene render_scene(const SceneParams& p) {
  p.validate();
  const CameraIntrinsics K = p.intrinsics();
  const auto rects = build_scene(p);
  const int h = p.height, w = p.width;
  const double cp = std::cos(p.pitch), sp = std::sin(p.pitch);

  std::mt19937_64 rng(split_seed(p.seed, 0));
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> jitter(-1.0, 1.0);
  // one jitter draw per region kind, in enum order
  std::array<Eigen::Vector3d, 7> region_shift;
  for (auto& s : region_shift) s = Eigen::Vector3d(jitter(rng), jitter(rng), jitter(rng)) * p.color_jitter;

  RenderedScene out;
  Sample& s = out.sample;
  s.rgb = Tensor<float>(3, h, w);
  s.intrinsics = K;
  Plane<double> depth = Plane<double>::Zero(h, w);
  Mask label = Mask::Zero(h, w);
  out.regions = Plane<std::uint8_t>::Zero(h, w);
  const Palette& pal = palette_by_name(p.palette);

  for (int v = 0; v < h; ++v) {
    for (int u = 0; u < w; ++u) {
      const Eigen::Vector3d dc((u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0);
      const Eigen::Vector3d dw(dc.x(), cp * dc.y() + sp * dc.z(), -sp * dc.y() + cp * dc.z());
      double best = std::numeric_limits<double>::infinity();
      const AxisRect* hit = nullptr;
      for (const auto& r : rects) {
        const double t = intersect(r, dw);
        if (t < best) {
          best = t;
          hit = &r;
        }
      }
      Eigen::Vector3d color;
      if (hit) {
        // camera-frame ray has unit z, so the ray parameter is the camera-frame depth
        depth(v, u) = best;
        label(v, u) = hit->region == Region::Road ? 1 : 0;
        out.regions(v, u) = static_cast<std::uint8_t>(hit->region);
        color = hit->color + region_shift[static_cast<int>(hit->region)];
        const double zw = best * dw.z();
        if (p.shadow && hit->shadowable && zw >= p.shadow_z_begin && zw <= p.shadow_z_end) {
          color *= p.shadow_factor;
        }
      } else {
        color = pal.sky + region_shift[0];
      }
      for (int c = 0; c < 3; ++c) {
        const double val = color[c] + p.texture_noise_std * noise(rng);
        s.rgb.at(c, v, u) = static_cast<float>(std::clamp(val, 0.0, 1.0));
      }
    }
  }
  if (p.depth_noise_std > 0.0) {
    std::mt19937_64 drng(split_seed(p.seed, 1));
    for (Eigen::Index i = 0; i < depth.size(); ++i) {
      if (depth.data()[i] > 0.0) depth.data()[i] = std::max(1e-3, depth.data()[i] + p.depth_noise_std * noise(drng));
    }
  }
  s.depth = DepthMap::from_values(std::move(depth));
  s.label = std::move(label);
  return out;
}

Sample generate_scene(const SceneParams& params) { return render_scene(params).sample; }

void DomainConfig::validate() const {
  if (height < 32 || width < 32) throw ConfigError("domain image size must be at least 32x32");
  check_range(camera_height, "camera_height");
  check_range(pitch, "pitch");
  check_range(road_half_width, "road_half_width");
  check_range(road_offset, "road_offset");
  check_range(sidewalk_height, "sidewalk_height");
  check_range(sidewalk_width, "sidewalk_width");
  check_range(wall_distance, "wall_distance");
  check_range(wall_height, "wall_height");
  check_range(texture_noise_std, "texture_noise_std");
  if (palettes.empty() || terrains.empty() || backdrops.empty()) {
    throw ConfigError("domain needs at least one palette, terrain and backdrop");
  }
  for (const auto& p : palettes) palette_by_name(p);
  for (const auto& t : terrains) terrain_color(t);
  for (const auto& b : backdrops) backdrop_color(b);
  for (const auto& [role, n] : counts) {
    split_role_from_string(role);
    if (n < 0) throw ConfigError("negative sample count for " + role);
  }
}

DomainConfig source_domain_preset() {
  DomainConfig c;
  c.name = "source";
  c.palettes = {"synthetic-a", "synthetic-b"};
  c.terrains = {"grass", "sand"};
  c.backdrops = {"building", "hedge"};
  c.counts = {{"source-train", 64}};
  c.seed = 1;
  return c;
}

DomainConfig target_domain_preset() {
  DomainConfig c;
  c.name = "target";
  c.palettes = {"real-a", "real-b"};
  c.terrains = {"gravel", "dry-grass"};
  c.backdrops = {"concrete", "brick"};
  c.texture_noise_std = {0.02, 0.05};
  c.shadow_probability = 0.5;
  c.counts = {{"target-train", 64}, {"target-eval", 32}};
  c.withhold_train_labels = true;
  c.seed = 2;
  return c;
}

DomainConfig load_domain_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string() + ": cannot open file");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  const std::string preset = j.value("preset", std::string("source"));
  DomainConfig c;
  if (preset == "source") {
    c = source_domain_preset();
  } else if (preset == "target") {
    c = target_domain_preset();
  } else {
    throw ConfigError("unknown domain preset '" + preset + "'");
  }
  try {
    for (auto it = j.begin(); it != j.end(); ++it) {
      const std::string& k = it.key();
      const json& v = it.value();
      if (k == "preset") continue;
      else if (k == "name") c.name = v.get<std::string>();
      else if (k == "height") c.height = v.get<int>();
      else if (k == "width") c.width = v.get<int>();
      else if (k == "focal_scale") c.focal_scale = v.get<double>();
      else if (k == "camera_height") c.camera_height = range_from_json(v);
      else if (k == "pitch") c.pitch = range_from_json(v);
      else if (k == "road_half_width") c.road_half_width = range_from_json(v);
      else if (k == "road_offset") c.road_offset = range_from_json(v);
      else if (k == "sidewalk_height") c.sidewalk_height = range_from_json(v);
      else if (k == "sidewalk_width") c.sidewalk_width = range_from_json(v);
      else if (k == "wall_distance") c.wall_distance = range_from_json(v);
      else if (k == "wall_height") c.wall_height = range_from_json(v);
      else if (k == "texture_noise_std") c.texture_noise_std = range_from_json(v);
      else if (k == "palettes") c.palettes = v.get<std::vector<std::string>>();
      else if (k == "terrains") c.terrains = v.get<std::vector<std::string>>();
      else if (k == "backdrops") c.backdrops = v.get<std::vector<std::string>>();
      else if (k == "color_jitter") c.color_jitter = v.get<double>();
      else if (k == "shadow_probability") c.shadow_probability = v.get<double>();
      else if (k == "obstacle_probability") c.obstacle_probability = v.get<double>();
      else if (k == "depth_noise_std") c.depth_noise_std = v.get<double>();
      else if (k == "counts") c.counts = v.get<std::map<std::string, int>>();
      else if (k == "withhold_train_labels") c.withhold_train_labels = v.get<bool>();
      else if (k == "seed") c.seed = v.get<std::uint64_t>();
      else throw ConfigError(path.string() + ": unknown domain key '" + k + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  c.validate();
  return c;
}

json domain_config_to_json(const DomainConfig& c) {
  auto range = [](const Range& r) { return json::array({r.lo, r.hi}); };
  json j;
  j["preset"] = c.name == "target" ? "target" : "source";
  j["name"] = c.name;
  j["height"] = c.height;
  j["width"] = c.width;
  j["focal_scale"] = c.focal_scale;
  j["camera_height"] = range(c.camera_height);
  j["pitch"] = range(c.pitch);
  j["road_half_width"] = range(c.road_half_width);
  j["road_offset"] = range(c.road_offset);
  j["sidewalk_height"] = range(c.sidewalk_height);
  j["sidewalk_width"] = range(c.sidewalk_width);
  j["wall_distance"] = range(c.wall_distance);
  j["wall_height"] = range(c.wall_height);
  j["texture_noise_std"] = range(c.texture_noise_std);
  j["palettes"] = c.palettes;
  j["terrains"] = c.terrains;
  j["backdrops"] = c.backdrops;
  j["color_jitter"] = c.color_jitter;
  j["shadow_probability"] = c.shadow_probability;
  j["obstacle_probability"] = c.obstacle_probability;
  j["depth_noise_std"] = c.depth_noise_std;
  j["counts"] = c.counts;
  j["withhold_train_labels"] = c.withhold_train_labels;
  j["seed"] = c.seed;
  return j;
}

std::uint64_t split_seed(std::uint64_t seed, std::uint64_t stream) {
  // SplitMix64 finalizer over (seed, stream)
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

SceneParams sample_scene_params(const DomainConfig& cfg, std::uint64_t index) {
  std::mt19937_64 rng(split_seed(cfg.seed, index));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  SceneParams p;
  p.height = cfg.height;
  p.width = cfg.width;
  p.focal_scale = cfg.focal_scale;
  p.camera_height = uniform(rng, cfg.camera_height);
  p.pitch = uniform(rng, cfg.pitch);
  p.road_half_width = uniform(rng, cfg.road_half_width);
  p.road_offset = uniform(rng, cfg.road_offset);
  p.sidewalk_height = uniform(rng, cfg.sidewalk_height);
  p.sidewalk_width = uniform(rng, cfg.sidewalk_width);
  p.wall_distance = uniform(rng, cfg.wall_distance);
  p.wall_height = uniform(rng, cfg.wall_height);
  p.palette = pick(rng, cfg.palettes);
  p.background = {pick(rng, cfg.terrains), pick(rng, cfg.backdrops)};
  p.color_jitter = cfg.color_jitter;
  p.texture_noise_std = uniform(rng, cfg.texture_noise_std);
  p.shadow = unit(rng) < cfg.shadow_probability;
  p.shadow_z_begin = 5.0 + 10.0 * unit(rng);
  p.shadow_z_end = p.shadow_z_begin + 2.0 + 6.0 * unit(rng);
  p.depth_noise_std = cfg.depth_noise_std;
  if (unit(rng) < cfg.obstacle_probability) {
    Obstacle ob;
    ob.x_center = p.road_offset + (unit(rng) - 0.5) * p.road_half_width;
    ob.z_center = 8.0 + 15.0 * unit(rng);
    ob.color = Eigen::Vector3d(unit(rng), unit(rng), unit(rng));
    p.obstacles.push_back(ob);
  }
  p.seed = split_seed(cfg.seed ^ 0xA5A5A5A5ULL, index);
  return p;
}

std::vector<Sample> generate_split(const DomainConfig& cfg, const std::string& role, int count,
                                   std::uint64_t first_index) {
  std::vector<Sample> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    const std::uint64_t index = first_index + i;
    Sample s = generate_scene(sample_scene_params(cfg, index));
    std::ostringstream id;
    id << role << '_' << std::setw(6) << std::setfill('0') << i;
    s.id = id.str();
    out.push_back(std::move(s));
  }
  return out;
}

fs::path generate_domain(const DomainConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  const bool existed = fs::exists(out_dir);
  try {
    fs::create_directories(out_dir);
    const DatasetLayout layout{out_dir};
    Manifest manifest;
    manifest.seed = cfg.seed;
    manifest.domain = cfg.name;
    // roles draw from disjoint index ranges so splits never share a scene
    std::uint64_t next_index = 0;
    for (const auto& [role_name, n] : cfg.counts) {
      const SplitRole role = split_role_from_string(role_name);
      for (Sample& s : generate_split(cfg, role_name, n, next_index)) {
        write_sample(layout, s, role, cfg.withhold_train_labels, false);
        manifest.samples.push_back({s.id, role});
      }
      next_index += static_cast<std::uint64_t>(n);
    }
    SceneParams probe;
    probe.height = cfg.height;
    probe.width = cfg.width;
    probe.focal_scale = cfg.focal_scale;
    write_intrinsics(layout.intrinsics(), probe.intrinsics());
    write_manifest(layout, manifest);
    return layout.manifest();
  } catch (...) {
    std::error_code ec;
    if (!existed) {
      fs::remove_all(out_dir, ec);
    } else {
      for (const char* sub : {"rgb", "depth", "label", "heldout_label", "sn"}) fs::remove_all(out_dir / sub, ec);
      fs::remove(out_dir / "manifest.json", ec);
      fs::remove(out_dir / "intrinsics.json", ec);
    }
    throw;
  }
}

}  // namespace fsda
