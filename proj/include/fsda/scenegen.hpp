#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include <Eigen/Dense>

#include "fsda/sample.hpp"

namespace fsda {

/// Region tags produced by the ray caster.
enum class Region : std::uint8_t { Sky = 0, Road, Sidewalk, Curb, Terrain, Backdrop, Obstacle };

struct Palette {
  std::string name;
  Eigen::Vector3d road;
  Eigen::Vector3d sidewalk;
  Eigen::Vector3d curb;
  Eigen::Vector3d sky;
  Eigen::Vector3d obstacle;
};

/// Background categories: ground-level terrain beyond the sidewalks and the vertical backdrop.
struct BackgroundCategory {
  std::string terrain;
  std::string backdrop;
};

const Palette& palette_by_name(const std::string& name);
Eigen::Vector3d terrain_color(const std::string& category);
Eigen::Vector3d backdrop_color(const std::string& category);

struct Obstacle {
  double x_center = 0.0;
  double z_center = 10.0;
  double half_width = 0.8;
  double half_depth = 2.0;
  double height = 1.5;
  Eigen::Vector3d color{0.6, 0.1, 0.1};
};

struct SceneParams {
  int height = 64;
  int width = 64;
  double focal_scale = 0.9;      // fx = fy = focal_scale * width
  double camera_height = 1.5;    // m above the road plane
  double pitch = 0.05;           // rad, positive looks down
  double road_half_width = 3.5;  // m
  double road_offset = 0.0;      // lateral road-center position in m
  double sidewalk_height = 0.15; // m above the road plane
  double sidewalk_width = 2.5;   // m
  double wall_distance = 40.0;   // m along the optical axis (pitch 0)
  double wall_height = 6.0;      // m above the road plane; above it is sky
  std::string palette = "synthetic-a";
  BackgroundCategory background{"grass", "building"};
  double color_jitter = 0.0;       // per-region uniform jitter of the base color
  double texture_noise_std = 0.02; // per-pixel Gaussian noise
  bool shadow = false;             // multiplicative luminance band across the ground
  double shadow_z_begin = 8.0;
  double shadow_z_end = 12.0;
  double shadow_factor = 0.45;
  double depth_noise_std = 0.0;    // m, additive Gaussian on valid depth
  std::vector<Obstacle> obstacles;
  std::uint64_t seed = 0;

  CameraIntrinsics intrinsics() const;
  void validate() const;
};

/// A generated scene plus its per-pixel region map.
struct RenderedScene {
  Sample sample;
  Plane<std::uint8_t> regions;
};

/// Ray-casts the scene; depth is the camera-frame Z of the nearest hit, label = road hits.
RenderedScene render_scene(const SceneParams& params);
Sample generate_scene(const SceneParams& params);

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct DomainConfig {
  std::string name = "source";
  int height = 64;
  int width = 64;
  double focal_scale = 0.9;
  Range camera_height{1.4, 1.8};
  Range pitch{0.03, 0.10};
  Range road_half_width{2.5, 4.5};
  Range road_offset{-1.5, 1.5};
  Range sidewalk_height{0.12, 0.25};
  Range sidewalk_width{1.5, 3.5};
  Range wall_distance{25.0, 45.0};
  Range wall_height{4.0, 10.0};
  std::vector<std::string> palettes{"synthetic-a"};
  std::vector<std::string> terrains{"grass"};
  std::vector<std::string> backdrops{"building"};
  double color_jitter = 0.04;
  Range texture_noise_std{0.01, 0.03};
  double shadow_probability = 0.0;
  double obstacle_probability = 0.0;
  double depth_noise_std = 0.0;
  /// Sample count per split role, e.g. {"source-train": 64}.
  std::map<std::string, int> counts{{"source-train", 64}};
  /// Target-train labels go to heldout_label/ instead of label/.
  bool withhold_train_labels = false;
  std::uint64_t seed = 1;

  void validate() const;
};

DomainConfig source_domain_preset();
DomainConfig target_domain_preset();

/// Reads a domain config from JSON; "preset" selects the starting point.
DomainConfig load_domain_config(const std::filesystem::path& path);

/// Full JSON form of a domain config, accepted back by load_domain_config.
nlohmann::json domain_config_to_json(const DomainConfig& cfg);

/// Independent stream seed derived from (seed, stream) by SplitMix64 mixing.
std::uint64_t split_seed(std::uint64_t seed, std::uint64_t stream);

/// Draws the i-th scene of a domain (deterministic in cfg.seed and index).
SceneParams sample_scene_params(const DomainConfig& cfg, std::uint64_t index);

/// Generates count samples for one role in memory.
std::vector<Sample> generate_split(const DomainConfig& cfg, const std::string& role, int count,
                                   std::uint64_t first_index = 0);

/// Writes every role of cfg to out_dir in the dataset layout; returns the manifest path.
/// On failure the partially written directory is removed.
std::filesystem::path generate_domain(const DomainConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace fsda
