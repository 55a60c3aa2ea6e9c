#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fsda/image_io.hpp"
#include "fsda/sample.hpp"

namespace fsda {

enum class SplitRole { SourceTrain, TargetTrain, TargetEval };

std::string to_string(SplitRole role);
SplitRole split_role_from_string(const std::string& name);

/// Paths of the on-disk dataset layout rooted at `root`.
struct DatasetLayout {
  std::filesystem::path root;

  std::filesystem::path rgb(const std::string& id) const { return root / "rgb" / (id + ".png"); }
  std::filesystem::path depth(const std::string& id) const { return root / "depth" / (id + ".png"); }
  std::filesystem::path label(const std::string& id) const { return root / "label" / (id + ".png"); }
  std::filesystem::path heldout_label(const std::string& id) const {
    return root / "heldout_label" / (id + ".png");
  }
  std::filesystem::path normals(const std::string& id) const { return root / "sn" / (id + ".png"); }
  std::filesystem::path intrinsics() const { return root / "intrinsics.json"; }
  std::filesystem::path manifest() const { return root / "manifest.json"; }
};

struct ManifestEntry {
  std::string id;
  SplitRole role = SplitRole::SourceTrain;
};

struct Manifest {
  std::uint64_t seed = 0;
  std::string domain;
  std::vector<ManifestEntry> samples;
};

void write_manifest(const DatasetLayout& layout, const Manifest& manifest);
Manifest read_manifest(const DatasetLayout& layout);

void write_intrinsics(const std::filesystem::path& path, const CameraIntrinsics& K);
CameraIntrinsics read_intrinsics(const std::filesystem::path& path);

/// Depth is stored as 16-bit millimeters; values above 65.535 m are clamped.
RawImage encode_depth_mm(const DepthMap& depth);
DepthMap decode_depth_mm(const RawImage& raw);

RawImage encode_rgb8(const Tensor<float>& rgb);
Tensor<float> decode_rgb8(const RawImage& raw);

/// Label PNG: 0 = background, 255 = foreground; anything else is a format error.
RawImage encode_label(const Mask& label);
Mask decode_label(const RawImage& raw, const std::filesystem::path& origin);

RawImage encode_normals8(const SurfaceNormalImage& sn);

/// Single-channel 8-bit image of values in [0,1] (clamped).
RawImage encode_gray8(const Plane<float>& values);

/// Writes one sample. Labels of target-train samples go to heldout_label/ when withhold is set.
void write_sample(const DatasetLayout& layout, const Sample& sample, SplitRole role, bool withhold_label,
                  bool write_normals_cache);

enum class AccessMode { Training, Evaluation };

/// Manifest-driven dataset. In Training mode target-train labels are never read.
class Dataset {
 public:
  Dataset(std::filesystem::path root, AccessMode mode);

  const Manifest& manifest() const { return manifest_; }
  const DatasetLayout& layout() const { return layout_; }
  const CameraIntrinsics& intrinsics() const { return intrinsics_; }
  AccessMode mode() const { return mode_; }

  /// Ids with the given role, in manifest order.
  std::vector<std::string> ids(SplitRole role) const;
  SplitRole role_of(const std::string& id) const;

  /// RGB in [0,1], depth in meters, intrinsics, label when the role/mode allows it.
  /// Normals come from the sn/ cache if present, otherwise they are computed when requested.
  Sample load_sample(const std::string& id, bool need_normals) const;

  /// Loads all samples of one role in manifest order.
  std::vector<Sample> load_split(SplitRole role, bool need_normals) const;

  /// Explicit label access. Throws ContractError for target-train ids in Training mode.
  Mask load_label(const std::string& id) const;

 private:
  std::filesystem::path root_;
  DatasetLayout layout_;
  AccessMode mode_;
  Manifest manifest_;
  CameraIntrinsics intrinsics_;
};

/// Pseudo labels for one target-train sample.
struct PseudoLabelRecord {
  std::string id;
  Mask label;   // 1 = foreground
  Mask ignore;  // 1 = low-confidence, excluded from every loss
  int round = 1;   // round whose network produced the record
  double alpha = 0.99;
};

/// Store directory for the pseudo labels consumed by `consumer_round`.
std::filesystem::path pseudo_label_dir(const std::filesystem::path& base, int consumer_round);

/// Writes label/ignore PNGs plus meta.json under pseudo_label_dir(base, round + 1).
void save_pseudo_labels(const std::filesystem::path& base, const std::vector<PseudoLabelRecord>& records);

/// Loads the store consumed by `consumer_round`. An alpha differing from expected_alpha
/// is reported through `warn` (when given) and otherwise accepted.
std::vector<PseudoLabelRecord> load_pseudo_labels(const std::filesystem::path& base, int consumer_round,
                                                  std::optional<double> expected_alpha,
                                                  const std::function<void(const std::string&)>& warn = {});

}  // namespace fsda
