#include "fsda/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fsda/errors.hpp"

namespace fsda {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string() + ": cannot open file");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw IoError(path.string() + ": cannot open file for writing");
  out << j.dump(2) << '\n';
  if (!out) throw IoError(path.string() + ": write failed");
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(dir.string() + ": " + ec.message());
}

RawImage encode_mask(const Mask& m) {
  RawImage raw = make_raw(static_cast<int>(m.cols()), static_cast<int>(m.rows()), 1, 8);
  for (Eigen::Index i = 0; i < m.size(); ++i) raw.samples[i] = m.data()[i] ? 255 : 0;
  return raw;
}

}  // namespace

std::string to_string(SplitRole role) {
  switch (role) {
    case SplitRole::SourceTrain:
      return "source-train";
    case SplitRole::TargetTrain:
      return "target-train";
    case SplitRole::TargetEval:
      return "target-eval";
  }
  return "unknown";
}

SplitRole split_role_from_string(const std::string& name) {
  if (name == "source-train") return SplitRole::SourceTrain;
  if (name == "target-train") return SplitRole::TargetTrain;
  if (name == "target-eval") return SplitRole::TargetEval;
  throw ConfigError("unknown split role '" + name + "'");
}

void write_manifest(const DatasetLayout& layout, const Manifest& manifest) {
  json j;
  j["seed"] = manifest.seed;
  j["domain"] = manifest.domain;
  j["samples"] = json::array();
  for (const auto& e : manifest.samples) {
    j["samples"].push_back({{"id", e.id}, {"role", to_string(e.role)}});
  }
  write_json(layout.manifest(), j);
}

Manifest read_manifest(const DatasetLayout& layout) {
  const json j = read_json(layout.manifest());
  Manifest m;
  try {
    m.seed = j.value("seed", std::uint64_t{0});
    m.domain = j.value("domain", std::string{});
    for (const auto& e : j.at("samples")) {
      m.samples.push_back({e.at("id").get<std::string>(), split_role_from_string(e.at("role").get<std::string>())});
    }
  } catch (const json::exception& e) {
    throw InputError(layout.manifest().string() + ": " + e.what());
  }
  return m;
}

void write_intrinsics(const fs::path& path, const CameraIntrinsics& K) {
  write_json(path, json{{"fx", K.fx}, {"fy", K.fy}, {"cx", K.cx}, {"cy", K.cy}});
}

CameraIntrinsics read_intrinsics(const fs::path& path) {
  const json j = read_json(path);
  try {
    return {j.at("fx").get<double>(), j.at("fy").get<double>(), j.at("cx").get<double>(),
            j.at("cy").get<double>()};
  } catch (const json::exception& e) {
    throw InputError(path.string() + ": " + e.what());
  }
}

RawImage encode_depth_mm(const DepthMap& depth) {
  RawImage raw = make_raw(depth.width(), depth.height(), 1, 16);
  for (Eigen::Index i = 0; i < depth.values.size(); ++i) {
    if (!depth.valid.data()[i]) continue;
    const double mm = std::round(depth.values.data()[i] * 1000.0);
    raw.samples[i] = static_cast<std::uint16_t>(std::clamp(mm, 0.0, 65535.0));
  }
  return raw;
}

DepthMap decode_depth_mm(const RawImage& raw) {
  if (raw.channels != 1 || raw.bit_depth != 16) {
    throw InputError("depth image must be 16-bit single channel");
  }
  Plane<double> values(raw.height, raw.width);
  for (Eigen::Index i = 0; i < values.size(); ++i) values.data()[i] = raw.samples[i] / 1000.0;
  return DepthMap::from_values(std::move(values));
}

RawImage encode_rgb8(const Tensor<float>& rgb) {
  RawImage raw = make_raw(rgb.width, rgb.height, 3, 8);
  for (int i = 0; i < rgb.pixels(); ++i) {
    for (int c = 0; c < 3; ++c) {
      const float v = std::clamp(rgb.data(c, i), 0.0f, 1.0f);
      raw.samples[static_cast<std::size_t>(i) * 3 + c] = static_cast<std::uint16_t>(std::lround(v * 255.0f));
    }
  }
  return raw;
}

Tensor<float> decode_rgb8(const RawImage& raw) {
  if (raw.channels != 3 || raw.bit_depth != 8) throw InputError("RGB image must be 8-bit 3-channel");
  Tensor<float> rgb(3, raw.height, raw.width);
  for (int i = 0; i < rgb.pixels(); ++i) {
    for (int c = 0; c < 3; ++c) rgb.data(c, i) = raw.samples[static_cast<std::size_t>(i) * 3 + c] / 255.0f;
  }
  return rgb;
}

RawImage encode_label(const Mask& label) { return encode_mask(label); }

Mask decode_label(const RawImage& raw, const fs::path& origin) {
  if (raw.channels != 1 || raw.bit_depth != 8) {
    throw InputError(origin.string() + ": label must be 8-bit single channel");
  }
  Mask m(raw.height, raw.width);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const auto v = raw.samples[i];
    if (v != 0 && v != 255) {
      throw InputError(origin.string() + ": label value " + std::to_string(v) + " outside {0,255}");
    }
    m.data()[i] = v == 255 ? 1 : 0;
  }
  return m;
}

RawImage encode_normals8(const SurfaceNormalImage& sn) {
  RawImage raw = make_raw(sn.width(), sn.height(), 3, 8);
  for (int i = 0; i < sn.channels.pixels(); ++i) {
    if (!sn.valid.data()[i]) continue;
    for (int c = 0; c < 3; ++c) {
      const double v = std::clamp(sn.channels.data(c, i), 0.0, 1.0);
      raw.samples[static_cast<std::size_t>(i) * 3 + c] = static_cast<std::uint16_t>(std::lround(v * 255.0));
    }
  }
  return raw;
}

RawImage encode_gray8(const Plane<float>& values) {
  RawImage raw = make_raw(static_cast<int>(values.cols()), static_cast<int>(values.rows()), 1, 8);
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    const float v = std::clamp(values.data()[i], 0.0f, 1.0f);
    raw.samples[static_cast<std::size_t>(i)] = static_cast<std::uint16_t>(std::lround(v * 255.0f));
  }
  return raw;
}

void write_sample(const DatasetLayout& layout, const Sample& sample, SplitRole role, bool withhold_label,
                  bool write_normals_cache) {
  ensure_dir(layout.root / "rgb");
  ensure_dir(layout.root / "depth");
  write_png(layout.rgb(sample.id), encode_rgb8(sample.rgb));
  write_png(layout.depth(sample.id), encode_depth_mm(sample.depth));
  if (sample.label) {
    if (withhold_label && role == SplitRole::TargetTrain) {
      ensure_dir(layout.root / "heldout_label");
      write_png(layout.heldout_label(sample.id), encode_label(*sample.label));
    } else {
      ensure_dir(layout.root / "label");
      write_png(layout.label(sample.id), encode_label(*sample.label));
    }
  }
  if (write_normals_cache) {
    ensure_dir(layout.root / "sn");
    const SurfaceNormalImage sn = sample.normals ? *sample.normals : depth_to_normals(sample.depth, sample.intrinsics);
    write_png(layout.normals(sample.id), encode_normals8(sn));
  }
}

Dataset::Dataset(fs::path root, AccessMode mode)
    : root_(std::move(root)), layout_{root_}, mode_(mode) {
  manifest_ = read_manifest(layout_);
  intrinsics_ = read_intrinsics(layout_.intrinsics());
}

std::vector<std::string> Dataset::ids(SplitRole role) const {
  std::vector<std::string> out;
  for (const auto& e : manifest_.samples) {
    if (e.role == role) out.push_back(e.id);
  }
  return out;
}

SplitRole Dataset::role_of(const std::string& id) const {
  for (const auto& e : manifest_.samples) {
    if (e.id == id) return e.role;
  }
  throw InputError("sample id '" + id + "' not in manifest " + layout_.manifest().string());
}

Mask Dataset::load_label(const std::string& id) const {
  if (mode_ == AccessMode::Training && role_of(id) == SplitRole::TargetTrain) {
    throw ContractError("target-train label of '" + id + "' requested in training mode");
  }
  fs::path path = layout_.label(id);
  if (!fs::exists(path) && fs::exists(layout_.heldout_label(id))) path = layout_.heldout_label(id);
  return decode_label(read_png(path), path);
}

Sample Dataset::load_sample(const std::string& id, bool need_normals) const {
  const SplitRole role = role_of(id);
  Sample s;
  s.id = id;
  s.intrinsics = intrinsics_;
  s.rgb = decode_rgb8(read_png(layout_.rgb(id)));
  s.depth = decode_depth_mm(read_png(layout_.depth(id)));
  if (s.depth.height() != s.rgb.height || s.depth.width() != s.rgb.width) {
    throw InputError(layout_.depth(id).string() + ": depth size differs from RGB size");
  }
  s.intrinsics.validate(s.rgb.height, s.rgb.width);
  const bool label_allowed = !(mode_ == AccessMode::Training && role == SplitRole::TargetTrain);
  if (label_allowed && (fs::exists(layout_.label(id)) || fs::exists(layout_.heldout_label(id)))) {
    s.label = load_label(id);
  }
  if (s.label && (s.label->rows() != s.rgb.height || s.label->cols() != s.rgb.width)) {
    throw InputError(layout_.label(id).string() + ": label size differs from RGB size");
  }
  if (fs::exists(layout_.normals(id))) {
    const RawImage raw = read_png(layout_.normals(id));
    if (raw.channels != 3 || raw.bit_depth != 8) throw InputError(layout_.normals(id).string() + ": bad normal cache");
    Tensor<double> enc(3, raw.height, raw.width);
    for (int i = 0; i < enc.pixels(); ++i) {
      for (int c = 0; c < 3; ++c) enc.data(c, i) = raw.samples[static_cast<std::size_t>(i) * 3 + c] / 255.0;
    }
    s.normals = normals_from_encoded(enc);
  } else if (need_normals) {
    s.normals = depth_to_normals(s.depth, s.intrinsics);
  }
  return s;
}

std::vector<Sample> Dataset::load_split(SplitRole role, bool need_normals) const {
  std::vector<Sample> out;
  for (const auto& id : ids(role)) out.push_back(load_sample(id, need_normals));
  return out;
}

fs::path pseudo_label_dir(const fs::path& base, int consumer_round) {
  return base / ("round_" + std::to_string(consumer_round));
}

void save_pseudo_labels(const fs::path& base, const std::vector<PseudoLabelRecord>& records) {
  if (records.empty()) throw StateError("no pseudo-label records to save");
  const int round = records.front().round;
  const double alpha = records.front().alpha;
  const fs::path dir = pseudo_label_dir(base, round + 1);
  ensure_dir(dir / "label");
  ensure_dir(dir / "ignore");
  json meta;
  meta["round"] = round;
  meta["consumer_round"] = round + 1;
  meta["alpha"] = alpha;
  meta["ids"] = json::array();
  for (const auto& r : records) {
    if (r.round != round || r.alpha != alpha) {
      throw StateError("pseudo-label records of one store must share round and alpha");
    }
    write_png(dir / "label" / (r.id + ".png"), encode_mask(r.label));
    write_png(dir / "ignore" / (r.id + ".png"), encode_mask(r.ignore));
    meta["ids"].push_back(r.id);
  }
  write_json(dir / "meta.json", meta);
}

std::vector<PseudoLabelRecord> load_pseudo_labels(const fs::path& base, int consumer_round,
                                                  std::optional<double> expected_alpha,
                                                  const std::function<void(const std::string&)>& warn) {
  const fs::path dir = pseudo_label_dir(base, consumer_round);
  if (!fs::exists(dir / "meta.json")) {
    throw StateError("no pseudo-label store for round " + std::to_string(consumer_round) + " under " +
                     base.string());
  }
  const json meta = read_json(dir / "meta.json");
  const int round = meta.at("round").get<int>();
  const double alpha = meta.at("alpha").get<double>();
  if (expected_alpha && *expected_alpha != alpha && warn) {
    std::ostringstream msg;
    msg << "pseudo labels in " << dir.string() << " were made with alpha=" << alpha
        << " but the config has alpha=" << *expected_alpha;
    warn(msg.str());
  }
  std::vector<PseudoLabelRecord> out;
  for (const auto& id_json : meta.at("ids")) {
    const std::string id = id_json.get<std::string>();
    PseudoLabelRecord r;
    r.id = id;
    r.round = round;
    r.alpha = alpha;
    r.label = decode_label(read_png(dir / "label" / (id + ".png")), dir / "label" / (id + ".png"));
    r.ignore = decode_label(read_png(dir / "ignore" / (id + ".png")), dir / "ignore" / (id + ".png"));
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace fsda
