#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fsda/backbone.hpp"

namespace fsda {

enum class SfaModalities { Rgb, Sn, Both };

std::string to_string(SfaModalities m);
SfaModalities sfa_modalities_from_string(const std::string& s);

/// Loss weights; defaults are the single-scale (ResNet-style) setting.
struct LossWeights {
  double seg_rgb_source = 0.5;  // lambda_1,S
  double seg_sn_source = 0.5;   // lambda_2,S
  double seg_source = 1.0;      // lambda_3,S
  double seg_rgb_target = 0.2;  // lambda_1,T
  double seg_sn_target = 0.2;   // lambda_2,T
  double seg_target = 0.5;      // lambda_3,T
  double adversarial = 1e-4;    // lambda_4
};

struct TrainConfig {
  LossWeights lambda;
  double alpha = 0.99;
  int rounds = 3;
  int epochs = 1;  // per round
  double lr_seg = 2.5e-4;
  double lr_disc = 1e-3;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double poly_power = 0.9;
  int batch_size = 4;
  int threads = 1;
  std::uint64_t seed = 1234;

  EncoderSpec encoder;
  DiscriminatorSpec discriminator;
  int head_channels = 64;
  bool sn_enabled = true;
  bool ccg_enabled = true;
  bool ccg_gate_modulated = false;
  /// Attention maps gate features as constants; aux heads learn from their own loss only.
  bool ccg_detach_attention = true;

  bool sfa_enabled = true;
  SfaModalities sfa_modalities = SfaModalities::Rgb;
  int sfa_stage = 0;  // index into the retained encoder stages, 0 = finest
  bool sfa_sum_reduction = false;

  /// Throws ConfigError on any invariant violation.
  void validate() const;
};

/// Flat dotted-key JSON view of a config (every key present).
nlohmann::json to_json(const TrainConfig& cfg);

/// Applies dotted-key entries onto `cfg`. Unknown keys are rejected. When the backbone is
/// switched to a multi-scale one and loss.lambda4 is not given, lambda4 becomes 1e-3.
void apply_json(TrainConfig& cfg, const nlohmann::json& j);

/// Parses "key=value" (value as JSON, falling back to a plain string) and applies it.
void apply_override(TrainConfig& cfg, const std::string& assignment);

/// Reads a flat JSON config; absent keys keep their defaults. Empty files are allowed.
TrainConfig load_config(const std::filesystem::path& path);

std::vector<std::string> config_keys();

/// Named ablation configurations: rgb-only, rgb-sfa, rgb-sfa-sn, full, sfa-sn-only, sfa-both.
TrainConfig ablation_preset(const std::string& name, const TrainConfig& base = TrainConfig{});
std::vector<std::string> ablation_preset_names();

}  // namespace fsda
