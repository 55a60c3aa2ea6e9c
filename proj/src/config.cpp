#include "fsda/config.hpp"

#include <fstream>
#include <iterator>
#include <sstream>

namespace fsda {

using json = nlohmann::json;
namespace fs = std::filesystem;

std::string to_string(SfaModalities m) {
  switch (m) {
    case SfaModalities::Rgb:
      return "rgb";
    case SfaModalities::Sn:
      return "sn";
    case SfaModalities::Both:
      return "both";
  }
  return "rgb";
}

SfaModalities sfa_modalities_from_string(const std::string& s) {
  if (s == "rgb") return SfaModalities::Rgb;
  if (s == "sn") return SfaModalities::Sn;
  if (s == "both") return SfaModalities::Both;
  throw ConfigError("sfa.modalities must be rgb, sn or both (got '" + s + "')");
}

void TrainConfig::validate() const {
  const double lambdas[] = {lambda.seg_rgb_source, lambda.seg_sn_source, lambda.seg_source, lambda.seg_rgb_target,
                            lambda.seg_sn_target,  lambda.seg_target,    lambda.adversarial};
  for (double l : lambdas) {
    if (!(l >= 0.0)) throw ConfigError("loss weights must be non-negative");
  }
  if (!(alpha > 0.5 && alpha <= 1.0)) throw ConfigError("trainer.alpha must lie in (0.5, 1]");
  if (rounds < 1) throw ConfigError("trainer.rounds must be at least 1");
  if (epochs < 1) throw ConfigError("trainer.epochs must be at least 1");
  if (!(lr_seg >= 0.0) || !(lr_disc >= 0.0)) throw ConfigError("learning rates must be non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("trainer.momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("trainer.weight_decay must be non-negative");
  if (batch_size < 1) throw ConfigError("trainer.batch_size must be at least 1");
  if (threads < 1) throw ConfigError("trainer.threads must be at least 1");
  if (head_channels < 1) throw ConfigError("model.head_channels must be positive");
  encoder.validate();
  if (discriminator.ladder.empty()) throw ConfigError("discriminator ladder must be non-empty");
  if (!(discriminator.slope >= 0.0)) throw ConfigError("discriminator slope must be non-negative");
  if (ccg_enabled && !sn_enabled) throw ConfigError("model.ccg_enabled requires model.sn_enabled");
  if (sfa_enabled && sfa_modalities != SfaModalities::Rgb && !sn_enabled) {
    throw ConfigError("sfa.modalities involving sn require model.sn_enabled");
  }
  if (sfa_stage < 0 || sfa_stage >= static_cast<int>(encoder.retained_stages().size())) {
    throw ConfigError("sfa.stage out of range for the backbone");
  }
}

json to_json(const TrainConfig& c) {
  json j;
  j["loss.lambda1_s"] = c.lambda.seg_rgb_source;
  j["loss.lambda2_s"] = c.lambda.seg_sn_source;
  j["loss.lambda3_s"] = c.lambda.seg_source;
  j["loss.lambda1_t"] = c.lambda.seg_rgb_target;
  j["loss.lambda2_t"] = c.lambda.seg_sn_target;
  j["loss.lambda3_t"] = c.lambda.seg_target;
  j["loss.lambda4"] = c.lambda.adversarial;
  j["trainer.alpha"] = c.alpha;
  j["trainer.rounds"] = c.rounds;
  j["trainer.epochs"] = c.epochs;
  j["trainer.lr_seg"] = c.lr_seg;
  j["trainer.lr_disc"] = c.lr_disc;
  j["trainer.momentum"] = c.momentum;
  j["trainer.weight_decay"] = c.weight_decay;
  j["trainer.poly_power"] = c.poly_power;
  j["trainer.batch_size"] = c.batch_size;
  j["trainer.threads"] = c.threads;
  j["trainer.seed"] = c.seed;
  j["model.backbone"] = c.encoder.backbone;
  j["model.widths"] = c.encoder.widths;
  j["model.strides"] = c.encoder.strides;
  j["model.reduced_channels"] = c.encoder.reduced_channels;
  j["model.norm_groups"] = c.encoder.norm_groups;
  j["model.head_channels"] = c.head_channels;
  j["model.sn_enabled"] = c.sn_enabled;
  j["model.ccg_enabled"] = c.ccg_enabled;
  j["model.ccg_gate_modulated"] = c.ccg_gate_modulated;
  j["model.ccg_detach_attention"] = c.ccg_detach_attention;
  j["model.disc_ladder"] = c.discriminator.ladder;
  j["model.disc_slope"] = c.discriminator.slope;
  j["sfa.enabled"] = c.sfa_enabled;
  j["sfa.modalities"] = to_string(c.sfa_modalities);
  j["sfa.stage"] = c.sfa_stage;
  j["sfa.sum_reduction"] = c.sfa_sum_reduction;
  return j;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  const json defaults = to_json(TrainConfig{});
  for (auto it = defaults.begin(); it != defaults.end(); ++it) keys.push_back(it.key());
  return keys;
}

void apply_json(TrainConfig& c, const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object of dotted keys");
  const std::string old_backbone = c.encoder.backbone;
  bool lambda4_given = false;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    const json& v = it.value();
    try {
      if (k == "loss.lambda1_s") c.lambda.seg_rgb_source = v.get<double>();
      else if (k == "loss.lambda2_s") c.lambda.seg_sn_source = v.get<double>();
      else if (k == "loss.lambda3_s") c.lambda.seg_source = v.get<double>();
      else if (k == "loss.lambda1_t") c.lambda.seg_rgb_target = v.get<double>();
      else if (k == "loss.lambda2_t") c.lambda.seg_sn_target = v.get<double>();
      else if (k == "loss.lambda3_t") c.lambda.seg_target = v.get<double>();
      else if (k == "loss.lambda4") {
        c.lambda.adversarial = v.get<double>();
        lambda4_given = true;
      }
      else if (k == "trainer.alpha") c.alpha = v.get<double>();
      else if (k == "trainer.rounds") c.rounds = v.get<int>();
      else if (k == "trainer.epochs") c.epochs = v.get<int>();
      else if (k == "trainer.lr_seg") c.lr_seg = v.get<double>();
      else if (k == "trainer.lr_disc") c.lr_disc = v.get<double>();
      else if (k == "trainer.momentum") c.momentum = v.get<double>();
      else if (k == "trainer.weight_decay") c.weight_decay = v.get<double>();
      else if (k == "trainer.poly_power") c.poly_power = v.get<double>();
      else if (k == "trainer.batch_size") c.batch_size = v.get<int>();
      else if (k == "trainer.threads") c.threads = v.get<int>();
      else if (k == "trainer.seed") c.seed = v.get<std::uint64_t>();
      else if (k == "model.backbone") c.encoder.backbone = v.get<std::string>();
      else if (k == "model.widths") c.encoder.widths = v.get<std::vector<int>>();
      else if (k == "model.strides") c.encoder.strides = v.get<std::vector<int>>();
      else if (k == "model.reduced_channels") c.encoder.reduced_channels = v.get<int>();
      else if (k == "model.norm_groups") c.encoder.norm_groups = v.get<int>();
      else if (k == "model.head_channels") c.head_channels = v.get<int>();
      else if (k == "model.sn_enabled") c.sn_enabled = v.get<bool>();
      else if (k == "model.ccg_enabled") c.ccg_enabled = v.get<bool>();
      else if (k == "model.ccg_gate_modulated") c.ccg_gate_modulated = v.get<bool>();
      else if (k == "model.ccg_detach_attention") c.ccg_detach_attention = v.get<bool>();
      else if (k == "model.disc_ladder") c.discriminator.ladder = v.get<std::vector<int>>();
      else if (k == "model.disc_slope") c.discriminator.slope = v.get<double>();
      else if (k == "sfa.enabled") c.sfa_enabled = v.get<bool>();
      else if (k == "sfa.modalities") c.sfa_modalities = sfa_modalities_from_string(v.get<std::string>());
      else if (k == "sfa.stage") c.sfa_stage = v.get<int>();
      else if (k == "sfa.sum_reduction") c.sfa_sum_reduction = v.get<bool>();
      else throw ConfigError("unknown config key '" + k + "'");
    } catch (const json::exception& e) {
      throw ConfigError("config key '" + k + "': " + e.what());
    }
  }
  if (!lambda4_given && c.encoder.backbone != old_backbone) {
    c.lambda.adversarial = c.encoder.backbone == "small-cnn-ms" ? 1e-3 : 1e-4;
  }
}

void apply_override(TrainConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value: '" + assignment + "'");
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  apply_json(cfg, json{{key, value}});
}

TrainConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open config");
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  TrainConfig cfg;
  if (text.find_first_not_of(" \t\r\n") != std::string::npos) {
    json j;
    try {
      j = json::parse(text);
    } catch (const json::exception& e) {
      throw ConfigError(path.string() + ": " + e.what());
    }
    apply_json(cfg, j);
  }
  cfg.validate();
  return cfg;
}

}  // namespace fsda
