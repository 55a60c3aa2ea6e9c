#include "fsda/config.hpp"

namespace fsda {

std::vector<std::string> ablation_preset_names() {
  return {"rgb-only", "rgb-sfa", "rgb-sfa-sn", "full", "sfa-sn-only", "sfa-both"};
}

TrainConfig ablation_preset(const std::string& name, const TrainConfig& base) {
  TrainConfig c = base;
  // component ladder: RGB, +SFA, +SN, +CCG; modality grid for the alignment ablation
  c.sn_enabled = true;
  c.ccg_enabled = true;
  c.sfa_enabled = true;
  c.sfa_modalities = SfaModalities::Rgb;
  if (name == "full") {
  } else if (name == "rgb-only") {
    c.sn_enabled = false;
    c.ccg_enabled = false;
    c.sfa_enabled = false;
  } else if (name == "rgb-sfa") {
    c.sn_enabled = false;
    c.ccg_enabled = false;
  } else if (name == "rgb-sfa-sn") {
    c.ccg_enabled = false;
  } else if (name == "sfa-sn-only") {
    c.ccg_enabled = false;
    c.sfa_modalities = SfaModalities::Sn;
  } else if (name == "sfa-both") {
    c.ccg_enabled = false;
    c.sfa_modalities = SfaModalities::Both;
  } else {
    throw ConfigError("unknown ablation preset '" + name + "'");
  }
  c.validate();
  return c;
}

}  // namespace fsda
