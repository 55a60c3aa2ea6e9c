#pragma once

#include <filesystem>

#include <json.hpp>

#include "fsda/model.hpp"

namespace fsda {

struct CheckpointInfo {
  int round = 0;
  TrainConfig config;
  nlohmann::json header;
};

/// Binary archive: magic, JSON header (config echo, round, parameter names and shapes),
/// then raw little-endian float32 parameter data in header order.
void save_checkpoint(const std::filesystem::path& path, const FreespaceNet<float>& net, int round);

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);

/// Rebuilds the network from the stored config (or `config` when given, which must describe
/// the same parameter shapes) and loads every parameter by name.
FreespaceNet<float> load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info = nullptr,
                                    const TrainConfig* config = nullptr);

}  // namespace fsda
