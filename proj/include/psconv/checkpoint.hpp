#pragma once

#include <filesystem>
#include <optional>

#include "json.hpp"
#include "psconv/data.hpp"
#include "psconv/model.hpp"
#include "psconv/train.hpp"

namespace psconv {

// Layout: "PSCCKPT1", u32 LE header length, JSON header, f32 LE tensor
// payloads (parameters, BN buffers, momentum buffers), then one
// .psmask.json document per masked conv. Offsets in the header are relative
// to the start of their section.
inline constexpr char kCheckpointMagic[8] = {'P', 'S', 'C', 'C', 'K', 'P', 'T', '1'};
inline constexpr int kCheckpointVersion = 1;

struct CheckpointMeta {
  int epoch = 0;  // completed epochs
  TrainConfig config;
  std::optional<ChannelStats> normalization;
  nlohmann::json extra = nlohmann::json::object();
};

void checkpoint_save(const std::filesystem::path& path, Model<float>& model, const OptimizerState& state,
                     const CheckpointMeta& meta);

struct LoadedCheckpoint {
  Model<float> model;
  OptimizerState state;
  CheckpointMeta meta;
};

LoadedCheckpoint checkpoint_load(const std::filesystem::path& path);

}  // namespace psconv
