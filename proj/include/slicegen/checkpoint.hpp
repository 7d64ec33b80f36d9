#pragma once

// Checkpoint file layout:
//   "CSG1" | u32 little-endian header length | UTF-8 JSON header | payload
// The header holds {format_version, train_config, epoch, tensors: [{name,
// shape, byte_offset, byte_len}]}; offsets count from the start of the payload,
// which stores every tensor as little-endian float32.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "slicegen/train.hpp"

namespace slicegen {

inline constexpr int kCheckpointFormatVersion = 1;

struct Checkpoint {
  nlohmann::json train_config;
  int epoch = 0;
  nlohmann::json optimizer;  // step counters; null when absent
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  const Tensor<float>& tensor(const std::string& name) const;
  bool has_tensor(const std::string& name) const;
};

std::string encode_checkpoint(const Checkpoint& checkpoint);
/// Throws LoadError on bad magic, unsupported version or inconsistent layout.
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// The JSON header exactly as stored.
std::string read_checkpoint_header(const std::filesystem::path& path);

/// Model parameters plus both optimizer states.
Checkpoint make_checkpoint(const Trainer& trainer, int epoch);

/// Model described by the checkpoint's train config, with its stored weights.
CSliceGen<float> load_model(const Checkpoint& checkpoint);
/// Trainer continuing from the checkpoint, optimizer state included when stored.
Trainer restore_trainer(const Checkpoint& checkpoint);
/// Same, but trains on under `config`, which must describe the same model.
Trainer restore_trainer(const Checkpoint& checkpoint, const TrainConfig& config);

}  // namespace slicegen
