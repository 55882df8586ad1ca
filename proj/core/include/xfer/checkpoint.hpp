#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "xfer/model.hpp"

namespace xfer {

// Binary layout:
//   "XFCK" | u32 version | u64 manifest length | UTF-8 JSON manifest |
//   little-endian f64 payload, tensors in manifest order.
inline constexpr char kCheckpointMagic[4] = {'X', 'F', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointManifest {
  ModelConfig config;
  std::string vocab_hash;
  /// Free-form record of how the weights were produced (mode, seeds, steps...).
  nlohmann::json provenance = nlohmann::json::object();
};

struct Checkpoint {
  CheckpointManifest manifest;
  Parameters params;
};

void save_checkpoint(const std::filesystem::path& path, const Parameters& params, const CheckpointManifest& manifest);

/// Throws kFormat on a bad magic/version, kCorruption when the manifest and
/// payload disagree or the file is truncated.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Loads and checks that the encoder matches `expected` (kCompatibility otherwise).
Checkpoint load_checkpoint_for(const std::filesystem::path& path, const ModelConfig& expected);

std::string encode_checkpoint(const Parameters& params, const CheckpointManifest& manifest);
Checkpoint decode_checkpoint(const std::string& bytes);

}  // namespace xfer
