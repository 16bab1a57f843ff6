#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "upil/models.hpp"
#include "upil/partitioner.hpp"
#include "upil/trainer.hpp"

namespace upil {

// Binary layout, little-endian:
//   "UPIL" 0x01
//   u64 header length, UTF-8 JSON header
//     {config, feature_dim, config_hash, seed, param_order, shapes, payload_sha256}
//   payload: f64 parameter arrays in param_order,
//            then u64 length + registry JSON
inline constexpr char kCheckpointMagic[4] = {'U', 'P', 'I', 'L'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelBundle bundle;
  PartitionRegistry registry;
  TrainConfig config;
};

std::vector<unsigned char> encode_checkpoint(const ModelBundle& bundle, const PartitionRegistry& registry,
                                             const TrainConfig& cfg);
Checkpoint decode_checkpoint(std::span<const unsigned char> bytes);

void save_checkpoint(const ModelBundle& bundle, const PartitionRegistry& registry, const TrainConfig& cfg,
                     const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// VersionError when the checkpoint architecture differs from what `run`
// would build for `feature_dim` inputs.
void check_compatible(const Checkpoint& ckpt, const TrainConfig& run, std::size_t feature_dim);

}  // namespace upil
