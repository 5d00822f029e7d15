#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <memory>
#include <string>

#include "sanet/network.hpp"

namespace sanet::ckpt {

inline constexpr std::uint32_t format_version = 1;

/// Sidecar record stored next to the weights as `<checkpoint>.json`.
struct CheckpointMeta {
    nn::NetworkConfig config;
    std::string architecture = "sanet";  ///< "sanet" or "unet"
    int epoch = 0;
    double val_loss = std::numeric_limits<double>::quiet_NaN();
    double ema_val_loss = std::numeric_limits<double>::quiet_NaN();
    std::uint64_t seed = 0;
    std::string tag;  ///< e.g. "best_val", "best_ema", "final"
};

/// Weight archive layout (little-endian):
///   "SANETCKP" | u32 version | u32 tensor count
///   per tensor: u32 name length | name | i64 shape[4] | f32 data
///   u32 CRC-32 of every preceding byte
void save_checkpoint(const std::filesystem::path& path, const nn::SegmentationNetwork<float>& net,
                     const CheckpointMeta& meta);

std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint);

CheckpointMeta read_metadata(const std::filesystem::path& checkpoint);

/// Copies archived weights into `net`. Every parameter must appear in the
/// archive with a matching shape and no archived tensor may be left over.
void load_weights(const std::filesystem::path& checkpoint, const nn::SegmentationNetwork<float>& net);

/// Builds the network recorded in the sidecar and loads its weights.
std::unique_ptr<nn::SegmentationNetwork<float>> load_model(const std::filesystem::path& checkpoint,
                                                           CheckpointMeta* meta = nullptr);

std::unique_ptr<nn::SegmentationNetwork<float>> make_network(const std::string& architecture,
                                                             const nn::NetworkConfig& cfg, std::uint64_t seed);

}  // namespace sanet::ckpt
