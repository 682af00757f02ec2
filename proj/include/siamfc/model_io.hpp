#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <vector>

#include "siamfc/net.hpp"

namespace siamfc {

inline constexpr char kModelMagic[4] = {'S', 'F', 'C', 'M'};
inline constexpr std::uint16_t kModelFormatVersion = 1;

// Model file layout, all integers and floats little-endian:
//
//   "SFCM" | u16 version | u16 len, preset name | u32 in_channels |
//   u32 layer count | layer table | u64 payload bytes | payload | u32 CRC32
//
// Each layer-table entry is u8 kind, u16 len + name, then
//   conv: u32 out_channels, in_per_group, kernel_h, kernel_w, stride, groups
//   pool: u32 size, stride
//   bn:   u32 channels, f32 eps, f32 momentum
//   relu: nothing
// The payload is f32 score bias b followed, layer by layer, by conv weights
// and biases, and batch-norm gamma, beta, running mean and running variance.
// The CRC32 covers the payload bytes only.

std::vector<std::uint8_t> encode_model(const SiameseModel& model);

/// Throws FormatError (bad magic, trailing bytes), VersionError,
/// TruncatedError or ChecksumError.
SiameseModel decode_model(std::span<const std::uint8_t> bytes);

void save_model(const SiameseModel& model, const std::filesystem::path& path);
SiameseModel load_model(const std::filesystem::path& path);

/// Loads and checks the layer table against build_net(expected_preset);
/// throws ShapeError naming the first mismatching layer.
SiameseModel load_model(const std::filesystem::path& path,
                        std::string_view expected_preset);

/// Throws ShapeError unless both nets have identical layer tables.
void check_same_architecture(const EmbeddingNet& expected,
                             const EmbeddingNet& actual);

}  // namespace siamfc
