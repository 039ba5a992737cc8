#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "redae/model.hpp"

namespace redae::checkpoint {

inline constexpr std::uint16_t kFormatVersion = 1;

/// Layout (little-endian throughout):
///   "REDAE" | u16 version | u8 variant | u32 in_channels | u32 depth |
///   u32 widths[depth] | u32 kernel | u32 classes | f64 class_weights[classes] |
///   u32 tensor_count | { u16 name_len | name | u32 n,c,h,w | f32 values } ... |
///   u32 crc32 of every preceding byte
/// Tensors are the trainable parameters followed by each batch norm's
/// running mean and variance.
std::vector<std::uint8_t> encode(model::Network& net);
/// The returned network is in eval mode.
model::Network decode(const std::vector<std::uint8_t>& bytes, const std::string& name);

void save(const std::filesystem::path& path, model::Network& net);
model::Network load(const std::filesystem::path& path);

}  // namespace redae::checkpoint
