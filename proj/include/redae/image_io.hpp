#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace redae::io {

/// 8-bit raster with interleaved channels (1 = PGM P5, 3 = PPM P6).
struct Raster {
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t channels = 1;
  std::vector<std::uint8_t> bytes;
};

/// Parses binary PGM/PPM with maxval 255. Comments in the header are allowed.
Raster read_pnm(const std::filesystem::path& path);
Raster parse_pnm(const std::vector<std::uint8_t>& file, const std::string& name);

void write_pnm(const std::filesystem::path& path, const Raster& raster);
std::vector<std::uint8_t> encode_pnm(const Raster& raster);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace redae::io
