#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "lensless/numerics.hpp"

namespace lensless::io {

// LLIA array file:
//   bytes 0-3   magic "LLIA"
//   byte  4     version (1)
//   byte  5     dtype (0 = float32)
//   byte  6     ndim (3)
//   byte  7     padding (0)
//   bytes 8-19  H, W, C as little-endian u32
//   payload     H*W*C little-endian float32, row-major, channel-last
inline constexpr std::size_t kArrayHeaderBytes = 20;
inline constexpr std::uint8_t kArrayVersion = 1;

std::vector<std::uint8_t> encode_array(const Tensor& t);
// Throws BadMagic for a foreign header and BadDims when the dimensions or the
// payload length are inconsistent. Never returns a partial tensor.
Tensor decode_array(std::span<const std::uint8_t> bytes);

Tensor read_array(const std::filesystem::path& path);
void write_array(const std::filesystem::path& path, const Tensor& t);

// PNG with 1 (gray) or 3 (RGB) channels; 8- or 16-bit samples map linearly to
// [0, 1]. Gray+alpha and RGBA inputs drop alpha. Values are clamped on export.
Tensor read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Tensor& t, int bit_depth = 8);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace lensless::io
