#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace dada::io {

struct Image8 {
    std::uint32_t width = 0;
    std::uint32_t height = 0;
    std::uint32_t channels = 0;  // 1 or 3
    std::vector<std::uint8_t> pixels;  // row-major, interleaved
};

void write_png(const std::filesystem::path& path, const Image8& image);
Image8 read_png(const std::filesystem::path& path);

// Inverse-depth container: "IDEP", u32 H, u32 W, u32 reserved, then H*W
// little-endian float32 values, row-major.
void write_depth(const std::filesystem::path& path, std::uint32_t height, std::uint32_t width,
                 std::span<const float> values);
std::vector<float> read_depth(const std::filesystem::path& path, std::uint32_t& height, std::uint32_t& width);

/// Byte-level little-endian helpers shared with the checkpoint format.
void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v);
std::uint32_t load_u32(const std::uint8_t* p);
void append_f32(std::vector<std::uint8_t>& out, float v);
float load_f32(const std::uint8_t* p);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace dada::io
