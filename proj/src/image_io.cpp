#include "dada/image_io.hpp"

#include <png.h>

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

#include "dada/error.hpp"

namespace dada::io {

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const noexcept {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) throw DataError("cannot open " + path.string());
    return f;
}

[[noreturn]] void png_error_handler(png_structp, png_const_charp msg) { throw DataError(msg); }
void png_warning_handler(png_structp, png_const_charp) {}

constexpr char kDepthMagic[4] = {'I', 'D', 'E', 'P'};

}  // namespace

void write_png(const std::filesystem::path& path, const Image8& image) {
    if (image.channels != 1 && image.channels != 3) throw std::invalid_argument("write_png: 1 or 3 channels");
    if (image.pixels.size() != std::size_t(image.width) * image.height * image.channels)
        throw std::invalid_argument("write_png: pixel buffer size mismatch for " + path.string());
    auto f = open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_handler, png_warning_handler);
    png_infop info = png_create_info_struct(png);
    try {
        png_init_io(png, f.get());
        png_set_IHDR(png, info, image.width, image.height, 8,
                     image.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                     PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        const std::size_t stride = std::size_t(image.width) * image.channels;
        for (std::uint32_t y = 0; y < image.height; ++y)
            png_write_row(png, const_cast<png_bytep>(image.pixels.data() + y * stride));
        png_write_end(png, nullptr);
    } catch (const DataError& e) {
        png_destroy_write_struct(&png, &info);
        throw DataError("writing " + path.string() + ": " + e.what());
    }
    png_destroy_write_struct(&png, &info);
}

Image8 read_png(const std::filesystem::path& path) {
    auto f = open_file(path, "rb");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_handler, png_warning_handler);
    png_infop info = png_create_info_struct(png);
    Image8 image;
    try {
        png_init_io(png, f.get());
        png_read_info(png, info);
        image.width = png_get_image_width(png, info);
        image.height = png_get_image_height(png, info);
        const auto color = png_get_color_type(png, info);
        if (png_get_bit_depth(png, info) != 8 || (color != PNG_COLOR_TYPE_RGB && color != PNG_COLOR_TYPE_GRAY))
            throw DataError("unsupported PNG layout (need 8-bit RGB or gray)");
        image.channels = color == PNG_COLOR_TYPE_RGB ? 3 : 1;
        image.pixels.resize(std::size_t(image.width) * image.height * image.channels);
        const std::size_t stride = std::size_t(image.width) * image.channels;
        for (std::uint32_t y = 0; y < image.height; ++y) png_read_row(png, image.pixels.data() + y * stride, nullptr);
    } catch (const DataError& e) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("reading " + path.string() + ": " + e.what());
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return image;
}

void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t load_u32(const std::uint8_t* p) {
    return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
}

void append_f32(std::vector<std::uint8_t>& out, float v) { append_u32(out, std::bit_cast<std::uint32_t>(v)); }

float load_f32(const std::uint8_t* p) { return std::bit_cast<float>(load_u32(p)); }

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed: " + path.string());
}

void write_depth(const std::filesystem::path& path, std::uint32_t height, std::uint32_t width,
                 std::span<const float> values) {
    if (values.size() != std::size_t(height) * width)
        throw std::invalid_argument("write_depth: value count mismatch for " + path.string());
    std::vector<std::uint8_t> bytes(kDepthMagic, kDepthMagic + 4);
    bytes.reserve(16 + values.size() * 4);
    append_u32(bytes, height);
    append_u32(bytes, width);
    append_u32(bytes, 0);
    for (float v : values) append_f32(bytes, v);
    write_file(path, bytes);
}

std::vector<float> read_depth(const std::filesystem::path& path, std::uint32_t& height, std::uint32_t& width) {
    const auto bytes = read_file(path);
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kDepthMagic, 4) != 0)
        throw DataError("not an IDEP depth file: " + path.string());
    height = load_u32(bytes.data() + 4);
    width = load_u32(bytes.data() + 8);
    const std::size_t n = std::size_t(height) * width;
    if (bytes.size() != 16 + 4 * n) throw DataError("truncated depth file: " + path.string());
    std::vector<float> values(n);
    for (std::size_t i = 0; i < n; ++i) values[i] = load_f32(bytes.data() + 16 + 4 * i);
    return values;
}

}  // namespace dada::io
