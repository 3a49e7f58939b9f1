#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace hess {

/// 8-bit single-channel image, row-major.
struct GrayImage {
    std::size_t width = 0;
    std::size_t height = 0;
    std::vector<std::uint8_t> pixels;

    std::uint8_t at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
    bool operator==(const GrayImage&) const = default;
};

/// Binary PGM (P5, maxval 255).
GrayImage read_pgm(const std::filesystem::path& path);
void write_pgm(const GrayImage& image, const std::filesystem::path& path);

/// Binary PPM (P6) rendering of a label map through the fixed palette.
/// Labels beyond the palette wrap around; label 255 renders black.
void write_label_ppm(const GrayImage& labels, const std::filesystem::path& path);

/// 19-entry RGB palette used for label renderings.
const std::array<std::array<std::uint8_t, 3>, 19>& label_palette();

}  // namespace hess
