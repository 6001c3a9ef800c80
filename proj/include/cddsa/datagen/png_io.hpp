#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace cddsa::datagen {

struct PngImage {
    int height = 0;
    int width = 0;
    int channels = 0;                 // 1 (gray) or 3 (rgb)
    std::vector<std::uint8_t> bytes;  // interleaved row-major
};

PngImage read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const PngImage& image);

}  // namespace cddsa::datagen
