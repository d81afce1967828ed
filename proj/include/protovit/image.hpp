#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace protovit {

// Planar channel-major byte image (CHW).
struct ByteImage {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<std::uint8_t> data;

    std::uint8_t at(std::size_t c, std::size_t y, std::size_t x) const {
        return data[(c * height + y) * width + x];
    }
};

// Binary PPM (P6, maxval 255). On disk pixels are interleaved RGB; in memory
// they are planar.
ByteImage read_ppm(const std::string &path);
void write_ppm(const std::string &path, const ByteImage &image);

}  // namespace protovit
