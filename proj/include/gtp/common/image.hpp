#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace gtp {

/// Interleaved 8-bit image, row-major, `channels` bytes per pixel (1 or 3).
struct Image {
    int width = 0;
    int height = 0;
    int channels = 3;
    std::vector<std::uint8_t> pixels;

    Image() = default;
    Image(int w, int h, int c, std::uint8_t fill = 0);

    std::uint8_t* at(int x, int y) { return pixels.data() + (static_cast<std::size_t>(y) * width + x) * channels; }
    const std::uint8_t* at(int x, int y) const {
        return pixels.data() + (static_cast<std::size_t>(y) * width + x) * channels;
    }

    Image crop(int x0, int y0, int w, int h) const;
    void paste(const Image& src, int x0, int y0);

    friend bool operator==(const Image&, const Image&) = default;
};

/// ITU-R 601 luma of an RGB pixel, in [0, 255].
inline double luminance(const std::uint8_t* rgb) {
    return 0.299 * rgb[0] + 0.587 * rgb[1] + 0.114 * rgb[2];
}

void write_png(const std::filesystem::path& path, const Image& image);
Image read_png(const std::filesystem::path& path);

/// Binary PGM (P5, maxval 255); image must have one channel.
void write_pgm(const std::filesystem::path& path, const Image& image);
Image read_pgm(const std::filesystem::path& path);

} // namespace gtp
