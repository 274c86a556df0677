#include "gtp/common/image.hpp"

#include "gtp/common/errors.hpp"

#include <png.h>

#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>

namespace gtp {

Image::Image(int w, int h, int c, std::uint8_t fill) : width(w), height(h), channels(c) {
    if (w < 0 || h < 0 || (c != 1 && c != 3)) throw std::invalid_argument("invalid image geometry");
    pixels.assign(static_cast<std::size_t>(w) * h * c, fill);
}

Image Image::crop(int x0, int y0, int w, int h) const {
    if (x0 < 0 || y0 < 0 || x0 + w > width || y0 + h > height) throw std::out_of_range("crop outside image");
    Image out(w, h, channels);
    const std::size_t row_bytes = static_cast<std::size_t>(w) * channels;
    for (int y = 0; y < h; ++y) std::copy_n(at(x0, y0 + y), row_bytes, out.at(0, y));
    return out;
}

void Image::paste(const Image& src, int x0, int y0) {
    if (src.channels != channels || x0 < 0 || y0 < 0 || x0 + src.width > width || y0 + src.height > height) {
        throw std::out_of_range("paste outside image");
    }
    const std::size_t row_bytes = static_cast<std::size_t>(src.width) * channels;
    for (int y = 0; y < src.height; ++y) std::copy_n(src.at(0, y), row_bytes, at(x0, y0 + y));
}

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
    FilePtr f(std::fopen(path.c_str(), mode));
    if (!f) throw DataError("cannot open " + path.string());
    return f;
}

[[noreturn]] void png_fail(png_structp, png_const_charp msg) { throw DataError(std::string("png: ") + msg); }
void png_warn(png_structp, png_const_charp) {}

} // namespace

void write_png(const std::filesystem::path& path, const Image& image) {
    FilePtr f = open_file(path, "wb");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
    png_infop info = png_create_info_struct(png);
    try {
        png_init_io(png, f.get());
        png_set_IHDR(png, info, image.width, image.height, 8,
                     image.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                     PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
        png_write_info(png, info);
        for (int y = 0; y < image.height; ++y) png_write_row(png, image.at(0, y));
        png_write_end(png, nullptr);
    } catch (...) {
        png_destroy_write_struct(&png, &info);
        throw;
    }
    png_destroy_write_struct(&png, &info);
}

Image read_png(const std::filesystem::path& path) {
    FilePtr f = open_file(path, "rb");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
    png_infop info = png_create_info_struct(png);
    Image image;
    try {
        png_init_io(png, f.get());
        png_read_info(png, info);
        const int color = png_get_color_type(png, info);
        if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
        if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
        if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
        if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
        png_read_update_info(png, info);
        const int channels = png_get_channels(png, info);
        image = Image(static_cast<int>(png_get_image_width(png, info)), static_cast<int>(png_get_image_height(png, info)),
                      channels);
        for (int y = 0; y < image.height; ++y) png_read_row(png, image.at(0, y), nullptr);
        png_read_end(png, nullptr);
    } catch (...) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw;
    }
    png_destroy_read_struct(&png, &info, nullptr);
    return image;
}

void write_pgm(const std::filesystem::path& path, const Image& image) {
    if (image.channels != 1) throw std::invalid_argument("PGM needs a single-channel image");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open " + path.string());
    out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
    if (!out) throw DataError("write failed: " + path.string());
}

namespace {

int next_header_int(std::istream& in, const std::string& name) {
    in >> std::ws;
    while (in.peek() == '#') {
        std::string skip;
        std::getline(in, skip);
        in >> std::ws;
    }
    int v = -1;
    if (!(in >> v)) throw DataError("malformed PGM header in " + name);
    return v;
}

} // namespace

Image read_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::string magic;
    in >> magic;
    if (magic != "P5") throw DataError(path.string() + " is not a binary PGM");
    const int w = next_header_int(in, path.string());
    const int h = next_header_int(in, path.string());
    const int maxval = next_header_int(in, path.string());
    if (w <= 0 || h <= 0 || maxval != 255) throw DataError("unsupported PGM geometry in " + path.string());
    in.get();
    Image image(w, h, 1);
    in.read(reinterpret_cast<char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
    if (in.gcount() != static_cast<std::streamsize>(image.pixels.size())) throw DataError("truncated PGM " + path.string());
    return image;
}

} // namespace gtp
