#include "cddsa/datagen/png_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>

#include "cddsa/core/errors.hpp"

namespace cddsa::datagen {

namespace {
struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;
}  // namespace

PngImage read_png(const std::filesystem::path& path) {
    FilePtr fp(std::fopen(path.string().c_str(), "rb"));
    if (!fp) throw DataError("cannot open PNG for reading: " + path.string());

    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw DataError("libpng: failed to create read struct");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw DataError("libpng: failed to create info struct");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("libpng: failed to decode " + path.string());
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);

    // Normalize everything to 8-bit gray or RGB.
    png_set_strip_16(png);
    png_set_packing(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (png_get_color_type(png, info) == PNG_COLOR_TYPE_GRAY &&
        png_get_bit_depth(png, info) < 8)
        png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    PngImage out;
    out.height = static_cast<int>(png_get_image_height(png, info));
    out.width = static_cast<int>(png_get_image_width(png, info));
    out.channels = static_cast<int>(png_get_channels(png, info));
    if (out.channels != 1 && out.channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw DataError("unsupported PNG channel count in " + path.string());
    }
    out.bytes.resize(static_cast<std::size_t>(out.height) * out.width * out.channels);
    std::vector<png_bytep> rows(static_cast<std::size_t>(out.height));
    const std::size_t stride = static_cast<std::size_t>(out.width) * out.channels;
    for (int y = 0; y < out.height; ++y) rows[static_cast<std::size_t>(y)] = out.bytes.data() + y * stride;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return out;
}

void write_png(const std::filesystem::path& path, const PngImage& image) {
    if (image.channels != 1 && image.channels != 3)
        throw DataError("write_png: channels must be 1 or 3");
    if (image.bytes.size() !=
        static_cast<std::size_t>(image.height) * image.width * image.channels)
        throw DataError("write_png: byte count does not match dimensions");

    FilePtr fp(std::fopen(path.string().c_str(), "wb"));
    if (!fp) throw DataError("cannot open PNG for writing: " + path.string());

    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw DataError("libpng: failed to create write struct");
    png_infop info = png_create_info_struct(png);
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw DataError("libpng: failed to create info struct");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw DataError("libpng: failed to encode " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(image.width),
                 static_cast<png_uint_32>(image.height), 8,
                 image.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    const std::size_t stride = static_cast<std::size_t>(image.width) * image.channels;
    for (int y = 0; y < image.height; ++y)
        png_write_row(png, const_cast<png_bytep>(image.bytes.data() + y * stride));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

}  // namespace cddsa::datagen
