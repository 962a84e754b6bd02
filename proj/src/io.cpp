#include "splatloc/io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <vector>

#include "binary_io.hpp"
#include "splatloc/errors.hpp"

namespace splatloc::io {

void write_raster(const std::filesystem::path& path, const Image& image) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw Error("cannot open " + path.string() + " for writing");
    }
    out.write(kRasterMagic, 4);
    detail::put_u32(out, kRasterVersion);
    detail::put_u32(out, static_cast<std::uint32_t>(image.height()));
    detail::put_u32(out, static_cast<std::uint32_t>(image.width()));
    detail::put_u32(out, static_cast<std::uint32_t>(image.channels()));
    for (double v : image.data()) {
        detail::put_f32(out, v);
    }
    if (!out) {
        throw Error("failed writing " + path.string());
    }
}

Image read_raster(const std::filesystem::path& path) {
    const std::string name = path.string();
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ParseError(name, 0, "cannot open file");
    }
    detail::expect_magic(in, kRasterMagic, name);
    if (detail::get_u32(in, name) != kRasterVersion) {
        throw ParseError(name, 0, "unsupported raster version");
    }
    const auto h = detail::get_u32(in, name);
    const auto w = detail::get_u32(in, name);
    const auto c = detail::get_u32(in, name);
    if (h > 1u << 15 || w > 1u << 15 || c > 1u << 12) {
        throw ParseError(name, 0, "implausible raster dimensions");
    }
    Image image(static_cast<int>(w), static_cast<int>(h), static_cast<int>(c));
    for (double& v : image.data()) {
        v = detail::get_f32(in, name);
    }
    return image;
}

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};

}  // namespace

void write_png(const std::filesystem::path& path, const Image& image) {
    if (image.channels() != 3 && image.channels() != 1) {
        throw InvalidInput("PNG output needs 1 or 3 channels");
    }
    std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
    if (!fp) {
        throw Error("cannot open " + path.string() + " for writing");
    }
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!info) {
        png_destroy_write_struct(&png, nullptr);
        throw Error("libpng initialisation failed");
    }
    std::vector<png_byte> row(static_cast<std::size_t>(image.width()) * image.channels());
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw Error("libpng failed writing " + path.string());
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, image.width(), image.height(), 8,
                 image.channels() == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int r = 0; r < image.height(); ++r) {
        for (int c = 0; c < image.width(); ++c) {
            for (int ch = 0; ch < image.channels(); ++ch) {
                const double v = std::clamp(image.at(r, c, ch), 0.0, 1.0);
                row[static_cast<std::size_t>(c) * image.channels() + ch] =
                    static_cast<png_byte>(std::lround(v * 255.0));
            }
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Image read_png(const std::filesystem::path& path) {
    std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
    if (!fp) {
        throw ParseError(path.string(), 0, "cannot open file");
    }
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!info) {
        png_destroy_read_struct(&png, nullptr, nullptr);
        throw Error("libpng initialisation failed");
    }
    Image image;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw ParseError(path.string(), 0, "not a readable PNG");
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    image = Image(w, h, 3);
    std::vector<png_byte> row(png_get_rowbytes(png, info));
    for (int r = 0; r < h; ++r) {
        png_read_row(png, row.data(), nullptr);
        for (int c = 0; c < w; ++c) {
            for (int ch = 0; ch < 3; ++ch) {
                image.at(r, c, ch) = row[static_cast<std::size_t>(c) * 3 + ch] / 255.0;
            }
        }
    }
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return image;
}

}  // namespace splatloc::io
