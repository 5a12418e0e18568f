#pragma once

#include <png.h>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "fsloc/locmap.hpp"
#include "fsloc/tensor.hpp"

namespace fsloc {

// 8-bit interleaved image, 1 (gray) or 3 (RGB) channels.
struct ImageU8 {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<std::uint8_t> pixels;

    std::uint8_t at(int y, int x, int c) const {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    std::uint8_t& at(int y, int x, int c) {
        return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
};

// ---------------------------------------------------------------------------
// Netpbm (P2/P3/P5/P6)
// ---------------------------------------------------------------------------

namespace detail {

inline int pnm_next_token(std::istream& in) {
    // skips whitespace and '#' comments, returns a nonnegative integer
    char c;
    while (in.get(c)) {
        if (c == '#') {
            while (in.get(c) && c != '\n') {
            }
        } else if (!std::isspace(static_cast<unsigned char>(c))) {
            in.unget();
            int v;
            if (in >> v) return v;
            break;
        }
    }
    throw IoError("truncated netpbm header");
}

}  // namespace detail

inline ImageU8 read_pnm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(detail::msg("cannot open ", path));
    char p, kind;
    in >> p >> kind;
    if (p != 'P' || (kind != '2' && kind != '3' && kind != '5' && kind != '6'))
        throw IoError(detail::msg(path, ": unsupported netpbm magic"));
    const bool color = kind == '3' || kind == '6';
    const bool binary = kind == '5' || kind == '6';
    const int w = detail::pnm_next_token(in);
    const int h = detail::pnm_next_token(in);
    const int maxval = detail::pnm_next_token(in);
    if (w < 1 || h < 1 || maxval < 1 || maxval > 255)
        throw IoError(detail::msg(path, ": bad netpbm header (8-bit only here)"));
    ImageU8 img{w, h, color ? 3 : 1,
                std::vector<std::uint8_t>(static_cast<std::size_t>(w) * h * (color ? 3 : 1))};
    if (binary) {
        in.get();  // single whitespace after maxval
        in.read(reinterpret_cast<char*>(img.pixels.data()),
                static_cast<std::streamsize>(img.pixels.size()));
        if (!in) throw IoError(detail::msg(path, ": truncated pixel data"));
    } else {
        for (auto& px : img.pixels) px = static_cast<std::uint8_t>(detail::pnm_next_token(in));
    }
    return img;
}

inline void write_pnm(const std::string& path, const ImageU8& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(detail::msg("cannot write ", path));
    out << (img.channels == 3 ? "P6" : "P5") << "\n"
        << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()),
              static_cast<std::streamsize>(img.pixels.size()));
    if (!out) throw IoError(detail::msg("short write to ", path));
}

// 16-bit graymap dumps of location maps: values clamped to [0,1] and scaled
// by 65535; samples stored big-endian per the PGM specification.
template <typename T>
void write_pgm16(const std::string& path, const LocationMap<T>& map) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError(detail::msg("cannot write ", path));
    out << "P5\n" << map.width << " " << map.height << "\n65535\n";
    for (const T v : map.values) {
        const double clamped = std::min(1.0, std::max(0.0, static_cast<double>(v)));
        const auto q = static_cast<std::uint16_t>(std::lround(clamped * 65535.0));
        out.put(static_cast<char>(q >> 8));
        out.put(static_cast<char>(q & 0xff));
    }
    if (!out) throw IoError(detail::msg("short write to ", path));
}

template <typename T>
LocationMap<T> read_pgm16(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(detail::msg("cannot open ", path));
    char p, kind;
    in >> p >> kind;
    if (p != 'P' || kind != '5') throw IoError(detail::msg(path, ": expected binary PGM"));
    const int w = detail::pnm_next_token(in);
    const int h = detail::pnm_next_token(in);
    const int maxval = detail::pnm_next_token(in);
    if (maxval != 65535) throw IoError(detail::msg(path, ": expected 16-bit PGM"));
    in.get();
    LocationMap<T> map{h, w, std::vector<T>(static_cast<std::size_t>(w) * h)};
    for (auto& v : map.values) {
        const int hi = in.get(), lo = in.get();
        if (hi < 0 || lo < 0) throw IoError(detail::msg(path, ": truncated pixel data"));
        v = static_cast<T>(((hi << 8) | lo) / 65535.0);
    }
    return map;
}

// ---------------------------------------------------------------------------
// PNG via libpng; everything is normalized to 8-bit gray or RGB on read.
// ---------------------------------------------------------------------------

inline ImageU8 read_png(const std::string& path) {
    std::unique_ptr<std::FILE, int (*)(std::FILE*)> fp(std::fopen(path.c_str(), "rb"),
                                                       &std::fclose);
    if (!fp) throw IoError(detail::msg("cannot open ", path));
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError(detail::msg(path, ": png decode error"));
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    const int ch = static_cast<int>(png_get_channels(png, info));
    if (ch != 1 && ch != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw IoError(detail::msg(path, ": unsupported channel count ", ch));
    }
    ImageU8 img{w, h, ch, std::vector<std::uint8_t>(static_cast<std::size_t>(w) * h * ch)};
    std::vector<png_bytep> rows(static_cast<std::size_t>(h));
    for (int y = 0; y < h; ++y)
        rows[static_cast<std::size_t>(y)] =
            img.pixels.data() + static_cast<std::size_t>(y) * w * ch;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    return img;
}

inline void write_png(const std::string& path, const ImageU8& img) {
    std::unique_ptr<std::FILE, int (*)(std::FILE*)> fp(std::fopen(path.c_str(), "wb"),
                                                       &std::fclose);
    if (!fp) throw IoError(detail::msg("cannot write ", path));
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw IoError("libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw IoError(detail::msg(path, ": png encode error"));
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
                 static_cast<png_uint_32>(img.height), 8,
                 img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
    for (int y = 0; y < img.height; ++y)
        rows[static_cast<std::size_t>(y)] = const_cast<png_bytep>(
            img.pixels.data() + static_cast<std::size_t>(y) * img.width * img.channels);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

inline ImageU8 read_image(const std::string& path) {
    const auto dot = path.rfind('.');
    const std::string ext = dot == std::string::npos ? "" : path.substr(dot + 1);
    if (ext == "png" || ext == "PNG") return read_png(path);
    return read_pnm(path);
}

// ---------------------------------------------------------------------------
// Conversions
// ---------------------------------------------------------------------------

// 1x3xHxW tensor with values in [0,1]; gray inputs replicate their channel.
template <typename T>
Tensor<T> image_to_tensor(const ImageU8& img) {
    Tensor<T> t = Tensor<T>::zeros({1, 3, img.height, img.width});
    T* out = t.data_mut();
    const long long plane = static_cast<long long>(img.height) * img.width;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c)
                out[c * plane + static_cast<long long>(y) * img.width + x] =
                    static_cast<T>(img.at(y, x, img.channels == 3 ? c : 0) / 255.0);
    return t;
}

// General-purpose bilinear resize (both directions), align-corners-false.
// Distinct from the differentiable upsampling op: this is loader plumbing.
inline ImageU8 resize_bilinear(const ImageU8& img, int out_w, int out_h) {
    ImageU8 out{out_w, out_h, img.channels,
                std::vector<std::uint8_t>(static_cast<std::size_t>(out_w) * out_h *
                                          img.channels)};
    const double sy = static_cast<double>(img.height) / out_h;
    const double sx = static_cast<double>(img.width) / out_w;
    for (int y = 0; y < out_h; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        if (fy < 0) fy = 0;
        int y0 = static_cast<int>(fy);
        if (y0 > img.height - 1) y0 = img.height - 1;
        const int y1 = std::min(y0 + 1, img.height - 1);
        const double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            if (fx < 0) fx = 0;
            int x0 = static_cast<int>(fx);
            if (x0 > img.width - 1) x0 = img.width - 1;
            const int x1 = std::min(x0 + 1, img.width - 1);
            const double wx = fx - x0;
            for (int c = 0; c < img.channels; ++c) {
                const double v = (1 - wy) * ((1 - wx) * img.at(y0, x0, c) +
                                             wx * img.at(y0, x1, c)) +
                                 wy * ((1 - wx) * img.at(y1, x0, c) + wx * img.at(y1, x1, c));
                out.at(y, x, c) = static_cast<std::uint8_t>(std::lround(v));
            }
        }
    }
    return out;
}

}  // namespace fsloc
