#include "surfsplat/image.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <png.h>

namespace surfsplat {

double Image::sample_bilinear(double x, double y, int ch) const {
    x = std::clamp(x, 0.0, static_cast<double>(w_ - 1));
    y = std::clamp(y, 0.0, static_cast<double>(h_ - 1));
    int x0 = static_cast<int>(std::floor(x));
    int y0 = static_cast<int>(std::floor(y));
    int x1 = std::min(x0 + 1, w_ - 1);
    int y1 = std::min(y0 + 1, h_ - 1);
    double fx = x - x0, fy = y - y0;
    return (1 - fy) * ((1 - fx) * at(y0, x0, ch) + fx * at(y0, x1, ch)) +
           fy * ((1 - fx) * at(y1, x0, ch) + fx * at(y1, x1, ch));
}

double srgb_encode(double v) {
    v = std::clamp(v, 0.0, 1.0);
    return v <= 0.0031308 ? 12.92 * v : 1.055 * std::pow(v, 1.0 / 2.4) - 0.055;
}

double srgb_decode(double v) {
    v = std::clamp(v, 0.0, 1.0);
    return v <= 0.04045 ? v / 12.92 : std::pow((v + 0.055) / 1.055, 2.4);
}

void save_png(const std::string& path, const Image& img, bool srgb) {
    if (img.channels() != 1 && img.channels() != 3)
        throw std::runtime_error("PNG output supports 1 or 3 channels");
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw std::runtime_error("cannot write PNG: " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw std::runtime_error("libpng failure writing " + path);
    }
    png_init_io(png, fp);
    png_set_IHDR(png, info, img.width(), img.height(), 8,
                 img.channels() == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_byte> row(static_cast<size_t>(img.width()) * img.channels());
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x)
            for (int c = 0; c < img.channels(); ++c)
                row[x * img.channels() + c] = static_cast<png_byte>(std::lround(
                    255.0 * std::clamp(srgb ? srgb_encode(img.at(y, x, c))
                                            : img.at(y, x, c),
                                       0.0, 1.0)));
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

Image load_png(const std::string& path, bool srgb) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw std::runtime_error("cannot open PNG: " + path);
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw std::runtime_error("libpng failure reading " + path);
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);
    int w = png_get_image_width(png, info);
    int h = png_get_image_height(png, info);
    int ch = png_get_channels(png, info);
    if (ch != 1 && ch != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw std::runtime_error("unsupported PNG channel count");
    }
    Image img(h, w, ch);
    std::vector<png_byte> row(static_cast<size_t>(w) * ch);
    for (int y = 0; y < h; ++y) {
        png_read_row(png, row.data(), nullptr);
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < ch; ++c)
                img.at(y, x, c) = srgb ? srgb_decode(row[x * ch + c] / 255.0)
                                       : row[x * ch + c] / 255.0;
    }
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return img;
}

void save_pfm(const std::string& path, const Image& img) {
    if (img.channels() != 1 && img.channels() != 3)
        throw std::runtime_error("PFM output supports 1 or 3 channels");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write PFM: " + path);
    out << (img.channels() == 3 ? "PF" : "Pf") << "\n"
        << img.width() << " " << img.height() << "\n-1.0\n";
    // PFM stores rows bottom-to-top.
    std::vector<float> row(static_cast<size_t>(img.width()) * img.channels());
    for (int y = img.height() - 1; y >= 0; --y) {
        for (int x = 0; x < img.width(); ++x)
            for (int c = 0; c < img.channels(); ++c)
                row[x * img.channels() + c] = static_cast<float>(img.at(y, x, c));
        out.write(reinterpret_cast<const char*>(row.data()),
                  static_cast<std::streamsize>(row.size() * sizeof(float)));
    }
}

Image load_pfm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open PFM: " + path);
    std::string magic;
    int w, h;
    double scale;
    in >> magic >> w >> h >> scale;
    in.get();  // single whitespace after header
    if (magic != "PF" && magic != "Pf") throw std::runtime_error("bad PFM magic");
    if (scale > 0) throw std::runtime_error("big-endian PFM not supported");
    int ch = magic == "PF" ? 3 : 1;
    Image img(h, w, ch);
    std::vector<float> row(static_cast<size_t>(w) * ch);
    for (int y = h - 1; y >= 0; --y) {
        in.read(reinterpret_cast<char*>(row.data()),
                static_cast<std::streamsize>(row.size() * sizeof(float)));
        if (!in) throw std::runtime_error("truncated PFM");
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < ch; ++c) img.at(y, x, c) = row[x * ch + c];
    }
    return img;
}

double psnr(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw std::runtime_error("psnr: shape mismatch");
    double mse = 0;
    for (size_t i = 0; i < a.data().size(); ++i) {
        double d = a.data()[i] - b.data()[i];
        mse += d * d;
    }
    mse /= static_cast<double>(a.data().size());
    if (mse == 0) return std::numeric_limits<double>::infinity();
    return -10.0 * std::log10(mse);
}

}  // namespace surfsplat
