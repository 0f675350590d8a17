#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

namespace surfsplat {

// Row-major H x W x C image of doubles, linear light.
class Image {
public:
    Image() = default;
    Image(int height, int width, int channels, double fill = 0.0)
        : h_(height), w_(width), c_(channels),
          data_(static_cast<size_t>(height) * width * channels, fill) {}

    int height() const { return h_; }
    int width() const { return w_; }
    int channels() const { return c_; }

    double& at(int y, int x, int ch = 0) {
        return data_[(static_cast<size_t>(y) * w_ + x) * c_ + ch];
    }
    double at(int y, int x, int ch = 0) const {
        return data_[(static_cast<size_t>(y) * w_ + x) * c_ + ch];
    }
    double* pixel(int y, int x) { return &data_[(static_cast<size_t>(y) * w_ + x) * c_]; }
    const double* pixel(int y, int x) const {
        return &data_[(static_cast<size_t>(y) * w_ + x) * c_];
    }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    // Bilinear sample of channel ch at pixel coordinates (x, y), clamped.
    double sample_bilinear(double x, double y, int ch) const;

    bool same_shape(const Image& o) const {
        return h_ == o.h_ && w_ == o.w_ && c_ == o.c_;
    }

private:
    int h_ = 0, w_ = 0, c_ = 0;
    std::vector<double> data_;
};

double srgb_encode(double linear);
double srgb_decode(double srgb);

// 8-bit PNG, sRGB-encoded at the boundary (srgb=false stores raw bytes,
// e.g. for normal maps). 1 or 3 channels.
void save_png(const std::string& path, const Image& img, bool srgb = true);
Image load_png(const std::string& path, bool srgb = true);

// Portable float map, linear values. 1 or 3 channels.
void save_pfm(const std::string& path, const Image& img);
Image load_pfm(const std::string& path);

double psnr(const Image& a, const Image& b);

}  // namespace surfsplat
