#pragma once

#include <string>
#include <vector>

#include "surfsplat/quat.h"

namespace surfsplat {

// Pinhole camera: x_cam = R x_world + t, pixel = (fx*u + cx, fy*v + cy)
// with (u, v) = (X/Z, Y/Z).
struct Camera {
    double fx = 1, fy = 1, cx = 0, cy = 0;
    Mat3 R = Mat3::Identity();
    Vec3 t = Vec3::Zero();
    int width = 0, height = 0;

    Vec3 to_camera(const Vec3& p) const { return R * p + t; }
    Eigen::Vector2d project(const Vec3& world) const {
        Vec3 c = to_camera(world);
        return {fx * c[0] / c[2] + cx, fy * c[1] / c[2] + cy};
    }
    // Normalized-plane coordinates of pixel center (px, py).
    Eigen::Vector2d pixel_to_plane(double px, double py) const {
        return {(px - cx) / fx, (py - cy) / fy};
    }
    Vec3 position() const { return -R.transpose() * t; }
    void validate() const;
};

std::vector<Camera> load_cameras(const std::string& path);
void save_cameras(const std::string& path, const std::vector<Camera>& cams);

// Camera at `eye` looking at `center`, +y image axis roughly opposite `up`.
Camera look_at(const Vec3& eye, const Vec3& center, const Vec3& up,
               double focal_px, int width, int height);

}  // namespace surfsplat
