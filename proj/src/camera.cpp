#include "surfsplat/camera.h"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace surfsplat {

void Camera::validate() const {
    if (fx <= 0 || fy <= 0) throw std::runtime_error("camera focal must be positive");
    if ((R * R.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-6)
        throw std::runtime_error("camera rotation not orthonormal");
}

std::vector<Camera> load_cameras(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open cameras: " + path);
    nlohmann::json j;
    in >> j;
    std::vector<Camera> cams;
    for (const auto& rec : j) {
        Camera c;
        c.fx = rec.at("fx");
        c.fy = rec.at("fy");
        c.cx = rec.at("cx");
        c.cy = rec.at("cy");
        auto R = rec.at("R");
        for (int i = 0; i < 3; ++i)
            for (int k = 0; k < 3; ++k) c.R(i, k) = R.at(3 * i + k);
        auto t = rec.at("t");
        for (int i = 0; i < 3; ++i) c.t[i] = t.at(i);
        c.width = rec.at("width");
        c.height = rec.at("height");
        c.validate();
        cams.push_back(c);
    }
    return cams;
}

void save_cameras(const std::string& path, const std::vector<Camera>& cams) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& c : cams) {
        nlohmann::json rec;
        rec["fx"] = c.fx;
        rec["fy"] = c.fy;
        rec["cx"] = c.cx;
        rec["cy"] = c.cy;
        std::vector<double> R(9);
        for (int i = 0; i < 3; ++i)
            for (int k = 0; k < 3; ++k) R[3 * i + k] = c.R(i, k);
        rec["R"] = R;
        rec["t"] = {c.t[0], c.t[1], c.t[2]};
        rec["width"] = c.width;
        rec["height"] = c.height;
        j.push_back(rec);
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write cameras: " + path);
    out << j.dump(2) << "\n";
}

Camera look_at(const Vec3& eye, const Vec3& center, const Vec3& up,
               double focal_px, int width, int height) {
    Vec3 fwd = (center - eye).normalized();
    Vec3 right = fwd.cross(up).normalized();
    Vec3 down = fwd.cross(right);
    Camera c;
    c.R.row(0) = right.transpose();
    c.R.row(1) = down.transpose();
    c.R.row(2) = fwd.transpose();
    c.t = -c.R * eye;
    c.fx = c.fy = focal_px;
    c.cx = 0.5 * width;
    c.cy = 0.5 * height;
    c.width = width;
    c.height = height;
    return c;
}

}  // namespace surfsplat
