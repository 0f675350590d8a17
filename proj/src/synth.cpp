#include "surfsplat/synth.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

namespace surfsplat {

namespace {

// Welds duplicate vertices by quantized position.
struct VertexWelder {
    std::map<std::array<long long, 3>, int> lookup;
    std::vector<Vec3> vertices;

    int add(const Vec3& v) {
        std::array<long long, 3> key;
        for (int i = 0; i < 3; ++i) key[i] = std::llround(v[i] * 1e9);
        auto it = lookup.find(key);
        if (it != lookup.end()) return it->second;
        const int id = static_cast<int>(vertices.size());
        vertices.push_back(v);
        lookup.emplace(key, id);
        return id;
    }
};

}  // namespace

Mesh make_cube(double half, int grid) {
    if (grid < 1) throw MeshError("make_cube: grid must be positive");
    VertexWelder weld;
    std::vector<std::array<int, 3>> faces;
    // Six sides; (axis, sign) picks the fixed coordinate, (a, b) span it.
    for (int axis = 0; axis < 3; ++axis) {
        for (int sign = -1; sign <= 1; sign += 2) {
            const int a = (axis + 1) % 3, b = (axis + 2) % 3;
            for (int j = 0; j < grid; ++j) {
                for (int i = 0; i < grid; ++i) {
                    auto corner = [&](int ii, int jj) {
                        Vec3 p;
                        p[axis] = sign * half;
                        p[a] = (-1.0 + 2.0 * ii / grid) * half;
                        p[b] = (-1.0 + 2.0 * jj / grid) * half;
                        return weld.add(p);
                    };
                    const int c00 = corner(i, j), c10 = corner(i + 1, j);
                    const int c01 = corner(i, j + 1), c11 = corner(i + 1, j + 1);
                    if (sign > 0) {
                        faces.push_back({c00, c10, c11});
                        faces.push_back({c00, c11, c01});
                    } else {
                        faces.push_back({c00, c11, c10});
                        faces.push_back({c00, c01, c11});
                    }
                }
            }
        }
    }
    Mesh mesh(std::move(weld.vertices), std::move(faces));
    if (mesh.signed_volume() < 0) throw MeshError("make_cube: inward orientation");
    return mesh;
}

Mesh make_icosphere(double radius, int subdiv) {
    const double t = (1.0 + std::sqrt(5.0)) / 2.0;
    std::vector<Vec3> verts = {
        {-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0},
        {0, -1, t}, {0, 1, t}, {0, -1, -t}, {0, 1, -t},
        {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
    for (auto& v : verts) v.normalize();
    std::vector<std::array<int, 3>> faces = {
        {0, 11, 5}, {0, 5, 1}, {0, 1, 7}, {0, 7, 10}, {0, 10, 11},
        {1, 5, 9}, {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
        {3, 9, 4}, {3, 4, 2}, {3, 2, 6}, {3, 6, 8}, {3, 8, 9},
        {4, 9, 5}, {2, 4, 11}, {6, 2, 10}, {8, 6, 7}, {9, 8, 1}};

    for (int s = 0; s < subdiv; ++s) {
        std::map<std::pair<int, int>, int> mid;
        auto midpoint = [&](int a, int b) {
            const auto key = std::minmax(a, b);
            auto it = mid.find(key);
            if (it != mid.end()) return it->second;
            const int id = static_cast<int>(verts.size());
            verts.push_back((verts[a] + verts[b]).normalized());
            mid.emplace(key, id);
            return id;
        };
        std::vector<std::array<int, 3>> next;
        next.reserve(faces.size() * 4);
        for (const auto& f : faces) {
            const int ab = midpoint(f[0], f[1]);
            const int bc = midpoint(f[1], f[2]);
            const int ca = midpoint(f[2], f[0]);
            next.push_back({f[0], ab, ca});
            next.push_back({f[1], bc, ab});
            next.push_back({f[2], ca, bc});
            next.push_back({ab, bc, ca});
        }
        faces.swap(next);
    }
    for (auto& v : verts) v *= radius;
    Mesh mesh(std::move(verts), std::move(faces));
    if (mesh.signed_volume() < 0) throw MeshError("make_icosphere: inward orientation");
    return mesh;
}

std::vector<Vec3> checker_face_colors(const Mesh& mesh, double cell) {
    static const Vec3 palette[2] = {{0.85, 0.35, 0.25}, {0.2, 0.45, 0.85}};
    std::vector<Vec3> colors(mesh.num_faces());
    for (int f = 0; f < mesh.num_faces(); ++f) {
        const Vec3 c = mesh.face_centroid(f);
        int parity = 0;
        for (int i = 0; i < 3; ++i)
            parity += static_cast<int>(std::floor(c[i] / cell + 1024.0));
        colors[f] = palette[parity & 1];
    }
    return colors;
}

std::vector<Camera> fibonacci_cameras(int count, const Vec3& center, double radius,
                                      double focal_px, int width, int height) {
    std::vector<Camera> cams;
    cams.reserve(count);
    const double golden = M_PI * (3.0 - std::sqrt(5.0));
    for (int i = 0; i < count; ++i) {
        // Offset lattice avoids exact poles (degenerate look-at up vector).
        const double z = 1.0 - 2.0 * (i + 0.5) / count;
        const double rho = std::sqrt(std::max(0.0, 1.0 - z * z));
        const double phi = golden * i;
        const Vec3 eye = center + radius * Vec3(rho * std::cos(phi),
                                                rho * std::sin(phi), z);
        cams.push_back(look_at(eye, center, Vec3(0, 0, 1), focal_px, width, height));
    }
    return cams;
}

namespace {

// Moller-Trumbore; t is in units of the (unnormalized) direction.
bool ray_triangle(const Vec3& orig, const Vec3& dir, const Vec3& v0, const Vec3& v1,
                  const Vec3& v2, double& t, double& bu, double& bv) {
    const Vec3 e1 = v1 - v0, e2 = v2 - v0;
    const Vec3 pvec = dir.cross(e2);
    const double det = e1.dot(pvec);
    if (std::abs(det) < 1e-14) return false;
    const double inv = 1.0 / det;
    const Vec3 tvec = orig - v0;
    bu = tvec.dot(pvec) * inv;
    if (bu < 0 || bu > 1) return false;
    const Vec3 qvec = tvec.cross(e1);
    bv = dir.dot(qvec) * inv;
    if (bv < 0 || bu + bv > 1) return false;
    t = e2.dot(qvec) * inv;
    return t > 1e-9;
}

struct Hit {
    int face = -1;
    double t = std::numeric_limits<double>::infinity();
    double bu = 0, bv = 0;
};

Hit closest_hit(const Mesh& mesh, const Vec3& orig, const Vec3& dir) {
    Hit best;
    for (int f = 0; f < mesh.num_faces(); ++f) {
        const auto& fv = mesh.face(f);
        double t, bu, bv;
        if (ray_triangle(orig, dir, mesh.vertex(fv[0]), mesh.vertex(fv[1]),
                         mesh.vertex(fv[2]), t, bu, bv) &&
            t < best.t) {
            best = {f, t, bu, bv};
        }
    }
    return best;
}

}  // namespace

RaycastImages render_raycast(const Mesh& world_mesh,
                             const std::vector<Vec3>& face_colors, const Camera& cam) {
    RaycastImages out;
    out.color = Image(cam.height, cam.width, 3);
    out.depth = Image(cam.height, cam.width, 1);
    const Vec3 orig = cam.position();
    const Mat3 Rt = cam.R.transpose();
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            const Eigen::Vector2d uv = cam.pixel_to_plane(x + 0.5, y + 0.5);
            // Direction with unit camera-space z, so t equals camera depth.
            const Vec3 dir = Rt * Vec3(uv[0], uv[1], 1.0);
            const Hit hit = closest_hit(world_mesh, orig, dir);
            if (hit.face < 0) continue;
            for (int c = 0; c < 3; ++c)
                out.color.at(y, x, c) = face_colors[hit.face][c];
            out.depth.at(y, x) = hit.t;
        }
    }
    return out;
}

RaycastImages render_raycast_baked(const Mesh& world_mesh, const AttributeAtlas& atlas,
                                   const Camera& cam) {
    RaycastImages out;
    out.color = Image(cam.height, cam.width, 3);
    out.depth = Image(cam.height, cam.width, 1);
    const Vec3 orig = cam.position();
    const Mat3 Rt = cam.R.transpose();
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            const Eigen::Vector2d uv = cam.pixel_to_plane(x + 0.5, y + 0.5);
            const Vec3 dir = Rt * Vec3(uv[0], uv[1], 1.0);
            const Hit hit = closest_hit(world_mesh, orig, dir);
            if (hit.face < 0) continue;
            const Vec3 beta(1.0 - hit.bu - hit.bv, hit.bu, hit.bv);
            const Vec3 c = atlas.sample_diffuse(hit.face, beta);
            for (int ch = 0; ch < 3; ++ch) out.color.at(y, x, ch) = c[ch];
            const Vec3 p = orig + hit.t * dir;
            const Vec3 p_star =
                p + atlas.sample_displacement(hit.face, beta) *
                        world_mesh.face_normal(hit.face);
            out.depth.at(y, x) = cam.to_camera(p_star)[2];
        }
    }
    return out;
}

std::vector<Vec3> sample_surface(const Mesh& mesh, int count, std::mt19937_64& rng) {
    std::vector<double> cdf(mesh.num_faces());
    double acc = 0;
    for (int f = 0; f < mesh.num_faces(); ++f) {
        acc += mesh.face_area(f);
        cdf[f] = acc;
    }
    if (acc <= 0) throw MeshError("sample_surface: zero-area mesh");
    std::uniform_real_distribution<double> uni(0, 1);
    std::vector<Vec3> out;
    out.reserve(count);
    for (int i = 0; i < count; ++i) {
        const double target = uni(rng) * acc;
        const int f = static_cast<int>(
            std::lower_bound(cdf.begin(), cdf.end(), target) - cdf.begin());
        double a = uni(rng), b = uni(rng);
        if (a + b > 1) {
            a = 1 - a;
            b = 1 - b;
        }
        const auto& fv = mesh.face(std::min(f, mesh.num_faces() - 1));
        out.push_back((1 - a - b) * mesh.vertex(fv[0]) + a * mesh.vertex(fv[1]) +
                      b * mesh.vertex(fv[2]));
    }
    return out;
}

double chamfer_distance(const Mesh& a, const Mesh& b, int samples_per_side,
                        uint64_t seed) {
    std::mt19937_64 rng(seed);
    const std::vector<Vec3> pa = sample_surface(a, samples_per_side, rng);
    const std::vector<Vec3> pb = sample_surface(b, samples_per_side, rng);
    auto mean_nn = [](const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
        double sum = 0;
        for (const Vec3& p : from) {
            double best = std::numeric_limits<double>::infinity();
            for (const Vec3& q : to) best = std::min(best, (p - q).squaredNorm());
            sum += std::sqrt(best);
        }
        return sum / from.size();
    };
    return 0.5 * (mean_nn(pa, pb) + mean_nn(pb, pa));
}

}  // namespace surfsplat
