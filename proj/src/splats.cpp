#include "surfsplat/splats.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

namespace surfsplat {

void AnchoredSplat::set_opacity(double o) {
    o = std::clamp(o, 1e-6, 1.0 - 1e-6);
    opacity_logit = std::log(o / (1.0 - o));
}

void SplatSet::rebuild_face_index(int num_faces) {
    face_index.assign(num_faces, {});
    for (int i = 0; i < size(); ++i) face_index[splats[i].face_id].push_back(i);
}

Vec3 world_position(const AnchoredSplat& s, const std::vector<Vec3>& tv, const Mesh& mesh) {
    const auto& f = mesh.face(s.face_id);
    Vec3 e1 = tv[f[1]] - tv[f[0]];
    Vec3 e2 = tv[f[2]] - tv[f[0]];
    Vec3 c = e1.cross(e2);
    double n = c.norm();
    if (0.5 * n < kEpsArea) throw MeshError("degenerate face");
    Vec3 p = s.beta[0] * tv[f[0]] + s.beta[1] * tv[f[1]] + s.beta[2] * tv[f[2]];
    return p + s.d * (c / n);
}

Vec3 world_position(const AnchoredSplat& s, const Mesh& mesh, const GlobalTransform& t) {
    return world_position(s, apply_global_transform(mesh, t), mesh);
}

Quat world_rotation(const AnchoredSplat& s, const Mesh& mesh) {
    Quat qf = face_frame_quaternion(mesh.face_normal(s.face_id));
    Quat q = quat_mul(s.q_bar.normalized(), qf);
    return q.normalized();
}

Mat3 world_covariance(const AnchoredSplat& s, const Mesh& mesh, SplatMode mode,
                      double thickness2d) {
    Mat3 r = quat_to_mat(world_rotation(s, mesh));
    Vec3 sc = s.scale();
    if (mode == SplatMode::Splat2D) sc[2] = thickness2d;
    return r * sc.cwiseProduct(sc).asDiagonal() * r.transpose();
}

namespace {

// Move the splat across local edge m of its face, expressing beta in the
// neighbor's vertex order. Returns false on a boundary edge.
bool cross_edge(AnchoredSplat& s, const Mesh& mesh, int m) {
    int g = mesh.edge_opposite(s.face_id, m);
    if (g == kBoundary) return false;
    const auto& old_face = mesh.face(s.face_id);
    Vec3 nb = Vec3::Zero();
    for (int i = 0; i < 3; ++i) {
        if (i == m) continue;
        int li = mesh.local_index(g, old_face[i]);
        if (li < 0) throw MeshError("inconsistent edge adjacency");
        nb[li] = s.beta[i];
    }
    s.face_id = g;
    s.beta = nb;
    return true;
}

void clamp_and_renormalize(Vec3& beta) {
    beta = beta.cwiseMax(0.0);
    double sum = beta.sum();
    if (sum <= 0.0) {
        beta = Vec3::Constant(1.0 / 3.0);
    } else {
        beta /= sum;
    }
}

}  // namespace

WalkResult reanchor_walk(AnchoredSplat& s, const Mesh& mesh) {
    WalkResult res;
    while (s.beta.minCoeff() < 0.0) {
        if (res.steps >= kMaxWalkSteps) {
            clamp_and_renormalize(s.beta);
            res.clamped_in_place = true;
            return res;
        }
        // Most negative coordinate; ties resolved by lowest local index.
        int m = 0;
        for (int i = 1; i < 3; ++i)
            if (s.beta[i] < s.beta[m]) m = i;
        s.beta[m] = 0.0;
        double sum = s.beta[0] + s.beta[1] + s.beta[2];
        if (sum <= 0.0) {
            clamp_and_renormalize(s.beta);
            res.clamped_in_place = true;
            return res;
        }
        s.beta /= sum;
        if (!cross_edge(s, mesh, m)) {
            // Boundary: clamp and stay.
            clamp_and_renormalize(s.beta);
            res.clamped_in_place = true;
            return res;
        }
        ++res.steps;
    }
    double sum = s.beta.sum();
    if (sum > 0.0) s.beta /= sum;
    return res;
}

namespace {

double radical_inverse(unsigned bits) {
    bits = (bits << 16u) | (bits >> 16u);
    bits = ((bits & 0x55555555u) << 1u) | ((bits & 0xAAAAAAAAu) >> 1u);
    bits = ((bits & 0x33333333u) << 2u) | ((bits & 0xCCCCCCCCu) >> 2u);
    bits = ((bits & 0x0F0F0F0Fu) << 4u) | ((bits & 0xF0F0F0F0u) >> 4u);
    bits = ((bits & 0x00FF00FFu) << 8u) | ((bits & 0xFF00FF00u) >> 8u);
    return bits * 2.3283064365386963e-10;
}

Vec3 stratified_barycentric(int k, int n) {
    if (n == 1) return Vec3::Constant(1.0 / 3.0);
    double u = (k + 0.5) / n;
    double v = radical_inverse(static_cast<unsigned>(k) + 1u);
    double su = std::sqrt(u);
    return Vec3(1.0 - su, su * (1.0 - v), su * v);
}

}  // namespace

SplatSet seed_splats(const Mesh& mesh, int per_face_count, SplatMode mode,
                     double opacity_init, double scale_fraction) {
    SplatSet set;
    set.mode = mode;
    double s0 = std::max(scale_fraction * mesh.mean_edge_length(), kEpsScale);
    for (int f = 0; f < mesh.num_faces(); ++f) {
        for (int k = 0; k < per_face_count; ++k) {
            AnchoredSplat s;
            s.face_id = f;
            s.beta = stratified_barycentric(k, per_face_count);
            s.set_scale(Vec3::Constant(s0));
            s.set_opacity(opacity_init);
            set.splats.push_back(s);
        }
    }
    set.rebuild_face_index(mesh.num_faces());
    return set;
}

DensifyReport densify_and_prune(SplatSet& set, const DensifyStats& stats,
                                const Mesh& mesh, int iteration,
                                const DensifyParams& params) {
    DensifyReport rep;
    std::mt19937 rng(params.seed ^ (static_cast<unsigned>(iteration) * 2654435761u));
    std::uniform_real_distribution<double> jitter(-0.1, 0.1);
    double split_scale = params.split_scale_threshold * mesh.mean_edge_length();

    std::vector<AnchoredSplat> next;
    next.reserve(set.splats.size());
    for (int i = 0; i < set.size(); ++i) {
        AnchoredSplat s = set.splats[i];
        if (s.opacity() < params.opacity_prune) {
            ++rep.pruned;
            continue;
        }
        double mean_grad = stats.grad_count.empty() || stats.grad_count[i] == 0
                               ? 0.0
                               : stats.grad_norm_sum[i] / stats.grad_count[i];
        if (mean_grad > params.grad_threshold) {
            if (s.scale().maxCoeff() > split_scale) {
                // Split: two half-scale children, jittered on the face.
                for (int c = 0; c < 2; ++c) {
                    AnchoredSplat child = s;
                    child.log_scale.array() -= std::log(2.0);
                    child.beta += Vec3(jitter(rng), jitter(rng), jitter(rng));
                    child.beta[2] = 1.0 - child.beta[0] - child.beta[1];
                    reanchor_walk(child, mesh);
                    next.push_back(child);
                }
                ++rep.split;
                continue;
            }
            AnchoredSplat clone = s;
            clone.beta += Vec3(jitter(rng), jitter(rng), jitter(rng));
            clone.beta[2] = 1.0 - clone.beta[0] - clone.beta[1];
            reanchor_walk(clone, mesh);
            next.push_back(clone);
            ++rep.cloned;
        }
        next.push_back(s);
    }
    if (params.opacity_reset_interval > 0 && iteration > 0 &&
        iteration % params.opacity_reset_interval == 0) {
        for (auto& s : next) s.set_opacity(std::min(s.opacity(), params.opacity_reset));
        rep.opacity_was_reset = true;
    }
    set.splats = std::move(next);
    set.rebuild_face_index(mesh.num_faces());
    return rep;
}

void save_splats(const std::string& path, const SplatSet& set) {
    std::ofstream out(path);
    if (!out) throw MeshError("cannot write splats: " + path);
    out.precision(17);
    out << (set.mode == SplatMode::Splat2D ? "2d" : "3d") << " " << set.size() << "\n";
    for (const auto& s : set.splats) {
        Vec3 sc = s.scale();
        out << s.face_id << " " << s.beta[0] << " " << s.beta[1] << " " << s.beta[2]
            << " " << s.d << " " << s.q_bar[0] << " " << s.q_bar[1] << " " << s.q_bar[2]
            << " " << s.q_bar[3] << " " << sc[0] << " " << sc[1] << " " << sc[2] << " "
            << s.opacity() << " " << s.color[0] << " " << s.color[1] << " " << s.color[2]
            << "\n";
    }
}

SplatSet load_splats(const std::string& path, int num_faces) {
    std::ifstream in(path);
    if (!in) throw MeshError("cannot open splats: " + path);
    std::string mode;
    int count = 0;
    in >> mode >> count;
    SplatSet set;
    if (mode == "2d") {
        set.mode = SplatMode::Splat2D;
    } else if (mode == "3d") {
        set.mode = SplatMode::Splat3D;
    } else {
        throw MeshError("bad splat checkpoint mode: " + mode);
    }
    for (int i = 0; i < count; ++i) {
        AnchoredSplat s;
        Vec3 sc;
        double o;
        in >> s.face_id >> s.beta[0] >> s.beta[1] >> s.beta[2] >> s.d >> s.q_bar[0] >>
            s.q_bar[1] >> s.q_bar[2] >> s.q_bar[3] >> sc[0] >> sc[1] >> sc[2] >> o >>
            s.color[0] >> s.color[1] >> s.color[2];
        if (!in) throw MeshError("truncated splat checkpoint");
        if (s.face_id < 0 || s.face_id >= num_faces)
            throw MeshError("splat face id out of range");
        s.set_scale(sc);
        s.set_opacity(o);
        set.splats.push_back(s);
    }
    set.rebuild_face_index(num_faces);
    return set;
}

void save_transform(const std::string& path, const GlobalTransform& t) {
    nlohmann::json j;
    j["scale"] = {t.scale[0], t.scale[1], t.scale[2]};
    j["rotation"] = {t.rotation[0], t.rotation[1], t.rotation[2], t.rotation[3]};
    j["translation"] = {t.translation[0], t.translation[1], t.translation[2]};
    std::ofstream out(path);
    if (!out) throw MeshError("cannot write transform: " + path);
    out << j.dump(2) << "\n";
}

GlobalTransform load_transform(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MeshError("cannot open transform: " + path);
    nlohmann::json j;
    in >> j;
    GlobalTransform t;
    for (int i = 0; i < 3; ++i) {
        t.scale[i] = j.at("scale").at(i);
        t.translation[i] = j.at("translation").at(i);
    }
    for (int i = 0; i < 4; ++i) t.rotation[i] = j.at("rotation").at(i);
    t.validate();
    return t;
}

}  // namespace surfsplat
