#pragma once

#include <string>
#include <vector>

#include "surfsplat/mesh.h"

namespace surfsplat {

constexpr double kEpsScale = 1e-9;
constexpr int kMaxWalkSteps = 8;

enum class SplatMode { Splat2D, Splat3D };

// Splat anchored to a mesh face: barycentric weights beta on the face,
// normal displacement d, rotation q_bar relative to the face frame, scale,
// opacity and color. Raw opacity/scale live behind squashing maps so the
// optimizer parameters are unconstrained.
struct AnchoredSplat {
    int face_id = 0;
    Vec3 beta = Vec3::Constant(1.0 / 3.0);
    double d = 0.0;
    Quat q_bar = quat_identity();
    Vec3 log_scale = Vec3::Zero();       // s = exp(log_scale)
    double opacity_logit = 0.0;          // o = logistic(opacity_logit)
    Vec3 color = Vec3::Constant(0.5);

    Vec3 scale() const { return log_scale.array().exp().max(kEpsScale); }
    double opacity() const { return 1.0 / (1.0 + std::exp(-opacity_logit)); }
    void set_opacity(double o);
    void set_scale(const Vec3& s) { log_scale = s.array().max(kEpsScale).log(); }
};

struct SplatSet {
    std::vector<AnchoredSplat> splats;
    SplatMode mode = SplatMode::Splat2D;

    // face_id -> splat indices; rebuilt after any mutation phase.
    std::vector<std::vector<int>> face_index;
    void rebuild_face_index(int num_faces);
    int size() const { return static_cast<int>(splats.size()); }
};

// p_k = sum_m beta_m v'_m + d n_f over globally transformed vertices.
Vec3 world_position(const AnchoredSplat& s, const Mesh& mesh, const GlobalTransform& t);
Vec3 world_position(const AnchoredSplat& s, const std::vector<Vec3>& transformed_vertices,
                    const Mesh& mesh);

// q_k = q_bar (x) q^f.
Quat world_rotation(const AnchoredSplat& s, const Mesh& mesh);

// Sigma = R(q_k) diag(s^2) R(q_k)^T. In 2D mode the third scale is replaced
// by thickness2d (0 gives the exact rank-2 flat splat).
Mat3 world_covariance(const AnchoredSplat& s, const Mesh& mesh, SplatMode mode,
                      double thickness2d = 0.0);

struct WalkResult {
    int steps = 0;
    bool clamped_in_place = false;  // walk budget exhausted or boundary hit
};

// Clamp negative barycentrics, renormalize, and reassign across the edge
// opposite the clamped vertex, repeating until the splat is interior.
// With two negative coordinates, crosses the edge opposite the most
// negative one first (ties: lowest local vertex index).
WalkResult reanchor_walk(AnchoredSplat& s, const Mesh& mesh);

SplatSet seed_splats(const Mesh& mesh, int per_face_count, SplatMode mode,
                     double opacity_init = 0.5, double scale_fraction = 0.3);

struct DensifyParams {
    double grad_threshold = 2e-4;
    double opacity_prune = 0.005;
    double opacity_reset = 0.1;
    int opacity_reset_interval = 600;
    double split_scale_threshold = 1.0;  // relative to mean edge length
    unsigned seed = 0;
};

struct DensifyStats {
    // Accumulated screen-space positional gradient norms and counts.
    std::vector<double> grad_norm_sum;
    std::vector<int> grad_count;
    void resize(int n) {
        grad_norm_sum.assign(n, 0.0);
        grad_count.assign(n, 0);
    }
};

struct DensifyReport {
    int cloned = 0, split = 0, pruned = 0;
    bool opacity_was_reset = false;
};

DensifyReport densify_and_prune(SplatSet& set, const DensifyStats& stats,
                                const Mesh& mesh, int iteration,
                                const DensifyParams& params);

// Line-oriented checkpoint: header "mode count", then one splat per line:
// face_id b1 b2 b3 d qw qx qy qz sx sy sz o r g b
void save_splats(const std::string& path, const SplatSet& set);
SplatSet load_splats(const std::string& path, int num_faces);

void save_transform(const std::string& path, const GlobalTransform& t);
GlobalTransform load_transform(const std::string& path);

}  // namespace surfsplat
