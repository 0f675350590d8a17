#pragma once

#include <string>
#include <vector>

#include "surfsplat/losses.h"
#include "surfsplat/optim.h"
#include "surfsplat/raster.h"

namespace surfsplat {

struct BakeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct BakeSettings {
    double texel_size = 0;       // world units per texel; 0 = mean edge / 16
    int min_res = 4, max_res = 64;
    int hops = 3;                // face neighborhood radius (shared vertices)
    bool outward_sort = true;    // descending (p_k - p_hat) . n_j first
    double eps_parallel = 1e-6;
    double alpha_max = 0.999;
    double t_min = 1e-4;
    double d_th = 0.01;          // refinement visibility threshold
    int refine_iters = 20;
    double refine_step = 0.25;   // gradient step on the per-texel MSE
};

// One square chart per face; the lower-left triangle of the square maps the
// face: local (u, v) = ((i + 0.5)/res, (j + 0.5)/res), beta = (1-u-v, u, v).
struct ChartInfo {
    int face_id = 0;
    int x0 = 0, y0 = 0;  // texel origin in the atlas
    int res = 0;         // res x res texels
};

struct AttributeAtlas {
    Image diffuse;       // H x W x 3
    Image normal;        // H x W x 3, tangent-space, encoded (n+1)/2
    Image displacement;  // H x W x 1, signed world units
    Image coverage;      // H x W x 1, accumulated alpha
    std::vector<ChartInfo> charts;  // indexed by face id
    int width = 0, height = 0;
    double texel_size = 0;

    // Bilinear atlas sample for a surface point (face, beta).
    Vec3 sample_diffuse(int face, const Vec3& beta) const;
    double sample_displacement(int face, const Vec3& beta) const;
    double sample_coverage(int face, const Vec3& beta) const;
    // UVs of the three face corners in [0,1]^2.
    std::array<Eigen::Vector2d, 3> face_uv(int face) const;
};

// Chart layout only (all images zero); deterministic shelf packing in face
// id order with a 1-texel gutter.
AttributeAtlas plan_atlas(const Mesh& mesh, const GlobalTransform& tf,
                          const BakeSettings& s);

Vec3 texel_world_position(int face, const Vec3& beta_hat, const Mesh& mesh,
                          const GlobalTransform& tf);

// Per-splat bake-time state derived from the transformed mesh.
struct SplatBakeData {
    Vec3 p = Vec3::Zero();        // world center
    Vec3 n = Vec3::UnitZ();       // world splat normal
    Vec3 l1 = Vec3::UnitX(), l2 = Vec3::UnitY();  // rotation cols / scales
    double o = 0;
    Vec3 color = Vec3::Zero();
};

SplatBakeData splat_bake_data(const AnchoredSplat& s, const Mesh& mesh,
                              const std::vector<Vec3>& transformed_vertices);

struct TexelContribution {
    bool hit = false;
    double delta = 0;   // displacement depth along n_j
    Eigen::Vector2d xhat = Eigen::Vector2d::Zero();
    double alpha = 0;
};

// Orthographic ray from the texel along the face normal n_j against the
// splat plane; skipped when the ray is parallel to the plane.
TexelContribution splat_texel_contribution(const SplatBakeData& splat,
                                           const Vec3& p_hat, const Vec3& n_j,
                                           const BakeSettings& s);

// Faces within `hops` shared-vertex hops of `face`, including itself.
std::vector<int> face_neighborhood(const Mesh& mesh, int face, int hops);

void bake_face(AttributeAtlas& atlas, int face, const std::vector<int>& splat_ids,
               const Mesh& mesh, const SplatSet& set, const GlobalTransform& tf,
               const std::vector<SplatBakeData>& bake_data, const BakeSettings& s);

AttributeAtlas bake_all(const Scene& scene, const BakeSettings& s);
// Oracle: identical math, no hop limit (every splat against every texel).
AttributeAtlas brute_force_bake(const Scene& scene, const BakeSettings& s);

struct RefineReport {
    std::vector<double> mean_l2;  // per refinement iteration, visible texels
    int visible_texels = 0;
    int total_texels = 0;  // covered texels considered
};

// Multi-view color refinement of the diffuse atlas at deformed texel
// positions p_hat + d n_j, with per-view depth visibility |D* - D(x*)| < d_th.
RefineReport refine_texture(AttributeAtlas& atlas, const Scene& scene,
                            const std::vector<Camera>& cameras,
                            const std::vector<Image>& targets,
                            const std::vector<Image>& depth_maps,
                            const BakeSettings& s);

// diffuse PNG (sRGB) + coverage PNG + normal PNG (raw bytes) + displacement
// PFM + chart JSON; `prefix` is a path without extension.
void save_atlas(const std::string& prefix, const AttributeAtlas& atlas);
AttributeAtlas load_atlas(const std::string& prefix);

// OBJ with per-face vt coordinates from the chart table.
void save_baked_mesh(const std::string& path, const Mesh& mesh,
                     const GlobalTransform& tf, const AttributeAtlas& atlas);

}  // namespace surfsplat
