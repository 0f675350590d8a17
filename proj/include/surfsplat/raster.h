#pragma once

#include <vector>

#include "surfsplat/camera.h"
#include "surfsplat/image.h"
#include "surfsplat/splats.h"

namespace surfsplat {

struct RenderSettings {
    double blur_px2 = 0.3;      // screen-space dilation, pixel^2 (3D mode)
    double energy_cutoff = 12.5;  // skip contributors with E above this (5 sigma)
    double alpha_min = 1.0 / 255.0;  // skip contributors below this alpha
    double t_min = 1e-4;        // early termination transmittance
    double alpha_max = 0.999;
    double z_near = 0.01;
    double eps_parallel = 1e-6;
    double thickness2d = 0.0;   // third scale when 3D path ingests 2D splats
    int tile = 16;
};

// Camera-space projection of one splat onto the normalized image plane.
struct ProjectedSplat {
    bool valid = false;
    Vec3 p_cam = Vec3::Zero();
    double u = 0, v = 0, depth = 0;
    Eigen::Matrix<double, 2, 3> J = Eigen::Matrix<double, 2, 3>::Zero();
    Eigen::Matrix2d lam = Eigen::Matrix2d::Zero();      // J Sigma J^T + blur
    Eigen::Matrix2d lam_inv = Eigen::Matrix2d::Zero();
};

ProjectedSplat project_splat(const Vec3& world_mean, const Mat3& sigma_world,
                             const Camera& cam, const RenderSettings& s);

// E = 1/2 r^T Lambda^-1 r at a point x on the normalized plane.
double gaussian_energy(const ProjectedSplat& p, const Eigen::Vector2d& x);

// Closed-form first-order derivatives of E. Used by the rasterizer backward
// pass and by the standalone gradient checks (single source of truth).
struct EnergyGradient {
    double E = 0;
    Eigen::Vector2d g = Eigen::Vector2d::Zero();  // Lambda^-1 r
    double h3 = 0;                                // (Sigma J^T g)_3
    Eigen::Vector3d duvd = Eigen::Vector3d::Zero();
    Vec3 dxyz = Vec3::Zero();
};

EnergyGradient energy_gradient(const Mat3& sigma_cam, const Vec3& p_cam,
                               const Eigen::Vector2d& x, double blur_u = 0,
                               double blur_v = 0);

// Per-splat forward state retained for the backward pass.
struct SplatForward {
    bool valid = false;
    Vec3 tv[3];
    Vec3 cross = Vec3::Zero();
    double cross_norm = 0;
    Vec3 n_w = Vec3::Zero();
    Vec3 p_w = Vec3::Zero();
    Quat q_bar_n = quat_identity();
    Quat q_f = quat_identity();
    Quat q_k_raw = quat_identity();
    Quat q_k = quat_identity();
    bool antipodal = false;
    Mat3 R_c = Mat3::Identity();   // splat rotation in camera frame
    Vec3 s = Vec3::Ones();
    double o = 0;
    Vec3 p_c = Vec3::Zero();
    Mat3 sigma_c = Mat3::Zero();   // 3D mode
    double u = 0, v = 0;
    Eigen::Matrix2d lam = Eigen::Matrix2d::Zero();
    Eigen::Matrix2d lam_inv = Eigen::Matrix2d::Zero();
    int x0 = 0, x1 = -1, y0 = 0, y1 = -1;  // inclusive pixel bbox
};

// One composited contribution. For 3D mode (a, b) is the residual mu - x;
// for 2D mode it is the local in-plane coordinate of the ray hit. depth is
// the mean depth (3D) or the ray intersection depth (2D). nsign flips the
// splat normal toward the camera in the normal image.
struct TapeEntry {
    int splat = 0;
    double alpha = 0;
    double depth = 0;
    double a = 0, b = 0;
    double nsign = 1;
};

struct RenderOutput {
    Image color;   // H x W x 3, premultiplied over black background
    Image depth;   // alpha-normalized expected depth (3D) / hit depth (2D)
    Image normal;  // camera-space, premultiplied (2D mode only)
    Image alpha;

    SplatMode mode = SplatMode::Splat2D;
    RenderSettings settings;
    std::vector<SplatForward> fwd;
    std::vector<size_t> pixel_start;  // H*W+1 offsets into entries
    std::vector<TapeEntry> entries;
};

RenderOutput render(const Mesh& mesh, const SplatSet& set, const GlobalTransform& tf,
                    const Camera& cam, const RenderSettings& settings);

// Per-contributor gradients supplied by the losses (indexed like
// RenderOutput::entries); any pointer may be null.
struct BackwardInput {
    const Image* d_color = nullptr;
    const Image* d_normal = nullptr;
    const std::vector<double>* d_weight = nullptr;  // dL/d(alpha_i T_i)
    const std::vector<double>* d_depth = nullptr;   // dL/dz_i (2D mode)
};

struct SceneGrads {
    std::vector<Vec3> d_position;  // dL/dp_k, world space (Eq.-style aggregation input)
    std::vector<Vec3> d_beta;
    std::vector<double> d_d;
    std::vector<Quat> d_q_bar;
    std::vector<Vec3> d_log_scale;
    std::vector<double> d_opacity_logit;
    std::vector<Vec3> d_color;
    std::vector<double> screen_grad_norm;  // densification statistic

    Eigen::MatrixXd d_vertices;  // N x 3, full chain incl. normal/frame terms
    Vec3 d_scale = Vec3::Zero();
    Quat d_rotation = Quat::Zero();
    Vec3 d_translation = Vec3::Zero();

    void resize(int num_splats, int num_vertices);
    bool has_nan() const;
};

SceneGrads backward(const RenderOutput& out, const Mesh& mesh, const SplatSet& set,
                    const GlobalTransform& tf, const Camera& cam,
                    const BackwardInput& in);

}  // namespace surfsplat
