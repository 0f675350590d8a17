#pragma once

#include <cstdint>
#include <string>

#include "surfsplat/raster.h"

namespace surfsplat {

// One configuration of the closed-form energy derivatives: camera-space
// covariance and mean plus a target pixel, with the derived quantities
// used by the derivative formulas.
struct GradientProbe {
    Mat3 sigma = Mat3::Identity();
    Vec3 p = Vec3(0, 0, 1);
    Eigen::Vector2d x = Eigen::Vector2d::Zero();

    double u = 0, v = 0;
    Eigen::Vector2d r = Eigen::Vector2d::Zero();
    Eigen::Vector2d g = Eigen::Vector2d::Zero();
    Vec3 h = Vec3::Zero();
    double eta = 0;                                 // h3 / Z
    Eigen::Matrix2d G = Eigen::Matrix2d::Zero();    // (M Sigma M^T)^-1
    Eigen::Vector2d c = Eigen::Vector2d::Zero();    // (s31 - u s33, s32 - v s33)
    double E = 0;

    GradientProbe() = default;
    GradientProbe(const Mat3& sigma_cam, const Vec3& p_cam, const Eigen::Vector2d& pixel);
};

// E as a plain function of the camera-space mean (blur-free); finite
// difference target for the derivative checks.
double probe_energy(const Mat3& sigma, const Vec3& p, const Eigen::Vector2d& x);

Eigen::Vector3d duvd_derivatives(const GradientProbe& probe);
Vec3 dxyz_derivatives(const GradientProbe& probe);

// sigma_min/sigma_max of the 3xK matrix of position gradients over K
// random pixels near the projection of p. Requires K >= 4.
double nondegeneracy_test(const Mat3& sigma, const Vec3& p, int sample_count,
                          uint64_t seed);

// Worst normalized violation of n . grad = 0 with n = (x, y, 1) over
// sampled pixels, for a flat covariance (third row/column zero).
double degeneracy_plane_test(const Mat3& flat_sigma, const Vec3& p, int sample_count,
                             uint64_t seed);

struct GradientCheckReport {
    int trials = 0;
    double max_rel_err_xyz = 0;        // analytic vs central differences
    double max_dd_identity_err = 0;    // |d_d E - (2/d) E|
    double min_rank_ratio = 1;         // SPD probes
    double max_plane_violation = 0;    // flat probes
    double richardson_slope_min = 0, richardson_slope_max = 0;
    double max_eta_err = 0;            // eta vs c(mu)^T G(mu) r
    double g_lipschitz_ratio = 0;      // max ||G(mu)-G(x)|| / ||r||
    bool pass_fd = false, pass_dd = false, pass_rank = false, pass_plane = false;
    bool pass_richardson = false, pass_eta = false;
    bool all_pass() const {
        return pass_fd && pass_dd && pass_rank && pass_plane && pass_richardson &&
               pass_eta;
    }
    std::string text() const;
};

GradientCheckReport run_gradient_checks(int trials, uint64_t seed);

}  // namespace surfsplat
