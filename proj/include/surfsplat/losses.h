#pragma once

#include <vector>

#include "surfsplat/image.h"
#include "surfsplat/mesh.h"
#include "surfsplat/raster.h"

namespace surfsplat {

struct ImageLossResult {
    double value = 0;
    Image grad;  // with respect to the first (rendered) argument
};

// Mean absolute error over pixels and channels.
ImageLossResult photo_loss(const Image& rendered, const Image& target);

// 1 - SSIM, 11x11 Gaussian window sigma 1.5, C1=(0.01)^2, C2=(0.03)^2,
// replicate padding at the borders. Analytic gradient.
ImageLossResult ssim_loss(const Image& rendered, const Image& target);

struct RegLossResult {
    double value = 0;
    Eigen::MatrixXd grad;  // N x 3
};

// lambda * ||L V||_F^2 with gradient 2 lambda L^T L V.
RegLossResult bilaplacian_reg(const Eigen::MatrixXd& vertices,
                              const LaplacianMatrix& lap, double lambda_reg);

// Camera-space normals from alpha-weighted expected depth via central
// differences of back-projected points; oriented toward the camera.
// Pixels without valid neighbors get a zero normal.
Image depth_to_normals(const Image& depth, const Image& alpha, const Camera& cam,
                       double alpha_mask);

// Mean (1 - n_render . n_ref) over pixels with alpha > alpha_mask, where
// n_render is the normalized premultiplied normal image. The reference is
// treated as fixed. grad is with respect to the raw normal image.
ImageLossResult normal_consistency_loss(const Image& normal_raw, const Image& alpha,
                                        const Image& reference_normals,
                                        double alpha_mask = 0.5);

struct DistortionLossResult {
    double value = 0;
    std::vector<double> d_weight;  // per tape entry
    std::vector<double> d_depth;   // per tape entry
};

// Per pixel, full double sum over contributor pairs of w_i w_j |z_i - z_j|
// with compositing weights w = alpha T; averaged over all pixels.
DistortionLossResult depth_distortion_loss(const RenderOutput& render);

struct LossWeights {
    double photo = 0.8;
    double ssim = 0.2;
    double reg = 1e-4;
    double normal = 0.05;
    double dist = 100.0;
};

struct LossReport {
    double photo = 0, ssim = 0, reg = 0, normal = 0, dist = 0;
    double total = 0;
};

}  // namespace surfsplat
