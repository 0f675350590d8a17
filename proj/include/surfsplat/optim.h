#pragma once

#include <random>
#include <vector>

#include <Eigen/SparseCholesky>

#include "surfsplat/losses.h"
#include "surfsplat/raster.h"

namespace surfsplat {

struct OptimError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// (I + lambda_l L)^-2 applied through two sparse SPD solves. The
// factorization is computed once; the mesh Laplacian is static by design.
class DiffusionOperator {
public:
    DiffusionOperator(const Mesh& mesh, double lambda_l);

    Eigen::MatrixXd apply(const Eigen::MatrixXd& field) const;
    // ||(I + lambda L)^2 x - g|| for the invariant check.
    double residual(const Eigen::MatrixXd& g, const Eigen::MatrixXd& x) const;
    double lambda() const { return lambda_; }

private:
    Eigen::SparseMatrix<double> A_;  // I + lambda L
    Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver_;
    double lambda_ = 0;
};

// [dL/dV]_i = M^-1 sum_{g_k in G<v_i>} beta_{k,i} dL/dp_k.
Eigen::MatrixXd splat_grads_to_vertex_grads(const std::vector<Vec3>& d_position,
                                            const SplatSet& set, const Mesh& mesh,
                                            const GlobalTransform& tf);

inline Eigen::MatrixXd diffuse(const DiffusionOperator& op,
                               const Eigen::MatrixXd& field) {
    return op.apply(field);
}

// v_hat_i = sum beta_{k,i} p_k / sum beta_{k,i} over incident splats (world
// positions including displacement); vertices with no incident splat keep
// their current transformed position.
Eigen::MatrixXd realignment_targets(const SplatSet& set, const Mesh& mesh,
                                    const GlobalTransform& tf);

// Template-space update dv+ = M^-1 (I + lambda L)^-2 (V_hat - V').
Eigen::MatrixXd realign_vertices(const Mesh& mesh, const Eigen::MatrixXd& targets,
                                 const DiffusionOperator& op,
                                 const GlobalTransform& tf);

struct LearningRates {
    double splat_position = 1.6e-4;  // beta and d
    double q_bar = 1e-3;
    double log_scale = 5e-3;
    double opacity = 5e-2;
    double color = 2.5e-3;
    double vertex = 1e-3;
    double transform = 1e-3;
};

struct StageConfig {
    int iters = 0;
    SplatMode mode = SplatMode::Splat2D;
    bool normal_loss = false;
    bool dist_loss = false;
};

struct Schedule {
    std::vector<StageConfig> stages;
    int densify_interval = 300;
    int densify_until = 0;  // 0: end of stage 2
    int realign_interval = 50;

    static Schedule standard(int s1 = 2000, int s2 = 2000, int s3 = 1000);
    int total() const;
    // Stage active at a 0-based iteration; also reports the stage index.
    const StageConfig& stage_at(int iter, int* index = nullptr) const;
    int default_densify_until() const;
};

struct OptimSettings {
    LearningRates lr;
    LossWeights weights;
    RenderSettings render;
    DensifyParams densify;
    double lambda_l = 20.0;
    double momentum = 0.9;
    bool diffuse_momentum = true;
    bool optimize_transform = true;
    bool freeze_transform_after_stage1 = true;
    double alpha_mask = 0.5;
    unsigned seed = 0;
};

// Flat adaptive-moment accumulators for one parameter class.
struct AdamMoments {
    Eigen::ArrayXd m, v;
    int count = 0;
    void resize(int n) {
        m = Eigen::ArrayXd::Zero(n);
        v = Eigen::ArrayXd::Zero(n);
        count = 0;
    }
    // Bias-corrected update direction; advances the step counter.
    Eigen::ArrayXd step(const Eigen::ArrayXd& grad);
};

struct OptimState {
    int iteration = 0;
    AdamMoments beta, d, q_bar, log_scale, opacity, color;
    AdamMoments transform;               // scale(3) rotation(4) translation(3)
    Eigen::MatrixXd vertex_momentum;     // N x 3
    DensifyStats densify_stats;
    std::mt19937_64 rng;

    void resize(int num_splats, int num_vertices);
};

struct Scene {
    Mesh mesh;  // template-space vertices
    SplatSet splats;
    GlobalTransform transform;
};

struct StepResult {
    LossReport loss;
    int camera_index = 0;
    int stage = 0;
    bool densified = false;
    bool realigned = false;
    int splat_count = 0;
};

// One optimization iteration: render, losses per stage, backward, parameter
// updates, reanchoring, periodic densify/realign. Throws OptimError on NaN.
StepResult step(OptimState& state, const Schedule& schedule, Scene& scene,
                const std::vector<Camera>& cameras, const std::vector<Image>& targets,
                const DiffusionOperator& diffusion, const OptimSettings& settings);

}  // namespace surfsplat
