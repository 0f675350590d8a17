#pragma once

#include <string>
#include <vector>

#include "surfsplat/baker.h"
#include "surfsplat/optim.h"

namespace surfsplat {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Flat key=value run configuration. Every knob referenced by the pipeline
// lives here with a documented default; unknown keys are rejected.
struct RunConfig {
    // Paths.
    std::string images_dir;
    std::string cameras_file;
    std::string template_mesh;
    std::string output_dir = "out";

    // Synthetic dataset.
    int synth_views = 25;
    int image_size = 128;
    double camera_radius = 3.0;
    double focal_px = 140.0;
    double checker_cell = 0.35;

    // Seeding.
    int splats_per_face = 3;
    double opacity_init = 0.5;
    double scale_fraction = 0.3;

    // Schedule.
    int stage1_iters = 2000;
    int stage2_iters = 2000;
    int stage3_iters = 1000;
    int densify_interval = 300;
    int densify_until = 0;  // 0: end of stage 2
    int realign_interval = 50;
    int checkpoint_interval = 500;

    // Optimizer.
    double lambda_l = 20.0;
    double momentum = 0.9;
    bool diffuse_momentum = true;
    bool optimize_transform = true;
    bool freeze_transform_after_stage1 = true;
    double lr_splat_position = 1.6e-4;
    double lr_q_bar = 1e-3;
    double lr_log_scale = 5e-3;
    double lr_opacity = 5e-2;
    double lr_color = 2.5e-3;
    double lr_vertex = 1e-3;
    double lr_transform = 1e-3;

    // Loss weights (not given by the reference method; engineering defaults).
    double w_photo = 0.8;
    double w_ssim = 0.2;
    double w_reg = 1e-4;
    double w_normal = 0.05;
    double w_dist = 100.0;

    // Densification.
    double densify_grad_threshold = 2e-4;
    double opacity_prune = 0.005;
    double opacity_reset = 0.1;
    int opacity_reset_interval = 1200;
    double split_scale_threshold = 1.0;

    // Rendering.
    double blur_px2 = 0.3;
    double thickness2d = 0.0;

    // Baking.
    double texel_size = 0.0;  // 0: mean edge length / 16
    int bake_hops = 3;
    std::string bake_sort = "outward";  // outward | inward
    int refine_iters = 20;
    double refine_d_th = 0.01;

    unsigned seed = 1;

    OptimSettings optim_settings() const;
    Schedule schedule() const;
    BakeSettings bake_settings() const;
};

// key=value lines, '#' comments. Unknown keys throw ConfigError.
RunConfig load_config(const std::string& path);
void save_config(const std::string& path, const RunConfig& cfg);
// Applies "key=value" override strings (e.g. from the command line).
void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides);

}  // namespace surfsplat
