#include "surfsplat/config.h"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <variant>

namespace surfsplat {

namespace {

using Field = std::variant<std::string*, int*, unsigned*, double*, bool*>;

std::map<std::string, Field> registry(RunConfig& c) {
    return {
        {"images_dir", &c.images_dir},
        {"cameras_file", &c.cameras_file},
        {"template_mesh", &c.template_mesh},
        {"output_dir", &c.output_dir},
        {"synth_views", &c.synth_views},
        {"image_size", &c.image_size},
        {"camera_radius", &c.camera_radius},
        {"focal_px", &c.focal_px},
        {"checker_cell", &c.checker_cell},
        {"splats_per_face", &c.splats_per_face},
        {"opacity_init", &c.opacity_init},
        {"scale_fraction", &c.scale_fraction},
        {"stage1_iters", &c.stage1_iters},
        {"stage2_iters", &c.stage2_iters},
        {"stage3_iters", &c.stage3_iters},
        {"densify_interval", &c.densify_interval},
        {"densify_until", &c.densify_until},
        {"realign_interval", &c.realign_interval},
        {"checkpoint_interval", &c.checkpoint_interval},
        {"lambda_l", &c.lambda_l},
        {"momentum", &c.momentum},
        {"diffuse_momentum", &c.diffuse_momentum},
        {"optimize_transform", &c.optimize_transform},
        {"freeze_transform_after_stage1", &c.freeze_transform_after_stage1},
        {"lr_splat_position", &c.lr_splat_position},
        {"lr_q_bar", &c.lr_q_bar},
        {"lr_log_scale", &c.lr_log_scale},
        {"lr_opacity", &c.lr_opacity},
        {"lr_color", &c.lr_color},
        {"lr_vertex", &c.lr_vertex},
        {"lr_transform", &c.lr_transform},
        {"w_photo", &c.w_photo},
        {"w_ssim", &c.w_ssim},
        {"w_reg", &c.w_reg},
        {"w_normal", &c.w_normal},
        {"w_dist", &c.w_dist},
        {"densify_grad_threshold", &c.densify_grad_threshold},
        {"opacity_prune", &c.opacity_prune},
        {"opacity_reset", &c.opacity_reset},
        {"opacity_reset_interval", &c.opacity_reset_interval},
        {"split_scale_threshold", &c.split_scale_threshold},
        {"blur_px2", &c.blur_px2},
        {"thickness2d", &c.thickness2d},
        {"texel_size", &c.texel_size},
        {"bake_hops", &c.bake_hops},
        {"bake_sort", &c.bake_sort},
        {"refine_iters", &c.refine_iters},
        {"refine_d_th", &c.refine_d_th},
        {"seed", &c.seed},
    };
}

void assign(const std::string& key, Field field, const std::string& value) {
    try {
        std::visit(
            [&](auto* p) {
                using T = std::remove_pointer_t<decltype(p)>;
                if constexpr (std::is_same_v<T, std::string>) {
                    *p = value;
                } else if constexpr (std::is_same_v<T, bool>) {
                    if (value == "true" || value == "1")
                        *p = true;
                    else if (value == "false" || value == "0")
                        *p = false;
                    else
                        throw ConfigError("expected boolean");
                } else if constexpr (std::is_same_v<T, int>) {
                    *p = std::stoi(value);
                } else if constexpr (std::is_same_v<T, unsigned>) {
                    *p = static_cast<unsigned>(std::stoul(value));
                } else {
                    *p = std::stod(value);
                }
            },
            field);
    } catch (const ConfigError&) {
        throw ConfigError("bad value for '" + key + "': " + value);
    } catch (const std::exception&) {
        throw ConfigError("bad value for '" + key + "': " + value);
    }
}

std::string to_string_value(Field field) {
    return std::visit(
        [](auto* p) -> std::string {
            using T = std::remove_pointer_t<decltype(p)>;
            if constexpr (std::is_same_v<T, std::string>) {
                return *p;
            } else if constexpr (std::is_same_v<T, bool>) {
                return *p ? "true" : "false";
            } else {
                std::ostringstream os;
                os.precision(17);
                os << *p;
                return os.str();
            }
        },
        field);
}

void apply_pair(RunConfig& cfg, const std::string& key, const std::string& value) {
    auto reg = registry(cfg);
    auto it = reg.find(key);
    if (it == reg.end()) throw ConfigError("unknown config key: " + key);
    assign(key, it->second, value);
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config: " + path);
    RunConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) +
                              ": expected key=value");
        apply_pair(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

void save_config(const std::string& path, const RunConfig& cfg) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write config: " + path);
    RunConfig copy = cfg;
    for (const auto& [key, field] : registry(copy))
        out << key << " = " << to_string_value(field) << "\n";
}

void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides) {
    for (const std::string& o : overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos)
            throw ConfigError("override must be key=value: " + o);
        apply_pair(cfg, trim(o.substr(0, eq)), trim(o.substr(eq + 1)));
    }
}

OptimSettings RunConfig::optim_settings() const {
    OptimSettings s;
    s.lr = {lr_splat_position, lr_q_bar,  lr_log_scale, lr_opacity,
            lr_color,          lr_vertex, lr_transform};
    s.weights = {w_photo, w_ssim, w_reg, w_normal, w_dist};
    s.render.blur_px2 = blur_px2;
    s.render.thickness2d = thickness2d;
    s.densify.grad_threshold = densify_grad_threshold;
    s.densify.opacity_prune = opacity_prune;
    s.densify.opacity_reset = opacity_reset;
    s.densify.opacity_reset_interval = opacity_reset_interval;
    s.densify.split_scale_threshold = split_scale_threshold;
    s.densify.seed = seed;
    s.lambda_l = lambda_l;
    s.momentum = momentum;
    s.diffuse_momentum = diffuse_momentum;
    s.optimize_transform = optimize_transform;
    s.freeze_transform_after_stage1 = freeze_transform_after_stage1;
    s.seed = seed;
    return s;
}

Schedule RunConfig::schedule() const {
    Schedule sc = Schedule::standard(stage1_iters, stage2_iters, stage3_iters);
    sc.densify_interval = densify_interval;
    sc.densify_until = densify_until;
    sc.realign_interval = realign_interval;
    return sc;
}

BakeSettings RunConfig::bake_settings() const {
    if (bake_sort != "outward" && bake_sort != "inward")
        throw ConfigError("bake_sort must be outward or inward");
    BakeSettings s;
    s.texel_size = texel_size;
    s.hops = bake_hops;
    s.outward_sort = bake_sort == "outward";
    s.refine_iters = refine_iters;
    s.d_th = refine_d_th;
    return s;
}

}  // namespace surfsplat
