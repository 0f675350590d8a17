#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "surfsplat/baker.h"
#include "surfsplat/config.h"
#include "surfsplat/gradcheck.h"
#include "surfsplat/optim.h"
#include "surfsplat/synth.h"

namespace fs = std::filesystem;
using namespace surfsplat;

namespace {

std::string view_name(int i, const char* stem, const char* ext) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s_%03d.%s", stem, i, ext);
    return buf;
}

Mesh make_template(const std::string& spec) {
    if (spec == "cube") return make_cube(1.0, 11);       // 1452 faces
    if (spec == "sphere") return make_icosphere(1.0, 3);  // 1280 faces
    return load_obj(spec);
}

std::vector<Image> load_views(const std::string& dir, size_t count) {
    std::vector<Image> out;
    for (size_t i = 0; i < count; ++i)
        out.push_back(load_png((fs::path(dir) / view_name(i, "view", "png")).string()));
    return out;
}

void save_checkpoint(const fs::path& dir, const std::string& tag, const Scene& scene) {
    save_obj((dir / ("mesh_" + tag + ".obj")).string(), scene.mesh);
    save_splats((dir / ("splats_" + tag + ".txt")).string(), scene.splats);
    save_transform((dir / ("transform_" + tag + ".json")).string(), scene.transform);
}

int run_synth(const RunConfig& cfg, const std::string& target) {
    Mesh mesh = make_template(target);
    if (!mesh.is_closed()) throw MeshError("synth target mesh must be closed");
    const auto colors = checker_face_colors(mesh, cfg.checker_cell);
    Vec3 center = Vec3::Zero();
    for (const Vec3& v : mesh.vertices()) center += v;
    center /= mesh.num_vertices();
    const auto cams =
        fibonacci_cameras(cfg.synth_views, center, cfg.camera_radius, cfg.focal_px,
                          cfg.image_size, cfg.image_size);
    const fs::path out(cfg.output_dir);
    fs::create_directories(out);
    for (size_t i = 0; i < cams.size(); ++i) {
        const RaycastImages im = render_raycast(mesh, colors, cams[i]);
        save_png((out / view_name(i, "view", "png")).string(), im.color);
        save_pfm((out / view_name(i, "depth", "pfm")).string(), im.depth);
    }
    save_cameras((out / "cameras.json").string(), cams);
    save_obj((out / "target.obj").string(), mesh);
    save_config((out / "config.txt").string(), cfg);
    std::cout << "wrote " << cams.size() << " views to " << out << "\n";
    return 0;
}

int run_fit(const RunConfig& cfg, const std::string& template_spec) {
    const fs::path out(cfg.output_dir);
    fs::create_directories(out);
    const auto cams = load_cameras(cfg.cameras_file);
    const auto targets = load_views(cfg.images_dir, cams.size());

    Scene scene;
    scene.mesh = make_template(template_spec.empty() ? cfg.template_mesh
                                                     : template_spec);
    scene.splats = seed_splats(scene.mesh, cfg.splats_per_face, SplatMode::Splat2D,
                               cfg.opacity_init, cfg.scale_fraction);
    const Schedule schedule = cfg.schedule();
    const OptimSettings settings = cfg.optim_settings();
    const DiffusionOperator diffusion(scene.mesh, settings.lambda_l);
    OptimState state;
    state.rng.seed(cfg.seed);
    state.resize(scene.splats.size(), scene.mesh.num_vertices());
    save_config((out / "config.txt").string(), cfg);

    std::ofstream log(out / "log.csv");
    log << "iteration,stage,camera,photo,ssim,reg,normal,dist,total,splats\n";
    const int total = schedule.total();
    try {
        for (int i = 0; i < total; ++i) {
            const StepResult r =
                step(state, schedule, scene, cams, targets, diffusion, settings);
            log << state.iteration << ',' << r.stage << ',' << r.camera_index << ','
                << r.loss.photo << ',' << r.loss.ssim << ',' << r.loss.reg << ','
                << r.loss.normal << ',' << r.loss.dist << ',' << r.loss.total << ','
                << r.splat_count << "\n";
            if (cfg.checkpoint_interval > 0 &&
                state.iteration % cfg.checkpoint_interval == 0)
                save_checkpoint(out, std::to_string(state.iteration), scene);
        }
    } catch (const OptimError& e) {
        save_checkpoint(out, "abort", scene);
        std::cerr << "fit aborted: " << e.what() << "\n";
        return 1;
    }
    save_checkpoint(out, "final", scene);
    std::cout << "fit finished after " << state.iteration << " iterations, "
              << scene.splats.size() << " splats\n";
    return 0;
}

Scene load_scene(const std::string& mesh_path, const std::string& splat_path,
                 const std::string& transform_path) {
    Scene scene;
    scene.mesh = load_obj(mesh_path);
    scene.splats = load_splats(splat_path, scene.mesh.num_faces());
    if (!transform_path.empty()) scene.transform = load_transform(transform_path);
    return scene;
}

int run_bake(const RunConfig& cfg, const std::string& mesh_path,
             const std::string& splat_path, const std::string& transform_path,
             const std::string& prefix) {
    Scene scene = load_scene(mesh_path, splat_path, transform_path);
    const BakeSettings bs = cfg.bake_settings();
    AttributeAtlas atlas = bake_all(scene, bs);
    if (!cfg.images_dir.empty() && !cfg.cameras_file.empty()) {
        const auto cams = load_cameras(cfg.cameras_file);
        const auto targets = load_views(cfg.images_dir, cams.size());
        scene.splats.mode = SplatMode::Splat2D;
        RenderSettings rs;
        rs.thickness2d = cfg.thickness2d;
        std::vector<Image> depths;
        for (const Camera& cam : cams)
            depths.push_back(render(scene.mesh, scene.splats, scene.transform, cam, rs)
                                 .depth);
        const RefineReport rep =
            refine_texture(atlas, scene, cams, targets, depths, bs);
        std::cout << "refined " << rep.visible_texels << "/" << rep.total_texels
                  << " texels";
        if (!rep.mean_l2.empty())
            std::cout << ", L2 " << rep.mean_l2.front() << " -> " << rep.mean_l2.back();
        std::cout << "\n";
    }
    fs::create_directories(fs::path(prefix).parent_path().empty()
                               ? fs::path(".")
                               : fs::path(prefix).parent_path());
    save_atlas(prefix, atlas);
    save_baked_mesh(prefix + "_mesh.obj", scene.mesh, scene.transform, atlas);
    std::cout << "atlas " << atlas.width << "x" << atlas.height << " written to "
              << prefix << "_*\n";
    return 0;
}

int run_render(const RunConfig& cfg, const std::string& mesh_path,
               const std::string& splat_path, const std::string& transform_path,
               const std::string& baked_prefix, int camera_index,
               const std::string& mode, const std::string& out_prefix) {
    const auto cams = load_cameras(cfg.cameras_file);
    if (camera_index < 0 || camera_index >= static_cast<int>(cams.size()))
        throw ConfigError("camera index out of range");
    const Camera& cam = cams[camera_index];
    if (!baked_prefix.empty()) {
        const AttributeAtlas atlas = load_atlas(baked_prefix);
        Mesh world = load_obj(mesh_path);
        const RaycastImages im = render_raycast_baked(world, atlas, cam);
        save_png(out_prefix + "_color.png", im.color);
        save_pfm(out_prefix + "_depth.pfm", im.depth);
        return 0;
    }
    Scene scene = load_scene(mesh_path, splat_path, transform_path);
    scene.splats.mode = mode == "3d" ? SplatMode::Splat3D : SplatMode::Splat2D;
    RenderSettings rs;
    rs.blur_px2 = cfg.blur_px2;
    rs.thickness2d = cfg.thickness2d;
    const RenderOutput out = render(scene.mesh, scene.splats, scene.transform, cam, rs);
    save_png(out_prefix + "_color.png", out.color);
    save_pfm(out_prefix + "_depth.pfm", out.depth);
    save_pfm(out_prefix + "_alpha.pfm", out.alpha);
    if (scene.splats.mode == SplatMode::Splat2D)
        save_pfm(out_prefix + "_normal.pfm", out.normal);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Mesh-anchored Gaussian splat fitting and attribute baking"};
    app.require_subcommand(1);
    app.fallthrough(true);

    std::string config_path;
    std::vector<std::string> overrides;
    app.add_option("--config", config_path, "key=value config file");
    app.add_option("--set", overrides, "config override key=value");

    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    std::string target = "sphere";
    synth->add_option("--target", target, "sphere | cube | path.obj");

    auto* fit = app.add_subcommand("fit", "run the three-stage optimization");
    std::string template_spec;
    fit->add_option("--template", template_spec, "cube | sphere | path.obj");

    auto* bake = app.add_subcommand("bake", "bake attribute atlases");
    std::string mesh_path, splat_path, transform_path, prefix = "baked";
    bake->add_option("--mesh", mesh_path)->required();
    bake->add_option("--splats", splat_path)->required();
    bake->add_option("--transform", transform_path);
    bake->add_option("--prefix", prefix, "output path prefix");

    auto* rend = app.add_subcommand("render", "render a view for inspection");
    std::string baked_prefix, mode = "2d", out_prefix = "render";
    int camera_index = 0;
    rend->add_option("--mesh", mesh_path);
    rend->add_option("--splats", splat_path);
    rend->add_option("--transform", transform_path);
    rend->add_option("--baked", baked_prefix, "atlas prefix (ray-cast baked mesh)");
    rend->add_option("--camera", camera_index);
    rend->add_option("--mode", mode, "2d | 3d");
    rend->add_option("--out", out_prefix);

    auto* check = app.add_subcommand("check-gradients", "closed-form derivative report");
    int trials = 1000;
    uint64_t seed = 7;
    check->add_option("--trials", trials);
    check->add_option("--seed", seed);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        RunConfig cfg;
        if (!config_path.empty()) cfg = load_config(config_path);
        apply_overrides(cfg, overrides);

        if (synth->parsed()) return run_synth(cfg, target);
        if (fit->parsed()) return run_fit(cfg, template_spec);
        if (bake->parsed())
            return run_bake(cfg, mesh_path, splat_path, transform_path, prefix);
        if (rend->parsed())
            return run_render(cfg, mesh_path, splat_path, transform_path,
                              baked_prefix, camera_index, mode, out_prefix);
        if (check->parsed()) {
            const GradientCheckReport rep = run_gradient_checks(trials, seed);
            std::cout << rep.text();
            return rep.all_pass() ? 0 : 1;
        }
    } catch (const ConfigError& e) {
        std::cerr << "bad input: " << e.what() << "\n";
        return 2;
    } catch (const MeshError& e) {
        std::cerr << "bad input: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
