#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "surfsplat/config.h"
#include "surfsplat/synth.h"

using namespace surfsplat;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

#ifdef SURFSPLAT_CLI_PATH
int run_cli(const std::string& args) {
    const std::string cmd =
        std::string("\"") + SURFSPLAT_CLI_PATH + "\" " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};
#endif

}  // namespace

TEST_CASE("config save/load round trip preserves every field") {
    RunConfig cfg;
    cfg.images_dir = "some/dir";
    cfg.cameras_file = "cams.json";
    cfg.output_dir = "out2";
    cfg.synth_views = 7;
    cfg.image_size = 96;
    cfg.camera_radius = 2.5;
    cfg.stage1_iters = 123;
    cfg.lambda_l = 13.5;
    cfg.diffuse_momentum = false;
    cfg.lr_vertex = 0.025;
    cfg.w_dist = 42.0;
    cfg.bake_sort = "inward";
    cfg.seed = 99;
    const std::string path = "/tmp/surfsplat_test_config.txt";
    save_config(path, cfg);
    RunConfig back = load_config(path);
    std::remove(path.c_str());
    CHECK(back.images_dir == cfg.images_dir);
    CHECK(back.cameras_file == cfg.cameras_file);
    CHECK(back.output_dir == cfg.output_dir);
    CHECK(back.synth_views == 7);
    CHECK(back.image_size == 96);
    CHECK(back.camera_radius == 2.5);
    CHECK(back.stage1_iters == 123);
    CHECK(back.lambda_l == 13.5);
    CHECK(back.diffuse_momentum == false);
    CHECK(back.lr_vertex == 0.025);
    CHECK(back.w_dist == 42.0);
    CHECK(back.bake_sort == "inward");
    CHECK(back.seed == 99u);
    // Untouched fields keep their defaults.
    CHECK(back.stage2_iters == RunConfig{}.stage2_iters);
    CHECK(back.blur_px2 == RunConfig{}.blur_px2);
}

TEST_CASE("config parser: comments, whitespace, and errors") {
    const std::string path = "/tmp/surfsplat_test_config2.txt";
    {
        std::ofstream out(path);
        out << "# a comment\n\n  image_size = 64  # trailing comment\n"
            << "\t lambda_l=7\n";
    }
    RunConfig cfg = load_config(path);
    CHECK(cfg.image_size == 64);
    CHECK(cfg.lambda_l == 7.0);

    {
        std::ofstream out(path);
        out << "no_such_key = 3\n";
    }
    CHECK_THROWS_AS(load_config(path), ConfigError);
    {
        std::ofstream out(path);
        out << "image_size = not_a_number\n";
    }
    CHECK_THROWS_AS(load_config(path), ConfigError);
    {
        std::ofstream out(path);
        out << "diffuse_momentum = maybe\n";
    }
    CHECK_THROWS_AS(load_config(path), ConfigError);
    {
        std::ofstream out(path);
        out << "just a line without equals\n";
    }
    CHECK_THROWS_AS(load_config(path), ConfigError);
    std::remove(path.c_str());
    CHECK_THROWS_AS(load_config("/tmp/definitely_missing_config.txt"), ConfigError);
}

TEST_CASE("command-line overrides") {
    RunConfig cfg;
    apply_overrides(cfg, {"image_size=48", "lr_vertex=0.5", "bake_sort=inward",
                          "optimize_transform=false"});
    CHECK(cfg.image_size == 48);
    CHECK(cfg.lr_vertex == 0.5);
    CHECK(cfg.bake_sort == "inward");
    CHECK(cfg.optimize_transform == false);
    CHECK_THROWS_AS(apply_overrides(cfg, {"bogus=1"}), ConfigError);
    CHECK_THROWS_AS(apply_overrides(cfg, {"missing_equals"}), ConfigError);
}

TEST_CASE("config maps into module settings") {
    RunConfig cfg;
    cfg.lr_vertex = 0.125;
    cfg.w_normal = 0.7;
    cfg.lambda_l = 3.0;
    cfg.stage1_iters = 10;
    cfg.stage2_iters = 20;
    cfg.stage3_iters = 30;
    cfg.realign_interval = 17;
    cfg.bake_hops = 2;
    cfg.bake_sort = "inward";
    cfg.refine_d_th = 0.5;
    OptimSettings os = cfg.optim_settings();
    CHECK(os.lr.vertex == 0.125);
    CHECK(os.weights.normal == 0.7);
    CHECK(os.lambda_l == 3.0);
    Schedule sc = cfg.schedule();
    CHECK(sc.total() == 60);
    CHECK(sc.realign_interval == 17);
    BakeSettings bs = cfg.bake_settings();
    CHECK(bs.hops == 2);
    CHECK(bs.outward_sort == false);
    CHECK(bs.d_th == 0.5);
    cfg.bake_sort = "sideways";
    CHECK_THROWS_AS(cfg.bake_settings(), ConfigError);
}

TEST_CASE("ray-cast depth of a unit sphere from distance 3 is 2 at the center") {
    Mesh sphere = make_icosphere(1.0, 3);
    // Aim the optical axis through a mesh vertex so the center ray hits the
    // sphere surface exactly at radius 1.
    const Vec3 v = sphere.vertex(17).normalized();
    Vec3 up(0, 1, 0);
    if (std::abs(up.dot(v)) > 0.9) up = Vec3(1, 0, 0);
    Camera cam = look_at(3.0 * v, Vec3::Zero(), up, 64, 33, 33);
    const auto colors = checker_face_colors(sphere, 0.35);
    RaycastImages im = render_raycast(sphere, colors, cam);
    CHECK(im.depth.at(16, 16) == doctest::Approx(2.0).epsilon(1e-6));
}

TEST_CASE("axis-aligned cube fills the center pixel with the facing face's color") {
    Mesh cube = make_cube(1.0, 3);
    const auto colors = checker_face_colors(cube, 0.35);
    Camera cam = look_at(Vec3(0.03, 0.02, 3.0), Vec3(0.03, 0.02, 0), Vec3(0, 1, 0),
                         40, 33, 33);
    RaycastImages im = render_raycast(cube, colors, cam);
    // The center ray travels along -z from (0.03, 0.02, 3): find the facing
    // face (all corners at z = +1) containing that xy point.
    int hit_face = -1;
    for (int f = 0; f < cube.num_faces(); ++f) {
        const auto& face = cube.face(f);
        bool front = true;
        for (int c : face) front = front && std::abs(cube.vertex(c)[2] - 1.0) < 1e-12;
        if (!front) continue;
        Eigen::Vector2d a = cube.vertex(face[0]).head<2>();
        Eigen::Vector2d b = cube.vertex(face[1]).head<2>();
        Eigen::Vector2d c = cube.vertex(face[2]).head<2>();
        Eigen::Vector2d p(0.03, 0.02);
        auto cross2 = [](const Eigen::Vector2d& u, const Eigen::Vector2d& w) {
            return u[0] * w[1] - u[1] * w[0];
        };
        const double s0 = cross2(b - a, p - a);
        const double s1 = cross2(c - b, p - b);
        const double s2 = cross2(a - c, p - c);
        if ((s0 >= 0 && s1 >= 0 && s2 >= 0) || (s0 <= 0 && s1 <= 0 && s2 <= 0))
            hit_face = f;
    }
    REQUIRE(hit_face >= 0);
    CHECK(im.depth.at(16, 16) == doctest::Approx(2.0).epsilon(1e-9));
    for (int ch = 0; ch < 3; ++ch)
        CHECK(im.color.at(16, 16, ch) ==
              doctest::Approx(colors[hit_face][ch]).epsilon(1e-12));
}

#ifdef SURFSPLAT_CLI_PATH

TEST_CASE("cli synth writes a complete dataset") {
    TempDir dir("surfsplat_cli_synth");
    const std::string out = (dir.path / "ds").string();
    REQUIRE(run_cli("synth --target sphere --set synth_views=3 --set image_size=24 "
                    "--set output_dir=" + out) == 0);
    for (const char* f : {"view_000.png", "view_001.png", "view_002.png",
                          "depth_000.pfm", "cameras.json", "target.obj", "config.txt"})
        CHECK(fs::exists(fs::path(out) / f));
    const auto cams = load_cameras((fs::path(out) / "cameras.json").string());
    CHECK(cams.size() == 3);
    const Image v0 = load_png((fs::path(out) / "view_000.png").string());
    CHECK(v0.width() == 24);
    CHECK(v0.height() == 24);
}

TEST_CASE("cli fit is deterministic and its artifacts round-trip through bake/render") {
    TempDir dir("surfsplat_cli_fit");
    const std::string ds = (dir.path / "ds").string();
    REQUIRE(run_cli("synth --target sphere --set synth_views=4 --set image_size=32 "
                    "--set output_dir=" + ds) == 0);
    const std::string common =
        " --set images_dir=" + ds + " --set cameras_file=" + ds + "/cameras.json" +
        " --set stage1_iters=4 --set stage2_iters=1 --set stage3_iters=1" +
        " --set realign_interval=3 --set checkpoint_interval=0 --set seed=11";
    const std::string fit1 = (dir.path / "fit1").string();
    const std::string fit2 = (dir.path / "fit2").string();
    REQUIRE(run_cli("fit --template sphere" + common + " --set output_dir=" + fit1) ==
            0);
    REQUIRE(run_cli("fit --template sphere" + common + " --set output_dir=" + fit2) ==
            0);
    // Same seed, same inputs: bitwise-identical logs and checkpoints.
    CHECK(slurp(fs::path(fit1) / "log.csv") == slurp(fs::path(fit2) / "log.csv"));
    CHECK(slurp(fs::path(fit1) / "splats_final.txt") ==
          slurp(fs::path(fit2) / "splats_final.txt"));
    CHECK(slurp(fs::path(fit1) / "mesh_final.obj") ==
          slurp(fs::path(fit2) / "mesh_final.obj"));
    // Log has a header plus one row per iteration.
    std::istringstream log(slurp(fs::path(fit1) / "log.csv"));
    std::string line;
    int rows = 0;
    while (std::getline(log, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 1 + 6);

    // The fit artifacts feed the baker and the renderer.
    const std::string prefix = (dir.path / "baked").string();
    REQUIRE(run_cli("bake --mesh " + fit1 + "/mesh_final.obj --splats " + fit1 +
                    "/splats_final.txt --transform " + fit1 +
                    "/transform_final.json --prefix " + prefix) == 0);
    for (const char* suffix : {"_diffuse.png", "_normal.png", "_coverage.png",
                               "_displacement.pfm", "_charts.json", "_mesh.obj"})
        CHECK(fs::exists(prefix + std::string(suffix)));
    REQUIRE(run_cli("render --set cameras_file=" + ds + "/cameras.json --camera 0" +
                    " --baked " + prefix + " --mesh " + prefix + "_mesh.obj --out " +
                    (dir.path / "r").string()) == 0);
    CHECK(fs::exists(dir.path / "r_color.png"));
    CHECK(fs::exists(dir.path / "r_depth.pfm"));
}

TEST_CASE("cli exit codes: 0 success, 1 runtime failure, 2 bad input") {
    CHECK(run_cli("check-gradients --trials 50 --seed 3") == 0);
    // Unknown subcommand / flag: usage error.
    CHECK(run_cli("frobnicate") == 2);
    CHECK(run_cli("synth --no-such-flag") == 2);
    // Unknown config key: bad input.
    CHECK(run_cli("synth --set bogus_key=1") == 2);
    // Missing dataset: runtime failure.
    CHECK(run_cli("fit --template sphere --set cameras_file=/tmp/nope/cams.json") ==
          1);
}

#endif  // SURFSPLAT_CLI_PATH
