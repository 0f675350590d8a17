#include <doctest.h>

#include <algorithm>
#include <random>

#include "surfsplat/raster.h"
#include "surfsplat/synth.h"

using namespace surfsplat;

namespace {

// Naive per-pixel reference renderer: no tiles, no bounding boxes, no
// spatial culling -- every splat is tested against every pixel, full sort,
// identical per-contributor arithmetic. Validates the production renderer's
// binning/bbox/sort/termination logic.
struct RefCand {
    double depth;
    int splat;
    double alpha;
    double nsign;
};

RenderOutput reference_render(const Mesh& mesh, const SplatSet& set,
                              const GlobalTransform& tf, const Camera& cam,
                              const RenderSettings& st, const RenderOutput& fwd_src) {
    const int H = cam.height, W = cam.width;
    RenderOutput out;
    out.color = Image(H, W, 3);
    out.depth = Image(H, W, 1);
    out.normal = Image(H, W, 3);
    out.alpha = Image(H, W, 1);
    std::vector<RefCand> cands;
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const Eigen::Vector2d xp = cam.pixel_to_plane(x + 0.5, y + 0.5);
            cands.clear();
            for (int k = 0; k < set.size(); ++k) {
                const SplatForward& f = fwd_src.fwd[k];
                if (!f.valid) continue;
                if (set.mode == SplatMode::Splat3D) {
                    Eigen::Vector2d r(f.u - xp[0], f.v - xp[1]);
                    double E = 0.5 * r.dot(f.lam_inv * r);
                    if (E > st.energy_cutoff) continue;
                    double alpha = std::min(f.o * std::exp(-E), st.alpha_max);
                    if (alpha < st.alpha_min) continue;
                    cands.push_back({f.p_c[2], k, alpha, 1.0});
                } else {
                    const Vec3 D(xp[0], xp[1], 1.0);
                    const Vec3 n = f.R_c.col(2);
                    double denom = D.dot(n);
                    if (std::abs(denom) < st.eps_parallel) continue;
                    double t = f.p_c.dot(n) / denom;
                    if (t <= st.z_near) continue;
                    Vec3 diff = t * D - f.p_c;
                    double u1 = diff.dot(f.R_c.col(0)) / f.s[0];
                    double u2 = diff.dot(f.R_c.col(1)) / f.s[1];
                    double E = 0.5 * (u1 * u1 + u2 * u2);
                    if (E > st.energy_cutoff) continue;
                    double alpha = std::min(f.o * std::exp(-E), st.alpha_max);
                    if (alpha < st.alpha_min) continue;
                    cands.push_back({t, k, alpha, denom > 0 ? -1.0 : 1.0});
                }
            }
            std::sort(cands.begin(), cands.end(), [](const RefCand& a, const RefCand& b) {
                return a.depth != b.depth ? a.depth < b.depth : a.splat < b.splat;
            });
            double T = 1.0, acc_alpha = 0, acc_depth = 0, median_depth = -1;
            Vec3 acc_color = Vec3::Zero(), acc_normal = Vec3::Zero();
            for (const auto& c : cands) {
                double w = c.alpha * T;
                acc_color += w * set.splats[c.splat].color;
                acc_depth += w * c.depth;
                acc_alpha += w;
                if (set.mode == SplatMode::Splat2D)
                    acc_normal += w * c.nsign * fwd_src.fwd[c.splat].R_c.col(2);
                T *= 1.0 - c.alpha;
                if (median_depth < 0 && T < 0.5) median_depth = c.depth;
                if (T < st.t_min) break;
            }
            for (int ch = 0; ch < 3; ++ch) {
                out.color.at(y, x, ch) = acc_color[ch];
                out.normal.at(y, x, ch) = acc_normal[ch];
            }
            out.alpha.at(y, x) = acc_alpha;
            const double mean_depth = acc_depth / std::max(acc_alpha, 1e-12);
            out.depth.at(y, x) = (set.mode == SplatMode::Splat2D && median_depth >= 0)
                                     ? median_depth
                                     : mean_depth;
        }
    }
    return out;
}

SplatSet random_scene(const Mesh& mesh, int count, SplatMode mode,
                      std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(0, 1);
    std::uniform_int_distribution<int> pick(0, mesh.num_faces() - 1);
    SplatSet set;
    set.mode = mode;
    for (int i = 0; i < count; ++i) {
        AnchoredSplat s;
        s.face_id = pick(rng);
        Vec3 b(u(rng) + 0.05, u(rng) + 0.05, u(rng) + 0.05);
        s.beta = b / b.sum();
        s.d = 0.1 * (u(rng) - 0.5);
        s.q_bar = Quat(1.5 + u(rng), u(rng) - 0.5, u(rng) - 0.5, u(rng) - 0.5)
                      .normalized();
        s.set_scale(Vec3(0.08 + 0.2 * u(rng), 0.08 + 0.2 * u(rng),
                         0.08 + 0.2 * u(rng)));
        s.set_opacity(0.2 + 0.7 * u(rng));
        s.color = Vec3(u(rng), u(rng), u(rng));
        set.splats.push_back(s);
    }
    set.rebuild_face_index(mesh.num_faces());
    return set;
}

Camera scene_camera(int size) {
    return look_at(Vec3(0.3, -2.8, 0.9), Vec3::Zero(), Vec3(0, 0, 1), size * 1.1,
                   size, size);
}

}  // namespace

TEST_CASE("project_splat on-axis example") {
    Camera cam;
    cam.fx = cam.fy = 1;
    cam.width = cam.height = 4;
    RenderSettings st;
    st.blur_px2 = 0;
    ProjectedSplat p = project_splat(Vec3(0, 0, 1), Mat3::Identity(), cam, st);
    REQUIRE(p.valid);
    CHECK(p.u == 0.0);
    CHECK(p.v == 0.0);
    CHECK(p.depth == 1.0);
    Eigen::Matrix<double, 2, 3> J_expect;
    J_expect << 1, 0, 0, 0, 1, 0;
    CHECK((p.J - J_expect).norm() < 1e-15);
    CHECK((p.lam - Eigen::Matrix2d::Identity()).norm() < 1e-15);
}

TEST_CASE("project_splat division example and culling") {
    Camera cam;
    cam.fx = cam.fy = 1;
    cam.width = cam.height = 4;
    RenderSettings st;
    ProjectedSplat p = project_splat(Vec3(1, 2, 2), Mat3::Identity() * 0.01, cam, st);
    REQUIRE(p.valid);
    CHECK(p.u == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(p.v == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(p.depth == doctest::Approx(2.0).epsilon(1e-15));
    ProjectedSplat culled =
        project_splat(Vec3(0, 0, -1), Mat3::Identity(), cam, st);
    CHECK(!culled.valid);
}

TEST_CASE("projected image covariance is SPD for random SPD sigma") {
    std::mt19937_64 rng(41);
    std::uniform_real_distribution<double> u(-1, 1);
    Camera cam;
    cam.fx = cam.fy = 50;
    cam.width = cam.height = 32;
    RenderSettings st;
    for (int trial = 0; trial < 100; ++trial) {
        Mat3 A;
        for (int i = 0; i < 9; ++i) A(i / 3, i % 3) = u(rng);
        Mat3 sigma = A * A.transpose() + 0.01 * Mat3::Identity();
        Vec3 p(u(rng), u(rng), 1.5 + u(rng));
        ProjectedSplat ps = project_splat(p, sigma, cam, st);
        REQUIRE(ps.valid);
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(ps.lam);
        CHECK((ps.lam - ps.lam.transpose()).norm() < 1e-14);
        CHECK(es.eigenvalues().minCoeff() > 0.0);
    }
}

TEST_CASE("gaussian_energy examples and 2x2 inverse oracle") {
    Camera cam;
    cam.fx = cam.fy = 1;
    cam.width = cam.height = 4;
    RenderSettings st;
    st.blur_px2 = 0;
    ProjectedSplat p = project_splat(Vec3(0, 0, 1), Mat3::Identity(), cam, st);
    CHECK(gaussian_energy(p, Eigen::Vector2d(0, 0)) == 0.0);
    CHECK(gaussian_energy(p, Eigen::Vector2d(1, 0)) ==
          doctest::Approx(0.5).epsilon(1e-15));
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int trial = 0; trial < 100; ++trial) {
        Mat3 A;
        for (int i = 0; i < 9; ++i) A(i / 3, i % 3) = u(rng);
        Mat3 sigma = A * A.transpose() + 0.05 * Mat3::Identity();
        Vec3 mean(0.3 * u(rng), 0.3 * u(rng), 1.5 + u(rng));
        ProjectedSplat ps = project_splat(mean, sigma, cam, st);
        REQUIRE(ps.valid);
        Eigen::Vector2d x(0.3 * u(rng), 0.3 * u(rng));
        // Oracle: explicit closed-form 2x2 inverse.
        Eigen::Vector2d r(ps.u - x[0], ps.v - x[1]);
        const Eigen::Matrix2d& L = ps.lam;
        double det = L(0, 0) * L(1, 1) - L(0, 1) * L(1, 0);
        Eigen::Matrix2d inv;
        inv << L(1, 1) / det, -L(0, 1) / det, -L(1, 0) / det, L(0, 0) / det;
        double expect = 0.5 * r.dot(inv * r);
        CHECK(gaussian_energy(ps, x) == doctest::Approx(expect).epsilon(1e-14));
    }
}

TEST_CASE("forward matches brute-force reference exactly on random scenes") {
    Mesh mesh = make_icosphere(1.0, 1);
    GlobalTransform tf;
    Camera cam = scene_camera(48);
    std::mt19937_64 rng(43);
    for (int scene = 0; scene < 10; ++scene) {
        SplatMode mode = scene % 2 ? SplatMode::Splat3D : SplatMode::Splat2D;
        SplatSet set = random_scene(mesh, 20, mode, rng);
        RenderSettings st;
        RenderOutput out = render(mesh, set, tf, cam, st);
        RenderOutput ref = reference_render(mesh, set, tf, cam, st, out);
        size_t color_diff = 0, depth_diff = 0, alpha_diff = 0, normal_diff = 0;
        for (size_t i = 0; i < out.color.data().size(); ++i)
            color_diff += out.color.data()[i] != ref.color.data()[i];
        for (size_t i = 0; i < out.depth.data().size(); ++i)
            depth_diff += out.depth.data()[i] != ref.depth.data()[i];
        for (size_t i = 0; i < out.alpha.data().size(); ++i)
            alpha_diff += out.alpha.data()[i] != ref.alpha.data()[i];
        for (size_t i = 0; i < out.normal.data().size(); ++i)
            normal_diff += out.normal.data()[i] != ref.normal.data()[i];
        CHECK(color_diff == 0);
        CHECK(depth_diff == 0);
        CHECK(alpha_diff == 0);
        CHECK(normal_diff == 0);
    }
}

TEST_CASE("forward determinism and alpha bound") {
    Mesh mesh = make_icosphere(1.0, 1);
    GlobalTransform tf;
    Camera cam = scene_camera(32);
    std::mt19937_64 rng(44);
    SplatSet set = random_scene(mesh, 40, SplatMode::Splat2D, rng);
    RenderSettings st;
    RenderOutput a = render(mesh, set, tf, cam, st);
    RenderOutput b = render(mesh, set, tf, cam, st);
    CHECK(a.color.data() == b.color.data());
    CHECK(a.depth.data() == b.depth.data());
    for (double v : a.alpha.data()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0 + 1e-6);
    }
    // Premultiplied color bound.
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x)
            for (int ch = 0; ch < 3; ++ch)
                CHECK(a.color.at(y, x, ch) <= a.alpha.at(y, x) + 1e-12);
}

TEST_CASE("empty splat set renders black") {
    Mesh mesh = make_icosphere(1.0, 0);
    SplatSet set;
    set.mode = SplatMode::Splat2D;
    set.rebuild_face_index(mesh.num_faces());
    RenderOutput out = render(mesh, set, GlobalTransform{}, scene_camera(16),
                              RenderSettings{});
    for (double v : out.color.data()) CHECK(v == 0.0);
    for (double v : out.alpha.data()) CHECK(v == 0.0);
}

TEST_CASE("2d tape depths match world-space ray-plane oracle") {
    Mesh mesh = make_icosphere(1.0, 1);
    GlobalTransform tf;
    tf.scale = Vec3(1.1, 0.95, 1.05);
    tf.rotation = Quat(0.9, 0.1, 0.2, -0.1).normalized();
    tf.translation = Vec3(0.05, -0.1, 0.02);
    Camera cam = scene_camera(32);
    std::mt19937_64 rng(45);
    SplatSet set = random_scene(mesh, 30, SplatMode::Splat2D, rng);
    RenderSettings st;
    RenderOutput out = render(mesh, set, tf, cam, st);
    const auto tv = apply_global_transform(mesh, tf);
    const Vec3 origin = cam.position();
    int checked = 0;
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            size_t begin = out.pixel_start[static_cast<size_t>(y) * cam.width + x];
            size_t end = out.pixel_start[static_cast<size_t>(y) * cam.width + x + 1];
            const Eigen::Vector2d xp = cam.pixel_to_plane(x + 0.5, y + 0.5);
            const Vec3 dir_world =
                cam.R.transpose() * Vec3(xp[0], xp[1], 1.0);  // unnormalized, z=1 cam
            for (size_t e = begin; e < end; ++e) {
                const TapeEntry& te = out.entries[e];
                // Independent world-space plane: splat center and normal from
                // scratch via the anchored parameterization.
                const AnchoredSplat& s = set.splats[te.splat];
                const auto& fc = mesh.face(s.face_id);
                Vec3 n_f = ((tv[fc[1]] - tv[fc[0]]).cross(tv[fc[2]] - tv[fc[0]])).normalized();
                Vec3 center = s.beta[0] * tv[fc[0]] + s.beta[1] * tv[fc[1]] +
                              s.beta[2] * tv[fc[2]] + s.d * n_f;
                Vec3 n_splat =
                    quat_to_mat(quat_mul(s.q_bar.normalized(),
                                         face_frame_quaternion(n_f)))
                        .col(2);
                double denom = dir_world.dot(n_splat);
                if (std::abs(denom) < 1e-9) continue;
                double t = (center - origin).dot(n_splat) / denom;
                // dir_world has unit camera-z, so t is the camera depth.
                CHECK(te.depth == doctest::Approx(t).epsilon(1e-10));
                ++checked;
            }
        }
    }
    CHECK(checked > 100);
}

namespace {

double render_scalar_loss(const Mesh& mesh, const SplatSet& set,
                          const GlobalTransform& tf, const Camera& cam,
                          const RenderSettings& st, const Image& g_color,
                          const Image* g_normal) {
    RenderOutput out = render(mesh, set, tf, cam, st);
    double L = 0;
    for (size_t i = 0; i < out.color.data().size(); ++i)
        L += g_color.data()[i] * out.color.data()[i];
    if (g_normal)
        for (size_t i = 0; i < out.normal.data().size(); ++i)
            L += g_normal->data()[i] * out.normal.data()[i];
    return L;
}

void check_rel(double analytic, double fd, double tol, double floor) {
    const double denom = std::max({std::abs(analytic), std::abs(fd), floor});
    CHECK(std::abs(analytic - fd) / denom < tol);
}

// Finite-difference validation of every parameter class on a 3-splat scene.
void fd_sweep(SplatMode mode, bool with_normal) {
    Mesh mesh = make_icosphere(1.0, 0);
    GlobalTransform tf;
    tf.scale = Vec3(1.05, 0.97, 1.02);
    tf.rotation = Quat(0.95, 0.05, -0.1, 0.08).normalized();
    tf.translation = Vec3(0.03, -0.04, 0.06);
    Camera cam = scene_camera(16);
    std::mt19937_64 rng(46 + static_cast<int>(mode));
    SplatSet set = random_scene(mesh, 3, mode, rng);
    for (auto& s : set.splats) s.set_scale(s.scale() * 2.0);  // broad coverage

    RenderSettings st;
    st.alpha_min = 0;       // remove contribution-threshold discontinuity
    st.t_min = 0;           // no early termination
    st.energy_cutoff = 50;  // footprints cover the frame: no cutoff boundary
    std::uniform_real_distribution<double> u(-1, 1);
    Image g_color(16, 16, 3);
    for (double& v : g_color.data()) v = u(rng);
    Image g_normal(16, 16, 3);
    for (double& v : g_normal.data()) v = u(rng);
    Image* gn = with_normal ? &g_normal : nullptr;

    RenderOutput out = render(mesh, set, tf, cam, st);
    BackwardInput bi;
    bi.d_color = &g_color;
    if (with_normal) bi.d_normal = &g_normal;
    SceneGrads g = backward(out, mesh, set, tf, cam, bi);

    const double tol = 1e-4, floor = 1e-6;
    auto fd = [&](auto&& mutate) {
        const double h = 1e-6;
        SplatSet sp = set;
        GlobalTransform tp = tf;
        Mesh mp = mesh;
        mutate(sp, tp, mp, h);
        double Lp = render_scalar_loss(mp, sp, tp, cam, st, g_color, gn);
        SplatSet sm = set;
        GlobalTransform tm = tf;
        Mesh mm = mesh;
        mutate(sm, tm, mm, -h);
        double Lm = render_scalar_loss(mm, sm, tm, cam, st, g_color, gn);
        return (Lp - Lm) / (2 * h);
    };

    for (int k = 0; k < set.size(); ++k) {
        for (int j = 0; j < 3; ++j) {
            check_rel(g.d_beta[k][j], fd([&](SplatSet& s, GlobalTransform&, Mesh&,
                                             double h) { s.splats[k].beta[j] += h; }),
                      tol, floor);
            check_rel(g.d_log_scale[k][j],
                      fd([&](SplatSet& s, GlobalTransform&, Mesh&, double h) {
                          s.splats[k].log_scale[j] += h;
                      }),
                      tol, floor);
            check_rel(g.d_color[k][j],
                      fd([&](SplatSet& s, GlobalTransform&, Mesh&, double h) {
                          s.splats[k].color[j] += h;
                      }),
                      tol, floor);
        }
        for (int j = 0; j < 4; ++j)
            check_rel(g.d_q_bar[k][j],
                      fd([&](SplatSet& s, GlobalTransform&, Mesh&, double h) {
                          s.splats[k].q_bar[j] += h;
                      }),
                      tol, floor);
        check_rel(g.d_d[k], fd([&](SplatSet& s, GlobalTransform&, Mesh&, double h) {
                      s.splats[k].d += h;
                  }),
                  tol, floor);
        check_rel(g.d_opacity_logit[k],
                  fd([&](SplatSet& s, GlobalTransform&, Mesh&, double h) {
                      s.splats[k].opacity_logit += h;
                  }),
                  tol, floor);
    }
    // Vertices: every vertex of the faces carrying splats plus a few others.
    for (int v = 0; v < mesh.num_vertices(); ++v) {
        for (int j = 0; j < 3; ++j) {
            double an = g.d_vertices(v, j);
            double fdv = fd([&](SplatSet&, GlobalTransform&, Mesh& m, double h) {
                auto verts = m.vertices();
                verts[v][j] += h;
                m.set_vertices(verts);
            });
            check_rel(an, fdv, tol, floor);
        }
    }
    // Global transform.
    for (int j = 0; j < 3; ++j) {
        check_rel(g.d_scale[j], fd([&](SplatSet&, GlobalTransform& t, Mesh&,
                                       double h) { t.scale[j] += h; }),
                  tol, floor);
        check_rel(g.d_translation[j],
                  fd([&](SplatSet&, GlobalTransform& t, Mesh&, double h) {
                      t.translation[j] += h;
                  }),
                  tol, floor);
    }
    for (int j = 0; j < 4; ++j)
        check_rel(g.d_rotation[j], fd([&](SplatSet&, GlobalTransform& t, Mesh&,
                                          double h) { t.rotation[j] += h; }),
                  tol, floor);
}

}  // namespace

TEST_CASE("backward matches finite differences, 2D mode") { fd_sweep(SplatMode::Splat2D, false); }

TEST_CASE("backward matches finite differences, 2D mode with normal gradients") {
    fd_sweep(SplatMode::Splat2D, true);
}

TEST_CASE("backward matches finite differences, 3D mode") { fd_sweep(SplatMode::Splat3D, false); }

TEST_CASE("zero image gradient gives zero parameter gradients") {
    Mesh mesh = make_icosphere(1.0, 0);
    std::mt19937_64 rng(47);
    SplatSet set = random_scene(mesh, 3, SplatMode::Splat2D, rng);
    Camera cam = scene_camera(16);
    RenderSettings st;
    RenderOutput out = render(mesh, set, GlobalTransform{}, cam, st);
    Image zeros(16, 16, 3);
    BackwardInput bi;
    bi.d_color = &zeros;
    SceneGrads g = backward(out, mesh, set, GlobalTransform{}, cam, bi);
    for (int k = 0; k < set.size(); ++k) {
        CHECK(g.d_position[k].norm() == 0.0);
        CHECK(g.d_beta[k].norm() == 0.0);
        CHECK(g.d_color[k].norm() == 0.0);
    }
    CHECK(g.d_vertices.norm() == 0.0);
}

TEST_CASE("frontmost color gradient equals compositing weight") {
    // Two stacked 2D splats on a flat face seen head-on: dC/dc1 = alpha1,
    // dC/dc2 = alpha2 (1 - alpha1) at the center pixel.
    Mesh mesh({Vec3(-2, -2, 0), Vec3(2, -2, 0), Vec3(0, 2, 0)}, {{0, 1, 2}});
    SplatSet set;
    set.mode = SplatMode::Splat2D;
    for (int i = 0; i < 2; ++i) {
        AnchoredSplat s;
        s.face_id = 0;
        s.beta = Vec3::Constant(1.0 / 3.0);
        s.d = i == 0 ? 0.5 : 0.0;  // splat 0 nearer to the camera
        s.set_scale(Vec3::Constant(3.0));
        s.set_opacity(i == 0 ? 0.6 : 0.4);
        set.splats.push_back(s);
    }
    set.rebuild_face_index(1);
    Camera cam = look_at(Vec3(mesh.face_centroid(0) + Vec3(0, 0, 3)),
                         mesh.face_centroid(0), Vec3(0, 1, 0), 20, 9, 9);
    RenderSettings st;
    st.alpha_min = 0;
    RenderOutput out = render(mesh, set, GlobalTransform{}, cam, st);
    Image g_color(9, 9, 3);
    g_color.at(4, 4, 0) = 1.0;  // dL/d(red at center pixel)
    BackwardInput bi;
    bi.d_color = &g_color;
    SceneGrads g = backward(out, mesh, set, GlobalTransform{}, cam, bi);
    // Per-contributor alphas at the center pixel from the tape.
    size_t begin = out.pixel_start[4 * 9 + 4], end = out.pixel_start[4 * 9 + 5];
    REQUIRE(end - begin == 2);
    const TapeEntry& front = out.entries[begin];
    const TapeEntry& back_e = out.entries[begin + 1];
    CHECK(set.splats[front.splat].d == 0.5);  // nearer splat composited first
    CHECK(g.d_color[front.splat][0] ==
          doctest::Approx(front.alpha).epsilon(1e-12));
    CHECK(g.d_color[back_e.splat][0] ==
          doctest::Approx(back_e.alpha * (1.0 - front.alpha)).epsilon(1e-12));
    CHECK(g.d_color[front.splat][1] == 0.0);
}
