#include "surfsplat/optim.h"

#include <cmath>
#include <sstream>

namespace surfsplat {

DiffusionOperator::DiffusionOperator(const Mesh& mesh, double lambda_l)
    : lambda_(lambda_l) {
    if (lambda_l < 0) throw OptimError("diffusion: negative lambda_l");
    const LaplacianMatrix lap = build_laplacian(mesh);
    Eigen::SparseMatrix<double> eye(mesh.num_vertices(), mesh.num_vertices());
    eye.setIdentity();
    A_ = eye + lambda_l * lap.L;
    solver_.compute(A_);
    if (solver_.info() != Eigen::Success)
        throw OptimError("diffusion: factorization of (I + lambda L) failed");
}

Eigen::MatrixXd DiffusionOperator::apply(const Eigen::MatrixXd& field) const {
    return solver_.solve(solver_.solve(field));
}

double DiffusionOperator::residual(const Eigen::MatrixXd& g,
                                   const Eigen::MatrixXd& x) const {
    return (A_ * (A_ * x) - g).norm();
}

namespace {

Mat3 inverse_transform_matrix(const GlobalTransform& tf) {
    const Mat3 M = tf.matrix();
    if (std::abs(M.determinant()) < 1e-12)
        throw OptimError("singular global transform");
    return M.inverse();
}

}  // namespace

Eigen::MatrixXd splat_grads_to_vertex_grads(const std::vector<Vec3>& d_position,
                                            const SplatSet& set, const Mesh& mesh,
                                            const GlobalTransform& tf) {
    const Mat3 Minv = inverse_transform_matrix(tf);
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(mesh.num_vertices(), 3);
    for (int k = 0; k < set.size(); ++k) {
        const AnchoredSplat& s = set.splats[k];
        const auto& f = mesh.face(s.face_id);
        for (int m = 0; m < 3; ++m)
            out.row(f[m]) += s.beta[m] * d_position[k].transpose();
    }
    return out * Minv.transpose();
}

Eigen::MatrixXd realignment_targets(const SplatSet& set, const Mesh& mesh,
                                    const GlobalTransform& tf) {
    const std::vector<Vec3> tv = apply_global_transform(mesh, tf);
    Eigen::MatrixXd num = Eigen::MatrixXd::Zero(mesh.num_vertices(), 3);
    Eigen::VectorXd den = Eigen::VectorXd::Zero(mesh.num_vertices());
    for (const auto& s : set.splats) {
        const Vec3 p = world_position(s, tv, mesh);
        const auto& f = mesh.face(s.face_id);
        for (int m = 0; m < 3; ++m) {
            num.row(f[m]) += s.beta[m] * p.transpose();
            den[f[m]] += s.beta[m];
        }
    }
    Eigen::MatrixXd out(mesh.num_vertices(), 3);
    for (int i = 0; i < mesh.num_vertices(); ++i)
        out.row(i) = den[i] > 0 ? (num.row(i) / den[i]).eval() : tv[i].transpose();
    return out;
}

Eigen::MatrixXd realign_vertices(const Mesh& mesh, const Eigen::MatrixXd& targets,
                                 const DiffusionOperator& op,
                                 const GlobalTransform& tf) {
    const Mat3 Minv = inverse_transform_matrix(tf);
    const std::vector<Vec3> tv = apply_global_transform(mesh, tf);
    Eigen::MatrixXd delta(mesh.num_vertices(), 3);
    for (int i = 0; i < mesh.num_vertices(); ++i)
        delta.row(i) = targets.row(i) - tv[i].transpose();
    return op.apply(delta) * Minv.transpose();
}

Schedule Schedule::standard(int s1, int s2, int s3) {
    Schedule sc;
    sc.stages = {{s1, SplatMode::Splat2D, false, false},
                 {s2, SplatMode::Splat3D, false, false},
                 {s3, SplatMode::Splat2D, true, true}};
    return sc;
}

int Schedule::total() const {
    int t = 0;
    for (const auto& s : stages) t += s.iters;
    return t;
}

int Schedule::default_densify_until() const {
    int t = 0;
    for (size_t i = 0; i < stages.size() && i < 2; ++i) t += stages[i].iters;
    return t;
}

const StageConfig& Schedule::stage_at(int iter, int* index) const {
    if (stages.empty()) throw OptimError("empty schedule");
    int acc = 0;
    for (size_t i = 0; i < stages.size(); ++i) {
        acc += stages[i].iters;
        if (iter < acc) {
            if (index) *index = static_cast<int>(i);
            return stages[i];
        }
    }
    if (index) *index = static_cast<int>(stages.size()) - 1;
    return stages.back();
}

Eigen::ArrayXd AdamMoments::step(const Eigen::ArrayXd& grad) {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    ++count;
    m = b1 * m + (1 - b1) * grad;
    v = b2 * v + (1 - b2) * grad.square();
    const double c1 = 1.0 - std::pow(b1, count);
    const double c2 = 1.0 - std::pow(b2, count);
    return (m / c1) / ((v / c2).sqrt() + eps);
}

void OptimState::resize(int num_splats, int num_vertices) {
    beta.resize(3 * num_splats);
    d.resize(num_splats);
    q_bar.resize(4 * num_splats);
    log_scale.resize(3 * num_splats);
    opacity.resize(num_splats);
    color.resize(3 * num_splats);
    transform.resize(10);
    if (vertex_momentum.rows() != num_vertices)
        vertex_momentum = Eigen::MatrixXd::Zero(num_vertices, 3);
    densify_stats.resize(num_splats);
}

namespace {

Eigen::ArrayXd flatten3(const std::vector<Vec3>& g) {
    Eigen::ArrayXd a(3 * g.size());
    for (size_t i = 0; i < g.size(); ++i)
        for (int j = 0; j < 3; ++j) a[3 * i + j] = g[i][j];
    return a;
}

Eigen::ArrayXd flatten4(const std::vector<Quat>& g) {
    Eigen::ArrayXd a(4 * g.size());
    for (size_t i = 0; i < g.size(); ++i)
        for (int j = 0; j < 4; ++j) a[4 * i + j] = g[i][j];
    return a;
}

Eigen::ArrayXd flatten1(const std::vector<double>& g) {
    return Eigen::Map<const Eigen::ArrayXd>(g.data(), g.size());
}

double clampd(double x, double lo, double hi) {
    return x < lo ? lo : (x > hi ? hi : x);
}

}  // namespace

StepResult step(OptimState& state, const Schedule& schedule, Scene& scene,
                const std::vector<Camera>& cameras, const std::vector<Image>& targets,
                const DiffusionOperator& diffusion, const OptimSettings& settings) {
    if (cameras.empty() || cameras.size() != targets.size())
        throw OptimError("step: camera/target mismatch");
    StepResult res;
    const StageConfig& stage = schedule.stage_at(state.iteration, &res.stage);
    scene.splats.mode = stage.mode;

    std::uniform_int_distribution<size_t> pick(0, cameras.size() - 1);
    res.camera_index = static_cast<int>(pick(state.rng));
    const Camera& cam = cameras[res.camera_index];
    const Image& target = targets[res.camera_index];

    RenderOutput out = render(scene.mesh, scene.splats, scene.transform, cam,
                              settings.render);

    const LossWeights& w = settings.weights;
    LossReport& rep = res.loss;
    ImageLossResult photo = photo_loss(out.color, target);
    ImageLossResult ssim = ssim_loss(out.color, target);
    rep.photo = photo.value;
    rep.ssim = ssim.value;

    const std::vector<Vec3> tv = apply_global_transform(scene.mesh, scene.transform);
    Eigen::MatrixXd vworld(scene.mesh.num_vertices(), 3);
    for (int i = 0; i < scene.mesh.num_vertices(); ++i)
        vworld.row(i) = tv[i].transpose();
    const LaplacianMatrix lap = build_laplacian(scene.mesh);
    RegLossResult reg = bilaplacian_reg(vworld, lap, 1.0);
    rep.reg = reg.value;

    Image d_color(out.color.height(), out.color.width(), 3);
    for (size_t i = 0; i < d_color.data().size(); ++i)
        d_color.data()[i] = w.photo * photo.grad.data()[i] + w.ssim * ssim.grad.data()[i];

    BackwardInput bin;
    bin.d_color = &d_color;

    Image d_normal;
    ImageLossResult nl;
    if (stage.normal_loss && stage.mode == SplatMode::Splat2D) {
        const Image ref = depth_to_normals(out.depth, out.alpha, cam,
                                           settings.alpha_mask);
        nl = normal_consistency_loss(out.normal, out.alpha, ref, settings.alpha_mask);
        rep.normal = nl.value;
        d_normal = nl.grad;
        for (auto& g : d_normal.data()) g *= w.normal;
        bin.d_normal = &d_normal;
    }

    std::vector<double> d_weight, d_depth;
    if (stage.dist_loss && stage.mode == SplatMode::Splat2D) {
        DistortionLossResult dl = depth_distortion_loss(out);
        rep.dist = dl.value;
        d_weight = std::move(dl.d_weight);
        d_depth = std::move(dl.d_depth);
        for (auto& g : d_weight) g *= w.dist;
        for (auto& g : d_depth) g *= w.dist;
        bin.d_weight = &d_weight;
        bin.d_depth = &d_depth;
    }

    rep.total = w.photo * rep.photo + w.ssim * rep.ssim + w.reg * rep.reg +
                w.normal * rep.normal + w.dist * rep.dist;

    SceneGrads grads = backward(out, scene.mesh, scene.splats, scene.transform, cam,
                                bin);
    if (grads.has_nan()) {
        std::ostringstream os;
        os << "NaN gradient at iteration " << state.iteration << " stage " << res.stage
           << " camera " << res.camera_index << " (photo=" << rep.photo
           << " ssim=" << rep.ssim << " reg=" << rep.reg << " normal=" << rep.normal
           << " dist=" << rep.dist << ", " << scene.splats.size() << " splats)";
        throw OptimError(os.str());
    }

    SplatSet& set = scene.splats;
    const int n = set.size();
    const LearningRates& lr = settings.lr;
    {
        const Eigen::ArrayXd sb = state.beta.step(flatten3(grads.d_beta));
        const Eigen::ArrayXd sd = state.d.step(flatten1(grads.d_d));
        const Eigen::ArrayXd sq = state.q_bar.step(flatten4(grads.d_q_bar));
        const Eigen::ArrayXd ss = state.log_scale.step(flatten3(grads.d_log_scale));
        const Eigen::ArrayXd so = state.opacity.step(flatten1(grads.d_opacity_logit));
        const Eigen::ArrayXd sc = state.color.step(flatten3(grads.d_color));
        for (int i = 0; i < n; ++i) {
            AnchoredSplat& s = set.splats[i];
            for (int j = 0; j < 3; ++j) {
                s.beta[j] -= lr.splat_position * sb[3 * i + j];
                s.log_scale[j] =
                    clampd(s.log_scale[j] - lr.log_scale * ss[3 * i + j], -12.0, 5.0);
                s.color[j] = clampd(s.color[j] - lr.color * sc[3 * i + j], 0.0, 1.0);
            }
            s.d -= lr.splat_position * sd[i];
            for (int j = 0; j < 4; ++j) s.q_bar[j] -= lr.q_bar * sq[4 * i + j];
            const double qn = s.q_bar.norm();
            s.q_bar = qn > 1e-12 ? Quat(s.q_bar / qn) : quat_identity();
            s.opacity_logit =
                clampd(s.opacity_logit - lr.opacity * so[i], -12.0, 12.0);
        }
    }

    const bool transform_active =
        settings.optimize_transform &&
        !(settings.freeze_transform_after_stage1 && res.stage > 0);
    if (transform_active) {
        Eigen::ArrayXd g(10);
        g << grads.d_scale[0], grads.d_scale[1], grads.d_scale[2],
            grads.d_rotation[0], grads.d_rotation[1], grads.d_rotation[2],
            grads.d_rotation[3], grads.d_translation[0], grads.d_translation[1],
            grads.d_translation[2];
        const Eigen::ArrayXd st = state.transform.step(g);
        GlobalTransform& tf = scene.transform;
        for (int j = 0; j < 3; ++j) tf.scale[j] -= lr.transform * st[j];
        for (int j = 0; j < 4; ++j) tf.rotation[j] -= lr.transform * st[3 + j];
        tf.rotation.normalize();
        for (int j = 0; j < 3; ++j) tf.translation[j] -= lr.transform * st[7 + j];
    }

    // Eq.-9-style aggregation of splat position gradients; the bi-Laplacian
    // term is mapped through the same M^-1 preconditioner.
    {
        const Mat3 Minv = inverse_transform_matrix(scene.transform);
        Eigen::MatrixXd vg = splat_grads_to_vertex_grads(grads.d_position, set,
                                                         scene.mesh, scene.transform);
        vg += w.reg * (reg.grad * Minv.transpose());
        Eigen::MatrixXd delta;
        if (settings.diffuse_momentum) {
            const Eigen::MatrixXd gd = diffusion.apply(vg);
            state.vertex_momentum =
                settings.momentum * state.vertex_momentum - lr.vertex * gd;
            delta = state.vertex_momentum;
        } else {
            state.vertex_momentum =
                settings.momentum * state.vertex_momentum - lr.vertex * vg;
            delta = diffusion.apply(state.vertex_momentum);
        }
        scene.mesh.displace_vertices(delta);
    }

    for (auto& s : set.splats) reanchor_walk(s, scene.mesh);
    set.rebuild_face_index(scene.mesh.num_faces());

    if (static_cast<int>(state.densify_stats.grad_norm_sum.size()) != n)
        state.densify_stats.resize(n);
    for (int i = 0; i < n; ++i) {
        if (grads.screen_grad_norm[i] > 0) {
            state.densify_stats.grad_norm_sum[i] += grads.screen_grad_norm[i];
            state.densify_stats.grad_count[i] += 1;
        }
    }

    const int it = state.iteration + 1;
    const int densify_until = schedule.densify_until > 0
                                  ? schedule.densify_until
                                  : schedule.default_densify_until();
    if (schedule.densify_interval > 0 && it % schedule.densify_interval == 0 &&
        it <= densify_until) {
        DensifyParams dp = settings.densify;
        dp.seed = settings.seed;
        densify_and_prune(set, state.densify_stats, scene.mesh, it, dp);
        res.densified = true;
        // Splat moment shapes no longer match; restart them.
        state.resize(set.size(), scene.mesh.num_vertices());
    }

    if (schedule.realign_interval > 0 && it % schedule.realign_interval == 0) {
        const Eigen::MatrixXd targets_v =
            realignment_targets(set, scene.mesh, scene.transform);
        const Eigen::MatrixXd dvp =
            realign_vertices(scene.mesh, targets_v, diffusion, scene.transform);
        // Per-face mean of the world-space vertex motion along the face
        // normal: the part of d absorbed into the vertices.
        const Mat3 M = scene.transform.matrix();
        const std::vector<Vec3> before = apply_global_transform(scene.mesh,
                                                                scene.transform);
        std::vector<double> shrink(scene.mesh.num_faces(), 0.0);
        for (int f = 0; f < scene.mesh.num_faces(); ++f) {
            const auto& face = scene.mesh.face(f);
            const Vec3 e1 = before[face[1]] - before[face[0]];
            const Vec3 e2 = before[face[2]] - before[face[0]];
            Vec3 nf = e1.cross(e2);
            const double nn = nf.norm();
            if (nn < kEpsArea) continue;
            nf /= nn;
            double s = 0;
            for (int m = 0; m < 3; ++m)
                s += nf.dot(M * dvp.row(face[m]).transpose());
            shrink[f] = s / 3.0;
        }
        scene.mesh.displace_vertices(dvp);
        for (auto& s : set.splats) {
            const double raw = shrink[s.face_id];
            // Shrink toward zero only.
            const double applied =
                clampd(raw, std::min(0.0, s.d), std::max(0.0, s.d));
            s.d -= applied;
        }
        res.realigned = true;
    }

    res.splat_count = set.size();
    state.iteration = it;
    return res;
}

}  // namespace surfsplat
