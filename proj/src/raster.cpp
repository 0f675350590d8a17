#include "surfsplat/raster.h"

#include <algorithm>
#include <cmath>

namespace surfsplat {

namespace {

Eigen::Matrix2d inv2x2(const Eigen::Matrix2d& m) {
    double det = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
    Eigen::Matrix2d inv;
    inv << m(1, 1), -m(0, 1), -m(1, 0), m(0, 0);
    return inv / det;
}

Eigen::Matrix<double, 2, 3> projection_jacobian(double u, double v, double d) {
    Eigen::Matrix<double, 2, 3> J;
    J << 1, 0, -u, 0, 1, -v;
    return J / d;
}

EnergyGradient energy_gradient_pre(const Mat3& sigma, double u, double v, double Z,
                                   const Eigen::Matrix2d& lam_inv,
                                   const Eigen::Vector2d& x) {
    EnergyGradient out;
    const Eigen::Vector2d r(u - x[0], v - x[1]);
    out.g = lam_inv * r;
    out.E = 0.5 * r.dot(out.g);
    const Eigen::Matrix<double, 2, 3> J = projection_jacobian(u, v, Z);
    const Vec3 h = sigma * (J.transpose() * out.g);
    out.h3 = h[2];
    const double scale = 1.0 + out.h3 / Z;
    out.duvd[0] = out.g[0] * scale;
    out.duvd[1] = out.g[1] * scale;
    // h^T J^T g / d; equals (2/d) E when no screen-space blur is applied.
    out.duvd[2] = h.dot(J.transpose() * out.g) / Z;
    out.dxyz[0] = out.duvd[0] / Z;
    out.dxyz[1] = out.duvd[1] / Z;
    out.dxyz[2] = -(u / Z) * out.duvd[0] - (v / Z) * out.duvd[1] + out.duvd[2];
    return out;
}

}  // namespace

ProjectedSplat project_splat(const Vec3& world_mean, const Mat3& sigma_world,
                             const Camera& cam, const RenderSettings& s) {
    ProjectedSplat out;
    out.p_cam = cam.to_camera(world_mean);
    if (out.p_cam[2] <= s.z_near) return out;  // culled
    out.u = out.p_cam[0] / out.p_cam[2];
    out.v = out.p_cam[1] / out.p_cam[2];
    out.depth = out.p_cam[2];
    out.J = projection_jacobian(out.u, out.v, out.depth);
    Mat3 sigma_cam = cam.R * sigma_world * cam.R.transpose();
    out.lam = out.J * sigma_cam * out.J.transpose();
    out.lam(0, 0) += s.blur_px2 / (cam.fx * cam.fx);
    out.lam(1, 1) += s.blur_px2 / (cam.fy * cam.fy);
    double det = out.lam.determinant();
    if (det <= 0 || out.lam.trace() <= 0) return out;
    out.lam_inv = inv2x2(out.lam);
    out.valid = true;
    return out;
}

double gaussian_energy(const ProjectedSplat& p, const Eigen::Vector2d& x) {
    Eigen::Vector2d r(p.u - x[0], p.v - x[1]);
    return 0.5 * r.dot(p.lam_inv * r);
}

EnergyGradient energy_gradient(const Mat3& sigma_cam, const Vec3& p_cam,
                               const Eigen::Vector2d& x, double blur_u, double blur_v) {
    const double Z = p_cam[2];
    const double u = p_cam[0] / Z, v = p_cam[1] / Z;
    const Eigen::Matrix<double, 2, 3> J = projection_jacobian(u, v, Z);
    Eigen::Matrix2d lam = J * sigma_cam * J.transpose();
    lam(0, 0) += blur_u;
    lam(1, 1) += blur_v;
    return energy_gradient_pre(sigma_cam, u, v, Z, inv2x2(lam), x);
}

namespace {

struct Candidate {
    double depth;
    int splat;
    double alpha;
    double a, b;
    double nsign;
};

// Conservative pixel-space bbox from a normalized-plane interval.
void plane_interval_to_bbox(const Camera& cam, double u0, double u1, double v0,
                            double v1, SplatForward& f) {
    // Clamp in double before the int cast; huge intervals (whole-image
    // fallback) would otherwise overflow the conversion.
    auto px = [](double p, double limit) {
        return static_cast<int>(std::clamp(p, -1.0, limit));
    };
    f.x0 = std::max(0, px(std::floor(u0 * cam.fx + cam.cx - 0.5), cam.width));
    f.x1 = std::min(cam.width - 1, px(std::ceil(u1 * cam.fx + cam.cx - 0.5), cam.width));
    f.y0 = std::max(0, px(std::floor(v0 * cam.fy + cam.cy - 0.5), cam.height));
    f.y1 = std::min(cam.height - 1, px(std::ceil(v1 * cam.fy + cam.cy - 0.5), cam.height));
}

SplatForward forward_splat(const AnchoredSplat& s, const std::vector<Vec3>& tv,
                           const Mesh& mesh, const Camera& cam, SplatMode mode,
                           const RenderSettings& st) {
    SplatForward f;
    const auto& face = mesh.face(s.face_id);
    for (int m = 0; m < 3; ++m) f.tv[m] = tv[face[m]];
    f.cross = (f.tv[1] - f.tv[0]).cross(f.tv[2] - f.tv[0]);
    f.cross_norm = f.cross.norm();
    if (0.5 * f.cross_norm < kEpsArea) throw MeshError("degenerate face in render");
    f.n_w = f.cross / f.cross_norm;
    f.p_w = s.beta[0] * f.tv[0] + s.beta[1] * f.tv[1] + s.beta[2] * f.tv[2] + s.d * f.n_w;

    f.q_bar_n = s.q_bar.normalized();
    Quat qf_raw(1.0 + f.n_w[2], -f.n_w[1], f.n_w[0], 0.0);
    f.antipodal = qf_raw.norm() < kEpsAntipodal;
    f.q_f = f.antipodal ? Quat(0, 1, 0, 0) : Quat(qf_raw / qf_raw.norm());
    f.q_k_raw = quat_mul(f.q_bar_n, f.q_f);
    f.q_k = f.q_k_raw.normalized();
    f.s = s.scale();
    f.o = s.opacity();

    f.p_c = cam.to_camera(f.p_w);
    if (f.p_c[2] <= st.z_near) return f;  // culled, valid stays false
    // Effective energy cutoff: alpha drops below alpha_min before the 5-sigma
    // bound for low-opacity splats, which tightens the screen bbox.
    double cutoff = st.energy_cutoff;
    if (st.alpha_min > 0) {
        if (f.o <= st.alpha_min) return f;  // can never contribute
        cutoff = std::min(cutoff, std::log(f.o / st.alpha_min));
    }
    f.R_c = cam.R * quat_to_mat(f.q_k);
    f.u = f.p_c[0] / f.p_c[2];
    f.v = f.p_c[1] / f.p_c[2];

    if (mode == SplatMode::Splat3D) {
        Vec3 sc = f.s;
        Mat3 R_w = quat_to_mat(f.q_k);
        f.sigma_c = cam.R * (R_w * sc.cwiseProduct(sc).asDiagonal() * R_w.transpose()) *
                    cam.R.transpose();
        const Eigen::Matrix<double, 2, 3> J = projection_jacobian(f.u, f.v, f.p_c[2]);
        f.lam = J * f.sigma_c * J.transpose();
        f.lam(0, 0) += st.blur_px2 / (cam.fx * cam.fx);
        f.lam(1, 1) += st.blur_px2 / (cam.fy * cam.fy);
        double det = f.lam.determinant();
        if (det <= 0 || f.lam.trace() <= 0) return f;
        f.lam_inv = inv2x2(f.lam);
        double m = 0.5 * f.lam.trace();
        double lam_max = m + std::sqrt(std::max(0.0, m * m - det));
        double radius = std::sqrt(2.0 * cutoff * lam_max);
        plane_interval_to_bbox(cam, f.u - radius, f.u + radius, f.v - radius,
                               f.v + radius, f);
    } else {
        // Every in-cutoff ray hit lies inside the bounding sphere of the
        // splat ellipse; bound its normalized-plane footprint by interval
        // arithmetic on X/Z, Y/Z.
        double rho = std::sqrt(2.0 * cutoff) * std::max(f.s[0], f.s[1]);
        double zlo = f.p_c[2] - rho, zhi = f.p_c[2] + rho;
        if (zlo <= st.z_near) {
            plane_interval_to_bbox(cam, -1e30, 1e30, -1e30, 1e30, f);
        } else {
            double xlo = f.p_c[0] - rho, xhi = f.p_c[0] + rho;
            double ylo = f.p_c[1] - rho, yhi = f.p_c[1] + rho;
            auto lo = [&](double a, double b2) {
                return std::min(std::min(a / zlo, a / zhi), std::min(b2 / zlo, b2 / zhi));
            };
            auto hi = [&](double a, double b2) {
                return std::max(std::max(a / zlo, a / zhi), std::max(b2 / zlo, b2 / zhi));
            };
            plane_interval_to_bbox(cam, lo(xlo, xhi), hi(xlo, xhi), lo(ylo, yhi),
                                   hi(ylo, yhi), f);
        }
    }
    f.valid = true;
    return f;
}

}  // namespace

RenderOutput render(const Mesh& mesh, const SplatSet& set, const GlobalTransform& tf,
                    const Camera& cam, const RenderSettings& st) {
    const int H = cam.height, W = cam.width;
    RenderOutput out;
    out.mode = set.mode;
    out.settings = st;
    out.color = Image(H, W, 3);
    out.depth = Image(H, W, 1);
    out.normal = Image(H, W, 3);
    out.alpha = Image(H, W, 1);

    const std::vector<Vec3> tv = apply_global_transform(mesh, tf);
    out.fwd.resize(set.size());
    for (int k = 0; k < set.size(); ++k)
        out.fwd[k] = forward_splat(set.splats[k], tv, mesh, cam, set.mode, st);

    // Tile binning.
    const int tile = st.tile;
    const int tx = (W + tile - 1) / tile, ty = (H + tile - 1) / tile;
    std::vector<std::vector<int>> bins(static_cast<size_t>(tx) * ty);
    for (int k = 0; k < set.size(); ++k) {
        const auto& f = out.fwd[k];
        if (!f.valid || f.x1 < f.x0 || f.y1 < f.y0) continue;
        for (int by = f.y0 / tile; by <= f.y1 / tile; ++by)
            for (int bx = f.x0 / tile; bx <= f.x1 / tile; ++bx)
                bins[static_cast<size_t>(by) * tx + bx].push_back(k);
    }

    out.pixel_start.assign(static_cast<size_t>(H) * W + 1, 0);
    std::vector<Candidate> cands;
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const auto& bin = bins[static_cast<size_t>(y / tile) * tx + x / tile];
            const Eigen::Vector2d xp = cam.pixel_to_plane(x + 0.5, y + 0.5);
            cands.clear();
            for (int k : bin) {
                const auto& f = out.fwd[k];
                if (x < f.x0 || x > f.x1 || y < f.y0 || y > f.y1) continue;
                if (set.mode == SplatMode::Splat3D) {
                    Eigen::Vector2d r(f.u - xp[0], f.v - xp[1]);
                    double E = 0.5 * r.dot(f.lam_inv * r);
                    if (E > st.energy_cutoff) continue;
                    double alpha = std::min(f.o * std::exp(-E), st.alpha_max);
                    if (alpha < st.alpha_min) continue;
                    cands.push_back({f.p_c[2], k, alpha, r[0], r[1], 1.0});
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
                    cands.push_back({t, k, alpha, u1, u2, denom > 0 ? -1.0 : 1.0});
                }
            }
            std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
                return a.depth != b.depth ? a.depth < b.depth : a.splat < b.splat;
            });

            double T = 1.0;
            double acc_alpha = 0, acc_depth = 0, median_depth = -1;
            Vec3 acc_color = Vec3::Zero(), acc_normal = Vec3::Zero();
            for (const auto& c : cands) {
                double w = c.alpha * T;
                const auto& f = out.fwd[c.splat];
                acc_color += w * set.splats[c.splat].color;
                acc_depth += w * c.depth;
                acc_alpha += w;
                if (set.mode == SplatMode::Splat2D)
                    acc_normal += w * c.nsign * f.R_c.col(2);
                out.entries.push_back({c.splat, c.alpha, c.depth, c.a, c.b, c.nsign});
                T *= 1.0 - c.alpha;
                if (median_depth < 0 && T < 0.5) median_depth = c.depth;
                if (T < st.t_min) break;
            }
            for (int ch = 0; ch < 3; ++ch) {
                out.color.at(y, x, ch) = acc_color[ch];
                out.normal.at(y, x, ch) = acc_normal[ch];
            }
            out.alpha.at(y, x) = acc_alpha;
            // 2D mode: median ray-hit depth (robust; each splat plane carries
            // the exact surface depth), alpha-weighted mean as low-coverage
            // fallback and in 3D mode.
            const double mean_depth = acc_depth / std::max(acc_alpha, 1e-12);
            out.depth.at(y, x) = (set.mode == SplatMode::Splat2D && median_depth >= 0)
                                     ? median_depth
                                     : mean_depth;
            out.pixel_start[static_cast<size_t>(y) * W + x + 1] = out.entries.size();
        }
    }
    return out;
}

void SceneGrads::resize(int num_splats, int num_vertices) {
    d_position.assign(num_splats, Vec3::Zero());
    d_beta.assign(num_splats, Vec3::Zero());
    d_d.assign(num_splats, 0.0);
    d_q_bar.assign(num_splats, Quat::Zero());
    d_log_scale.assign(num_splats, Vec3::Zero());
    d_opacity_logit.assign(num_splats, 0.0);
    d_color.assign(num_splats, Vec3::Zero());
    screen_grad_norm.assign(num_splats, 0.0);
    d_vertices = Eigen::MatrixXd::Zero(num_vertices, 3);
    d_scale.setZero();
    d_rotation.setZero();
    d_translation.setZero();
}

bool SceneGrads::has_nan() const {
    auto bad = [](double v) { return !std::isfinite(v); };
    for (const auto& v : d_position)
        if (v.hasNaN()) return true;
    for (const auto& v : d_beta)
        if (v.hasNaN()) return true;
    for (double v : d_d)
        if (bad(v)) return true;
    for (const auto& v : d_q_bar)
        if (v.hasNaN()) return true;
    for (const auto& v : d_log_scale)
        if (v.hasNaN()) return true;
    for (double v : d_opacity_logit)
        if (bad(v)) return true;
    for (const auto& v : d_color)
        if (v.hasNaN()) return true;
    if (d_vertices.hasNaN()) return true;
    return d_scale.hasNaN() || d_rotation.hasNaN() || d_translation.hasNaN();
}

SceneGrads backward(const RenderOutput& out, const Mesh& mesh, const SplatSet& set,
                    const GlobalTransform& tf, const Camera& cam,
                    const BackwardInput& in) {
    const int H = cam.height, W = cam.width;
    const RenderSettings& st = out.settings;
    SceneGrads grads;
    grads.resize(set.size(), mesh.num_vertices());

    // Per-splat accumulators over all pixels.
    std::vector<Vec3> dp_c(set.size(), Vec3::Zero());
    std::vector<Mat3> dsigma_c(set.size(), Mat3::Zero());
    std::vector<Mat3> dR_c(set.size(), Mat3::Zero());
    std::vector<double> d_opacity(set.size(), 0.0);

    std::vector<double> Tvals;
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            const size_t begin = out.pixel_start[static_cast<size_t>(y) * W + x];
            const size_t end = out.pixel_start[static_cast<size_t>(y) * W + x + 1];
            if (begin == end) continue;
            const Eigen::Vector2d xp = cam.pixel_to_plane(x + 0.5, y + 0.5);
            Vec3 dC = Vec3::Zero(), dN = Vec3::Zero();
            if (in.d_color)
                for (int ch = 0; ch < 3; ++ch) dC[ch] = in.d_color->at(y, x, ch);
            if (in.d_normal)
                for (int ch = 0; ch < 3; ++ch) dN[ch] = in.d_normal->at(y, x, ch);

            Tvals.clear();
            double T = 1.0;
            for (size_t i = begin; i < end; ++i) {
                Tvals.push_back(T);
                T *= 1.0 - out.entries[i].alpha;
            }

            // dL/d(weight_i) totals, then suffix pass for dL/dalpha_i.
            double suffix = 0.0;
            for (size_t ii = end; ii-- > begin;) {
                const TapeEntry& e = out.entries[ii];
                const SplatForward& f = out.fwd[e.splat];
                const double Ti = Tvals[ii - begin];
                double dw = set.splats[e.splat].color.dot(dC);
                if (out.mode == SplatMode::Splat2D)
                    dw += e.nsign * f.R_c.col(2).dot(dN);
                if (in.d_weight) dw += (*in.d_weight)[ii];

                const double w = e.alpha * Ti;
                double dalpha = Ti * dw - suffix / (1.0 - e.alpha);
                suffix += w * dw;

                grads.d_color[e.splat] += w * dC;

                // alpha = min(o exp(-E), alpha_max); zero gradient when clamped.
                double E;
                if (out.mode == SplatMode::Splat3D) {
                    Eigen::Vector2d r(e.a, e.b);
                    E = 0.5 * r.dot(f.lam_inv * r);
                } else {
                    E = 0.5 * (e.a * e.a + e.b * e.b);
                }
                const double alpha_raw = f.o * std::exp(-E);
                double dE = 0.0;
                if (alpha_raw < st.alpha_max) {
                    dE = -e.alpha * dalpha;
                    d_opacity[e.splat] += std::exp(-E) * dalpha;
                }

                if (out.mode == SplatMode::Splat3D) {
                    if (dE != 0.0) {
                        EnergyGradient eg = energy_gradient_pre(
                            f.sigma_c, f.u, f.v, f.p_c[2], f.lam_inv, xp);
                        dp_c[e.splat] += dE * eg.dxyz;
                        const Eigen::Matrix<double, 2, 3> J =
                            projection_jacobian(f.u, f.v, f.p_c[2]);
                        dsigma_c[e.splat] +=
                            (-0.5 * dE) * (J.transpose() * (eg.g * eg.g.transpose()) * J);
                    }
                } else {
                    const Vec3 D(xp[0], xp[1], 1.0);
                    const Vec3 n = f.R_c.col(2);
                    const double denom = D.dot(n);
                    const double t = e.depth;
                    const Vec3 q = t * D;
                    const Vec3 diff = q - f.p_c;
                    const double dz = in.d_depth ? (*in.d_depth)[ii] : 0.0;
                    Vec3 dn_acc = Vec3::Zero();
                    if (dE != 0.0) {
                        const double G1 = dE * e.a, G2 = dE * e.b;
                        const Vec3 l1 = f.R_c.col(0) / f.s[0];
                        const Vec3 l2 = f.R_c.col(1) / f.s[1];
                        const double Dl1 = D.dot(l1), Dl2 = D.dot(l2);
                        dp_c[e.splat] +=
                            G1 * (Dl1 / denom * n - l1) + G2 * (Dl2 / denom * n - l2);
                        dn_acc += (G1 * Dl1 + G2 * Dl2) * (f.p_c - q) / denom;
                        dR_c[e.splat].col(0) += G1 * diff / f.s[0];
                        dR_c[e.splat].col(1) += G2 * diff / f.s[1];
                        grads.d_log_scale[e.splat][0] -= dE * e.a * e.a;
                        grads.d_log_scale[e.splat][1] -= dE * e.b * e.b;
                    }
                    if (dz != 0.0) {
                        dp_c[e.splat] += dz * n / denom;
                        dn_acc += dz * (f.p_c - q) / denom;
                    }
                    dn_acc += e.nsign * w * dN;  // normal image value route
                    dR_c[e.splat].col(2) += dn_acc;
                }
            }
        }
    }

    // Per-splat chains to parameters, vertices, and the global transform.
    const Mat3 M = tf.matrix();
    Mat3 dM = Mat3::Zero();
    for (int k = 0; k < set.size(); ++k) {
        const SplatForward& f = out.fwd[k];
        if (!f.valid) continue;
        const AnchoredSplat& s = set.splats[k];

        const Vec3 dp_w = cam.R.transpose() * dp_c[k];
        grads.d_position[k] = dp_w;
        grads.screen_grad_norm[k] =
            std::hypot(dp_c[k][0] * cam.fx, dp_c[k][1] * cam.fy) / f.p_c[2];

        Mat3 dR_w;
        if (out.mode == SplatMode::Splat3D) {
            const Mat3 dsigma_w = cam.R.transpose() * dsigma_c[k] * cam.R;
            const Mat3 R_w = quat_to_mat(f.q_k);
            const Vec3 s2 = f.s.cwiseProduct(f.s);
            dR_w = 2.0 * dsigma_w * R_w * s2.asDiagonal();
            const Mat3 dD = R_w.transpose() * dsigma_w * R_w;
            for (int i = 0; i < 3; ++i)
                grads.d_log_scale[k][i] += 2.0 * s2[i] * dD(i, i);
        } else {
            dR_w = cam.R.transpose() * dR_c[k];
        }

        const Quat dq_k_unit = quat_rotation_grad(f.q_k, dR_w);
        const Quat dq_k_raw = quat_normalize_jacobian(f.q_k_raw).transpose() * dq_k_unit;
        const Quat dq_bar_n = quat_right(f.q_f).transpose() * dq_k_raw;
        const Quat dq_f = quat_left(f.q_bar_n).transpose() * dq_k_raw;
        grads.d_q_bar[k] = quat_normalize_jacobian(s.q_bar).transpose() * dq_bar_n;

        Vec3 dn = s.d * dp_w;
        if (!f.antipodal) {
            Quat qf_raw(1.0 + f.n_w[2], -f.n_w[1], f.n_w[0], 0.0);
            const Quat dqf_raw = quat_normalize_jacobian(qf_raw).transpose() * dq_f;
            dn[0] += dqf_raw[2];
            dn[1] -= dqf_raw[1];
            dn[2] += dqf_raw[0];
        }

        grads.d_d[k] = dp_w.dot(f.n_w);
        for (int m = 0; m < 3; ++m) grads.d_beta[k][m] = dp_w.dot(f.tv[m]);
        grads.d_opacity_logit[k] = d_opacity[k] * f.o * (1.0 - f.o);

        // Normal back to the face vertices through the normalized cross product.
        const Vec3 dc = (Mat3::Identity() - f.n_w * f.n_w.transpose()) / f.cross_norm * dn;
        const Vec3 e1 = f.tv[1] - f.tv[0], e2 = f.tv[2] - f.tv[0];
        const Vec3 de1 = e2.cross(dc);
        const Vec3 de2 = dc.cross(e1);
        Vec3 dtv[3] = {-de1 - de2, de1, de2};
        for (int m = 0; m < 3; ++m) dtv[m] += s.beta[m] * dp_w;

        const auto& face = mesh.face(s.face_id);
        for (int m = 0; m < 3; ++m) {
            grads.d_vertices.row(face[m]) += (M.transpose() * dtv[m]).transpose();
            grads.d_translation += dtv[m];
            dM += dtv[m] * mesh.vertex(face[m]).transpose();
        }
    }

    const Mat3 Rstar = quat_to_mat(tf.rotation.normalized());
    const Mat3 dS = dM * Rstar.transpose();
    for (int i = 0; i < 3; ++i) grads.d_scale[i] = dS(i, i);
    const Mat3 dRstar = tf.scale.asDiagonal() * dM;
    grads.d_rotation = quat_normalize_jacobian(tf.rotation).transpose() *
                       quat_rotation_grad(tf.rotation.normalized(), dRstar);
    return grads;
}

}  // namespace surfsplat
