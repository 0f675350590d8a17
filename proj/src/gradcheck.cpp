#include "surfsplat/gradcheck.h"

#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

#include <Eigen/Dense>

namespace surfsplat {

GradientProbe::GradientProbe(const Mat3& sigma_cam, const Vec3& p_cam,
                             const Eigen::Vector2d& pixel)
    : sigma(sigma_cam), p(p_cam), x(pixel) {
    const double Z = p[2];
    u = p[0] / Z;
    v = p[1] / Z;
    r = Eigen::Vector2d(u - x[0], v - x[1]);
    Eigen::Matrix<double, 2, 3> M;
    M << 1, 0, -u, 0, 1, -v;
    G = (M * sigma * M.transpose()).inverse();
    c = Eigen::Vector2d(sigma(2, 0) - u * sigma(2, 2), sigma(2, 1) - v * sigma(2, 2));
    // Lambda^-1 = Z^2 G, so g = Lambda^-1 r = Z^2 G r.
    g = Z * Z * (G * r);
    const Eigen::Matrix<double, 2, 3> J = M / Z;
    h = sigma * (J.transpose() * g);
    eta = h[2] / Z;
    E = 0.5 * r.dot(g);
}

double probe_energy(const Mat3& sigma, const Vec3& p, const Eigen::Vector2d& x) {
    const double Z = p[2];
    const double u = p[0] / Z, v = p[1] / Z;
    Eigen::Matrix<double, 2, 3> J;
    J << 1, 0, -u, 0, 1, -v;
    J /= Z;
    Eigen::Matrix2d lam = J * sigma * J.transpose();
    Eigen::Vector2d r(u - x[0], v - x[1]);
    return 0.5 * r.dot(lam.inverse() * r);
}

Eigen::Vector3d duvd_derivatives(const GradientProbe& probe) {
    return energy_gradient(probe.sigma, probe.p, probe.x).duvd;
}

Vec3 dxyz_derivatives(const GradientProbe& probe) {
    return energy_gradient(probe.sigma, probe.p, probe.x).dxyz;
}

namespace {

// Pixel near the projection of p, within a 3 sigma disc of the projected
// footprint.
Eigen::Vector2d sample_pixel(const Mat3& sigma, const Vec3& p, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> uni(0, 1);
    const double Z = p[2];
    const double u = p[0] / Z, v = p[1] / Z;
    Eigen::Matrix<double, 2, 3> J;
    J << 1, 0, -u, 0, 1, -v;
    J /= Z;
    Eigen::Matrix2d lam = J * sigma * J.transpose();
    Eigen::LLT<Eigen::Matrix2d> llt(lam);
    const double theta = 2 * M_PI * uni(rng);
    const double rho = 3.0 * std::sqrt(uni(rng));
    Eigen::Vector2d dir(std::cos(theta), std::sin(theta));
    Eigen::Vector2d res = llt.matrixL() * (rho * dir);
    return Eigen::Vector2d(u, v) - res;
}

Mat3 random_spd(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> uni(-1, 1);
    Mat3 a;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) a(i, j) = uni(rng);
    return a * a.transpose() + 0.01 * Mat3::Identity();
}

Mat3 random_flat(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> uni(-1, 1);
    Eigen::Matrix2d a;
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 2; ++j) a(i, j) = uni(rng);
    Eigen::Matrix2d block = a * a.transpose() + 0.01 * Eigen::Matrix2d::Identity();
    Mat3 s = Mat3::Zero();
    s.topLeftCorner<2, 2>() = block;
    return s;
}

Vec3 random_mean(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> uz(0.5, 5.0);
    std::uniform_real_distribution<double> uxy(-0.3, 0.3);
    const double Z = uz(rng);
    return Vec3(uxy(rng) * Z, uxy(rng) * Z, Z);
}

}  // namespace

double nondegeneracy_test(const Mat3& sigma, const Vec3& p, int sample_count,
                          uint64_t seed) {
    if (sample_count < 4)
        throw std::invalid_argument("nondegeneracy_test requires at least 4 samples");
    std::mt19937_64 rng(seed);
    Eigen::MatrixXd stack(3, sample_count);
    for (int k = 0; k < sample_count; ++k) {
        Vec3 gxyz;
        for (int attempt = 0;; ++attempt) {
            GradientProbe probe(sigma, p, sample_pixel(sigma, p, rng));
            gxyz = dxyz_derivatives(probe);
            if (gxyz.norm() > 0 || attempt > 16) break;
        }
        stack.col(k) = gxyz;
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(stack);
    const auto& sv = svd.singularValues();
    return sv[sv.size() - 1] / sv[0];
}

double degeneracy_plane_test(const Mat3& flat_sigma, const Vec3& p, int sample_count,
                             uint64_t seed) {
    std::mt19937_64 rng(seed);
    double worst = 0;
    for (int k = 0; k < sample_count; ++k) {
        const Eigen::Vector2d x = sample_pixel(flat_sigma, p, rng);
        GradientProbe probe(flat_sigma, p, x);
        const Vec3 grad = dxyz_derivatives(probe);
        const double norm = grad.norm();
        if (norm == 0) continue;
        const Vec3 n(x[0], x[1], 1.0);
        worst = std::max(worst, std::abs(n.dot(grad)) / norm);
    }
    return worst;
}

std::string GradientCheckReport::text() const {
    std::ostringstream os;
    auto line = [&](const char* name, bool pass, double value) {
        os << (pass ? "PASS" : "FAIL") << "  " << name << "  " << value << "\n";
    };
    os << "gradient checks over " << trials << " trials\n";
    line("camera-space gradient vs central differences (max rel err)", pass_fd,
         max_rel_err_xyz);
    line("d_d E = (2/d) E identity (max abs err)", pass_dd, max_dd_identity_err);
    line("SPD rank test (min sigma ratio)", pass_rank, min_rank_ratio);
    line("flat-splat fixed-plane test (max violation)", pass_plane, max_plane_violation);
    os << (pass_richardson ? "PASS" : "FAIL")
       << "  Richardson slope in [1.9, 2.1]  [" << richardson_slope_min << ", "
       << richardson_slope_max << "]\n";
    line("eta = c(mu)^T G(mu) r consistency (max err)", pass_eta, max_eta_err);
    os << "G(mu) Lipschitz ratio over sample set: " << g_lipschitz_ratio << "\n";
    os << (all_pass() ? "ALL PASS" : "FAILURES PRESENT") << "\n";
    return os.str();
}

GradientCheckReport run_gradient_checks(int trials, uint64_t seed) {
    std::mt19937_64 rng(seed);
    GradientCheckReport rep;
    rep.trials = trials;
    rep.richardson_slope_min = 10;
    rep.richardson_slope_max = 0;

    const double step = 1e-5;
    for (int t = 0; t < trials; ++t) {
        const Mat3 sigma = random_spd(rng);
        const Vec3 p = random_mean(rng);
        const Eigen::Vector2d x = sample_pixel(sigma, p, rng);
        GradientProbe probe(sigma, p, x);

        const Vec3 analytic = dxyz_derivatives(probe);
        Vec3 fd;
        for (int i = 0; i < 3; ++i) {
            Vec3 lo = p, hi = p;
            lo[i] -= step;
            hi[i] += step;
            fd[i] = (probe_energy(sigma, hi, x) - probe_energy(sigma, lo, x)) / (2 * step);
        }
        const double denom = std::max(analytic.norm(), 1e-12);
        rep.max_rel_err_xyz = std::max(rep.max_rel_err_xyz, (analytic - fd).norm() / denom);

        const Eigen::Vector3d duvd = duvd_derivatives(probe);
        rep.max_dd_identity_err = std::max(
            rep.max_dd_identity_err, std::abs(duvd[2] - 2.0 / p[2] * probe.E));

        rep.max_eta_err = std::max(
            rep.max_eta_err, std::abs(probe.eta - probe.c.dot(probe.G * probe.r)));

        // Richardson: second-order remainder halves by 4 when the step halves.
        std::uniform_real_distribution<double> uni(-1, 1);
        Vec3 dir(uni(rng), uni(rng), uni(rng));
        dir.normalize();
        const double d0 = 1e-3;
        const double e0 = probe_energy(sigma, p, x);
        const double r1 =
            std::abs(probe_energy(sigma, p + d0 * dir, x) - e0 - d0 * analytic.dot(dir));
        const double r2 = std::abs(probe_energy(sigma, p + 0.5 * d0 * dir, x) - e0 -
                                   0.5 * d0 * analytic.dot(dir));
        if (r1 > 1e-12 && r2 > 1e-13) {
            const double slope = std::log2(r1 / r2);
            rep.richardson_slope_min = std::min(rep.richardson_slope_min, slope);
            rep.richardson_slope_max = std::max(rep.richardson_slope_max, slope);
        }

        // G(mu) perturbation ratio.
        {
            Eigen::Matrix<double, 2, 3> Mx;
            Mx << 1, 0, -x[0], 0, 1, -x[1];
            const Eigen::Matrix2d Gx = (Mx * sigma * Mx.transpose()).inverse();
            const double rn = probe.r.norm();
            if (rn > 1e-6)
                rep.g_lipschitz_ratio =
                    std::max(rep.g_lipschitz_ratio, (probe.G - Gx).norm() / rn);
        }

        rep.min_rank_ratio =
            std::min(rep.min_rank_ratio, nondegeneracy_test(sigma, p, 20, rng()));
        rep.max_plane_violation = std::max(
            rep.max_plane_violation, degeneracy_plane_test(random_flat(rng),
                                                           random_mean(rng), 20, rng()));
    }

    rep.pass_fd = rep.max_rel_err_xyz < 1e-5;
    rep.pass_dd = rep.max_dd_identity_err < 1e-12;
    rep.pass_rank = rep.min_rank_ratio > 1e-6;
    rep.pass_plane = rep.max_plane_violation < 1e-9;
    rep.pass_richardson =
        rep.richardson_slope_min >= 1.9 && rep.richardson_slope_max <= 2.1;
    rep.pass_eta = rep.max_eta_err < 1e-12;
    return rep;
}

}  // namespace surfsplat
