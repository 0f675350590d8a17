#include "surfsplat/losses.h"

#include <cmath>
#include <stdexcept>

namespace surfsplat {

ImageLossResult photo_loss(const Image& rendered, const Image& target) {
    if (!rendered.same_shape(target))
        throw std::runtime_error("photo_loss: dimension mismatch");
    ImageLossResult out;
    out.grad = Image(rendered.height(), rendered.width(), rendered.channels());
    const double inv_n = 1.0 / static_cast<double>(rendered.data().size());
    double sum = 0;
    for (size_t i = 0; i < rendered.data().size(); ++i) {
        double d = rendered.data()[i] - target.data()[i];
        sum += std::abs(d);
        out.grad.data()[i] = d > 0 ? inv_n : (d < 0 ? -inv_n : 0.0);
    }
    out.value = sum * inv_n;
    return out;
}

namespace {

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;

const std::vector<double>& ssim_kernel() {
    static const std::vector<double> k = [] {
        std::vector<double> v(kSsimWindow);
        double sum = 0;
        for (int i = 0; i < kSsimWindow; ++i) {
            double d = i - (kSsimWindow - 1) / 2.0;
            v[i] = std::exp(-d * d / (2 * kSsimSigma * kSsimSigma));
            sum += v[i];
        }
        for (auto& x : v) x /= sum;
        return v;
    }();
    return k;
}

int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

// Separable Gaussian filter with replicate padding.
Image blur(const Image& in) {
    const auto& k = ssim_kernel();
    const int half = kSsimWindow / 2;
    Image tmp(in.height(), in.width(), in.channels());
    for (int y = 0; y < in.height(); ++y)
        for (int x = 0; x < in.width(); ++x)
            for (int c = 0; c < in.channels(); ++c) {
                double s = 0;
                for (int i = 0; i < kSsimWindow; ++i)
                    s += k[i] * in.at(y, clampi(x + i - half, 0, in.width() - 1), c);
                tmp.at(y, x, c) = s;
            }
    Image out(in.height(), in.width(), in.channels());
    for (int y = 0; y < in.height(); ++y)
        for (int x = 0; x < in.width(); ++x)
            for (int c = 0; c < in.channels(); ++c) {
                double s = 0;
                for (int i = 0; i < kSsimWindow; ++i)
                    s += k[i] * tmp.at(clampi(y + i - half, 0, in.height() - 1), x, c);
                out.at(y, x, c) = s;
            }
    return out;
}

// Adjoint of blur(): scatters with the same clamped indexing.
Image blur_adjoint(const Image& g) {
    const auto& k = ssim_kernel();
    const int half = kSsimWindow / 2;
    Image tmp(g.height(), g.width(), g.channels());
    for (int y = 0; y < g.height(); ++y)
        for (int x = 0; x < g.width(); ++x)
            for (int c = 0; c < g.channels(); ++c) {
                double v = g.at(y, x, c);
                if (v == 0) continue;
                for (int i = 0; i < kSsimWindow; ++i)
                    tmp.at(clampi(y + i - half, 0, g.height() - 1), x, c) += k[i] * v;
            }
    Image out(g.height(), g.width(), g.channels());
    for (int y = 0; y < g.height(); ++y)
        for (int x = 0; x < g.width(); ++x)
            for (int c = 0; c < g.channels(); ++c) {
                double v = tmp.at(y, x, c);
                if (v == 0) continue;
                for (int i = 0; i < kSsimWindow; ++i)
                    out.at(y, clampi(x + i - half, 0, g.width() - 1), c) += k[i] * v;
            }
    return out;
}

Image hadamard(const Image& a, const Image& b) {
    Image out(a.height(), a.width(), a.channels());
    for (size_t i = 0; i < a.data().size(); ++i)
        out.data()[i] = a.data()[i] * b.data()[i];
    return out;
}

}  // namespace

ImageLossResult ssim_loss(const Image& x, const Image& y) {
    if (!x.same_shape(y)) throw std::runtime_error("ssim_loss: dimension mismatch");
    if (x.height() < kSsimWindow || x.width() < kSsimWindow)
        throw std::runtime_error("ssim_loss: image smaller than window");
    const Image mu_x = blur(x), mu_y = blur(y);
    const Image x2m = blur(hadamard(x, x));
    const Image y2m = blur(hadamard(y, y));
    const Image xym = blur(hadamard(x, y));

    const size_t n = x.data().size();
    Image d_mu(x.height(), x.width(), x.channels());
    Image d_x2m(x.height(), x.width(), x.channels());
    Image d_xym(x.height(), x.width(), x.channels());
    double ssim_sum = 0;
    const double dLdS = -1.0 / static_cast<double>(n);
    for (size_t i = 0; i < n; ++i) {
        const double mx = mu_x.data()[i], my = mu_y.data()[i];
        const double sx2 = x2m.data()[i] - mx * mx;
        const double sy2 = y2m.data()[i] - my * my;
        const double sxy = xym.data()[i] - mx * my;
        const double a1 = 2 * mx * my + kSsimC1, b1 = mx * mx + my * my + kSsimC1;
        const double a2 = 2 * sxy + kSsimC2, b2 = sx2 + sy2 + kSsimC2;
        const double S = (a1 * a2) / (b1 * b2);
        ssim_sum += S;
        const double dS_dmx_direct = (2 * my * a2 * b1 - a1 * a2 * 2 * mx) / (b1 * b1 * b2);
        const double dS_dsx2 = -S / b2;
        const double dS_dsxy = 2 * a1 / (b1 * b2);
        d_mu.data()[i] = dLdS * (dS_dmx_direct - 2 * mx * dS_dsx2 - my * dS_dsxy);
        d_x2m.data()[i] = dLdS * dS_dsx2;
        d_xym.data()[i] = dLdS * dS_dsxy;
    }

    ImageLossResult out;
    out.value = 1.0 - ssim_sum / static_cast<double>(n);
    out.grad = blur_adjoint(d_mu);
    const Image gx2 = blur_adjoint(d_x2m);
    const Image gxy = blur_adjoint(d_xym);
    for (size_t i = 0; i < n; ++i)
        out.grad.data()[i] += 2 * x.data()[i] * gx2.data()[i] + y.data()[i] * gxy.data()[i];
    return out;
}

RegLossResult bilaplacian_reg(const Eigen::MatrixXd& vertices,
                              const LaplacianMatrix& lap, double lambda_reg) {
    RegLossResult out;
    const Eigen::MatrixXd lv = lap.L * vertices;
    out.value = lambda_reg * lv.squaredNorm();
    out.grad = 2.0 * lambda_reg * (lap.L.transpose() * lv);
    return out;
}

Image depth_to_normals(const Image& depth, const Image& alpha, const Camera& cam,
                       double alpha_mask) {
    const int H = depth.height(), W = depth.width();
    Image out(H, W, 3);
    auto point = [&](int x, int y) {
        const Eigen::Vector2d p = cam.pixel_to_plane(x + 0.5, y + 0.5);
        const double z = depth.at(y, x);
        return Vec3(p[0] * z, p[1] * z, z);
    };
    auto valid = [&](int x, int y) { return alpha.at(y, x) > alpha_mask; };
    for (int y = 1; y + 1 < H; ++y) {
        for (int x = 1; x + 1 < W; ++x) {
            if (!valid(x, y) || !valid(x - 1, y) || !valid(x + 1, y) ||
                !valid(x, y - 1) || !valid(x, y + 1))
                continue;
            const Vec3 dx = point(x + 1, y) - point(x - 1, y);
            const Vec3 dy = point(x, y + 1) - point(x, y - 1);
            Vec3 n = dx.cross(dy);
            const double nn = n.norm();
            if (nn < 1e-14) continue;
            n /= nn;
            if (n.dot(point(x, y)) > 0) n = -n;  // face the camera
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = n[c];
        }
    }
    return out;
}

ImageLossResult normal_consistency_loss(const Image& normal_raw, const Image& alpha,
                                        const Image& reference_normals,
                                        double alpha_mask) {
    if (!normal_raw.same_shape(reference_normals))
        throw std::runtime_error("normal loss: dimension mismatch");
    const int H = normal_raw.height(), W = normal_raw.width();
    ImageLossResult out;
    out.grad = Image(H, W, 3);
    // First pass to count valid pixels so gradients use the final mean scale.
    std::vector<char> use(static_cast<size_t>(H) * W, 0);
    int count = 0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            if (alpha.at(y, x) <= alpha_mask) continue;
            Vec3 n(normal_raw.at(y, x, 0), normal_raw.at(y, x, 1), normal_raw.at(y, x, 2));
            Vec3 ref(reference_normals.at(y, x, 0), reference_normals.at(y, x, 1),
                     reference_normals.at(y, x, 2));
            if (n.norm() < 1e-12 || ref.norm() < 1e-12) continue;
            use[static_cast<size_t>(y) * W + x] = 1;
            ++count;
        }
    if (count == 0) return out;  // zero loss; caller may warn
    double sum = 0;
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
            if (!use[static_cast<size_t>(y) * W + x]) continue;
            Vec3 n(normal_raw.at(y, x, 0), normal_raw.at(y, x, 1), normal_raw.at(y, x, 2));
            Vec3 ref(reference_normals.at(y, x, 0), reference_normals.at(y, x, 1),
                     reference_normals.at(y, x, 2));
            const double nn = n.norm();
            const Vec3 nh = n / nn;
            sum += 1.0 - nh.dot(ref);
            const Vec3 g = -(Mat3::Identity() - nh * nh.transpose()) * ref / (nn * count);
            for (int c = 0; c < 3; ++c) out.grad.at(y, x, c) = g[c];
        }
    out.value = sum / count;
    return out;
}

DistortionLossResult depth_distortion_loss(const RenderOutput& render) {
    DistortionLossResult out;
    out.d_weight.assign(render.entries.size(), 0.0);
    out.d_depth.assign(render.entries.size(), 0.0);
    const size_t npix = render.pixel_start.size() - 1;
    const double inv = 1.0 / static_cast<double>(npix);
    double total = 0;
    std::vector<double> w, z;
    for (size_t p = 0; p < npix; ++p) {
        const size_t begin = render.pixel_start[p], end = render.pixel_start[p + 1];
        const size_t n = end - begin;
        if (n < 2) continue;
        w.clear();
        z.clear();
        double T = 1.0;
        for (size_t i = begin; i < end; ++i) {
            w.push_back(render.entries[i].alpha * T);
            z.push_back(render.entries[i].depth);
            T *= 1.0 - render.entries[i].alpha;
        }
        // Entries are depth-sorted, so the full double sum collapses to
        // prefix/suffix sums: sum_{i!=j} w_i w_j |z_i - z_j|
        //   = 2 sum_i w_i (z_i Wlo_i - Zlo_i)  with Wlo/Zlo over j < i.
        double w_lo = 0, wz_lo = 0;                      // sums over j < i
        double w_hi = 0, wz_hi = 0;                      // sums over j > i
        for (size_t i = 0; i < n; ++i) {
            w_hi += w[i];
            wz_hi += w[i] * z[i];
        }
        for (size_t i = 0; i < n; ++i) {
            w_hi -= w[i];
            wz_hi -= w[i] * z[i];
            const double below = z[i] * w_lo - wz_lo;    // sum w_j (z_i - z_j), j<i
            const double above = wz_hi - z[i] * w_hi;    // sum w_j (z_j - z_i), j>i
            total += 2.0 * w[i] * below;
            out.d_weight[begin + i] = 2.0 * (below + above) * inv;
            out.d_depth[begin + i] = 2.0 * w[i] * (w_lo - w_hi) * inv;
            w_lo += w[i];
            wz_lo += w[i] * z[i];
        }
    }
    out.value = total * inv;
    return out;
}

}  // namespace surfsplat
