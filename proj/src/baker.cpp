#include "surfsplat/baker.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <queue>

#include <json.hpp>

namespace surfsplat {

namespace {

constexpr double kEnergyCutoff = 12.5;  // matches the rasterizer's 5 sigma cut

int chart_resolution(double area, const BakeSettings& s, double texel_size) {
    const int r = static_cast<int>(std::ceil(std::sqrt(std::max(area, 0.0)) /
                                             texel_size));
    return std::clamp(r, s.min_res, s.max_res);
}

double effective_texel_size(const Mesh& mesh, const GlobalTransform& tf,
                            const BakeSettings& s) {
    if (s.texel_size > 0) return s.texel_size;
    return tf.scale.mean() * mesh.mean_edge_length() / 16.0;
}

}  // namespace

Vec3 AttributeAtlas::sample_diffuse(int face, const Vec3& beta) const {
    const ChartInfo& c = charts[face];
    const double px = c.x0 + beta[1] * c.res - 0.5;
    const double py = c.y0 + beta[2] * c.res - 0.5;
    return Vec3(diffuse.sample_bilinear(px, py, 0), diffuse.sample_bilinear(px, py, 1),
                diffuse.sample_bilinear(px, py, 2));
}

double AttributeAtlas::sample_displacement(int face, const Vec3& beta) const {
    const ChartInfo& c = charts[face];
    return displacement.sample_bilinear(c.x0 + beta[1] * c.res - 0.5,
                                        c.y0 + beta[2] * c.res - 0.5, 0);
}

double AttributeAtlas::sample_coverage(int face, const Vec3& beta) const {
    const ChartInfo& c = charts[face];
    return coverage.sample_bilinear(c.x0 + beta[1] * c.res - 0.5,
                                    c.y0 + beta[2] * c.res - 0.5, 0);
}

std::array<Eigen::Vector2d, 3> AttributeAtlas::face_uv(int face) const {
    const ChartInfo& c = charts[face];
    const double w = width, h = height;
    return {Eigen::Vector2d(c.x0 / w, c.y0 / h),
            Eigen::Vector2d((c.x0 + c.res) / w, c.y0 / h),
            Eigen::Vector2d(c.x0 / w, (c.y0 + c.res) / h)};
}

AttributeAtlas plan_atlas(const Mesh& mesh, const GlobalTransform& tf,
                          const BakeSettings& s) {
    AttributeAtlas atlas;
    atlas.texel_size = effective_texel_size(mesh, tf, s);
    const std::vector<Vec3> tv = apply_global_transform(mesh, tf);

    std::vector<int> res(mesh.num_faces());
    long long total_area = 0;
    int max_block = 0;
    for (int f = 0; f < mesh.num_faces(); ++f) {
        const auto& face = mesh.face(f);
        const double area =
            0.5 * (tv[face[1]] - tv[face[0]]).cross(tv[face[2]] - tv[face[0]]).norm();
        res[f] = chart_resolution(area, s, atlas.texel_size);
        const int block = res[f] + 2;  // 1-texel gutter on each side
        total_area += static_cast<long long>(block) * block;
        max_block = std::max(max_block, block);
    }

    int width = std::max(max_block,
                         static_cast<int>(std::ceil(std::sqrt(
                             static_cast<double>(total_area)))));
    width = (width + 3) / 4 * 4;

    // Shelf packing in face id order.
    atlas.charts.resize(mesh.num_faces());
    int x = 0, y = 0, shelf_h = 0;
    for (int f = 0; f < mesh.num_faces(); ++f) {
        const int block = res[f] + 2;
        if (x + block > width) {
            x = 0;
            y += shelf_h;
            shelf_h = 0;
        }
        atlas.charts[f] = {f, x + 1, y + 1, res[f]};
        x += block;
        shelf_h = std::max(shelf_h, block);
    }
    atlas.width = width;
    atlas.height = y + shelf_h;
    atlas.diffuse = Image(atlas.height, atlas.width, 3);
    atlas.normal = Image(atlas.height, atlas.width, 3);
    atlas.displacement = Image(atlas.height, atlas.width, 1);
    atlas.coverage = Image(atlas.height, atlas.width, 1);
    for (int yy = 0; yy < atlas.height; ++yy)
        for (int xx = 0; xx < atlas.width; ++xx) {
            atlas.normal.at(yy, xx, 0) = 0.5;
            atlas.normal.at(yy, xx, 1) = 0.5;
            atlas.normal.at(yy, xx, 2) = 1.0;
        }
    return atlas;
}

Vec3 texel_world_position(int face, const Vec3& beta_hat, const Mesh& mesh,
                          const GlobalTransform& tf) {
    const auto& f = mesh.face(face);
    return beta_hat[0] * tf.apply(mesh.vertex(f[0])) +
           beta_hat[1] * tf.apply(mesh.vertex(f[1])) +
           beta_hat[2] * tf.apply(mesh.vertex(f[2]));
}

SplatBakeData splat_bake_data(const AnchoredSplat& s, const Mesh& mesh,
                              const std::vector<Vec3>& tv) {
    SplatBakeData out;
    const auto& face = mesh.face(s.face_id);
    Vec3 n = (tv[face[1]] - tv[face[0]]).cross(tv[face[2]] - tv[face[0]]);
    const double nn = n.norm();
    if (nn < kEpsArea) throw BakeError("degenerate face in bake");
    n /= nn;
    const Quat q_f = face_frame_quaternion(n);
    const Quat q_k = quat_mul(Quat(s.q_bar.normalized()), q_f);
    const Mat3 R = quat_to_mat(q_k);
    const Vec3 sc = s.scale();
    out.p = world_position(s, tv, mesh);
    out.n = R.col(2);
    out.l1 = R.col(0) / sc[0];
    out.l2 = R.col(1) / sc[1];
    out.o = s.opacity();
    out.color = s.color;
    return out;
}

TexelContribution splat_texel_contribution(const SplatBakeData& splat,
                                           const Vec3& p_hat, const Vec3& n_j,
                                           const BakeSettings& s) {
    TexelContribution out;
    const double denom = n_j.dot(splat.n);
    if (std::abs(denom) < s.eps_parallel) return out;
    out.delta = (splat.p - p_hat).dot(splat.n) / denom;
    const Vec3 q = p_hat + out.delta * n_j - splat.p;
    out.xhat = {q.dot(splat.l1), q.dot(splat.l2)};
    const double E = 0.5 * out.xhat.squaredNorm();
    if (E > kEnergyCutoff) return out;
    out.alpha = std::min(std::exp(-E) * splat.o, s.alpha_max);
    out.hit = true;
    return out;
}

std::vector<int> face_neighborhood(const Mesh& mesh, int face, int hops) {
    std::vector<int> dist(mesh.num_faces(), -1);
    std::vector<int> out;
    std::queue<int> q;
    dist[face] = 0;
    q.push(face);
    out.push_back(face);
    while (!q.empty()) {
        const int f = q.front();
        q.pop();
        if (dist[f] == hops) continue;
        for (int v : mesh.face(f))
            for (int g : mesh.vertex_face_adjacency()[v])
                if (dist[g] < 0) {
                    dist[g] = dist[f] + 1;
                    q.push(g);
                    out.push_back(g);
                }
    }
    std::sort(out.begin(), out.end());
    return out;
}

void bake_face(AttributeAtlas& atlas, int face, const std::vector<int>& splat_ids,
               const Mesh& mesh, const SplatSet& set, const GlobalTransform& tf,
               const std::vector<SplatBakeData>& bake_data, const BakeSettings& s) {
    const ChartInfo& chart = atlas.charts[face];
    const auto& fverts = mesh.face(face);
    const Vec3 v0 = tf.apply(mesh.vertex(fverts[0]));
    const Vec3 v1 = tf.apply(mesh.vertex(fverts[1]));
    const Vec3 v2 = tf.apply(mesh.vertex(fverts[2]));
    Vec3 n_j = (v1 - v0).cross(v2 - v0);
    const double nn = n_j.norm();
    if (nn < kEpsArea) return;
    n_j /= nn;
    const Mat3 R_f = quat_to_mat(face_frame_quaternion(n_j));

    struct Contrib {
        double key;  // (p_k - p_hat) . n_j
        int splat;
        double delta, alpha;
    };
    std::vector<Contrib> contribs;

    for (int j = 0; j < chart.res; ++j) {
        for (int i = 0; i < chart.res; ++i) {
            const double u = (i + 0.5) / chart.res;
            const double v = (j + 0.5) / chart.res;
            const double b0 = 1.0 - u - v;
            if (b0 < 0) continue;
            const Vec3 p_hat = b0 * v0 + u * v1 + v * v2;
            contribs.clear();
            for (int k : splat_ids) {
                const TexelContribution c =
                    splat_texel_contribution(bake_data[k], p_hat, n_j, s);
                if (!c.hit || c.alpha <= 0) continue;
                contribs.push_back(
                    {(bake_data[k].p - p_hat).dot(n_j), k, c.delta, c.alpha});
            }
            std::sort(contribs.begin(), contribs.end(),
                      [&](const Contrib& a, const Contrib& b) {
                          if (a.key != b.key)
                              return s.outward_sort ? a.key > b.key : a.key < b.key;
                          return a.splat < b.splat;
                      });
            double T = 1.0;
            Vec3 acc_c = Vec3::Zero(), acc_n = Vec3::Zero();
            double acc_d = 0;
            for (const Contrib& c : contribs) {
                const double w = c.alpha * T;
                acc_c += w * bake_data[c.splat].color;
                acc_d += w * c.delta;
                Vec3 nk = bake_data[c.splat].n;
                if (nk.dot(n_j) < 0) nk = -nk;
                acc_n += w * (R_f.transpose() * nk);
                T *= 1.0 - c.alpha;
                if (T < s.t_min) break;
            }
            const double cov = 1.0 - T;
            const int px = chart.x0 + i, py = chart.y0 + j;
            atlas.coverage.at(py, px) = cov;
            if (cov > 1e-12) {
                const Vec3 col = acc_c / cov;
                for (int ch = 0; ch < 3; ++ch) atlas.diffuse.at(py, px, ch) = col[ch];
                atlas.displacement.at(py, px) = acc_d / cov;
                Vec3 nt = acc_n;
                const double ntn = nt.norm();
                nt = ntn > 1e-12 ? Vec3(nt / ntn) : Vec3(0, 0, 1);
                for (int ch = 0; ch < 3; ++ch)
                    atlas.normal.at(py, px, ch) = 0.5 * (nt[ch] + 1.0);
            }
        }
    }
}

namespace {

// Fill uncovered texels (diagonal halves and gutters) from covered chart
// neighbors so bilinear taps near chart edges stay sensible. Confined to
// each chart's own block, so charts never bleed into one another.
void dilate_atlas(AttributeAtlas& atlas, int passes) {
    for (const ChartInfo& c : atlas.charts) {
        const int bx0 = c.x0 - 1, by0 = c.y0 - 1;
        const int bw = c.res + 2, bh = c.res + 2;
        std::vector<char> filled(static_cast<size_t>(bw) * bh, 0);
        for (int j = 0; j < bh; ++j)
            for (int i = 0; i < bw; ++i)
                filled[j * bw + i] = atlas.coverage.at(by0 + j, bx0 + i) > 0 ? 1 : 0;
        for (int pass = 0; pass < passes; ++pass) {
            std::vector<char> next = filled;
            for (int j = 0; j < bh; ++j)
                for (int i = 0; i < bw; ++i) {
                    if (filled[j * bw + i]) continue;
                    Vec3 dsum = Vec3::Zero(), nsum = Vec3::Zero();
                    double psum = 0;
                    int cnt = 0;
                    for (int dj = -1; dj <= 1; ++dj)
                        for (int di = -1; di <= 1; ++di) {
                            const int ni = i + di, nj = j + dj;
                            if (ni < 0 || nj < 0 || ni >= bw || nj >= bh) continue;
                            if (!filled[nj * bw + ni]) continue;
                            const int px = bx0 + ni, py = by0 + nj;
                            for (int ch = 0; ch < 3; ++ch) {
                                dsum[ch] += atlas.diffuse.at(py, px, ch);
                                nsum[ch] += atlas.normal.at(py, px, ch);
                            }
                            psum += atlas.displacement.at(py, px);
                            ++cnt;
                        }
                    if (cnt == 0) continue;
                    const int px = bx0 + i, py = by0 + j;
                    for (int ch = 0; ch < 3; ++ch) {
                        atlas.diffuse.at(py, px, ch) = dsum[ch] / cnt;
                        atlas.normal.at(py, px, ch) = nsum[ch] / cnt;
                    }
                    atlas.displacement.at(py, px) = psum / cnt;
                    next[j * bw + i] = 1;
                }
            filled.swap(next);
        }
    }
}

AttributeAtlas bake_with_ids(
    const Scene& scene, const BakeSettings& s,
    const std::function<std::vector<int>(int)>& ids_for_face) {
    AttributeAtlas atlas = plan_atlas(scene.mesh, scene.transform, s);
    const std::vector<Vec3> tv = apply_global_transform(scene.mesh, scene.transform);
    std::vector<SplatBakeData> data(scene.splats.size());
    for (int k = 0; k < scene.splats.size(); ++k)
        data[k] = splat_bake_data(scene.splats.splats[k], scene.mesh, tv);
    for (int f = 0; f < scene.mesh.num_faces(); ++f)
        bake_face(atlas, f, ids_for_face(f), scene.mesh, scene.splats,
                  scene.transform, data, s);
    dilate_atlas(atlas, 2);
    return atlas;
}

}  // namespace

AttributeAtlas bake_all(const Scene& scene, const BakeSettings& s) {
    // Splats grouped by face once; neighborhood gathered per face.
    std::vector<std::vector<int>> by_face(scene.mesh.num_faces());
    for (int k = 0; k < scene.splats.size(); ++k)
        by_face[scene.splats.splats[k].face_id].push_back(k);
    return bake_with_ids(scene, s, [&](int f) {
        std::vector<int> ids;
        for (int g : face_neighborhood(scene.mesh, f, s.hops))
            ids.insert(ids.end(), by_face[g].begin(), by_face[g].end());
        std::sort(ids.begin(), ids.end());
        return ids;
    });
}

AttributeAtlas brute_force_bake(const Scene& scene, const BakeSettings& s) {
    std::vector<int> all(scene.splats.size());
    for (int k = 0; k < scene.splats.size(); ++k) all[k] = k;
    return bake_with_ids(scene, s, [&](int) { return all; });
}

RefineReport refine_texture(AttributeAtlas& atlas, const Scene& scene,
                            const std::vector<Camera>& cameras,
                            const std::vector<Image>& targets,
                            const std::vector<Image>& depth_maps,
                            const BakeSettings& s) {
    if (cameras.size() != targets.size() || cameras.size() != depth_maps.size())
        throw BakeError("refine_texture: view count mismatch");
    RefineReport rep;
    rep.mean_l2.assign(s.refine_iters, 0.0);

    struct Texel {
        int px, py;
        std::vector<Vec3> samples;
    };
    std::vector<Texel> texels;

    for (int f = 0; f < scene.mesh.num_faces(); ++f) {
        const ChartInfo& chart = atlas.charts[f];
        const auto& fv = scene.mesh.face(f);
        const Vec3 v0 = scene.transform.apply(scene.mesh.vertex(fv[0]));
        const Vec3 v1 = scene.transform.apply(scene.mesh.vertex(fv[1]));
        const Vec3 v2 = scene.transform.apply(scene.mesh.vertex(fv[2]));
        Vec3 n_j = (v1 - v0).cross(v2 - v0);
        if (n_j.norm() < kEpsArea) continue;
        n_j.normalize();
        for (int j = 0; j < chart.res; ++j)
            for (int i = 0; i < chart.res; ++i) {
                const double u = (i + 0.5) / chart.res;
                const double v = (j + 0.5) / chart.res;
                const double b0 = 1.0 - u - v;
                if (b0 < 0) continue;
                const int px = chart.x0 + i, py = chart.y0 + j;
                if (atlas.coverage.at(py, px) <= 0) continue;
                ++rep.total_texels;
                const Vec3 p_star = b0 * v0 + u * v1 + v * v2 +
                                    atlas.displacement.at(py, px) * n_j;
                Texel t{px, py, {}};
                for (size_t c = 0; c < cameras.size(); ++c) {
                    const Camera& cam = cameras[c];
                    const Vec3 pc = cam.to_camera(p_star);
                    if (pc[2] <= 0) continue;
                    const Eigen::Vector2d xy = cam.project(p_star);
                    const int ix = static_cast<int>(std::floor(xy[0]));
                    const int iy = static_cast<int>(std::floor(xy[1]));
                    if (ix < 0 || iy < 0 || ix >= cam.width || iy >= cam.height)
                        continue;
                    if (std::abs(pc[2] - depth_maps[c].at(iy, ix)) >= s.d_th) continue;
                    t.samples.emplace_back(targets[c].sample_bilinear(xy[0], xy[1], 0),
                                           targets[c].sample_bilinear(xy[0], xy[1], 1),
                                           targets[c].sample_bilinear(xy[0], xy[1], 2));
                }
                if (!t.samples.empty()) {
                    texels.push_back(std::move(t));
                    ++rep.visible_texels;
                }
            }
    }

    for (int it = 0; it < s.refine_iters; ++it) {
        double sum = 0;
        for (const Texel& t : texels) {
            Vec3 c(atlas.diffuse.at(t.py, t.px, 0), atlas.diffuse.at(t.py, t.px, 1),
                   atlas.diffuse.at(t.py, t.px, 2));
            Vec3 mean = Vec3::Zero();
            double l2 = 0;
            for (const Vec3& sample : t.samples) {
                mean += sample;
                l2 += (c - sample).squaredNorm();
            }
            mean /= static_cast<double>(t.samples.size());
            sum += l2 / static_cast<double>(t.samples.size());
            const Vec3 next = c - s.refine_step * 2.0 * (c - mean);
            for (int ch = 0; ch < 3; ++ch)
                atlas.diffuse.at(t.py, t.px, ch) = std::clamp(next[ch], 0.0, 1.0);
        }
        rep.mean_l2[it] = texels.empty() ? 0.0 : sum / texels.size();
    }
    return rep;
}

void save_atlas(const std::string& prefix, const AttributeAtlas& atlas) {
    save_png(prefix + "_diffuse.png", atlas.diffuse);
    save_png(prefix + "_normal.png", atlas.normal, /*srgb=*/false);
    save_png(prefix + "_coverage.png", atlas.coverage, /*srgb=*/false);
    save_pfm(prefix + "_displacement.pfm", atlas.displacement);
    nlohmann::json j;
    j["width"] = atlas.width;
    j["height"] = atlas.height;
    j["texel_size"] = atlas.texel_size;
    for (const ChartInfo& c : atlas.charts)
        j["charts"].push_back({{"face", c.face_id},
                               {"x0", c.x0},
                               {"y0", c.y0},
                               {"res", c.res}});
    std::ofstream out(prefix + "_charts.json");
    if (!out) throw BakeError("cannot write chart table");
    out << j.dump(1) << "\n";
}

AttributeAtlas load_atlas(const std::string& prefix) {
    AttributeAtlas atlas;
    atlas.diffuse = load_png(prefix + "_diffuse.png");
    atlas.normal = load_png(prefix + "_normal.png", /*srgb=*/false);
    atlas.coverage = load_png(prefix + "_coverage.png", /*srgb=*/false);
    atlas.displacement = load_pfm(prefix + "_displacement.pfm");
    std::ifstream in(prefix + "_charts.json");
    if (!in) throw BakeError("cannot read chart table");
    nlohmann::json j;
    in >> j;
    atlas.width = j.at("width");
    atlas.height = j.at("height");
    atlas.texel_size = j.at("texel_size");
    for (const auto& c : j.at("charts")) {
        ChartInfo info{c.at("face"), c.at("x0"), c.at("y0"), c.at("res")};
        atlas.charts.push_back(info);
    }
    return atlas;
}

void save_baked_mesh(const std::string& path, const Mesh& mesh,
                     const GlobalTransform& tf, const AttributeAtlas& atlas) {
    std::vector<std::array<Eigen::Vector2d, 3>> uv(mesh.num_faces());
    Mesh world(apply_global_transform(mesh, tf), mesh.faces());
    for (int f = 0; f < mesh.num_faces(); ++f) uv[f] = atlas.face_uv(f);
    save_obj_with_uv(path, world, uv);
}

}  // namespace surfsplat
