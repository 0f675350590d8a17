#include "surfsplat/mesh.h"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace surfsplat {

Mesh::Mesh(std::vector<Vec3> vertices, std::vector<std::array<int, 3>> faces)
    : vertices_(std::move(vertices)), faces_(std::move(faces)) {
    const int nv = num_vertices();
    for (const auto& f : faces_) {
        for (int m = 0; m < 3; ++m) {
            if (f[m] < 0 || f[m] >= nv) throw MeshError("face index out of range");
        }
        if (f[0] == f[1] || f[1] == f[2] || f[0] == f[2])
            throw MeshError("face with repeated vertex");
    }
    build_adjacency();
    for (int f = 0; f < num_faces(); ++f) {
        if (face_area(f) < kEpsArea) throw MeshError("degenerate face at load");
    }
}

void Mesh::build_adjacency() {
    vertex_faces_.assign(num_vertices(), {});
    for (int f = 0; f < num_faces(); ++f)
        for (int m = 0; m < 3; ++m) vertex_faces_[faces_[f][m]].push_back(f);

    edge_opposite_.assign(3 * num_faces(), kBoundary);
    std::map<std::pair<int, int>, std::pair<int, int>> half;  // (a,b) -> (face, local edge)
    for (int f = 0; f < num_faces(); ++f) {
        for (int e = 0; e < 3; ++e) {
            int a = faces_[f][(e + 1) % 3];
            int b = faces_[f][(e + 2) % 3];
            auto key = std::make_pair(b, a);  // opposite-orientation twin
            auto it = half.find(key);
            if (it != half.end()) {
                edge_opposite_[3 * f + e] = it->second.first;
                edge_opposite_[3 * it->second.first + it->second.second] = f;
                half.erase(it);
            } else {
                if (!half.emplace(std::make_pair(a, b), std::make_pair(f, e)).second)
                    throw MeshError("non-manifold or inconsistently oriented edge");
            }
        }
    }
    closed_ = half.empty();
}

void Mesh::set_vertices(std::vector<Vec3> v) {
    if (static_cast<int>(v.size()) != num_vertices())
        throw MeshError("vertex count mismatch");
    vertices_ = std::move(v);
}

void Mesh::displace_vertices(const Eigen::MatrixXd& delta) {
    if (delta.rows() != num_vertices() || delta.cols() != 3)
        throw MeshError("displacement shape mismatch");
    for (int i = 0; i < num_vertices(); ++i) vertices_[i] += delta.row(i).transpose();
}

double Mesh::face_area(int f) const {
    const auto& t = faces_[f];
    return 0.5 * (vertices_[t[1]] - vertices_[t[0]])
                     .cross(vertices_[t[2]] - vertices_[t[0]])
                     .norm();
}

Vec3 Mesh::face_normal(int f) const {
    const auto& t = faces_[f];
    Vec3 c = (vertices_[t[1]] - vertices_[t[0]]).cross(vertices_[t[2]] - vertices_[t[0]]);
    double n = c.norm();
    if (0.5 * n < kEpsArea) throw MeshError("degenerate face");
    return c / n;
}

Vec3 Mesh::face_centroid(int f) const {
    const auto& t = faces_[f];
    return (vertices_[t[0]] + vertices_[t[1]] + vertices_[t[2]]) / 3.0;
}

double Mesh::mean_edge_length() const {
    double total = 0;
    int count = 0;
    for (const auto& t : faces_) {
        for (int e = 0; e < 3; ++e) {
            total += (vertices_[t[(e + 1) % 3]] - vertices_[t[e]]).norm();
            ++count;
        }
    }
    return count ? total / count : 0.0;
}

double Mesh::signed_volume() const {
    double v = 0;
    for (const auto& t : faces_)
        v += vertices_[t[0]].dot(vertices_[t[1]].cross(vertices_[t[2]]));
    return v / 6.0;
}

int Mesh::local_index(int f, int v) const {
    for (int m = 0; m < 3; ++m)
        if (faces_[f][m] == v) return m;
    return -1;
}

Quat face_frame_quaternion(const Vec3& n) {
    Quat q(1.0 + n[2], -n[1], n[0], 0.0);
    double norm = q.norm();
    if (norm < kEpsAntipodal) return Quat(0, 1, 0, 0);
    return q / norm;
}

void GlobalTransform::validate() const {
    // Loose tolerance: this is an input sanity check, and callers (finite
    // differencing, optimizer steps before renormalization) may hold a
    // quaternion a few ulps-to-1e-6 off unit.
    if (std::abs(rotation.norm() - 1.0) > 1e-4)
        throw MeshError("global transform rotation is not unit");
    if (scale.minCoeff() <= 0.0)
        throw MeshError("global transform scale must be positive");
}

std::vector<Vec3> apply_global_transform(const Mesh& mesh, const GlobalTransform& t) {
    t.validate();
    const Mat3 m = t.matrix();
    std::vector<Vec3> out(mesh.num_vertices());
    for (int i = 0; i < mesh.num_vertices(); ++i)
        out[i] = m * mesh.vertex(i) + t.translation;
    return out;
}

LaplacianMatrix build_laplacian(const Mesh& mesh, double lambda) {
    const int nv = mesh.num_vertices();
    std::vector<Eigen::Triplet<double>> trip;
    std::vector<int> degree(nv, 0);
    for (int f = 0; f < mesh.num_faces(); ++f) {
        const auto& t = mesh.face(f);
        for (int e = 0; e < 3; ++e) {
            int a = t[(e + 1) % 3], b = t[(e + 2) % 3];
            // Each interior edge appears in two faces; count it once by
            // claiming it for the face that sees it in (low, high) order
            // unless the twin is a boundary.
            if (a < b || mesh.edge_opposite(f, e) == kBoundary) {
                trip.emplace_back(a, b, -1.0);
                trip.emplace_back(b, a, -1.0);
                ++degree[a];
                ++degree[b];
            }
        }
    }
    for (int i = 0; i < nv; ++i) {
        if (degree[i] == 0) throw MeshError("isolated vertex in Laplacian");
        trip.emplace_back(i, i, static_cast<double>(degree[i]));
    }
    LaplacianMatrix out;
    out.lambda = lambda;
    out.L.resize(nv, nv);
    out.L.setFromTriplets(trip.begin(), trip.end());
    return out;
}

Mesh load_obj(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MeshError("cannot open OBJ: " + path);
    std::vector<Vec3> verts;
    std::vector<std::array<int, 3>> faces;
    std::string line;
    while (std::getline(in, line)) {
        std::istringstream ss(line);
        std::string tag;
        ss >> tag;
        if (tag == "v") {
            Vec3 v;
            ss >> v[0] >> v[1] >> v[2];
            verts.push_back(v);
        } else if (tag == "f") {
            std::array<int, 3> f{};
            for (int m = 0; m < 3; ++m) {
                std::string tok;
                if (!(ss >> tok)) throw MeshError("non-triangle face in OBJ");
                f[m] = std::stoi(tok.substr(0, tok.find('/'))) - 1;
            }
            std::string extra;
            if (ss >> extra) throw MeshError("non-triangle face in OBJ");
            faces.push_back(f);
        }
    }
    return Mesh(std::move(verts), std::move(faces));
}

void save_obj(const std::string& path, const Mesh& mesh) {
    std::ofstream out(path);
    if (!out) throw MeshError("cannot write OBJ: " + path);
    out.precision(17);
    for (const auto& v : mesh.vertices())
        out << "v " << v[0] << " " << v[1] << " " << v[2] << "\n";
    for (const auto& f : mesh.faces())
        out << "f " << f[0] + 1 << " " << f[1] + 1 << " " << f[2] + 1 << "\n";
}

void save_obj_with_uv(const std::string& path, const Mesh& mesh,
                      const std::vector<std::array<Eigen::Vector2d, 3>>& uv) {
    if (static_cast<int>(uv.size()) != mesh.num_faces())
        throw MeshError("uv table size mismatch");
    std::ofstream out(path);
    if (!out) throw MeshError("cannot write OBJ: " + path);
    out.precision(17);
    for (const auto& v : mesh.vertices())
        out << "v " << v[0] << " " << v[1] << " " << v[2] << "\n";
    for (const auto& fu : uv)
        for (const auto& t : fu) out << "vt " << t[0] << " " << t[1] << "\n";
    for (int f = 0; f < mesh.num_faces(); ++f) {
        const auto& t = mesh.face(f);
        out << "f";
        for (int m = 0; m < 3; ++m) out << " " << t[m] + 1 << "/" << 3 * f + m + 1;
        out << "\n";
    }
}

}  // namespace surfsplat
