#pragma once

#include <array>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Sparse>

#include "surfsplat/quat.h"

namespace surfsplat {

constexpr double kEpsArea = 1e-12;
constexpr double kEpsAntipodal = 1e-8;

struct MeshError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

constexpr int kBoundary = -1;

// Fixed-topology triangle mesh with vertex-face adjacency and, per (face,
// local edge), the neighboring face across that edge. Local edge e of face
// f is the edge opposite local vertex e, i.e. (f[(e+1)%3], f[(e+2)%3]).
class Mesh {
public:
    Mesh() = default;
    Mesh(std::vector<Vec3> vertices, std::vector<std::array<int, 3>> faces);

    int num_vertices() const { return static_cast<int>(vertices_.size()); }
    int num_faces() const { return static_cast<int>(faces_.size()); }

    const std::vector<Vec3>& vertices() const { return vertices_; }
    const std::vector<std::array<int, 3>>& faces() const { return faces_; }
    const std::array<int, 3>& face(int f) const { return faces_[f]; }
    const Vec3& vertex(int v) const { return vertices_[v]; }

    void set_vertices(std::vector<Vec3> v);
    // Additive update used by the optimizer; topology untouched.
    void displace_vertices(const Eigen::MatrixXd& delta);

    const std::vector<std::vector<int>>& vertex_face_adjacency() const {
        return vertex_faces_;
    }
    // Neighbor across local edge e of face f, or kBoundary.
    int edge_opposite(int f, int e) const { return edge_opposite_[3 * f + e]; }

    double face_area(int f) const;
    Vec3 face_normal(int f) const;
    Vec3 face_centroid(int f) const;
    double mean_edge_length() const;

    // Sixth of the sum of scalar triple products; positive for a closed
    // outward-oriented mesh.
    double signed_volume() const;
    bool is_closed() const { return closed_; }

    // Local index (0..2) of vertex v inside face f, or -1.
    int local_index(int f, int v) const;

private:
    void build_adjacency();

    std::vector<Vec3> vertices_;
    std::vector<std::array<int, 3>> faces_;
    std::vector<std::vector<int>> vertex_faces_;
    std::vector<int> edge_opposite_;
    bool closed_ = false;
};

// q^f aligning (0,0,1) with the given unit normal. Near the antipodal
// normal (0,0,-1) falls back to a pi rotation about x.
Quat face_frame_quaternion(const Vec3& n);

struct GlobalTransform {
    Vec3 scale = Vec3::Ones();
    Quat rotation = quat_identity();  // scalar-first unit quaternion
    Vec3 translation = Vec3::Zero();

    Mat3 matrix() const {  // M = S* R(q*)
        return scale.asDiagonal() * quat_to_mat(rotation.normalized());
    }
    Vec3 apply(const Vec3& v) const { return matrix() * v + translation; }
    Vec3 apply_inverse(const Vec3& v) const {
        return matrix().inverse() * (v - translation);
    }
    void validate() const;
};

std::vector<Vec3> apply_global_transform(const Mesh& mesh, const GlobalTransform& t);

struct LaplacianMatrix {
    Eigen::SparseMatrix<double> L;
    double lambda = 0.0;
};

// Uniform graph Laplacian: L_ii = degree(i), L_ij = -1 per edge.
LaplacianMatrix build_laplacian(const Mesh& mesh, double lambda = 0.0);

// Wavefront OBJ subset: v and f lines, triangles only, 1-based indices.
Mesh load_obj(const std::string& path);
void save_obj(const std::string& path, const Mesh& mesh);
// With per-face UV charts (vt + f v/vt lines); uv holds 3 texcoords per face.
void save_obj_with_uv(const std::string& path, const Mesh& mesh,
                      const std::vector<std::array<Eigen::Vector2d, 3>>& uv);

}  // namespace surfsplat
