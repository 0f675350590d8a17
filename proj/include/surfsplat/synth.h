#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "surfsplat/baker.h"
#include "surfsplat/camera.h"
#include "surfsplat/image.h"
#include "surfsplat/mesh.h"

namespace surfsplat {

// Axis-aligned cube of half-extent `half`, each side an n x n quad grid
// split into triangles; vertices welded so the mesh is closed.
Mesh make_cube(double half, int grid);

// Icosahedron subdivided `subdiv` times, vertices projected to the sphere;
// 20 * 4^subdiv faces.
Mesh make_icosphere(double radius, int subdiv);

// Procedural per-face colors: a 3D checker over face centroids.
std::vector<Vec3> checker_face_colors(const Mesh& mesh, double cell);

// `count` cameras on a Fibonacci sphere lattice of the given radius looking
// at `center`.
std::vector<Camera> fibonacci_cameras(int count, const Vec3& center, double radius,
                                      double focal_px, int width, int height);

struct RaycastImages {
    Image color;  // H x W x 3, black background
    Image depth;  // H x W x 1, camera z at the hit (0 = miss)
};

// Exact per-pixel ray casting of a flat-colored mesh. Deliberately shares
// no code with the splat rasterizer so it can serve as an oracle.
RaycastImages render_raycast(const Mesh& world_mesh,
                             const std::vector<Vec3>& face_colors, const Camera& cam);

// Ray casting of a baked mesh: color from the diffuse atlas, hit position
// offset along the face normal by the displacement chart value.
RaycastImages render_raycast_baked(const Mesh& world_mesh, const AttributeAtlas& atlas,
                                   const Camera& cam);

// Uniform area-weighted surface samples.
std::vector<Vec3> sample_surface(const Mesh& mesh, int count, std::mt19937_64& rng);

// Symmetric point-set Chamfer distance between surface samples of two
// meshes (mean nearest-neighbor distance, averaged over both directions).
double chamfer_distance(const Mesh& a, const Mesh& b, int samples_per_side,
                        uint64_t seed);

}  // namespace surfsplat
