#pragma once

#include <Eigen/Dense>
#include <array>
#include <iosfwd>
#include <string>
#include <vector>

namespace maxtbc {

using Vec3 = Eigen::Vector3d;

struct BoundaryFace {
    std::array<int, 3> v;  // volume vertex indices
    int owner;             // tet the face belongs to
};

// Tetrahedral mesh of the interior domain. Tets are stored positively
// oriented; boundary faces are ordered so their normal points out of the
// owner tet. Immutable once built, safe to share read-only across threads.
struct TetMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 4>> tets;
    std::vector<BoundaryFace> boundary_faces;

    std::size_t n_vertices() const { return vertices.size(); }
    std::size_t n_tets() const { return tets.size(); }
};

struct InteriorFace {
    std::array<int, 3> v;
    int owner;     // tet whose outward normal is the face normal (lower index)
    int neighbor;  // the tet the normal points into
};

struct SurfaceMesh {
    std::vector<Vec3> nodes;
    std::vector<std::array<int, 3>> triangles;  // surface node indices, outward-oriented
    std::vector<Vec3> normals;                  // unit outward normal per triangle
    std::vector<double> areas;
    std::vector<int> node_map;        // surface node -> volume vertex
    std::vector<int> tri_owner;       // owner tet per triangle
    std::vector<int> vertex_to_node;  // volume vertex -> surface node, -1 if interior

    std::size_t n_nodes() const { return nodes.size(); }
    std::size_t n_triangles() const { return triangles.size(); }
    Vec3 node_pos(int n) const { return nodes[n]; }
    double diameter() const;
};

struct MeshMetrics {
    double h_max = 0.0;
    double h_min = 0.0;
    double quasi_uniformity_ratio = 0.0;
    std::size_t n_tets = 0;
    std::size_t n_boundary_faces = 0;
};

double tet_volume(const TetMesh& mesh, int t);
double total_volume(const TetMesh& mesh);

// Axis-aligned box [0,ex]x[0,ey]x[0,ez], each grid cell split into 6 tets
// (Kuhn subdivision around the cell diagonal).
TetMesh build_box_mesh(const Vec3& extents, const std::array<int, 3>& divisions);

// L-shaped solid: two arms of square cross-section `thickness` along x and y,
// both of length `arm_length`, extruded to height `thickness`. Non-convex.
TetMesh build_l_shape_mesh(double arm_length, double thickness, int divisions_per_unit);
double l_shape_volume(double arm_length, double thickness);

// Throws std::runtime_error on violated mesh invariants (non-positive tet
// volume, face shared by more than two tets, inconsistent boundary record).
void validate_mesh(const TetMesh& mesh);

// Interior faces with a deterministic normal convention: the face normal is
// the outward normal of the lower-indexed incident tet.
std::vector<InteriorFace> interior_faces(const TetMesh& mesh);

SurfaceMesh extract_boundary(const TetMesh& mesh);

MeshMetrics mesh_metrics(const TetMesh& mesh);

void write_mesh(const TetMesh& mesh, const std::string& path);
TetMesh read_mesh(const std::string& path);
void write_mesh(const TetMesh& mesh, std::ostream& os);
TetMesh read_mesh(std::istream& is, const std::string& name);

std::string mesh_hash(const TetMesh& mesh);

}  // namespace maxtbc
