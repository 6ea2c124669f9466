#include "maxtbc/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "maxtbc/util.hpp"

namespace maxtbc {

namespace {

// Local faces of a positively oriented tet, ordered so normals point outward.
constexpr int kLocalFaces[4][3] = {{1, 2, 3}, {0, 3, 2}, {0, 1, 3}, {0, 2, 1}};

std::array<int, 3> sorted_key(std::array<int, 3> f) {
    std::sort(f.begin(), f.end());
    return f;
}

double signed_volume(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
    return (b - a).cross(c - a).dot(d - a) / 6.0;
}

struct FaceIncidence {
    int count = 0;
    int tets[2] = {-1, -1};
    int local[2] = {-1, -1};
};

std::map<std::array<int, 3>, FaceIncidence> face_incidences(const TetMesh& mesh) {
    std::map<std::array<int, 3>, FaceIncidence> faces;
    for (std::size_t t = 0; t < mesh.tets.size(); ++t) {
        const auto& tet = mesh.tets[t];
        for (int lf = 0; lf < 4; ++lf) {
            std::array<int, 3> f = {tet[kLocalFaces[lf][0]], tet[kLocalFaces[lf][1]],
                                    tet[kLocalFaces[lf][2]]};
            auto& inc = faces[sorted_key(f)];
            if (inc.count > 2) continue;
            if (inc.count < 2) {
                inc.tets[inc.count] = static_cast<int>(t);
                inc.local[inc.count] = lf;
            }
            ++inc.count;
        }
    }
    return faces;
}

std::string face_str(const std::array<int, 3>& f) {
    std::ostringstream os;
    os << "(" << f[0] << "," << f[1] << "," << f[2] << ")";
    return os.str();
}

// Appends the 6 Kuhn tets of one grid cell given its 8 corner vertex ids
// indexed by bit pattern (ix | iy<<1 | iz<<2).
void append_kuhn_cell(TetMesh& mesh, const std::array<int, 8>& corner) {
    constexpr int perms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2},
                                 {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
    for (const auto& p : perms) {
        int bits = 0;
        std::array<int, 4> tet;
        tet[0] = corner[0];
        for (int k = 0; k < 3; ++k) {
            bits |= 1 << p[k];
            tet[k + 1] = corner[bits];
        }
        if (signed_volume(mesh.vertices[tet[0]], mesh.vertices[tet[1]], mesh.vertices[tet[2]],
                          mesh.vertices[tet[3]]) < 0.0)
            std::swap(tet[2], tet[3]);
        mesh.tets.push_back(tet);
    }
}

void fill_boundary_faces(TetMesh& mesh) {
    mesh.boundary_faces.clear();
    auto faces = face_incidences(mesh);
    for (const auto& [key, inc] : faces) {
        if (inc.count > 2)
            throw std::runtime_error("mesh: face " + face_str(key) + " shared by " +
                                     std::to_string(inc.count) + " tets");
        if (inc.count == 1) {
            const auto& tet = mesh.tets[inc.tets[0]];
            const int* lf = kLocalFaces[inc.local[0]];
            mesh.boundary_faces.push_back({{tet[lf[0]], tet[lf[1]], tet[lf[2]]}, inc.tets[0]});
        }
    }
}

// Structured grid sections glued through a shared (ix,iy,iz) -> vertex map so
// interface coordinates are bit-identical.
struct GridBuilder {
    std::vector<double> xs, ys, zs;
    std::map<std::array<int, 3>, int> vertex_of;
    TetMesh mesh;

    int vertex(int ix, int iy, int iz) {
        auto [it, inserted] = vertex_of.try_emplace({ix, iy, iz}, -1);
        if (inserted) {
            it->second = static_cast<int>(mesh.vertices.size());
            mesh.vertices.emplace_back(xs[ix], ys[iy], zs[iz]);
        }
        return it->second;
    }

    void add_cell(int ix, int iy, int iz) {
        std::array<int, 8> corner;
        for (int b = 0; b < 8; ++b)
            corner[b] = vertex(ix + (b & 1), iy + ((b >> 1) & 1), iz + ((b >> 2) & 1));
        append_kuhn_cell(mesh, corner);
    }
};

std::vector<double> uniform_lines(double lo, double hi, int n) {
    std::vector<double> v(n + 1);
    for (int i = 0; i <= n; ++i) v[i] = lo + (hi - lo) * i / n;
    v[n] = hi;
    return v;
}

}  // namespace

double tet_volume(const TetMesh& mesh, int t) {
    const auto& tet = mesh.tets[t];
    return signed_volume(mesh.vertices[tet[0]], mesh.vertices[tet[1]], mesh.vertices[tet[2]],
                         mesh.vertices[tet[3]]);
}

double total_volume(const TetMesh& mesh) {
    double v = 0.0;
    for (std::size_t t = 0; t < mesh.tets.size(); ++t) v += tet_volume(mesh, static_cast<int>(t));
    return v;
}

TetMesh build_box_mesh(const Vec3& extents, const std::array<int, 3>& divisions) {
    for (int k = 0; k < 3; ++k) {
        if (!(extents[k] > 0.0))
            throw std::invalid_argument("build_box_mesh: extents must be positive");
        if (divisions[k] < 1)
            throw std::invalid_argument("build_box_mesh: divisions must be >= 1");
    }
    GridBuilder gb;
    gb.xs = uniform_lines(0.0, extents[0], divisions[0]);
    gb.ys = uniform_lines(0.0, extents[1], divisions[1]);
    gb.zs = uniform_lines(0.0, extents[2], divisions[2]);
    for (int iz = 0; iz < divisions[2]; ++iz)
        for (int iy = 0; iy < divisions[1]; ++iy)
            for (int ix = 0; ix < divisions[0]; ++ix) gb.add_cell(ix, iy, iz);
    fill_boundary_faces(gb.mesh);
    return std::move(gb.mesh);
}

double l_shape_volume(double arm_length, double thickness) {
    return thickness * thickness * (2.0 * arm_length - thickness);
}

TetMesh build_l_shape_mesh(double arm_length, double thickness, int divisions_per_unit) {
    if (!(arm_length > 0.0) || !(thickness > 0.0))
        throw std::invalid_argument("build_l_shape_mesh: sizes must be positive");
    if (!(thickness < arm_length))
        throw std::invalid_argument("build_l_shape_mesh: thickness must be < arm_length");
    if (divisions_per_unit < 1)
        throw std::invalid_argument("build_l_shape_mesh: divisions_per_unit must be >= 1");

    const double t = thickness, a = arm_length;
    const int nt = std::max(1, static_cast<int>(std::lround(t * divisions_per_unit)));
    const int nl = std::max(1, static_cast<int>(std::lround((a - t) * divisions_per_unit)));

    GridBuilder gb;
    // Axis lines: a [0,t] block with nt cells followed by a [t,a] block with nl
    // cells, so both arms and the corner share grid planes exactly.
    auto lines = [&](bool long_axis) {
        std::vector<double> v = uniform_lines(0.0, t, nt);
        if (long_axis) {
            std::vector<double> tail = uniform_lines(t, a, nl);
            v.insert(v.end(), tail.begin() + 1, tail.end());
        }
        return v;
    };
    gb.xs = lines(true);
    gb.ys = lines(true);
    gb.zs = lines(false);
    const int n_xy = nt + nl;
    for (int iz = 0; iz < nt; ++iz)
        for (int iy = 0; iy < n_xy; ++iy)
            for (int ix = 0; ix < n_xy; ++ix)
                if (ix < nt || iy < nt) gb.add_cell(ix, iy, iz);
    fill_boundary_faces(gb.mesh);
    return std::move(gb.mesh);
}

void validate_mesh(const TetMesh& mesh) {
    if (mesh.tets.empty()) throw std::runtime_error("mesh has no cells");
    for (const auto& tet : mesh.tets)
        for (int v : tet)
            if (v < 0 || v >= static_cast<int>(mesh.vertices.size()))
                throw std::runtime_error("mesh: tet vertex index out of range");
    for (std::size_t t = 0; t < mesh.tets.size(); ++t)
        if (!(tet_volume(mesh, static_cast<int>(t)) > 0.0))
            throw std::runtime_error("mesh: tet " + std::to_string(t) +
                                     " has non-positive volume");
    auto faces = face_incidences(mesh);
    std::size_t n_bnd = 0;
    for (const auto& [key, inc] : faces) {
        if (inc.count > 2)
            throw std::runtime_error("mesh: face " + face_str(key) + " shared by " +
                                     std::to_string(inc.count) + " tets");
        if (inc.count == 1) ++n_bnd;
    }
    if (n_bnd != mesh.boundary_faces.size())
        throw std::runtime_error("mesh: stored boundary face count " +
                                 std::to_string(mesh.boundary_faces.size()) +
                                 " does not match topology (" + std::to_string(n_bnd) + ")");
    for (const auto& bf : mesh.boundary_faces) {
        auto it = faces.find(sorted_key(bf.v));
        if (it == faces.end() || it->second.count != 1 || it->second.tets[0] != bf.owner)
            throw std::runtime_error("mesh: boundary record " + face_str(bf.v) +
                                     " inconsistent with topology");
    }
}

std::vector<InteriorFace> interior_faces(const TetMesh& mesh) {
    std::vector<InteriorFace> result;
    auto faces = face_incidences(mesh);
    for (const auto& [key, inc] : faces) {
        if (inc.count != 2) continue;
        int side = inc.tets[0] < inc.tets[1] ? 0 : 1;
        const auto& tet = mesh.tets[inc.tets[side]];
        const int* lf = kLocalFaces[inc.local[side]];
        result.push_back({{tet[lf[0]], tet[lf[1]], tet[lf[2]]},
                          inc.tets[side],
                          inc.tets[1 - side]});
    }
    return result;
}

double SurfaceMesh::diameter() const {
    Vec3 lo = nodes.front(), hi = nodes.front();
    for (const auto& p : nodes) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    return (hi - lo).norm();
}

SurfaceMesh extract_boundary(const TetMesh& mesh) {
    validate_mesh(mesh);
    SurfaceMesh surf;
    surf.vertex_to_node.assign(mesh.vertices.size(), -1);
    std::vector<int> used;
    for (const auto& bf : mesh.boundary_faces)
        for (int v : bf.v)
            if (surf.vertex_to_node[v] == -1) {
                surf.vertex_to_node[v] = 0;
                used.push_back(v);
            }
    std::sort(used.begin(), used.end());
    surf.nodes.reserve(used.size());
    surf.node_map = used;
    for (std::size_t i = 0; i < used.size(); ++i) {
        surf.vertex_to_node[used[i]] = static_cast<int>(i);
        surf.nodes.push_back(mesh.vertices[used[i]]);
    }
    surf.triangles.reserve(mesh.boundary_faces.size());
    for (const auto& bf : mesh.boundary_faces) {
        std::array<int, 3> tri = {surf.vertex_to_node[bf.v[0]], surf.vertex_to_node[bf.v[1]],
                                  surf.vertex_to_node[bf.v[2]]};
        const Vec3& p0 = mesh.vertices[bf.v[0]];
        const Vec3& p1 = mesh.vertices[bf.v[1]];
        const Vec3& p2 = mesh.vertices[bf.v[2]];
        Vec3 nrm = (p1 - p0).cross(p2 - p0);
        double twice_area = nrm.norm();
        if (!(twice_area > 0.0))
            throw std::runtime_error("extract_boundary: degenerate face " + face_str(bf.v));
        nrm /= twice_area;
        const auto& tet = mesh.tets[bf.owner];
        Vec3 tet_centroid = 0.25 * (mesh.vertices[tet[0]] + mesh.vertices[tet[1]] +
                                    mesh.vertices[tet[2]] + mesh.vertices[tet[3]]);
        Vec3 face_centroid = (p0 + p1 + p2) / 3.0;
        if (nrm.dot(face_centroid - tet_centroid) < 0.0)
            throw std::runtime_error("extract_boundary: inward-oriented face " + face_str(bf.v));
        surf.triangles.push_back(tri);
        surf.normals.push_back(nrm);
        surf.areas.push_back(0.5 * twice_area);
        surf.tri_owner.push_back(bf.owner);
    }
    return surf;
}

MeshMetrics mesh_metrics(const TetMesh& mesh) {
    MeshMetrics m;
    m.n_tets = mesh.tets.size();
    m.n_boundary_faces = mesh.boundary_faces.size();
    m.h_max = 0.0;
    m.h_min = std::numeric_limits<double>::infinity();
    for (const auto& tet : mesh.tets) {
        double h = 0.0;
        for (int i = 0; i < 4; ++i)
            for (int j = i + 1; j < 4; ++j)
                h = std::max(h, (mesh.vertices[tet[i]] - mesh.vertices[tet[j]]).norm());
        m.h_max = std::max(m.h_max, h);
        m.h_min = std::min(m.h_min, h);
    }
    m.quasi_uniformity_ratio = m.h_max / m.h_min;
    return m;
}

void write_mesh(const TetMesh& mesh, std::ostream& os) {
    os << "tetmesh 1\n";
    os << "vertices " << mesh.vertices.size() << "\n";
    for (const auto& v : mesh.vertices)
        os << format_double_17g(v[0]) << " " << format_double_17g(v[1]) << " "
           << format_double_17g(v[2]) << "\n";
    os << "tets " << mesh.tets.size() << "\n";
    for (const auto& t : mesh.tets) os << t[0] << " " << t[1] << " " << t[2] << " " << t[3] << "\n";
    os << "boundary " << mesh.boundary_faces.size() << "\n";
    for (const auto& f : mesh.boundary_faces)
        os << f.v[0] << " " << f.v[1] << " " << f.v[2] << " " << f.owner << "\n";
}

void write_mesh(const TetMesh& mesh, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_mesh: cannot open " + path);
    write_mesh(mesh, os);
}

namespace {

class LineReader {
  public:
    LineReader(std::istream& is, std::string name) : is_(is), name_(std::move(name)) {}

    std::istringstream next() {
        std::string line;
        while (std::getline(is_, line)) {
            ++lineno_;
            if (line.find_first_not_of(" \t\r\n") != std::string::npos)
                return std::istringstream(line);
        }
        fail("unexpected end of file");
        return std::istringstream();
    }

    [[noreturn]] void fail(const std::string& what) const {
        throw std::runtime_error(name_ + ":" + std::to_string(lineno_) + ": " + what);
    }

    int lineno() const { return lineno_; }

  private:
    std::istream& is_;
    std::string name_;
    int lineno_ = 0;
};

}  // namespace

TetMesh read_mesh(std::istream& is, const std::string& name) {
    LineReader rd(is, name);
    {
        auto ls = rd.next();
        std::string tag;
        int version = 0;
        if (!(ls >> tag >> version) || tag != "tetmesh" || version != 1)
            rd.fail("expected header 'tetmesh 1'");
    }
    TetMesh mesh;
    auto read_count = [&rd](const char* keyword) {
        auto ls = rd.next();
        std::string tag;
        long n = -1;
        if (!(ls >> tag >> n) || tag != keyword || n < 0)
            rd.fail(std::string("expected '") + keyword + " <count>'");
        return static_cast<std::size_t>(n);
    };
    std::size_t nv = read_count("vertices");
    mesh.vertices.reserve(nv);
    for (std::size_t i = 0; i < nv; ++i) {
        auto ls = rd.next();
        double x, y, z;
        if (!(ls >> x >> y >> z)) rd.fail("expected vertex 'x y z'");
        mesh.vertices.emplace_back(x, y, z);
    }
    std::size_t ntet = read_count("tets");
    if (ntet == 0) rd.fail("mesh has no cells");
    mesh.tets.reserve(ntet);
    for (std::size_t i = 0; i < ntet; ++i) {
        auto ls = rd.next();
        std::array<int, 4> t;
        if (!(ls >> t[0] >> t[1] >> t[2] >> t[3])) rd.fail("expected tet 'a b c d'");
        for (int v : t)
            if (v < 0 || v >= static_cast<int>(nv))
                rd.fail("tet record " + std::to_string(i) + ": vertex index " +
                        std::to_string(v) + " out of range [0," + std::to_string(nv) + ")");
        mesh.tets.push_back(t);
    }
    std::size_t nb = read_count("boundary");
    mesh.boundary_faces.reserve(nb);
    for (std::size_t i = 0; i < nb; ++i) {
        auto ls = rd.next();
        std::array<int, 3> f;
        int owner;
        if (!(ls >> f[0] >> f[1] >> f[2] >> owner)) rd.fail("expected face 'a b c owner'");
        for (int v : f)
            if (v < 0 || v >= static_cast<int>(nv))
                rd.fail("boundary record " + std::to_string(i) + ": vertex index " +
                        std::to_string(v) + " out of range");
        if (owner < 0 || owner >= static_cast<int>(ntet))
            rd.fail("boundary record " + std::to_string(i) + ": owner tet " +
                    std::to_string(owner) + " out of range");
        mesh.boundary_faces.push_back({f, owner});
    }
    return mesh;
}

TetMesh read_mesh(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("read_mesh: cannot open " + path);
    return read_mesh(is, path);
}

std::string mesh_hash(const TetMesh& mesh) {
    Fnv1a h;
    h.add(static_cast<std::uint64_t>(mesh.vertices.size()));
    for (const auto& v : mesh.vertices) {
        h.add(v[0]);
        h.add(v[1]);
        h.add(v[2]);
    }
    h.add(static_cast<std::uint64_t>(mesh.tets.size()));
    for (const auto& t : mesh.tets)
        for (int v : t) h.add(static_cast<std::uint64_t>(v));
    h.add(static_cast<std::uint64_t>(mesh.boundary_faces.size()));
    for (const auto& f : mesh.boundary_faces) {
        for (int v : f.v) h.add(static_cast<std::uint64_t>(v));
        h.add(static_cast<std::uint64_t>(f.owner));
    }
    return h.hex();
}

}  // namespace maxtbc
