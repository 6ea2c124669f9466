#include "maxtbc/dg.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>

#include "maxtbc/quadrature.hpp"
#include "maxtbc/util.hpp"

namespace maxtbc {

namespace {
constexpr double kInvSqrt5Shift = -0.13819660112501051;  // (sqrt(5)-5)/20
}

void MaterialParams::validate() const {
    if (!(epsilon > 0.0) || !(mu > 0.0))
        throw std::invalid_argument("material: epsilon and mu must be positive");
}

DgSpace::DgSpace(const TetMesh& mesh) : mesh_(&mesh) {
    vol_.resize(mesh.n_tets());
    grad_.resize(mesh.n_tets());
    MeshMetrics metrics = mesh_metrics(mesh);
    const double h3 = metrics.h_max * metrics.h_max * metrics.h_max;
    for (std::size_t t = 0; t < mesh.n_tets(); ++t) {
        double v = tet_volume(mesh, static_cast<int>(t));
        if (!(v > 1e-14 * h3))
            throw std::runtime_error("dg: degenerate tet " + std::to_string(t) + " (volume " +
                                     std::to_string(v) + ")");
        vol_[t] = v;
        const auto& tet = mesh.tets[t];
        Eigen::Matrix3d J;
        for (int k = 0; k < 3; ++k) J.col(k) = mesh.vertices[tet[k + 1]] - mesh.vertices[tet[0]];
        Eigen::Matrix3d Jit = J.inverse().transpose();
        Vec3 sum = Vec3::Zero();
        for (int a = 1; a < 4; ++a) {
            grad_[t][a] = Jit.col(a - 1);
            sum += grad_[t][a];
        }
        grad_[t][0] = -sum;
    }
}

int DgSpace::local_vertex(int t, int volume_vertex) const {
    const auto& tet = mesh_->tets[t];
    for (int a = 0; a < 4; ++a)
        if (tet[a] == volume_vertex) return a;
    return -1;
}

namespace {

// x <- (I + c*J) x on a 4-vector, J the all-ones matrix.
inline void ones_shift(double* x, double c) {
    double s = c * (x[0] + x[1] + x[2] + x[3]);
    x[0] += s;
    x[1] += s;
    x[2] += s;
    x[3] += s;
}

}  // namespace

Eigen::VectorXd DgSpace::apply_mass(const Eigen::VectorXd& u) const {
    Eigen::VectorXd r = u;
    for (std::size_t t = 0; t < vol_.size(); ++t) {
        double scale = vol_[t] / 20.0;
        for (int c = 0; c < 3; ++c) {
            double* x = r.data() + 12 * t + 4 * c;
            ones_shift(x, 1.0);
            for (int a = 0; a < 4; ++a) x[a] *= scale;
        }
    }
    return r;
}

Eigen::VectorXd DgSpace::apply_mass_inverse(const Eigen::VectorXd& u) const {
    Eigen::VectorXd r = u;
    for (std::size_t t = 0; t < vol_.size(); ++t) {
        double scale = 20.0 / vol_[t];
        for (int c = 0; c < 3; ++c) {
            double* x = r.data() + 12 * t + 4 * c;
            ones_shift(x, -0.2);
            for (int a = 0; a < 4; ++a) x[a] *= scale;
        }
    }
    return r;
}

Eigen::VectorXd DgSpace::apply_mass_inv_sqrt(const Eigen::VectorXd& u) const {
    Eigen::VectorXd r = u;
    for (std::size_t t = 0; t < vol_.size(); ++t) {
        double scale = std::sqrt(20.0 / vol_[t]);
        for (int c = 0; c < 3; ++c) {
            double* x = r.data() + 12 * t + 4 * c;
            ones_shift(x, kInvSqrt5Shift);
            for (int a = 0; a < 4; ++a) x[a] *= scale;
        }
    }
    return r;
}

double DgSpace::mass_norm_sq(const Eigen::VectorXd& u) const {
    double total = 0.0;
    for (std::size_t t = 0; t < vol_.size(); ++t) {
        double scale = vol_[t] / 20.0;
        for (int c = 0; c < 3; ++c) {
            const double* x = u.data() + 12 * t + 4 * c;
            double s = x[0] + x[1] + x[2] + x[3];
            double q = x[0] * x[0] + x[1] * x[1] + x[2] * x[2] + x[3] * x[3];
            total += scale * (q + s * s);
        }
    }
    return total;
}

Eigen::Matrix<double, 12, 12> DgSpace::mass_block(int t) const {
    Eigen::Matrix<double, 12, 12> B = Eigen::Matrix<double, 12, 12>::Zero();
    double v = vol_[t];
    for (int c = 0; c < 3; ++c)
        for (int a = 0; a < 4; ++a)
            for (int b = 0; b < 4; ++b) B(4 * c + a, 4 * c + b) = (a == b) ? v / 10.0 : v / 20.0;
    return B;
}

Eigen::SparseMatrix<double> DgSpace::mass_matrix() const {
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(mesh_->n_tets() * 48);
    for (std::size_t t = 0; t < mesh_->n_tets(); ++t) {
        double v = vol_[t];
        for (int c = 0; c < 3; ++c)
            for (int a = 0; a < 4; ++a)
                for (int b = 0; b < 4; ++b)
                    trips.emplace_back(dof(static_cast<int>(t), c, a),
                                       dof(static_cast<int>(t), c, b),
                                       (a == b) ? v / 10.0 : v / 20.0);
    }
    Eigen::SparseMatrix<double> M(n_dofs(), n_dofs());
    M.setFromTriplets(trips.begin(), trips.end());
    return M;
}

Vec3 DgSpace::evaluate(const Eigen::VectorXd& u, int t, const Eigen::Vector4d& bary) const {
    Vec3 r = Vec3::Zero();
    for (int c = 0; c < 3; ++c)
        for (int a = 0; a < 4; ++a) r[c] += u[dof(t, c, a)] * bary[a];
    return r;
}

// ---------------------------------------------------------------------------
// Boundary space

namespace {

// Greedy largest-diagonal pivoted Cholesky; returns the selected candidate
// indices once the remaining Schur diagonal drops below rank_tol * max
// initial diagonal. Ties resolve to the lowest index.
std::vector<int> pivoted_cholesky_retain(Eigen::MatrixXd S, double rank_tol) {
    const int n = static_cast<int>(S.rows());
    std::vector<int> perm(n);
    for (int i = 0; i < n; ++i) perm[i] = i;
    const double tol = rank_tol * S.diagonal().maxCoeff();
    std::vector<int> kept;
    for (int k = 0; k < n; ++k) {
        int p = k;
        double best = S(k, k);
        for (int i = k + 1; i < n; ++i)
            if (S(i, i) > best) {
                best = S(i, i);
                p = i;
            }
        if (!(best > tol)) break;
        if (p != k) {
            S.row(k).swap(S.row(p));
            S.col(k).swap(S.col(p));
            std::swap(perm[k], perm[p]);
        }
        kept.push_back(perm[k]);
        double lkk = std::sqrt(S(k, k));
        for (int i = k + 1; i < n; ++i) S(i, k) /= lkk;
        for (int j = k + 1; j < n; ++j)
            for (int i = j; i < n; ++i) S(i, j) -= S(i, k) * S(j, k);
    }
    return kept;
}

}  // namespace

Vec3 BoundarySpace::candidate_tangent(int tri, int comp) const {
    return Vec3::Unit(comp).cross(surf_->normals[tri]);
}

double BoundarySpace::candidate_divergence(int tri, int candidate) const {
    int node = candidate_node(candidate);
    const auto& t = surf_->triangles[tri];
    for (int lv = 0; lv < 3; ++lv)
        if (t[lv] == node)
            return hat_grad_[tri][lv].dot(candidate_tangent(tri, candidate_comp(candidate)));
    return 0.0;
}

BoundarySpace::BoundarySpace(const SurfaceMesh& surface, double rank_tol) : surf_(&surface) {
    const int n_tri = static_cast<int>(surface.n_triangles());
    hat_grad_.resize(n_tri);
    for (int f = 0; f < n_tri; ++f) {
        const auto& t = surface.triangles[f];
        for (int lv = 0; lv < 3; ++lv) {
            Vec3 opp = surface.nodes[t[(lv + 2) % 3]] - surface.nodes[t[(lv + 1) % 3]];
            hat_grad_[f][lv] = surface.normals[f].cross(opp) / (2.0 * surface.areas[f]);
        }
    }

    const int nc = n_candidates();
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(nc, nc);
    for (int f = 0; f < n_tri; ++f) {
        const auto& t = surf_->triangles[f];
        double A = surf_->areas[f];
        Vec3 tang[3];
        for (int i = 0; i < 3; ++i) tang[i] = candidate_tangent(f, i);
        for (int l1 = 0; l1 < 3; ++l1)
            for (int l2 = 0; l2 < 3; ++l2) {
                double mass = A * (l1 == l2 ? 2.0 : 1.0) / 12.0;
                for (int i = 0; i < 3; ++i)
                    for (int j = 0; j < 3; ++j) {
                        double tij = tang[i].dot(tang[j]);
                        if (tij != 0.0) G(3 * t[l1] + i, 3 * t[l2] + j) += mass * tij;
                    }
            }
    }

    kept_ = pivoted_cholesky_retain(G, rank_tol);
    std::sort(kept_.begin(), kept_.end());
    retained_of_candidate_.assign(nc, -1);
    for (std::size_t k = 0; k < kept_.size(); ++k)
        retained_of_candidate_[kept_[k]] = static_cast<int>(k);

    gram_.resize(dim(), dim());
    for (int a = 0; a < dim(); ++a)
        for (int b = 0; b < dim(); ++b) gram_(a, b) = G(kept_[a], kept_[b]);

    Eigen::LLT<Eigen::MatrixXd> llt(gram_);
    if (llt.info() != Eigen::Success)
        throw std::runtime_error("boundary space: retained Gram not positive definite");
}

Vec3 BoundarySpace::evaluate(const Eigen::VectorXd& coeffs, int tri, double a, double b) const {
    const auto& t = surf_->triangles[tri];
    double bary[3] = {1.0 - a - b, a, b};
    Vec3 r = Vec3::Zero();
    for (int lv = 0; lv < 3; ++lv)
        for (int i = 0; i < 3; ++i) {
            int k = retained_of_candidate_[3 * t[lv] + i];
            if (k >= 0) r += coeffs[k] * bary[lv] * candidate_tangent(tri, i);
        }
    return r;
}

// ---------------------------------------------------------------------------
// Interior operators

Eigen::SparseMatrix<double> assemble_curl_form(const DgSpace& space, int threads) {
    const TetMesh& mesh = space.mesh();
    using Trip = Eigen::Triplet<double>;
    std::vector<std::vector<Trip>> buffers;

    // Volume part: (curl b_j', b_j)_K = (grad N_a' x e_c') . e_c * V/4,
    // chunked over tets with per-chunk buffers merged in chunk order.
    {
        const std::size_t ntets = mesh.n_tets();
        int nt = resolve_thread_count(threads);
        std::size_t nchunks = std::min<std::size_t>(std::max(nt, 1), std::max<std::size_t>(ntets, 1));
        std::vector<std::vector<Trip>> local(nchunks);
        parallel_for(
            nchunks,
            [&](std::size_t c0, std::size_t c1) {
                for (std::size_t c = c0; c < c1; ++c) {
                    std::size_t lo = ntets * c / nchunks, hi = ntets * (c + 1) / nchunks;
                    auto& trips = local[c];
                    for (std::size_t t = lo; t < hi; ++t) {
                        double v4 = space.volume(static_cast<int>(t)) / 4.0;
                        const auto& g = space.barycentric_gradients(static_cast<int>(t));
                        for (int ap = 0; ap < 4; ++ap)
                            for (int cp = 0; cp < 3; ++cp) {
                                Vec3 curl = g[ap].cross(Vec3::Unit(cp));
                                for (int c2 = 0; c2 < 3; ++c2) {
                                    if (curl[c2] == 0.0) continue;
                                    for (int a = 0; a < 4; ++a)
                                        trips.emplace_back(
                                            DgSpace::dof(static_cast<int>(t), c2, a),
                                            DgSpace::dof(static_cast<int>(t), cp, ap),
                                            curl[c2] * v4);
                                }
                            }
                    }
                }
            },
            threads);
        for (auto& b : local) buffers.push_back(std::move(b));
    }

    // Centered flux over interior faces: + int_F (jump(u) x nu_F) . avg(w).
    {
        auto faces = interior_faces(mesh);
        const std::size_t nfaces = faces.size();
        int nt = resolve_thread_count(threads);
        std::size_t nchunks =
            std::min<std::size_t>(std::max(nt, 1), std::max<std::size_t>(nfaces, 1));
        std::vector<std::vector<Trip>> local(nchunks);
        parallel_for(
            nchunks,
            [&](std::size_t c0, std::size_t c1) {
                for (std::size_t c = c0; c < c1; ++c) {
                    std::size_t lo = nfaces * c / nchunks, hi = nfaces * (c + 1) / nchunks;
                    auto& trips = local[c];
                    for (std::size_t fi = lo; fi < hi; ++fi) {
                        const auto& F = faces[fi];
                        const Vec3& p0 = mesh.vertices[F.v[0]];
                        Vec3 nrm = (mesh.vertices[F.v[1]] - p0).cross(mesh.vertices[F.v[2]] - p0);
                        double twice_area = nrm.norm();
                        nrm /= twice_area;
                        double area = 0.5 * twice_area;
                        // nu_F exits the owner tet.
                        const auto& otet = mesh.tets[F.owner];
                        Vec3 tc = 0.25 * (mesh.vertices[otet[0]] + mesh.vertices[otet[1]] +
                                          mesh.vertices[otet[2]] + mesh.vertices[otet[3]]);
                        Vec3 fc = (mesh.vertices[F.v[0]] + mesh.vertices[F.v[1]] +
                                   mesh.vertices[F.v[2]]) /
                                  3.0;
                        if (nrm.dot(fc - tc) < 0.0) nrm = -nrm;
                        const int tets[2] = {F.owner, F.neighbor};
                        const double sign[2] = {1.0, -1.0};  // jump = owner - neighbor
                        int lv[2][3];
                        for (int s = 0; s < 2; ++s)
                            for (int l = 0; l < 3; ++l)
                                lv[s][l] = space.local_vertex(tets[s], F.v[l]);
                        for (int s = 0; s < 2; ++s)
                            for (int r = 0; r < 2; ++r)
                                for (int l1 = 0; l1 < 3; ++l1)
                                    for (int l2 = 0; l2 < 3; ++l2) {
                                        double mass = area * (l1 == l2 ? 2.0 : 1.0) / 12.0;
                                        for (int cp = 0; cp < 3; ++cp) {
                                            Vec3 tv = Vec3::Unit(cp).cross(nrm);
                                            for (int c2 = 0; c2 < 3; ++c2) {
                                                double val = 0.5 * sign[s] * tv[c2] * mass;
                                                if (val == 0.0) continue;
                                                trips.emplace_back(
                                                    DgSpace::dof(tets[r], c2, lv[r][l1]),
                                                    DgSpace::dof(tets[s], cp, lv[s][l2]), val);
                                            }
                                        }
                                    }
                    }
                }
            },
            threads);
        for (auto& b : local) buffers.push_back(std::move(b));
    }

    std::size_t total = 0;
    for (const auto& b : buffers) total += b.size();
    std::vector<Trip> all;
    all.reserve(total);
    for (const auto& b : buffers) all.insert(all.end(), b.begin(), b.end());
    Eigen::SparseMatrix<double> Q(space.n_dofs(), space.n_dofs());
    Q.setFromTriplets(all.begin(), all.end());
    return Q;
}

Eigen::SparseMatrix<double> assemble_curl_matrix(const DgSpace& space, int threads) {
    Eigen::SparseMatrix<double> Q = assemble_curl_form(space, threads);
    Eigen::SparseMatrix<double> Qt = Q.transpose();
    return -0.5 * (Q + Qt);
}

Eigen::SparseMatrix<double> assemble_trace_pairing(const DgSpace& space,
                                                   const SurfaceMesh& surf) {
    std::vector<Eigen::Triplet<double>> trips;
    for (std::size_t f = 0; f < surf.n_triangles(); ++f) {
        int K = surf.tri_owner[f];
        double area = surf.areas[f];
        const Vec3& nrm = surf.normals[f];
        int lv[3];
        for (int l = 0; l < 3; ++l)
            lv[l] = space.local_vertex(K, surf.node_map[surf.triangles[f][l]]);
        for (int l1 = 0; l1 < 3; ++l1)
            for (int l2 = 0; l2 < 3; ++l2) {
                double mass = area * (l1 == l2 ? 2.0 : 1.0) / 12.0;
                for (int c = 0; c < 3; ++c) {
                    Vec3 tv = Vec3::Unit(c).cross(nrm);
                    for (int cp = 0; cp < 3; ++cp) {
                        double val = tv[cp] * mass;
                        if (val == 0.0) continue;
                        trips.emplace_back(DgSpace::dof(K, c, lv[l1]),
                                           DgSpace::dof(K, cp, lv[l2]), val);
                    }
                }
            }
    }
    Eigen::SparseMatrix<double> T(space.n_dofs(), space.n_dofs());
    T.setFromTriplets(trips.begin(), trips.end());
    return T;
}

Eigen::SparseMatrix<double> assemble_coupling(const DgSpace& space, const BoundarySpace& bspace) {
    const SurfaceMesh& surf = bspace.surface();
    std::vector<Eigen::Triplet<double>> trips;
    for (std::size_t f = 0; f < surf.n_triangles(); ++f) {
        int K = surf.tri_owner[f];
        double area = surf.areas[f];
        int lv[3];
        for (int l = 0; l < 3; ++l)
            lv[l] = space.local_vertex(K, surf.node_map[surf.triangles[f][l]]);
        for (int l1 = 0; l1 < 3; ++l1)
            for (int l2 = 0; l2 < 3; ++l2) {
                double mass = area * (l1 == l2 ? 2.0 : 1.0) / 12.0;
                int node = surf.triangles[f][l2];
                for (int i = 0; i < 3; ++i) {
                    int k = bspace.retained_index(3 * node + i);
                    if (k < 0) continue;
                    Vec3 tv = bspace.candidate_tangent(static_cast<int>(f), i);
                    for (int c = 0; c < 3; ++c) {
                        double val = 0.5 * tv[c] * mass;
                        if (val == 0.0) continue;
                        trips.emplace_back(DgSpace::dof(K, c, lv[l1]), k, val);
                    }
                }
            }
    }
    Eigen::SparseMatrix<double> C1(space.n_dofs(), bspace.dim());
    C1.setFromTriplets(trips.begin(), trips.end());
    return C1;
}

OperatorSet assemble_operators(const DgSpace& space, const BoundarySpace& bspace,
                               const MaterialParams& material, int threads) {
    material.validate();
    OperatorSet ops;
    ops.space = &space;
    ops.bspace = &bspace;
    ops.material = material;
    ops.Q = assemble_curl_form(space, threads);
    Eigen::SparseMatrix<double> Qt = ops.Q.transpose();
    ops.D = -0.5 * (ops.Q + Qt);
    ops.T = assemble_trace_pairing(space, bspace.surface());
    ops.C1 = assemble_coupling(space, bspace);
    ops.C0 = ops.C1 * (1.0 / material.mu);
    ops.MG_l2 = bspace.gram();
    return ops;
}

OperatorSet assemble_interior_operators(const DgSpace& space, const MaterialParams& material,
                                        int threads) {
    material.validate();
    OperatorSet ops;
    ops.space = &space;
    ops.material = material;
    ops.Q = assemble_curl_form(space, threads);
    Eigen::SparseMatrix<double> Qt = ops.Q.transpose();
    ops.D = -0.5 * (ops.Q + Qt);
    ops.C1.resize(space.n_dofs(), 0);
    ops.C0.resize(space.n_dofs(), 0);
    return ops;
}

Eigen::VectorXd apply_discrete_curl(const Eigen::SparseMatrix<double>& Q,
                                    const Eigen::VectorXd& u) {
    if (Q.cols() != u.size()) throw std::invalid_argument("apply_discrete_curl: size mismatch");
    return Q * u;
}

std::array<Vec3, 3> tangential_trace(const DgSpace& space, const SurfaceMesh& surf,
                                     const Eigen::VectorXd& u, int tri) {
    if (tri < 0 || tri >= static_cast<int>(surf.n_triangles()))
        throw std::invalid_argument("tangential_trace: not a boundary face");
    int K = surf.tri_owner[tri];
    std::array<Vec3, 3> out;
    for (int l = 0; l < 3; ++l) {
        int a = space.local_vertex(K, surf.node_map[surf.triangles[tri][l]]);
        Vec3 v(u[DgSpace::dof(K, 0, a)], u[DgSpace::dof(K, 1, a)], u[DgSpace::dof(K, 2, a)]);
        out[l] = v.cross(surf.normals[tri]);
    }
    return out;
}

FaceField tangential_trace(const DgSpace& space, const SurfaceMesh& surf,
                           const Eigen::VectorXd& u) {
    FaceField field;
    field.value.resize(surf.n_triangles());
    for (std::size_t f = 0; f < surf.n_triangles(); ++f)
        field.value[f] = tangential_trace(space, surf, u, static_cast<int>(f));
    return field;
}

double boundary_pairing(const SurfaceMesh& surf, const FaceField& a, const FaceField& b) {
    if (a.value.size() != surf.n_triangles() || b.value.size() != surf.n_triangles())
        throw std::invalid_argument("boundary_pairing: fields on different surfaces");
    const auto& rule = triangle_rule(3);
    double total = 0.0;
    for (std::size_t f = 0; f < surf.n_triangles(); ++f) {
        const Vec3& nrm = surf.normals[f];
        double face = 0.0;
        for (const auto& q : rule) {
            double bary[3] = {1.0 - q.a - q.b, q.a, q.b};
            Vec3 av = bary[0] * a.value[f][0] + bary[1] * a.value[f][1] + bary[2] * a.value[f][2];
            Vec3 bv = bary[0] * b.value[f][0] + bary[1] * b.value[f][1] + bary[2] * b.value[f][2];
            face += q.w * av.cross(nrm).dot(bv);
        }
        total += face * 2.0 * surf.areas[f];
    }
    return total;
}

double check_discrete_green(const OperatorSet& ops, const Eigen::VectorXd& u,
                            const Eigen::VectorXd& w) {
    double curl_u_w = w.dot(ops.Q * u);
    double u_curl_w = u.dot(ops.Q * w);
    double trace = u.dot(ops.T * w);
    return std::abs(curl_u_w - u_curl_w + trace);
}

void export_sparse(std::ostream& os, const Eigen::SparseMatrix<double>& A) {
    os << "sparse " << A.rows() << " " << A.cols() << " " << A.nonZeros() << "\n";
    for (int k = 0; k < A.outerSize(); ++k)
        for (Eigen::SparseMatrix<double>::InnerIterator it(A, k); it; ++it)
            os << it.row() << " " << it.col() << " " << format_double_17g(it.value()) << "\n";
}

}  // namespace maxtbc
