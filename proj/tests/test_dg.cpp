#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <Eigen/Dense>
#include <random>
#include <sstream>

#include "doctest.h"
#include "maxtbc/dg.hpp"
#include "maxtbc/mesh.hpp"
#include "maxtbc/quadrature.hpp"

using namespace maxtbc;

namespace {

Eigen::VectorXd interpolate(const DgSpace& space, const std::function<Vec3(const Vec3&)>& f) {
    const TetMesh& mesh = space.mesh();
    Eigen::VectorXd u(space.n_dofs());
    for (std::size_t t = 0; t < mesh.n_tets(); ++t)
        for (int a = 0; a < 4; ++a) {
            Vec3 v = f(mesh.vertices[mesh.tets[t][a]]);
            for (int c = 0; c < 3; ++c) u[DgSpace::dof(static_cast<int>(t), c, a)] = v[c];
        }
    return u;
}

Eigen::VectorXd random_vector(std::size_t n, unsigned seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    Eigen::VectorXd v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = dist(rng);
    return v;
}

}  // namespace

TEST_CASE("mass block: exact P1 integrals, partition of unity, volume scaling") {
    TetMesh mesh = build_box_mesh({1, 1, 1}, {1, 1, 1});
    DgSpace space(mesh);
    for (std::size_t t = 0; t < mesh.n_tets(); ++t) {
        double V = tet_volume(mesh, static_cast<int>(t));
        auto B = space.mass_block(static_cast<int>(t));
        for (int c = 0; c < 3; ++c)
            for (int a = 0; a < 4; ++a) {
                CHECK(B(4 * c + a, 4 * c + a) == doctest::Approx(V / 10.0).epsilon(1e-14));
                double rowsum = B.row(4 * c + a).sum();
                CHECK(rowsum == doctest::Approx(V / 4.0).epsilon(1e-14));
                for (int b = 0; b < 4; ++b)
                    if (a != b) CHECK(B(4 * c + a, 4 * c + b) == doctest::Approx(V / 20.0));
            }
    }

    // Scaling all vertices by 2 scales M by 8.
    TetMesh big = mesh;
    for (auto& v : big.vertices) v *= 2.0;
    big.boundary_faces = mesh.boundary_faces;
    DgSpace big_space(big);
    auto B0 = space.mass_block(0), B1 = big_space.mass_block(0);
    CHECK((B1 - 8.0 * B0).norm() < 1e-13 * B1.norm());
}

TEST_CASE("mass applications match the materialized matrix; blocks are SPD") {
    TetMesh mesh = build_box_mesh({1.3, 0.8, 1.1}, {2, 1, 2});
    DgSpace space(mesh);
    auto M = space.mass_matrix();
    Eigen::VectorXd u = random_vector(space.n_dofs(), 7);
    Eigen::VectorXd Mu = space.apply_mass(u);
    CHECK((Mu - M * u).norm() < 1e-12 * Mu.norm());
    Eigen::VectorXd back = space.apply_mass_inverse(Mu);
    CHECK((back - u).norm() < 1e-12 * u.norm());
    Eigen::VectorXd half = space.apply_mass_inv_sqrt(u);
    Eigen::VectorXd again = space.apply_mass_inv_sqrt(half);
    CHECK((again - space.apply_mass_inverse(u)).norm() < 1e-12 * again.norm());
    CHECK(space.mass_norm_sq(u) == doctest::Approx(u.dot(Mu)).epsilon(1e-12));

    // All 12x12 block Cholesky factorizations succeed.
    for (std::size_t t = 0; t < mesh.n_tets(); ++t) {
        Eigen::LLT<Eigen::Matrix<double, 12, 12>> llt(space.mass_block(static_cast<int>(t)));
        CHECK(llt.info() == Eigen::Success);
    }
}

TEST_CASE("single-tet curl matrix equals the symbolic per-element oracle") {
    // One tet, no interior faces: D = -1/2 (A + A^T), A(j,j') = (curl b_j', b_j)_K.
    TetMesh mesh;
    mesh.vertices = {{0, 0, 0}, {1.1, 0, 0}, {0.2, 0.9, 0}, {0.1, 0.3, 1.2}};
    mesh.tets = {{0, 1, 2, 3}};
    mesh.boundary_faces = {{{1, 2, 3}, 0}, {{0, 3, 2}, 0}, {{0, 1, 3}, 0}, {{0, 2, 1}, 0}};
    DgSpace space(mesh);
    double V = tet_volume(mesh, 0);

    // Independent gradients straight from the vertex coordinates.
    Eigen::Matrix3d J;
    for (int k = 0; k < 3; ++k) J.col(k) = mesh.vertices[k + 1] - mesh.vertices[0];
    Eigen::Matrix3d Jit = J.inverse().transpose();
    std::array<Vec3, 4> g;
    g[1] = Jit.col(0);
    g[2] = Jit.col(1);
    g[3] = Jit.col(2);
    g[0] = -(g[1] + g[2] + g[3]);

    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(12, 12);
    for (int ap = 0; ap < 4; ++ap)
        for (int cp = 0; cp < 3; ++cp) {
            Vec3 curl = g[ap].cross(Vec3::Unit(cp));
            for (int a = 0; a < 4; ++a)
                for (int c = 0; c < 3; ++c) A(4 * c + a, 4 * cp + ap) = curl[c] * V / 4.0;
        }
    Eigen::MatrixXd Dexp = -0.5 * (A + A.transpose());
    Eigen::MatrixXd D = assemble_curl_matrix(space);
    CHECK((Eigen::MatrixXd(D) - Dexp).norm() < 1e-13 * (1.0 + Dexp.norm()));
}

TEST_CASE("D is exactly symmetric") {
    TetMesh mesh = build_box_mesh({1, 1, 1}, {2, 2, 2});
    DgSpace space(mesh);
    Eigen::SparseMatrix<double> D = assemble_curl_matrix(space);
    Eigen::SparseMatrix<double> Dt = D.transpose();
    double asym = 0.0;
    Eigen::SparseMatrix<double> diff = D - Dt;
    for (int k = 0; k < diff.outerSize(); ++k)
        for (Eigen::SparseMatrix<double>::InnerIterator it(diff, k); it; ++it)
            asym = std::max(asym, std::abs(it.value()));
    CHECK(asym == 0.0);
}

TEST_CASE("discrete curl: constants are curl-free; exact linear fields") {
    TetMesh mesh = build_box_mesh({1, 1, 1}, {2, 2, 2});
    DgSpace space(mesh);
    auto Q = assemble_curl_form(space);

    Eigen::VectorXd c = interpolate(space, [](const Vec3&) { return Vec3(0.3, -1.1, 2.0); });
    CHECK((Q * c).lpNorm<Eigen::Infinity>() < 1e-12);

    // u = (0,0,x): continuous, linear, curl = (0,-1,0). The load (curl_h u, .)
    // must equal M applied to that constant.
    Eigen::VectorXd u = interpolate(space, [](const Vec3& x) { return Vec3(0.0, 0.0, x[0]); });
    Eigen::VectorXd expected =
        space.apply_mass(interpolate(space, [](const Vec3&) { return Vec3(0, -1, 0); }));
    CHECK(((Q * u) - expected).lpNorm<Eigen::Infinity>() < 1e-12);
    // and u = (z,0,0) has curl (0,1,0)
    Eigen::VectorXd u2 = interpolate(space, [](const Vec3& x) { return Vec3(x[2], 0.0, 0.0); });
    Eigen::VectorXd expected2 =
        space.apply_mass(interpolate(space, [](const Vec3&) { return Vec3(0, 1, 0); }));
    CHECK(((Q * u2) - expected2).lpNorm<Eigen::Infinity>() < 1e-12);

    CHECK_THROWS_AS(apply_discrete_curl(Q, Eigen::VectorXd::Zero(5)), std::invalid_argument);
}

TEST_CASE("discrete Green identity with hand-computed linear-field values") {
    // u = (0,z,0), w = (z,0,0) on the unit cube: (curl_h u, w) = -1/2,
    // (u, curl_h w) = 1/2, [gamma_T u, gamma_T w] = 1, so
    // (curl_h u,w) - (u,curl_h w) = -[gamma_T u,gamma_T w].
    TetMesh mesh = build_box_mesh({1, 1, 1}, {2, 2, 2});
    DgSpace space(mesh);
    SurfaceMesh surf = extract_boundary(mesh);
    BoundarySpace bspace(surf);
    OperatorSet ops = assemble_operators(space, bspace, {1.0, 1.0});

    Eigen::VectorXd u = interpolate(space, [](const Vec3& x) { return Vec3(0.0, x[2], 0.0); });
    Eigen::VectorXd w = interpolate(space, [](const Vec3& x) { return Vec3(x[2], 0.0, 0.0); });
    CHECK(w.dot(ops.Q * u) == doctest::Approx(-0.5).epsilon(1e-12));
    CHECK(u.dot(ops.Q * w) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(u.dot(ops.T * w) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(check_discrete_green(ops, u, w) < 1e-12);

    // Pairing via the quadrature path agrees with the T-matrix path.
    FaceField gu = tangential_trace(space, surf, u);
    FaceField gw = tangential_trace(space, surf, w);
    CHECK(boundary_pairing(surf, gu, gw) == doctest::Approx(u.dot(ops.T * w)).epsilon(1e-12));
}

TEST_CASE("discrete Green identity for random discontinuous vectors") {
    TetMesh mesh = build_box_mesh({1, 1, 1}, {2, 2, 2});
    DgSpace space(mesh);
    SurfaceMesh surf = extract_boundary(mesh);
    BoundarySpace bspace(surf);
    OperatorSet ops = assemble_operators(space, bspace, {1.0, 1.0});
    for (unsigned seed = 0; seed < 20; ++seed) {
        Eigen::VectorXd u = random_vector(space.n_dofs(), 100 + seed);
        Eigen::VectorXd w = random_vector(space.n_dofs(), 200 + seed);
        double scale = u.norm() * w.norm();
        CHECK(check_discrete_green(ops, u, w) < 1e-10 * scale);
    }
    // u = w: both sides vanish by anti-symmetry.
    Eigen::VectorXd u = random_vector(space.n_dofs(), 42);
    CHECK(check_discrete_green(ops, u, u) < 1e-12 * u.squaredNorm());
}

TEST_CASE("curl bilinear form approaches analytic integrals for smooth fields") {
    // u = (sin y,0,0), w = (0,0,xy):
    //   (curl u, w) = -1/2 (sin 1 + cos 1 - 1),  (u, curl w) = 1/2 (1 - cos 1),
    // so 1/2 (curl u,w) + 1/2 (u,curl w) = (1 - cos 1)/4 - (sin 1 + cos 1 - 1)/4.
    const double exact =
        0.25 * (1.0 - std::cos(1.0)) - 0.25 * (std::sin(1.0) + std::cos(1.0) - 1.0);
    double prev_err = -1.0;
    for (int div : {2, 4}) {
        TetMesh mesh = build_box_mesh({1, 1, 1}, {div, div, div});
        DgSpace space(mesh);
        Eigen::SparseMatrix<double> D = assemble_curl_matrix(space);
        Eigen::VectorXd u =
            interpolate(space, [](const Vec3& x) { return Vec3(std::sin(x[1]), 0.0, 0.0); });
        Eigen::VectorXd w =
            interpolate(space, [](const Vec3& x) { return Vec3(0.0, 0.0, x[0] * x[1]); });
        double err = std::abs(-u.dot(D * w) - exact);
        CHECK(err < 0.1 / div);  // at least O(h) agreement
        if (prev_err >= 0.0) CHECK(err < prev_err);
        prev_err = err;
    }
}

TEST_CASE("tangential trace basics") {
    TetMesh mesh = build_box_mesh({1, 1, 1}, {2, 2, 2});
    DgSpace space(mesh);
    SurfaceMesh surf = extract_boundary(mesh);

    // Constant normal field has zero tangential trace; constant tangent t maps
    // to t x nu with the same length.
    for (int tri : {0, 5, 17}) {
        Vec3 nu = surf.normals[tri];
        Eigen::VectorXd un = interpolate(space, [&](const Vec3&) { return nu; });
        auto tr = tangential_trace(space, surf, un, tri);
        for (const auto& v : tr) CHECK(v.norm() < 1e-14);

        Vec3 t = nu.unitOrthogonal();
        Eigen::VectorXd ut = interpolate(space, [&](const Vec3&) { return t; });
        auto trt = tangential_trace(space, surf, ut, tri);
        for (const auto& v : trt) {
            CHECK((v - t.cross(nu)).norm() < 1e-14);
            CHECK(v.norm() == doctest::Approx(t.norm()).epsilon(1e-14));
        }
    }

    // Linear field: the midpoint value equals the vertex average.
    Eigen::VectorXd ul = interpolate(space, [](const Vec3& x) {
        return Vec3(0.2 * x[0] - x[2], x[1] + x[0], 0.5 * x[2] + x[1]);
    });
    auto tr = tangential_trace(space, surf, ul, 3);
    int K = surf.tri_owner[3];
    const auto& t3 = surf.triangles[3];
    Vec3 mid01 = 0.5 * (surf.nodes[t3[0]] + surf.nodes[t3[1]]);
    // Evaluate the owner-element linear field at the edge midpoint directly.
    int a0 = space.local_vertex(K, surf.node_map[t3[0]]);
    int a1 = space.local_vertex(K, surf.node_map[t3[1]]);
    Vec3 v0(ul[DgSpace::dof(K, 0, a0)], ul[DgSpace::dof(K, 1, a0)], ul[DgSpace::dof(K, 2, a0)]);
    Vec3 v1(ul[DgSpace::dof(K, 0, a1)], ul[DgSpace::dof(K, 1, a1)], ul[DgSpace::dof(K, 2, a1)]);
    Vec3 mid_trace = (0.5 * (v0 + v1)).cross(surf.normals[3]);
    CHECK((0.5 * (tr[0] + tr[1]) - mid_trace).norm() < 1e-14);
    (void)mid01;
    CHECK_THROWS_AS(tangential_trace(space, surf, ul, -1), std::invalid_argument);
    CHECK_THROWS_AS(tangential_trace(space, surf, ul, 9999), std::invalid_argument);
}

TEST_CASE("boundary pairing: anti-symmetry and a hand-integrated value") {
    TetMesh mesh = build_box_mesh({1, 1, 1}, {2, 2, 2});
    SurfaceMesh surf = extract_boundary(mesh);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    auto random_field = [&]() {
        FaceField f;
        f.value.resize(surf.n_triangles());
        for (auto& tv : f.value)
            for (auto& v : tv) v = Vec3(dist(rng), dist(rng), dist(rng));
        return f;
    };
    FaceField a = random_field(), b = random_field();
    double ab = boundary_pairing(surf, a, b);
    double ba = boundary_pairing(surf, b, a);
    CHECK(std::abs(ab + ba) < 1e-12 * (std::abs(ab) + 1.0));
    CHECK(std::abs(boundary_pairing(surf, a, a)) < 1e-12);

    // a = e1, b = e2 supported on the top face only: integral of (e1 x e3).e2
    // = -1 times the face area (1.0).
    FaceField fa, fb;
    fa.value.assign(surf.n_triangles(), {Vec3::Zero(), Vec3::Zero(), Vec3::Zero()});
    fb.value.assign(surf.n_triangles(), {Vec3::Zero(), Vec3::Zero(), Vec3::Zero()});
    for (std::size_t f = 0; f < surf.n_triangles(); ++f)
        if ((surf.normals[f] - Vec3(0, 0, 1)).norm() < 1e-12) {
            fa.value[f] = {Vec3(1, 0, 0), Vec3(1, 0, 0), Vec3(1, 0, 0)};
            fb.value[f] = {Vec3(0, 1, 0), Vec3(0, 1, 0), Vec3(0, 1, 0)};
        }
    CHECK(boundary_pairing(surf, fa, fb) == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("boundary space: rank filtering on the cube") {
    SurfaceMesh surf = extract_boundary(build_box_mesh({1, 1, 1}, {2, 2, 2}));
    BoundarySpace bspace(surf);
    CHECK(bspace.n_candidates() == 78);  // 26 nodes
    // 6 face-center nodes are flat (rank 2), 12 edge-mid + 8 corner nodes have
    // two or three distinct incident normals (rank 3).
    CHECK(bspace.dim() == 72);
    // Retained Gram must be well conditioned (no numerically null member).
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(bspace.gram());
    CHECK(es.eigenvalues().minCoeff() > 1e-10 * es.eigenvalues().maxCoeff());
}

TEST_CASE("coupling matrix C1") {
    TetMesh mesh = build_box_mesh({1, 1, 1}, {2, 2, 2});
    DgSpace space(mesh);
    SurfaceMesh surf = extract_boundary(mesh);
    BoundarySpace bspace(surf);
    MaterialParams mat{1.0, 1.0};
    OperatorSet ops = assemble_operators(space, bspace, mat);

    // mu = 1: C0 == C1 entrywise.
    CHECK((ops.C0 - ops.C1).norm() == 0.0);
    MaterialParams mat2{1.0, 2.0};
    OperatorSet ops2 = assemble_operators(space, bspace, mat2);
    CHECK((Eigen::MatrixXd(ops2.C0) * 2.0 - Eigen::MatrixXd(ops2.C1)).norm() < 1e-14);

    // Rows of dofs belonging to interior tets (no boundary face) vanish.
    Eigen::MatrixXd C1 = Eigen::MatrixXd(ops.C1);
    std::vector<bool> tet_on_boundary(mesh.n_tets(), false);
    for (const auto& bf : mesh.boundary_faces) tet_on_boundary[bf.owner] = true;
    for (std::size_t t = 0; t < mesh.n_tets(); ++t)
        if (!tet_on_boundary[t])
            for (int l = 0; l < 12; ++l) CHECK(C1.row(12 * t + l).norm() == 0.0);

    // v^T C1 c equals 1/2 the pairing of the corresponding functions.
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (int rep = 0; rep < 5; ++rep) {
        Eigen::VectorXd v(space.n_dofs()), c(bspace.dim());
        for (int i = 0; i < v.size(); ++i) v[i] = dist(rng);
        for (int i = 0; i < c.size(); ++i) c[i] = dist(rng);
        FaceField bf;
        bf.value.resize(surf.n_triangles());
        for (std::size_t f = 0; f < surf.n_triangles(); ++f) {
            bf.value[f][0] = bspace.evaluate(c, static_cast<int>(f), 0.0, 0.0);
            bf.value[f][1] = bspace.evaluate(c, static_cast<int>(f), 1.0, 0.0);
            bf.value[f][2] = bspace.evaluate(c, static_cast<int>(f), 0.0, 1.0);
        }
        FaceField gv = tangential_trace(space, surf, v);
        double lhs = v.dot(ops.C1 * c);
        double rhs = 0.5 * boundary_pairing(surf, bf, gv);
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-10));
    }
}

TEST_CASE("single-tet coupling entries match an independent quadrature oracle") {
    TetMesh mesh;
    mesh.vertices = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    mesh.tets = {{0, 1, 2, 3}};
    mesh.boundary_faces = {{{1, 2, 3}, 0}, {{0, 3, 2}, 0}, {{0, 1, 3}, 0}, {{0, 2, 1}, 0}};
    DgSpace space(mesh);
    SurfaceMesh surf = extract_boundary(mesh);
    BoundarySpace bspace(surf);
    OperatorSet ops = assemble_operators(space, bspace, {1.0, 1.0});
    Eigen::MatrixXd C1 = Eigen::MatrixXd(ops.C1);

    // Direct 3-point-rule evaluation of 1/2 [b_k, gamma_T b_j].
    const auto& rule = triangle_rule(3);
    Eigen::MatrixXd ref = Eigen::MatrixXd::Zero(space.n_dofs(), bspace.dim());
    for (std::size_t f = 0; f < surf.n_triangles(); ++f) {
        int K = surf.tri_owner[f];
        Vec3 nu = surf.normals[f];
        const auto& tri = surf.triangles[f];
        for (const auto& q : rule) {
            double bary[3] = {1.0 - q.a - q.b, q.a, q.b};
            double w = q.w * 2.0 * surf.areas[f];
            for (int l2 = 0; l2 < 3; ++l2)
                for (int i = 0; i < 3; ++i) {
                    int k = bspace.retained_index(3 * tri[l2] + i);
                    if (k < 0) continue;
                    Vec3 bk = bary[l2] * Vec3::Unit(i).cross(nu);
                    Vec3 bk_x_nu = bk.cross(nu);
                    for (int l1 = 0; l1 < 3; ++l1) {
                        int a = space.local_vertex(K, surf.node_map[tri[l1]]);
                        for (int c = 0; c < 3; ++c) {
                            // gamma_T b_j = (N_a e_c) x nu
                            Vec3 gt = bary[l1] * Vec3::Unit(c).cross(nu);
                            ref(DgSpace::dof(K, c, a), k) += 0.5 * w * bk_x_nu.dot(gt);
                        }
                    }
                }
        }
    }
    CHECK((C1 - ref).lpNorm<Eigen::Infinity>() < 1e-13);
}

TEST_CASE("sparse export format") {
    TetMesh mesh = build_box_mesh({1, 1, 1}, {1, 1, 1});
    DgSpace space(mesh);
    auto D = assemble_curl_matrix(space);
    std::ostringstream os;
    export_sparse(os, D);
    std::istringstream is(os.str());
    std::string tag;
    long r, c, nnz;
    is >> tag >> r >> c >> nnz;
    CHECK(tag == "sparse");
    CHECK(r == static_cast<long>(space.n_dofs()));
    CHECK(c == static_cast<long>(space.n_dofs()));
    CHECK(nnz == D.nonZeros());
}
