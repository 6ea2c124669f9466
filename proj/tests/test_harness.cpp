#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <random>

#include "doctest.h"
#include "maxtbc/harness.hpp"
#include "maxtbc/quadrature.hpp"
#include "support.hpp"

using namespace maxtbc;
using maxtbc::testing::CoupledSetup;

namespace {

template <class F>
Eigen::Vector3cd fd_curl(const F& f, const Vec3& x, double h) {
    Eigen::Vector3cd J[3];
    for (int j = 0; j < 3; ++j) {
        Vec3 e = Vec3::Unit(j);
        J[j] = (-f(x + 2.0 * h * e) + 8.0 * f(x + h * e) - 8.0 * f(x - h * e) +
                f(x - 2.0 * h * e)) /
               (12.0 * h);
    }
    return {J[1](2) - J[2](1), J[2](0) - J[0](2), J[0](1) - J[1](0)};
}

double interior_l2_error(const DgSpace& space, const Eigen::VectorXd& u,
                         const std::function<Vec3(const Vec3&)>& exact) {
    const TetMesh& mesh = space.mesh();
    const auto& rule = tet_rule(4);
    double acc = 0.0;
    for (std::size_t t = 0; t < mesh.n_tets(); ++t) {
        const auto& tet = mesh.tets[t];
        double vol = tet_volume(mesh, static_cast<int>(t));
        for (const auto& q : rule) {
            Eigen::Vector4d bary(1.0 - q.a - q.b - q.c, q.a, q.b, q.c);
            Vec3 x = bary[0] * mesh.vertices[tet[0]] + bary[1] * mesh.vertices[tet[1]] +
                     bary[2] * mesh.vertices[tet[2]] + bary[3] * mesh.vertices[tet[3]];
            acc += 6.0 * vol * q.w *
                   (space.evaluate(u, static_cast<int>(t), bary) - exact(x)).squaredNorm();
        }
    }
    return std::sqrt(acc);
}

}  // namespace

TEST_CASE("interior interpolation: linear reproduction and O(h^2) rate") {
    // Linear fields are reproduced exactly.
    {
        TetMesh mesh = build_box_mesh({1, 1, 1}, {2, 2, 2});
        DgSpace space(mesh);
        auto lin = [](const Vec3& x) {
            return Vec3(1.0 + 2.0 * x[0] - x[2], x[1] - 0.5 * x[0], 3.0 * x[2]);
        };
        Eigen::VectorXd u = interpolate_interior(space, lin);
        std::mt19937_64 rng(3);
        std::uniform_real_distribution<double> d(0.0, 1.0);
        BoxLocator loc(space, Vec3::Zero(), {1, 1, 1}, {2, 2, 2});
        for (int rep = 0; rep < 20; ++rep) {
            Vec3 x(d(rng), d(rng), d(rng));
            CHECK((loc.evaluate(u, x) - lin(x)).norm() < 1e-13);
        }
    }
    // F = (sin x1, 0, 0): interpolation error contracts at second order.
    auto smooth = [](const Vec3& x) { return Vec3(std::sin(x[0]), 0.0, 0.0); };
    std::vector<double> errs;
    for (int div : {1, 2, 4}) {
        TetMesh mesh = build_box_mesh({1, 1, 1}, {div, div, div});
        DgSpace space(mesh);
        errs.push_back(interior_l2_error(space, interpolate_interior(space, smooth), smooth));
    }
    double r1 = errs[0] / errs[1], r2 = errs[1] / errs[2];
    CHECK(r1 > 3.0);
    CHECK(r2 > 3.2);  // approaching 4 = 2^order
}

TEST_CASE("interpolation commutes with the tangential trace at boundary nodes") {
    TetMesh mesh = build_box_mesh({1, 1, 1}, {2, 2, 2});
    DgSpace space(mesh);
    SurfaceMesh surf = extract_boundary(mesh);
    BoundarySpace bspace(surf);
    auto F = [](const Vec3& x) {
        return Vec3(std::sin(x[0] + x[1]), x[2] * x[2], std::cos(x[1]));
    };
    Eigen::VectorXd u = interpolate_interior(space, F);
    // gamma_T of the interior interpolant, facewise, at the 3 face vertices.
    FaceField traced = tangential_trace(space, surf, u);
    // Boundary interpolation of gamma F crossed with nu facewise.
    for (std::size_t f = 0; f < surf.n_triangles(); ++f) {
        for (int lv = 0; lv < 3; ++lv) {
            Vec3 expected = F(surf.nodes[surf.triangles[f][lv]]).cross(surf.normals[f]);
            CHECK((traced.value[f][lv] - expected).norm() == 0.0);
        }
    }
}

TEST_CASE("boundary interpolation: representability and the normal field") {
    SurfaceMesh surf = extract_boundary(build_box_mesh({1, 1, 1}, {2, 2, 2}));
    BoundarySpace bspace(surf);

    // A constant field is exactly representable after the rank filtering.
    auto c = interpolate_boundary(bspace, [](const Vec3&) { return Vec3(0.3, -0.7, 1.1); });
    CHECK(c.residual < 1e-12);
    CHECK_FALSE(c.warning);

    // chi = nu is normal on every flat face patch; the target chi x nu is zero
    // on faces and the projection must vanish. Use the +z face normal.
    auto n = interpolate_boundary(bspace, [&surf](const Vec3& x) {
        // outward normal of the cube at x (vertex values on edges pick one face)
        Vec3 nu = Vec3::Zero();
        for (int k = 0; k < 3; ++k) {
            if (x[k] < 1e-12) nu[k] = -1.0;
            if (x[k] > 1.0 - 1e-12) nu[k] = 1.0;
        }
        return nu;
    });
    // On edge/corner nodes chi is not parallel to every incident face normal,
    // so only the strictly flat-interior statement holds: test one face-center
    // node by building the field supported there.
    int center_node = -1;
    for (std::size_t m = 0; m < surf.n_nodes(); ++m)
        if ((surf.nodes[m] - Vec3(0.5, 0.5, 1.0)).norm() < 1e-12)
            center_node = static_cast<int>(m);
    REQUIRE(center_node >= 0);
    auto hat_normal = interpolate_boundary(bspace, [&](const Vec3& x) {
        return (x - surf.nodes[center_node]).norm() < 1e-12 ? Vec3(0, 0, 1) : Vec3::Zero();
    });
    CHECK(hat_normal.coeffs.lpNorm<Eigen::Infinity>() < 1e-12);
    (void)n;

    // Smooth tangential field: L2 interpolation error decreases ~ h^{1.5} or
    // better in the surrogate norm; check contraction over refinements.
    auto chi = [](const Vec3& x) {
        return Vec3(std::sin(x[1] + x[2]), std::cos(x[0]), x[0] * x[1]);
    };
    double prev = -1.0;
    for (int div : {1, 2, 4}) {
        SurfaceMesh s = extract_boundary(build_box_mesh({1, 1, 1}, {div, div, div}));
        BoundarySpace b(s);
        auto r = interpolate_boundary(b, chi);
        // L2 distance between the nodal target and its projection is the
        // reported residual; it must vanish (representable) on every level.
        CHECK(r.residual < 1e-12);
        // Compare against the finer interpolant through a fixed probe field:
        // evaluate the interpolant at face midpoints against chi x nu.
        double err = 0.0;
        for (std::size_t f = 0; f < s.n_triangles(); ++f) {
            Vec3 centroid = (s.nodes[s.triangles[f][0]] + s.nodes[s.triangles[f][1]] +
                             s.nodes[s.triangles[f][2]]) /
                            3.0;
            Vec3 exact = chi(centroid).cross(s.normals[f]);
            Vec3 got = b.evaluate(r.coeffs, static_cast<int>(f), 1.0 / 3.0, 1.0 / 3.0);
            err = std::max(err, (got - exact).norm());
        }
        if (prev > 0.0) CHECK(err < 0.6 * prev);
        prev = err;
    }
}

TEST_CASE("dipole oracle: zero polarization, PDE residual, equivariance") {
    CoupledSetup cube(2);
    DipoleField dipole;
    dipole.source = Vec3(3.0, 0.0, 0.0);
    dipole.polarization = Vec3(0.0, 0.0, 1.0);
    dipole.s = ComplexFrequency{Complex(2.0, 0.0)};

    // p = 0 gives zero traces.
    DipoleField zerop = dipole;
    zerop.polarization = Vec3::Zero();
    auto tz = dipole_trace_data(zerop, cube.mesh, *cube.bspace);
    CHECK(tz.phi.cwiseAbs().maxCoeff() == 0.0);
    CHECK(tz.psi.cwiseAbs().maxCoeff() == 0.0);

    // The analytic field satisfies eps mu s^2 u + curl curl u = 0 at interior
    // points (4th-order finite differences on the closed-form field).
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> d(0.15, 0.85);
    for (int rep = 0; rep < 5; ++rep) {
        Vec3 x(d(rng), d(rng), d(rng));
        double dist = (x - dipole.source).norm();
        auto f = [&](const Vec3& y) { return dipole.field(y); };
        auto curl1 = [&](const Vec3& y) { return fd_curl(f, y, 1e-3 * dist); };
        Eigen::Vector3cd cc = fd_curl(curl1, x, 1e-3 * dist);
        Eigen::Vector3cd res =
            dipole.material.eps_mu() * dipole.s.s * dipole.s.s * dipole.field(x) + cc;
        CHECK(res.norm() < 1e-7 * (dipole.field(x).norm() * std::norm(dipole.s.s) + cc.norm()));
        // The closed-form curl matches finite differences too.
        CHECK((fd_curl(f, x, 1e-3 * dist) - dipole.curl_field(x)).norm() <
              1e-8 * dipole.curl_field(x).norm());
    }

    // Source inside the domain is rejected.
    DipoleField inside = dipole;
    inside.source = Vec3(0.5, 0.5, 0.5);
    CHECK_THROWS_AS(dipole_trace_data(inside, cube.mesh, *cube.bspace), std::invalid_argument);

    // Equivariance: rotating the whole configuration rotates the facewise
    // trace targets.
    Eigen::Matrix3d R;
    R = Eigen::AngleAxisd(0.7, Vec3(1.0, 2.0, 0.5).normalized()).toRotationMatrix();
    TetMesh rotated = cube.mesh;
    for (auto& v : rotated.vertices) v = R * v;
    SurfaceMesh rsurf = extract_boundary(rotated);
    DipoleField rdipole = dipole;
    rdipole.source = R * dipole.source;
    rdipole.polarization = R * dipole.polarization;
    double scale = 0.0, worst = 0.0;
    for (std::size_t f = 0; f < cube.surf.n_triangles(); ++f) {
        for (int lv = 0; lv < 3; ++lv) {
            Vec3 x = cube.surf.nodes[cube.surf.triangles[f][lv]];
            Eigen::Vector3cd orig = dipole.field(x).cross(cube.surf.normals[f].cast<Complex>());
            Eigen::Vector3cd rot =
                rdipole.field(R * x).cross(rsurf.normals[f].cast<Complex>());
            Eigen::Vector3cd back = (R.transpose() * rot.real()).cast<Complex>() +
                                    Complex(0, 1) * (R.transpose() * rot.imag()).cast<Complex>();
            worst = std::max(worst, (back - orig).norm());
            scale = std::max(scale, orig.norm());
        }
    }
    CHECK(worst < 1e-10 * scale);
}

TEST_CASE("Calderon projector residual: refinement decrease and scale invariance") {
    DipoleField dipole;
    dipole.source = Vec3(3.0, 0.0, 0.0);
    dipole.polarization = Vec3(0.0, 0.0, 1.0);
    dipole.s = ComplexFrequency{Complex(2.0, 0.0)};
    QuadratureConfig quad;

    double prev = -1.0;
    for (int div : {1, 2}) {
        TetMesh mesh = build_box_mesh({1, 1, 1}, {div, div, div});
        SurfaceMesh surf = extract_boundary(mesh);
        BoundarySpace bspace(surf);
        double res = calderon_projector_residual(dipole.s, bspace, quad, dipole, mesh);
        CHECK(res < 1.0);
        if (prev > 0.0) CHECK(res < prev / 1.5);
        prev = res;
    }

    // Linearity: scaling p leaves the relative residual unchanged.
    TetMesh mesh = build_box_mesh({1, 1, 1}, {2, 2, 2});
    SurfaceMesh surf = extract_boundary(mesh);
    BoundarySpace bspace(surf);
    double r1 = calderon_projector_residual(dipole.s, bspace, quad, dipole, mesh);
    DipoleField scaled = dipole;
    scaled.polarization *= 2.0;
    double r2 = calderon_projector_residual(dipole.s, bspace, quad, scaled, mesh);
    CHECK(r1 == doctest::Approx(r2).epsilon(1e-12));

    // Zero dipole: residual is exactly zero.
    DipoleField nil = dipole;
    nil.polarization = Vec3::Zero();
    CHECK(calderon_projector_residual(nil.s, bspace, quad, nil, mesh) == 0.0);
}

TEST_CASE("transparency: causality guard and the reflective control") {
    TransparencyConfig cfg;
    cfg.divisions = 2;
    cfg.t_obs = 0.6;
    cfg.pulse_radius = 0.2;
    TransparencyResult coupled = transparency_test(cfg);
    CHECK(coupled.first_contact == doctest::Approx(0.3));
    // At this coarse h every tet touches the pulse vertex, so the discrete
    // contact can be immediate; the pre-window check is still exact.
    CHECK(coupled.first_discrete_contact >= 0.0);
    CHECK(coupled.pre_contact_max < 1e-10);
    CHECK(coupled.window_error < 0.5);

    TransparencyConfig refl = cfg;
    refl.reflective = true;
    TransparencyResult control = transparency_test(refl);
    CHECK(control.pre_contact_max < 1e-10);
    CHECK(control.window_error > coupled.window_error);
    MESSAGE("coupled window error = ", coupled.window_error,
            ", reflective = ", control.window_error);

    TransparencyConfig bad = cfg;
    bad.t_obs = 1.5;
    CHECK_THROWS_AS(transparency_test(bad), std::invalid_argument);
}

TEST_CASE("convergence study input validation") {
    ConvergenceConfig cfg;
    cfg.kind = "nope";
    CHECK_THROWS_AS(convergence_study(cfg), std::invalid_argument);
    cfg.kind = "space";
    cfg.space_divisions = {1, 1, 2};
    CHECK_THROWS_AS(convergence_study(cfg), std::invalid_argument);
    cfg.kind = "time";
    cfg.time_levels = 2;
    CHECK_THROWS_AS(convergence_study(cfg), std::invalid_argument);
}

TEST_CASE("coercivity report aggregates nonnegative minima") {
    CoupledSetup cube(1);
    CoercivityConfig cfg;
    cfg.trials = 40;
    cfg.sequences = 4;
    cfg.sequence_length = 16;
    CoercivityReport rep = coercivity_report(*cube.bspace, cfg);
    CHECK(rep.laplace.size() == cfg.s_samples.size());
    CHECK(rep.min_rayleigh > -1e-8);
    CHECK(rep.min_lhs_normalized > -1e-8);
    // m(s) values from the formula min{1, |s|^2 eps mu} Re s.
    CHECK(rep.laplace[1].m_s == doctest::Approx(1.0));       // s = 1
    CHECK(rep.laplace[0].m_s == doctest::Approx(0.001));     // s = 0.1: 0.01 * 0.1
}
