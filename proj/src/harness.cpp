#include "maxtbc/harness.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <stdexcept>

#include "maxtbc/quadrature.hpp"
#include "maxtbc/util.hpp"

namespace maxtbc {

Eigen::VectorXd interpolate_interior(const DgSpace& space,
                                     const std::function<Vec3(const Vec3&)>& field) {
    const TetMesh& mesh = space.mesh();
    Eigen::VectorXd u(space.n_dofs());
    for (std::size_t t = 0; t < mesh.n_tets(); ++t)
        for (int a = 0; a < 4; ++a) {
            Vec3 v = field(mesh.vertices[mesh.tets[t][a]]);
            for (int c = 0; c < 3; ++c) u[DgSpace::dof(static_cast<int>(t), c, a)] = v[c];
        }
    return u;
}

BoundaryInterpolant interpolate_boundary(const BoundarySpace& bspace,
                                         const std::function<Vec3(const Vec3&)>& chi) {
    const SurfaceMesh& surf = bspace.surface();
    const int dim = bspace.dim();

    std::vector<Vec3> chi_at(surf.n_nodes());
    for (std::size_t m = 0; m < surf.n_nodes(); ++m) chi_at[m] = chi(surf.nodes[m]);

    // Least squares against the target T|_f = sum_lv N_lv (chi(lv) x nu_f):
    // rhs_k = (b_k, T), plus |T|^2 for the residual.
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(dim);
    double target_sq = 0.0;
    for (std::size_t f = 0; f < surf.n_triangles(); ++f) {
        const auto& tri = surf.triangles[f];
        const Vec3& nu = surf.normals[f];
        double A = surf.areas[f];
        Vec3 tv[3];
        for (int lv = 0; lv < 3; ++lv) tv[lv] = chi_at[tri[lv]].cross(nu);
        for (int l1 = 0; l1 < 3; ++l1)
            for (int l2 = 0; l2 < 3; ++l2) {
                double mass = A * (l1 == l2 ? 2.0 : 1.0) / 12.0;
                target_sq += mass * tv[l1].dot(tv[l2]);
                for (int i = 0; i < 3; ++i) {
                    int k = bspace.retained_index(3 * tri[l1] + i);
                    if (k < 0) continue;
                    double val = bspace.candidate_tangent(static_cast<int>(f), i).dot(tv[l2]);
                    if (val != 0.0) rhs[k] += mass * val;
                }
            }
    }

    BoundaryInterpolant out;
    Eigen::LLT<Eigen::MatrixXd> llt(bspace.gram());
    out.coeffs = llt.solve(rhs);

    // Direct quadrature of |T - projection|^2; the algebraic form
    // |T|^2 - rhs.c cancels catastrophically for representable targets.
    const auto& rule = triangle_rule(3);
    double res_sq = 0.0;
    for (std::size_t f = 0; f < surf.n_triangles(); ++f) {
        const auto& tri = surf.triangles[f];
        const Vec3& nu = surf.normals[f];
        Vec3 tv[3];
        for (int lv = 0; lv < 3; ++lv) tv[lv] = chi_at[tri[lv]].cross(nu);
        for (const auto& q : rule) {
            double bary[3] = {1.0 - q.a - q.b, q.a, q.b};
            Vec3 target = bary[0] * tv[0] + bary[1] * tv[1] + bary[2] * tv[2];
            Vec3 proj = bspace.evaluate(out.coeffs, static_cast<int>(f), q.a, q.b);
            res_sq += q.w * 2.0 * surf.areas[f] * (target - proj).squaredNorm();
        }
    }
    out.residual = std::sqrt(res_sq) / std::max(std::sqrt(std::max(target_sq, 0.0)), 1e-300);
    if (target_sq == 0.0) out.residual = 0.0;
    out.warning = out.residual > 1e-8;
    return out;
}

Eigen::MatrixXd pairing_matrix(const BoundarySpace& bspace) {
    const SurfaceMesh& surf = bspace.surface();
    const int dim = bspace.dim();
    Eigen::MatrixXd P = Eigen::MatrixXd::Zero(dim, dim);
    for (std::size_t f = 0; f < surf.n_triangles(); ++f) {
        const auto& tri = surf.triangles[f];
        const Vec3& nu = surf.normals[f];
        double A = surf.areas[f];
        for (int l1 = 0; l1 < 3; ++l1)
            for (int l2 = 0; l2 < 3; ++l2) {
                double mass = A * (l1 == l2 ? 2.0 : 1.0) / 12.0;
                for (int i = 0; i < 3; ++i) {
                    int k = bspace.retained_index(3 * tri[l1] + i);
                    if (k < 0) continue;
                    Vec3 rot = bspace.candidate_tangent(static_cast<int>(f), i).cross(nu);
                    for (int j = 0; j < 3; ++j) {
                        int l = bspace.retained_index(3 * tri[l2] + j);
                        if (l < 0) continue;
                        double val = rot.dot(bspace.candidate_tangent(static_cast<int>(f), j));
                        if (val != 0.0) P(k, l) += mass * val;
                    }
                }
            }
    }
    return P;
}

BoxLocator::BoxLocator(const DgSpace& space, const Vec3& origin, const Vec3& extents,
                       const std::array<int, 3>& divisions)
    : space_(&space), origin_(origin), extents_(extents), divisions_(divisions) {
    // The builder emits 6 tets per cell, cells x-fastest; verify on a sample.
    const TetMesh& mesh = space.mesh();
    std::size_t expected =
        static_cast<std::size_t>(divisions[0]) * divisions[1] * divisions[2] * 6;
    if (mesh.n_tets() != expected)
        throw std::invalid_argument("BoxLocator: mesh is not the expected structured box");
}

std::pair<int, Eigen::Vector4d> BoxLocator::locate(const Vec3& x) const {
    const TetMesh& mesh = space_->mesh();
    int idx[3];
    for (int k = 0; k < 3; ++k) {
        double rel = (x[k] - origin_[k]) / extents_[k] * divisions_[k];
        idx[k] = std::clamp(static_cast<int>(std::floor(rel)), 0, divisions_[k] - 1);
        if (x[k] < origin_[k] - 1e-12 || x[k] > origin_[k] + extents_[k] + 1e-12)
            throw std::invalid_argument("BoxLocator: point outside the box");
    }
    std::size_t cell = (static_cast<std::size_t>(idx[2]) * divisions_[1] + idx[1]) *
                           divisions_[0] + idx[0];
    int best_tet = -1;
    double best_min = -std::numeric_limits<double>::infinity();
    Eigen::Vector4d best_bary;
    for (int p = 0; p < 6; ++p) {
        int t = static_cast<int>(6 * cell + p);
        const auto& tet = mesh.tets[t];
        Eigen::Matrix3d J;
        for (int k = 0; k < 3; ++k) J.col(k) = mesh.vertices[tet[k + 1]] - mesh.vertices[tet[0]];
        Vec3 local = J.inverse() * (x - mesh.vertices[tet[0]]);
        Eigen::Vector4d bary(1.0 - local.sum(), local[0], local[1], local[2]);
        double mn = bary.minCoeff();
        if (mn > best_min) {
            best_min = mn;
            best_tet = t;
            best_bary = bary;
        }
    }
    if (best_min < -1e-9)
        throw std::runtime_error("BoxLocator: point not contained in its cell's tets");
    return {best_tet, best_bary};
}

Vec3 BoxLocator::evaluate(const Eigen::VectorXd& u, const Vec3& x) const {
    auto [t, bary] = locate(x);
    return space_->evaluate(u, t, bary);
}

// ---------------------------------------------------------------------------
// Dipole oracle

namespace {

struct KernelParts {
    Complex g0, g1, g1p;  // G, G'/r, d/dr (G'/r)
    double r;
};

KernelParts kernel_parts(const ComplexFrequency& s, const MaterialParams& mat, const Vec3& d) {
    KernelParts kp;
    kp.r = d.norm();
    if (!(kp.r > 0.0)) throw std::invalid_argument("dipole: evaluation at the source point");
    Complex kappa = s.s * std::sqrt(mat.eps_mu());
    Complex E = std::exp(-kappa * kp.r);
    double r = kp.r;
    kp.g0 = E / (4.0 * M_PI * r);
    kp.g1 = -(1.0 + kappa * r) * E / (4.0 * M_PI * r * r * r);
    kp.g1p = kappa * kappa * E / (4.0 * M_PI * r * r) +
             3.0 * (1.0 + kappa * r) * E / (4.0 * M_PI * r * r * r * r);
    return kp;
}

}  // namespace

Eigen::Vector3cd DipoleField::field(const Vec3& x) const {
    Vec3 d = x - source;
    KernelParts kp = kernel_parts(s, material, d);
    Complex em_s2 = material.eps_mu() * s.s * s.s;
    Eigen::Vector3cd out = (kp.g1p / kp.r) * (polarization.dot(d)) * d.cast<Complex>();
    out += (kp.g1 - em_s2 * kp.g0) * polarization.cast<Complex>();
    return out;
}

Eigen::Vector3cd DipoleField::curl_field(const Vec3& x) const {
    Vec3 d = x - source;
    KernelParts kp = kernel_parts(s, material, d);
    Vec3 dxp = d.cross(polarization);
    return (-material.eps_mu() * s.s * s.s * kp.g1) * dxp.cast<Complex>();
}

Eigen::Vector3cd DipoleField::neumann_field(const Vec3& x) const {
    return curl_field(x) / s.s;
}

namespace {

bool point_in_mesh(const TetMesh& mesh, const Vec3& x) {
    for (std::size_t t = 0; t < mesh.n_tets(); ++t) {
        const auto& tet = mesh.tets[t];
        Eigen::Matrix3d J;
        for (int k = 0; k < 3; ++k) J.col(k) = mesh.vertices[tet[k + 1]] - mesh.vertices[tet[0]];
        Vec3 local = J.inverse() * (x - mesh.vertices[tet[0]]);
        Eigen::Vector4d bary(1.0 - local.sum(), local[0], local[1], local[2]);
        if (bary.minCoeff() >= -1e-12) return true;
    }
    return false;
}

BoundaryInterpolant interpolate_boundary_complex_part(
    const BoundarySpace& bspace, const std::function<Eigen::Vector3cd(const Vec3&)>& chi,
    bool imag) {
    return interpolate_boundary(bspace, [&chi, imag](const Vec3& x) {
        Eigen::Vector3cd v = chi(x);
        return imag ? Vec3(v(0).imag(), v(1).imag(), v(2).imag())
                    : Vec3(v(0).real(), v(1).real(), v(2).real());
    });
}

VectorXcd interpolate_boundary_complex(const BoundarySpace& bspace,
                                       const std::function<Eigen::Vector3cd(const Vec3&)>& chi,
                                       double& residual) {
    BoundaryInterpolant re = interpolate_boundary_complex_part(bspace, chi, false);
    BoundaryInterpolant im = interpolate_boundary_complex_part(bspace, chi, true);
    residual = std::max(re.residual, im.residual);
    return re.coeffs.cast<Complex>() + Complex(0.0, 1.0) * im.coeffs.cast<Complex>();
}

}  // namespace

DipoleTraces dipole_trace_data(const DipoleField& dipole, const TetMesh& mesh,
                               const BoundarySpace& bspace) {
    dipole.s.validate();
    if (point_in_mesh(mesh, dipole.source))
        throw std::invalid_argument("dipole_trace_data: source must lie outside the domain");
    DipoleTraces out;
    out.phi = interpolate_boundary_complex(
        bspace, [&dipole](const Vec3& x) { return dipole.neumann_field(x); }, out.residual_phi);
    out.psi = interpolate_boundary_complex(
        bspace, [&dipole](const Vec3& x) { return dipole.field(x); }, out.residual_psi);
    return out;
}

double calderon_projector_residual(const ComplexFrequency& s, const BoundarySpace& bspace,
                                   const QuadratureConfig& quad, const DipoleField& dipole,
                                   const TetMesh& mesh, int threads) {
    DipoleTraces traces = dipole_trace_data(dipole, mesh, bspace);
    if (traces.phi.cwiseAbs().maxCoeff() == 0.0 && traces.psi.cwiseAbs().maxCoeff() == 0.0)
        return 0.0;
    MatrixXcd V = assemble_V(s, bspace, quad, dipole.material, threads);
    MatrixXcd K = assemble_K(s, bspace, quad, dipole.material, threads);
    Eigen::MatrixXd P = pairing_matrix(bspace);
    VectorXcd data = 0.25 * (P * traces.psi);
    VectorXcd r = V * traces.phi + K * traces.psi - data;
    Eigen::LLT<Eigen::MatrixXd> llt(bspace.gram());
    auto dual_norm = [&](const VectorXcd& v) {
        Eigen::VectorXd re = llt.solve(v.real());
        Eigen::VectorXd im = llt.solve(v.imag());
        return std::sqrt(v.real().dot(re) + v.imag().dot(im));
    };
    return dual_norm(r) / dual_norm(data);
}

// ---------------------------------------------------------------------------
// Transparency

namespace {

// Maps each tet of the inner mesh to (tet, vertex permutation) in the outer
// mesh by centroid and vertex coordinate matching.
struct TetMap {
    std::vector<int> tet;
    std::vector<std::array<int, 4>> vertex;  // inner local -> outer local
};

TetMap build_tet_map(const TetMesh& inner, const TetMesh& outer, double h) {
    auto key_of = [h](const Vec3& p) {
        const double q = h / 4096.0;
        return std::array<long long, 3>{std::llround(p[0] / q), std::llround(p[1] / q),
                                        std::llround(p[2] / q)};
    };
    std::map<std::array<long long, 3>, int> outer_centroids;
    for (std::size_t t = 0; t < outer.n_tets(); ++t) {
        const auto& tet = outer.tets[t];
        Vec3 c = 0.25 * (outer.vertices[tet[0]] + outer.vertices[tet[1]] +
                         outer.vertices[tet[2]] + outer.vertices[tet[3]]);
        outer_centroids[key_of(c)] = static_cast<int>(t);
    }
    TetMap map;
    map.tet.resize(inner.n_tets());
    map.vertex.resize(inner.n_tets());
    for (std::size_t t = 0; t < inner.n_tets(); ++t) {
        const auto& tet = inner.tets[t];
        Vec3 c = 0.25 * (inner.vertices[tet[0]] + inner.vertices[tet[1]] +
                         inner.vertices[tet[2]] + inner.vertices[tet[3]]);
        auto it = outer_centroids.find(key_of(c));
        if (it == outer_centroids.end())
            throw std::runtime_error("transparency: meshes are not aligned");
        map.tet[t] = it->second;
        const auto& otet = outer.tets[it->second];
        for (int a = 0; a < 4; ++a) {
            int match = -1;
            for (int b = 0; b < 4; ++b)
                if ((inner.vertices[tet[a]] - outer.vertices[otet[b]]).norm() < 1e-10 * h)
                    match = b;
            if (match < 0) throw std::runtime_error("transparency: vertex mismatch in tet map");
            map.vertex[t][a] = match;
        }
    }
    return map;
}

Eigen::VectorXd restrict_to_inner(const TetMap& map, const Eigen::VectorXd& outer_u,
                                  std::size_t inner_dofs) {
    Eigen::VectorXd r(inner_dofs);
    for (std::size_t t = 0; t < map.tet.size(); ++t)
        for (int c = 0; c < 3; ++c)
            for (int a = 0; a < 4; ++a)
                r[DgSpace::dof(static_cast<int>(t), c, a)] =
                    outer_u[DgSpace::dof(map.tet[t], c, map.vertex[t][a])];
    return r;
}

}  // namespace

TransparencyResult transparency_test(const TransparencyConfig& config) {
    const int n = config.divisions;
    const MaterialParams& mat = config.material;
    const double root_em = std::sqrt(mat.eps_mu());
    if (config.outer_scale < 3 || config.outer_scale % 2 == 0)
        throw std::invalid_argument("transparency: outer_scale must be an odd integer >= 3");
    const double pad = (config.outer_scale - 1) / 2.0;

    // Causality bound for the reference: waves must not re-enter from the
    // outer boundary within the observation window.
    const double ref_bound = pad * root_em;
    if (!(config.t_obs < ref_bound))
        throw std::invalid_argument("transparency: t_obs must be < " + std::to_string(ref_bound) +
                                    " (reference contamination bound)");

    TetMesh inner_mesh = build_box_mesh({1, 1, 1}, {n, n, n});
    DgSpace inner_space(inner_mesh);
    SurfaceMesh inner_surf = extract_boundary(inner_mesh);
    BoundarySpace inner_bspace(inner_surf);
    OperatorSet inner_ops = assemble_operators(inner_space, inner_bspace, mat, config.threads);

    const int os = config.outer_scale;
    const double od = static_cast<double>(os);
    TetMesh outer_mesh = build_box_mesh({od, od, od}, {os * n, os * n, os * n});
    for (auto& v : outer_mesh.vertices) v -= Vec3(pad, pad, pad);
    DgSpace outer_space(outer_mesh);
    OperatorSet outer_ops = assemble_interior_operators(outer_space, mat, config.threads);

    // The outer mesh shares the interior cell structure, so its CFL constant
    // matches the inner one up to boundary effects; the safety factor (and the
    // factor-2 margin of the bound itself) covers the difference.
    double dt_inner = cfl_limit(inner_ops, mat).dt_max;
    double dt_pref = config.dt > 0.0 ? config.dt : config.cfl_safety * dt_inner;
    int steps = static_cast<int>(std::ceil(config.t_obs / dt_pref));
    double dt = config.t_obs / steps;

    TransparencyResult result;
    result.dt = dt;
    result.steps = steps;
    {
        double dist = std::numeric_limits<double>::infinity();
        for (int k = 0; k < 3; ++k)
            dist = std::min({dist, config.pulse_center[k], 1.0 - config.pulse_center[k]});
        result.first_contact = (dist - config.pulse_radius) * root_em;
    }

    Eigen::VectorXd e0_inner = solenoidal_bump_interpolant(
        inner_space, config.pulse_center, config.pulse_radius, config.pulse_polarization, 1.0);
    Eigen::VectorXd e0_outer = solenoidal_bump_interpolant(
        outer_space, config.pulse_center, config.pulse_radius, config.pulse_polarization, 1.0);

    RunConfig rc_inner;
    rc_inner.dt = dt;
    rc_inner.n_steps = steps;
    rc_inner.alpha = config.alpha;
    rc_inner.coupled = !config.reflective;
    rc_inner.threads = config.threads;
    RunResult inner_run;
    if (rc_inner.coupled) {
        MatrixSymbol symbol = [&](Complex s) {
            return assemble_B(ComplexFrequency{s}, inner_bspace, config.quad, mat,
                              config.threads).B;
        };
        CQOptions cq_opts;
        cq_opts.threads = config.threads;
        CQWeights weights =
            compute_weights(symbol, 2 * inner_bspace.dim(), dt, steps, cq_opts);
        StepOperator stepop = make_step_operator(
            weights.weights[0], assemble_G(inner_ops, mat, config.alpha), dt, config.alpha);
        inner_run = run(inner_ops, weights, stepop,
                        rc_inner, make_initial_state(inner_space, inner_bspace, e0_inner, {}),
                        nullptr, true);
    } else {
        CQWeights empty;
        inner_run = run(inner_ops, empty, passive_step_operator(dt), rc_inner,
                        make_initial_state(inner_space, inner_bspace, e0_inner, {}), nullptr,
                        true);
    }
    if (inner_run.aborted) throw std::runtime_error("transparency: interior run aborted");

    RunConfig rc_outer = rc_inner;
    rc_outer.coupled = false;
    CQWeights empty;
    CoupledState outer_state;
    outer_state.E = e0_outer;
    outer_state.H = Eigen::VectorXd::Zero(outer_space.n_dofs());
    outer_state.psi = Eigen::VectorXd();
    RunResult outer_run = run(outer_ops, empty, passive_step_operator(dt), rc_outer,
                              std::move(outer_state), nullptr, true);
    if (outer_run.aborted) throw std::runtime_error("transparency: reference run aborted");

    // First step whose boundary data are nonzero; strictly before it the
    // coupled and reference runs have bit-identical interior dynamics.
    int active_step = steps;
    if (rc_inner.coupled) {
        for (int k = 0; k < static_cast<int>(inner_run.state.history.size()); ++k)
            if (inner_run.state.history[k].lpNorm<Eigen::Infinity>() > 0.0) {
                active_step = k;
                break;
            }
    } else {
        for (int k = 0; k <= steps; ++k)
            if ((inner_ops.C0.transpose() * inner_run.e_snapshots[k])
                    .lpNorm<Eigen::Infinity>() > 0.0) {
                active_step = k;
                break;
            }
    }
    result.first_discrete_contact = active_step * dt;

    TetMap map = build_tet_map(inner_mesh, outer_mesh, 1.0 / n);
    double ref_scale = 0.0;
    std::vector<double> abs_err(steps + 1), ref_norm(steps + 1);
    for (int k = 0; k <= steps; ++k) {
        Eigen::VectorXd ref =
            restrict_to_inner(map, outer_run.e_snapshots[k], inner_space.n_dofs());
        Eigen::VectorXd diff = inner_run.e_snapshots[k] - ref;
        abs_err[k] = std::sqrt(inner_space.mass_norm_sq(diff));
        ref_norm[k] = std::sqrt(inner_space.mass_norm_sq(ref));
        ref_scale = std::max(ref_scale, ref_norm[k]);
        result.t.push_back(k * dt);
        result.rel_error.push_back(abs_err[k] / std::max(ref_norm[k], 1e-300));
        result.ref_norm.push_back(ref_norm[k]);
        result.run_norm.push_back(std::sqrt(inner_space.mass_norm_sq(inner_run.e_snapshots[k])));
    }
    double window_ref = 0.0, window_err = 0.0, pre_err = 0.0;
    for (int k = 0; k <= steps; ++k) {
        if (k <= active_step) {
            pre_err = std::max(pre_err, abs_err[k] / std::max(ref_scale, 1e-300));
        } else {
            window_ref = std::max(window_ref, ref_norm[k]);
            window_err = std::max(window_err, abs_err[k]);
        }
    }
    result.pre_contact_max = pre_err;
    result.window_error = window_err / std::max(window_ref, 1e-300);
    return result;
}

// ---------------------------------------------------------------------------
// Convergence studies

namespace {

double fit_order(const std::vector<ConvergenceLevel>& levels) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const int n = static_cast<int>(levels.size());
    for (const auto& l : levels) {
        double x = std::log(l.parameter), y = std::log(l.error);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

struct LevelRun {
    TetMesh mesh;
    std::unique_ptr<DgSpace> space;
    SurfaceMesh surf;
    std::unique_ptr<BoundarySpace> bspace;
    OperatorSet ops;
    RunResult result;
    double dt = 0.0;
    int divisions = 0;
};

std::unique_ptr<LevelRun> run_level(int divisions, double dt, double t_end,
                                    const ConvergenceConfig& cfg) {
    auto lr = std::make_unique<LevelRun>();
    lr->divisions = divisions;
    lr->mesh = build_box_mesh({1, 1, 1}, {divisions, divisions, divisions});
    lr->space = std::make_unique<DgSpace>(lr->mesh);
    lr->surf = extract_boundary(lr->mesh);
    lr->bspace = std::make_unique<BoundarySpace>(lr->surf);
    lr->ops = assemble_operators(*lr->space, *lr->bspace, cfg.material, cfg.threads);
    int steps = static_cast<int>(std::lround(t_end / dt));
    if (std::abs(steps * dt - t_end) > 1e-9 * t_end)
        throw std::invalid_argument("convergence: dt does not divide t_end");
    lr->dt = dt;
    MatrixSymbol symbol = [&lr, &cfg](Complex s) {
        return assemble_B(ComplexFrequency{s}, *lr->bspace, cfg.quad, cfg.material,
                          cfg.threads).B;
    };
    CQWeights weights = compute_weights(symbol, 2 * lr->bspace->dim(), dt, steps, {});
    StepOperator stepop = make_step_operator(
        weights.weights[0], assemble_G(lr->ops, cfg.material, cfg.alpha), dt, cfg.alpha);
    RunConfig rc;
    rc.dt = dt;
    rc.n_steps = steps;
    rc.alpha = cfg.alpha;
    rc.threads = cfg.threads;
    Eigen::VectorXd e0 = bump_interpolant(*lr->space, cfg.pulse_center, cfg.pulse_radius,
                                          cfg.pulse_polarization, 1.0);
    lr->result = run(lr->ops, weights, stepop, rc,
                     make_initial_state(*lr->space, *lr->bspace, e0, {}));
    if (lr->result.aborted) throw std::runtime_error("convergence: level run aborted");
    return lr;
}

// Combined field error between two runs sampled over the reference mesh.
double sampled_error(const LevelRun& coarse, const LevelRun& ref, const MaterialParams& mat) {
    BoxLocator loc_c(*coarse.space, Vec3::Zero(), {1, 1, 1},
                     {coarse.divisions, coarse.divisions, coarse.divisions});
    const TetMesh& rmesh = ref.mesh;
    const auto& rule = tet_rule(4);
    Eigen::VectorXd ref_Hn = 0.5 * (ref.result.state.H + ref.result.H_lead);
    Eigen::VectorXd coarse_Hn = 0.5 * (coarse.result.state.H + coarse.result.H_lead);
    double acc = 0.0;
    for (std::size_t t = 0; t < rmesh.n_tets(); ++t) {
        const auto& tet = rmesh.tets[t];
        double vol = tet_volume(rmesh, static_cast<int>(t));
        for (const auto& q : rule) {
            Eigen::Vector4d bary(1.0 - q.a - q.b - q.c, q.a, q.b, q.c);
            Vec3 x = bary[0] * rmesh.vertices[tet[0]] + bary[1] * rmesh.vertices[tet[1]] +
                     bary[2] * rmesh.vertices[tet[2]] + bary[3] * rmesh.vertices[tet[3]];
            Vec3 de = ref.space->evaluate(ref.result.state.E, static_cast<int>(t), bary) -
                      loc_c.evaluate(coarse.result.state.E, x);
            Vec3 dh = ref.space->evaluate(ref_Hn, static_cast<int>(t), bary) -
                      loc_c.evaluate(coarse_Hn, x);
            acc += 6.0 * vol * q.w * (mat.epsilon * de.squaredNorm() + mat.mu * dh.squaredNorm());
        }
    }
    return std::sqrt(acc);
}

void finalize_report(ConvergenceReport& report) {
    for (const auto& l : report.levels)
        if (!(l.error > 0.0)) {
            report.conclusive = false;
            report.degenerate = true;
            report.note = "degenerate levels";
            return;
        }
    // Levels are ordered coarse to fine.
    for (std::size_t i = 1; i < report.levels.size(); ++i)
        if (report.levels[i].error >= report.levels[i - 1].error) {
            report.conclusive = false;
            report.note = i == 1 ? "inconclusive: non-monotone at the coarsest level"
                                 : "inconclusive: error sequence not monotone";
        }
    report.observed_order = fit_order(report.levels);
    if (report.levels.size() > 2) {
        std::vector<ConvergenceLevel> tail(report.levels.begin() + 1, report.levels.end());
        report.observed_order_tail = fit_order(tail);
    }
}

}  // namespace

ConvergenceReport convergence_study(const ConvergenceConfig& config) {
    ConvergenceReport report;
    report.kind = config.kind;
    if (config.kind == "time") {
        if (config.time_levels < 3)
            throw std::invalid_argument("convergence: need >= 3 levels");
        // One shared mesh: coefficient differences isolate the time error.
        double dt_max;
        {
            TetMesh mesh = build_box_mesh({1, 1, 1}, {config.time_mesh_divisions,
                                                      config.time_mesh_divisions,
                                                      config.time_mesh_divisions});
            DgSpace space(mesh);
            SurfaceMesh surf = extract_boundary(mesh);
            BoundarySpace bspace(surf);
            OperatorSet ops = assemble_operators(space, bspace, config.material, config.threads);
            dt_max = cfl_limit(ops, config.material).dt_max;
        }
        int n0 = static_cast<int>(std::ceil(config.t_end / (config.cfl_safety * dt_max)));
        std::vector<std::unique_ptr<LevelRun>> runs;
        for (int level = 0; level <= config.time_levels; ++level) {
            int steps = n0 << level;
            runs.push_back(
                run_level(config.time_mesh_divisions, config.t_end / steps, config.t_end,
                          config));
        }
        const LevelRun& ref = *runs.back();
        Eigen::VectorXd ref_Hn = 0.5 * (ref.result.state.H + ref.result.H_lead);
        for (int level = 0; level < config.time_levels; ++level) {
            const LevelRun& lr = *runs[level];
            Eigen::VectorXd de = lr.result.state.E - ref.result.state.E;
            Eigen::VectorXd dh = 0.5 * (lr.result.state.H + lr.result.H_lead) - ref_Hn;
            double err = std::sqrt(config.material.epsilon * lr.space->mass_norm_sq(de) +
                                   config.material.mu * lr.space->mass_norm_sq(dh));
            report.levels.push_back({lr.dt, err});
        }
        finalize_report(report);
        return report;
    }
    if (config.kind != "space" && config.kind != "joint")
        throw std::invalid_argument("convergence: kind must be space, time, or joint");
    if (config.space_divisions.size() < 3)
        throw std::invalid_argument("convergence: need >= 3 levels");
    for (std::size_t i = 1; i < config.space_divisions.size(); ++i)
        if (config.space_divisions[i] == config.space_divisions[i - 1])
            throw std::invalid_argument("convergence: degenerate levels");

    // Reference level fixes the fine dt; space levels reuse it, joint levels
    // scale dt with h.
    TetMesh ref_mesh = build_box_mesh({1, 1, 1}, {config.reference_divisions,
                                                  config.reference_divisions,
                                                  config.reference_divisions});
    DgSpace ref_space(ref_mesh);
    SurfaceMesh ref_surf = extract_boundary(ref_mesh);
    BoundarySpace ref_bspace(ref_surf);
    OperatorSet ref_ops = assemble_operators(ref_space, ref_bspace, config.material,
                                             config.threads);
    double ref_dtmax = cfl_limit(ref_ops, config.material).dt_max;
    int ref_steps =
        static_cast<int>(std::ceil(config.t_end / (config.cfl_safety * ref_dtmax)));
    double ref_dt = config.t_end / ref_steps;
    auto ref_run = run_level(config.reference_divisions, ref_dt, config.t_end, config);

    for (int div : config.space_divisions) {
        double dt = ref_dt;
        if (config.kind == "joint") {
            // dt proportional to h while respecting the CFL bound.
            int steps = static_cast<int>(
                std::ceil(static_cast<double>(ref_steps) * div / config.reference_divisions));
            dt = config.t_end / steps;
        }
        auto lr = run_level(div, dt, config.t_end, config);
        double err = sampled_error(*lr, *ref_run, config.material);
        report.levels.push_back({mesh_metrics(lr->mesh).h_max, err});
    }
    finalize_report(report);
    return report;
}

CoercivityReport coercivity_report(const BoundarySpace& bspace, const CoercivityConfig& config) {
    CoercivityReport report;
    report.min_rayleigh = std::numeric_limits<double>::infinity();
    report.beta_estimate = std::numeric_limits<double>::infinity();
    for (Complex s : config.s_samples) {
        CalderonMatrix B = assemble_B(ComplexFrequency{s}, bspace, config.quad, config.material,
                                      config.threads);
        auto entry = coercivity_probe(B, config.material, s, bspace.gram(), config.trials,
                                      config.seed);
        report.min_rayleigh = std::min(report.min_rayleigh, entry.min_rayleigh);
        report.beta_estimate = std::min(report.beta_estimate, entry.beta_estimate);
        report.laplace.push_back(entry);
    }

    MatrixSymbol symbol = [&](Complex s) {
        return assemble_B(ComplexFrequency{s}, bspace, config.quad, config.material,
                          config.threads).B;
    };
    const int dim2 = 2 * bspace.dim();
    CQWeights weights =
        compute_weights(symbol, dim2, config.dt, config.sequence_length, {});
    std::mt19937_64 rng(config.seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    report.min_lhs_normalized = std::numeric_limits<double>::infinity();
    for (int rep = 0; rep < config.sequences; ++rep) {
        std::vector<Eigen::VectorXd> samples(config.sequence_length + 1);
        for (auto& v : samples) {
            v.resize(dim2);
            for (int i = 0; i < dim2; ++i) v[i] = dist(rng);
        }
        HerglotzCheck c = check_discrete_herglotz(weights, samples, bspace.gram(),
                                                  config.material.eps_mu());
        report.discrete.push_back({c.lhs, c.rhs, c.scale});
        report.min_lhs_normalized =
            std::min(report.min_lhs_normalized, c.lhs / std::max(c.scale, 1e-300));
    }
    return report;
}

}  // namespace maxtbc
