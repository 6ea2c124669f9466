#include "maxtbc/bem.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>
#include <stdexcept>

#include "maxtbc/quadrature.hpp"
#include "maxtbc/util.hpp"

namespace maxtbc {

void ComplexFrequency::validate() const {
    if (!(s.real() > 0.0))
        throw std::invalid_argument("complex frequency: Re s > 0 required");
}

void QuadratureConfig::validate() const {
    if (regular_order < 1 || sauter_schwab_order < 1)
        throw std::invalid_argument("quadrature: orders must be >= 1");
    if (!(near_threshold >= 0.0))
        throw std::invalid_argument("quadrature: near_threshold must be >= 0");
}

Complex kernel(const ComplexFrequency& s, const Vec3& z, const MaterialParams& material) {
    double r = z.norm();
    if (!(r > 0.0)) throw std::invalid_argument("kernel: evaluation at the singularity z = 0");
    Complex kappa = s.s * std::sqrt(material.eps_mu());
    return std::exp(-kappa * r) / (4.0 * M_PI * r);
}

Eigen::Vector3cd kernel_gradient(const ComplexFrequency& s, const Vec3& z,
                                 const MaterialParams& material) {
    double r = z.norm();
    if (!(r > 0.0)) throw std::invalid_argument("kernel_gradient: z = 0");
    Complex kappa = s.s * std::sqrt(material.eps_mu());
    Complex g1 = -(1.0 + kappa * r) * std::exp(-kappa * r) / (4.0 * M_PI * r * r * r);
    return g1 * z.cast<Complex>();
}

namespace {

struct PairGeometry {
    int fx, fy;
    int ncommon;
    // Permuted vertex order: shared vertices first, matched across the pair.
    std::array<int, 3> px, py;  // permuted slot -> local vertex
};

PairGeometry classify_pair(const SurfaceMesh& surf, int fx, int fy) {
    PairGeometry g{fx, fy, 0, {0, 1, 2}, {0, 1, 2}};
    if (fx == fy) {
        g.ncommon = 3;
        return g;
    }
    const auto& tx = surf.triangles[fx];
    const auto& ty = surf.triangles[fy];
    int n = 0;
    for (int i = 0; i < 3 && n < 3; ++i)
        for (int j = 0; j < 3; ++j)
            if (tx[i] == ty[j]) {
                g.px[n] = i;
                g.py[n] = j;
                ++n;
                break;
            }
    g.ncommon = n;
    auto fill_rest = [](std::array<int, 3>& p, int n_shared) {
        bool used[3] = {false, false, false};
        for (int k = 0; k < n_shared; ++k) used[p[k]] = true;
        int q = n_shared;
        for (int l = 0; l < 3; ++l)
            if (!used[l]) p[q++] = l;
    };
    fill_rest(g.px, n);
    fill_rest(g.py, n);
    return g;
}

double triangle_diameter(const SurfaceMesh& surf, int f) {
    const auto& t = surf.triangles[f];
    double d = 0.0;
    for (int i = 0; i < 3; ++i)
        for (int j = i + 1; j < 3; ++j)
            d = std::max(d, (surf.nodes[t[i]] - surf.nodes[t[j]]).norm());
    return d;
}

double min_vertex_distance(const SurfaceMesh& surf, int fx, int fy) {
    const auto& tx = surf.triangles[fx];
    const auto& ty = surf.triangles[fy];
    double d = std::numeric_limits<double>::infinity();
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            d = std::min(d, (surf.nodes[tx[i]] - surf.nodes[ty[j]]).norm());
    return d;
}

struct PairIntegrals {
    Complex sum1{0.0, 0.0};
    Complex sumNN[3][3];
    Eigen::Vector3cd sumG[3][3];
    PairIntegrals() {
        for (auto& row : sumNN)
            for (auto& v : row) v = Complex(0.0, 0.0);
        for (auto& row : sumG)
            for (auto& v : row) v.setZero();
    }
};

// Kernel-weighted integrals over one triangle pair; hat indices refer to the
// triangles' local vertices.
PairIntegrals integrate_pair(const SurfaceMesh& surf, const PairGeometry& g,
                             const std::vector<PairPoint>& rule, const Complex& kappa,
                             bool want_grad) {
    PairIntegrals out;
    const auto& tx = surf.triangles[g.fx];
    const auto& ty = surf.triangles[g.fy];
    Vec3 X[3], Y[3];
    for (int q = 0; q < 3; ++q) {
        X[q] = surf.nodes[tx[g.px[q]]];
        Y[q] = surf.nodes[ty[g.py[q]]];
    }
    int posx[3], posy[3];
    for (int q = 0; q < 3; ++q) {
        posx[g.px[q]] = q;
        posy[g.py[q]] = q;
    }
    const double jac = 4.0 * surf.areas[g.fx] * surf.areas[g.fy];
    for (const auto& p : rule) {
        Vec3 x = X[0] + p.a1 * (X[1] - X[0]) + p.b1 * (X[2] - X[0]);
        Vec3 y = Y[0] + p.a2 * (Y[1] - Y[0]) + p.b2 * (Y[2] - Y[0]);
        Vec3 z = x - y;
        double r = z.norm();
        if (!(r > 0.0)) continue;  // transformed rules keep r > 0 away from corners
        Complex e = std::exp(-kappa * r);
        Complex G = e / (4.0 * M_PI * r);
        double w = p.w * jac;
        double bx[3] = {1.0 - p.a1 - p.b1, p.a1, p.b1};
        double by[3] = {1.0 - p.a2 - p.b2, p.a2, p.b2};
        double hx[3] = {bx[posx[0]], bx[posx[1]], bx[posx[2]]};
        double hy[3] = {by[posy[0]], by[posy[1]], by[posy[2]]};
        Complex wG = w * G;
        out.sum1 += wG;
        for (int l1 = 0; l1 < 3; ++l1)
            for (int l2 = 0; l2 < 3; ++l2) out.sumNN[l1][l2] += wG * (hx[l1] * hy[l2]);
        if (want_grad) {
            Complex g1 = -(1.0 + kappa * r) * e / (4.0 * M_PI * r * r * r);
            Eigen::Vector3cd grad = (w * g1) * z.cast<Complex>();
            for (int l1 = 0; l1 < 3; ++l1)
                for (int l2 = 0; l2 < 3; ++l2) out.sumG[l1][l2] += grad * (hx[l1] * hy[l2]);
        }
    }
    return out;
}

enum class Block { V, K };

// Assembles V and/or K in a single sweep over the triangle pairs; the kernel
// integrals per pair are shared between the two forms.
void assemble_vk(const ComplexFrequency& s, const BoundarySpace& bspace,
                 const QuadratureConfig& quad, const MaterialParams& material, int threads,
                 MatrixXcd* Vout, MatrixXcd* Kout) {
    s.validate();
    quad.validate();
    material.validate();
    const SurfaceMesh& surf = bspace.surface();
    const int n_tri = static_cast<int>(surf.n_triangles());
    const int dim = bspace.dim();
    const Complex kappa = s.s * std::sqrt(material.eps_mu());
    const Complex div_factor = 1.0 / (s.s * material.eps_mu());
    const bool want_v = Vout != nullptr;
    const bool want_k = Kout != nullptr;

    const auto rule_co = sauter_schwab_rule(3, quad.sauter_schwab_order);
    const auto rule_ed = sauter_schwab_rule(2, quad.sauter_schwab_order);
    const auto rule_vx = sauter_schwab_rule(1, quad.sauter_schwab_order);
    const auto rule_near = sauter_schwab_rule(0, quad.sauter_schwab_order + 2);
    const auto& tri_gauss = triangle_rule(quad.regular_order);
    std::vector<PairPoint> rule_far;
    rule_far.reserve(tri_gauss.size() * tri_gauss.size());
    for (const auto& q1 : tri_gauss)
        for (const auto& q2 : tri_gauss) rule_far.push_back({q1.a, q1.b, q2.a, q2.b, q1.w * q2.w});

    std::vector<double> diam(n_tri);
    for (int f = 0; f < n_tri; ++f) diam[f] = triangle_diameter(surf, f);

    std::vector<std::pair<int, int>> pairs;
    pairs.reserve(static_cast<std::size_t>(n_tri) * (n_tri + 1) / 2);
    for (int fx = 0; fx < n_tri; ++fx)
        for (int fy = fx; fy < n_tri; ++fy) pairs.emplace_back(fx, fy);

    const int nthreads = resolve_thread_count(threads);
    std::vector<MatrixXcd> partial_v(want_v ? nthreads : 0, MatrixXcd::Zero(dim, dim));
    std::vector<MatrixXcd> partial_k(want_k ? nthreads : 0, MatrixXcd::Zero(dim, dim));

    auto process_pair = [&](MatrixXcd* V, MatrixXcd* K, int fx, int fy) {
        PairGeometry g = classify_pair(surf, fx, fy);
        const bool coincident = (g.ncommon == 3);
        // grad G lies in the common face plane for coincident pairs, so the
        // K kernel vanishes identically there.
        const bool need_grad = want_k && !coincident;
        if (!want_v && !need_grad) return;
        const std::vector<PairPoint>* rule = nullptr;
        switch (g.ncommon) {
            case 3:
                rule = &rule_co;
                break;
            case 2:
                rule = &rule_ed;
                break;
            case 1:
                rule = &rule_vx;
                break;
            default: {
                double dist = min_vertex_distance(surf, fx, fy);
                rule = (dist < quad.near_threshold * std::max(diam[fx], diam[fy])) ? &rule_near
                                                                                   : &rule_far;
            }
        }
        PairIntegrals I = integrate_pair(surf, g, *rule, kappa, need_grad);

        const auto& tx = surf.triangles[fx];
        const auto& ty = surf.triangles[fy];
        Vec3 tangx[3], tangy[3];
        for (int i = 0; i < 3; ++i) {
            tangx[i] = bspace.candidate_tangent(fx, i);
            tangy[i] = bspace.candidate_tangent(fy, i);
        }
        for (int l1 = 0; l1 < 3; ++l1)
            for (int i = 0; i < 3; ++i) {
                int row = bspace.retained_index(3 * tx[l1] + i);
                if (row < 0) continue;
                double divx = bspace.hat_gradient(fx, l1).dot(tangx[i]);
                for (int l2 = 0; l2 < 3; ++l2)
                    for (int j = 0; j < 3; ++j) {
                        int col = bspace.retained_index(3 * ty[l2] + j);
                        if (col < 0) continue;
                        if (V) {
                            double divy = bspace.hat_gradient(fy, l2).dot(tangy[j]);
                            Complex val = 0.5 * (s.s * tangx[i].dot(tangy[j]) * I.sumNN[l1][l2] +
                                                 div_factor * divx * divy * I.sum1);
                            (*V)(row, col) += val;
                            if (fx != fy) (*V)(col, row) += val;
                        }
                        if (K && need_grad) {
                            Vec3 cross = tangy[j].cross(tangx[i]);
                            const auto& gv = I.sumG[l1][l2];
                            Complex val =
                                0.5 * (gv(0) * cross(0) + gv(1) * cross(1) + gv(2) * cross(2));
                            (*K)(row, col) += val;
                            if (fx != fy) (*K)(col, row) += val;
                        }
                    }
            }
    };

    // One chunk per thread, each with its own accumulators; the final merge in
    // thread order keeps results reproducible for a fixed thread count.
    std::vector<std::size_t> bounds(nthreads + 1);
    for (int c = 0; c <= nthreads; ++c) bounds[c] = pairs.size() * c / nthreads;
    parallel_for(
        static_cast<std::size_t>(nthreads),
        [&](std::size_t t0, std::size_t t1) {
            for (std::size_t t = t0; t < t1; ++t)
                for (std::size_t idx = bounds[t]; idx < bounds[t + 1]; ++idx)
                    process_pair(want_v ? &partial_v[t] : nullptr,
                                 want_k ? &partial_k[t] : nullptr, pairs[idx].first,
                                 pairs[idx].second);
        },
        nthreads);

    if (want_v) {
        *Vout = MatrixXcd::Zero(dim, dim);
        for (const auto& p : partial_v) *Vout += p;
        if (!Vout->allFinite()) throw std::runtime_error("bem: non-finite entry in V");
    }
    if (want_k) {
        *Kout = MatrixXcd::Zero(dim, dim);
        for (const auto& p : partial_k) *Kout += p;
        if (!Kout->allFinite()) throw std::runtime_error("bem: non-finite entry in K");
    }
}

}  // namespace

MatrixXcd assemble_V(const ComplexFrequency& s, const BoundarySpace& bspace,
                     const QuadratureConfig& quad, const MaterialParams& material, int threads) {
    MatrixXcd V;
    assemble_vk(s, bspace, quad, material, threads, &V, nullptr);
    return V;
}

MatrixXcd assemble_K(const ComplexFrequency& s, const BoundarySpace& bspace,
                     const QuadratureConfig& quad, const MaterialParams& material, int threads) {
    MatrixXcd K;
    assemble_vk(s, bspace, quad, material, threads, nullptr, &K);
    return K;
}

CalderonMatrix assemble_B(const ComplexFrequency& s, const BoundarySpace& bspace,
                          const QuadratureConfig& quad, const MaterialParams& material,
                          int threads) {
    CalderonMatrix out;
    assemble_vk(s, bspace, quad, material, threads, &out.V, &out.K);
    const int n = out.dim();
    const double inv_mu = 1.0 / material.mu;
    const double em = material.eps_mu();
    out.B.resize(2 * n, 2 * n);
    out.B.topLeftCorner(n, n) = inv_mu * out.V;
    out.B.topRightCorner(n, n) = inv_mu * out.K;
    out.B.bottomLeftCorner(n, n) = -inv_mu * out.K;
    out.B.bottomRightCorner(n, n) = (inv_mu * em) * out.V;
    return out;
}

namespace {

// Plain bilinear cross product; Eigen's cross() conjugates complex operands.
inline Eigen::Vector3cd complex_cross(const Eigen::Vector3cd& a, const Eigen::Vector3cd& b) {
    return {a(1) * b(2) - a(2) * b(1), a(2) * b(0) - a(0) * b(2), a(0) * b(1) - a(1) * b(0)};
}

double surface_clearance(const SurfaceMesh& surf, const Vec3& x) {
    double d = std::numeric_limits<double>::infinity();
    for (std::size_t f = 0; f < surf.n_triangles(); ++f) {
        const auto& t = surf.triangles[f];
        Vec3 c = (surf.nodes[t[0]] + surf.nodes[t[1]] + surf.nodes[t[2]]) / 3.0;
        d = std::min(d, (x - c).norm());
        for (int l = 0; l < 3; ++l) d = std::min(d, (x - surf.nodes[t[l]]).norm());
    }
    return d;
}

double max_panel_diameter(const SurfaceMesh& surf) {
    double h = 0.0;
    for (std::size_t f = 0; f < surf.n_triangles(); ++f)
        h = std::max(h, triangle_diameter(surf, static_cast<int>(f)));
    return h;
}

Eigen::Vector3cd evaluate_complex(const BoundarySpace& bspace, const VectorXcd& coeffs, int tri,
                                  double a, double b) {
    Eigen::VectorXd re = coeffs.real(), im = coeffs.imag();
    return bspace.evaluate(re, tri, a, b).cast<Complex>() +
           Complex(0.0, 1.0) * bspace.evaluate(im, tri, a, b).cast<Complex>();
}

Complex face_divergence(const BoundarySpace& bspace, const VectorXcd& coeffs, int tri) {
    const auto& t = bspace.surface().triangles[tri];
    Complex div = 0.0;
    for (int lv = 0; lv < 3; ++lv)
        for (int i = 0; i < 3; ++i) {
            int k = bspace.retained_index(3 * t[lv] + i);
            if (k >= 0) div += coeffs[k] * bspace.candidate_divergence(tri, 3 * t[lv] + i);
        }
    return div;
}

void check_clearance(const SurfaceMesh& surf, const Vec3& x, const QuadratureConfig& quad) {
    double h = max_panel_diameter(surf);
    if (surface_clearance(surf, x) <= quad.near_threshold * h)
        throw std::invalid_argument(
            "potential evaluation point within " + std::to_string(quad.near_threshold) +
            " panel diameters of the surface; refine the evaluation instead");
}

}  // namespace

Eigen::Vector3cd single_layer_eval(const ComplexFrequency& s, const BoundarySpace& bspace,
                                   const VectorXcd& phi, const Vec3& x,
                                   const MaterialParams& material, const QuadratureConfig& quad) {
    s.validate();
    const SurfaceMesh& surf = bspace.surface();
    check_clearance(surf, x, quad);
    const auto& rule = triangle_rule(12);
    Eigen::Vector3cd acc_vec = Eigen::Vector3cd::Zero();
    Eigen::Vector3cd acc_grad = Eigen::Vector3cd::Zero();
    for (std::size_t f = 0; f < surf.n_triangles(); ++f) {
        const auto& t = surf.triangles[f];
        const Vec3& p0 = surf.nodes[t[0]];
        Vec3 e1 = surf.nodes[t[1]] - p0, e2 = surf.nodes[t[2]] - p0;
        Complex divf = face_divergence(bspace, phi, static_cast<int>(f));
        for (const auto& q : rule) {
            Vec3 y = p0 + q.a * e1 + q.b * e2;
            double w = q.w * 2.0 * surf.areas[f];
            Complex G = kernel(s, x - y, material);
            acc_vec += (w * G) * evaluate_complex(bspace, phi, static_cast<int>(f), q.a, q.b);
            acc_grad += (w * divf) * kernel_gradient(s, x - y, material);
        }
    }
    return -s.s * acc_vec + acc_grad / (s.s * material.eps_mu());
}

Eigen::Vector3cd double_layer_eval(const ComplexFrequency& s, const BoundarySpace& bspace,
                                   const VectorXcd& psi, const Vec3& x,
                                   const MaterialParams& material, const QuadratureConfig& quad) {
    s.validate();
    const SurfaceMesh& surf = bspace.surface();
    check_clearance(surf, x, quad);
    const auto& rule = triangle_rule(12);
    Eigen::Vector3cd acc = Eigen::Vector3cd::Zero();
    for (std::size_t f = 0; f < surf.n_triangles(); ++f) {
        const auto& t = surf.triangles[f];
        const Vec3& p0 = surf.nodes[t[0]];
        Vec3 e1 = surf.nodes[t[1]] - p0, e2 = surf.nodes[t[2]] - p0;
        for (const auto& q : rule) {
            Vec3 y = p0 + q.a * e1 + q.b * e2;
            double w = q.w * 2.0 * surf.areas[f];
            Eigen::Vector3cd gv = kernel_gradient(s, x - y, material);
            Eigen::Vector3cd pv = evaluate_complex(bspace, psi, static_cast<int>(f), q.a, q.b);
            acc += w * complex_cross(gv, pv);
        }
    }
    return acc;
}

CoercivityReportEntry coercivity_probe(const CalderonMatrix& B, const MaterialParams& material,
                                       const Complex& s, const Eigen::MatrixXd& gram, int trials,
                                       unsigned seed) {
    if (trials < 1) throw std::invalid_argument("coercivity_probe: trials >= 1");
    const int n2 = static_cast<int>(B.B.rows());
    const int n = n2 / 2;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    CoercivityReportEntry entry;
    entry.s = s;
    double em = material.eps_mu();
    entry.m_s = std::min(1.0, std::norm(s) * em) * s.real();
    double min_rayleigh = std::numeric_limits<double>::infinity();
    double min_beta = std::numeric_limits<double>::infinity();
    for (int it = 0; it < trials; ++it) {
        VectorXcd x(n2);
        for (int i = 0; i < n2; ++i) x[i] = Complex(normal(rng), normal(rng));
        x /= x.norm();
        double rayleigh = (x.adjoint() * (B.B * x))(0, 0).real();
        min_rayleigh = std::min(min_rayleigh, rayleigh);
        VectorXcd phi = x.head(n), psi = x.tail(n);
        double wphi = (phi.adjoint() * (gram * phi))(0, 0).real() / std::norm(s);
        double wpsi = (psi.adjoint() * (gram * psi))(0, 0).real() / std::norm(s);
        double weight = entry.m_s * (wphi / em + wpsi);
        if (weight > 0.0) min_beta = std::min(min_beta, rayleigh / weight);
    }
    entry.min_rayleigh = min_rayleigh;
    entry.beta_estimate = min_beta;
    return entry;
}

void export_dense_complex(std::ostream& os, const MatrixXcd& A) {
    os << "densecomplex " << A.rows() << " " << A.cols() << "\n";
    for (int i = 0; i < A.rows(); ++i)
        for (int j = 0; j < A.cols(); ++j)
            os << i << " " << j << " " << format_double_17g(A(i, j).real()) << " "
               << format_double_17g(A(i, j).imag()) << "\n";
}

}  // namespace maxtbc
