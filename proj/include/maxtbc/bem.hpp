#pragma once

#include <Eigen/Dense>
#include <complex>
#include <iosfwd>

#include "maxtbc/dg.hpp"
#include "maxtbc/mesh.hpp"

namespace maxtbc {

using Complex = std::complex<double>;
using MatrixXcd = Eigen::MatrixXcd;
using VectorXcd = Eigen::VectorXcd;

// Laplace-transform frequency; every bound below requires Re s > 0.
struct ComplexFrequency {
    Complex s;
    void validate() const;
};

struct QuadratureConfig {
    int regular_order = 6;        // Gauss points per triangle, separated pairs
    int sauter_schwab_order = 4;  // 1D order per dimension, singular pairs
    double near_threshold = 1.5;  // panel-diameter multiple switching to the refined rule
    void validate() const;
};

// Fundamental solution G(s,z) = exp(-s sqrt(eps mu) |z|) / (4 pi |z|).
Complex kernel(const ComplexFrequency& s, const Vec3& z, const MaterialParams& material);
// grad_x G(s, x-y) evaluated at z = x-y.
Eigen::Vector3cd kernel_gradient(const ComplexFrequency& s, const Vec3& z,
                                 const MaterialParams& material);

// Electric single layer potential S(s)phi(x) and double layer D(s)psi(x)
// evaluated at a point x off the boundary, for densities given as retained
// boundary-space coefficients.
Eigen::Vector3cd single_layer_eval(const ComplexFrequency& s, const BoundarySpace& bspace,
                                   const VectorXcd& phi, const Vec3& x,
                                   const MaterialParams& material,
                                   const QuadratureConfig& quad = {});
Eigen::Vector3cd double_layer_eval(const ComplexFrequency& s, const BoundarySpace& bspace,
                                   const VectorXcd& psi, const Vec3& x,
                                   const MaterialParams& material,
                                   const QuadratureConfig& quad = {});

// Galerkin matrices under the anti-symmetric pairing (entries carry the 1/2
// factor of the discretization):
//   V(s) = 1/2 [ s (G b_k, b_k') + s^{-1}(eps mu)^{-1} (G div b_k, div b_k') ]
//   K(s) = 1/2 (grad_x G . (b_k'(y) x b_k(x)))
// Both matrices are symmetric; weakly/strongly singular pairs are integrated
// with Sauter-Schwab transforms, near pairs with a refined tensor rule.
MatrixXcd assemble_V(const ComplexFrequency& s, const BoundarySpace& bspace,
                     const QuadratureConfig& quad, const MaterialParams& material,
                     int threads = 0);
MatrixXcd assemble_K(const ComplexFrequency& s, const BoundarySpace& bspace,
                     const QuadratureConfig& quad, const MaterialParams& material,
                     int threads = 0);

struct CalderonMatrix {
    MatrixXcd V;
    MatrixXcd K;
    MatrixXcd B;  // mu^{-1} [[V, K], [-K, eps mu V]]
    int dim() const { return static_cast<int>(V.rows()); }
};

// The 2N x 2N block operator coupling (phi; psi). The (2,2) block carries
// +eps mu V: both diagonal blocks are positive-type, which is what the energy
// identity behind the coercivity bound produces (see coercivity_probe).
CalderonMatrix assemble_B(const ComplexFrequency& s, const BoundarySpace& bspace,
                          const QuadratureConfig& quad, const MaterialParams& material,
                          int threads = 0);

struct CoercivityReportEntry {
    Complex s;
    double min_rayleigh = 0.0;  // min over trials of Re(x* B x) / |x|^2
    double m_s = 0.0;           // min{1, |s|^2 eps mu} Re s
    double beta_estimate = 0.0;
};

// Samples random complex unit vectors and returns the minimum of
// Re(x* B x)/|x|^2; a correctly assembled B(s) with Re s > 0 keeps this
// nonnegative up to quadrature slack. beta_estimate divides by the
// m(s)-weighted surrogate norm of the sampled vector.
CoercivityReportEntry coercivity_probe(const CalderonMatrix& B, const MaterialParams& material,
                                       const Complex& s, const Eigen::MatrixXd& gram, int trials,
                                       unsigned seed);

// ASCII export, header "densecomplex N M" then "i j re im".
void export_dense_complex(std::ostream& os, const MatrixXcd& A);

}  // namespace maxtbc
