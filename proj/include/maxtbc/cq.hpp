#pragma once

#include <Eigen/Dense>
#include <complex>
#include <functional>
#include <string>
#include <vector>

namespace maxtbc {

using Complex = std::complex<double>;

// BDF2 generating function delta(zeta) = (1 - zeta) + (1 - zeta)^2 / 2.
Complex bdf2_delta(Complex zeta);

struct CQOptions {
    double lambda = 0.0;        // contour radius; 0 picks eps^(1/(2N)), eps = 1e-16
    int contour_points = 0;     // L; 0 picks 2N (requires L >= N+1)
    bool conjugate_symmetric = true;  // exploit symbol(conj s) = conj(symbol(s))
    double imag_tol = 1e-8;     // relative imaginary-residue bound before dropping
    double memory_cap_gb = 4.0;
    std::string cache_dir;      // when set, weight matrices are cached on disk
    std::string cache_key;      // extra key material (mesh hash, quadrature, ...)
    int threads = 0;
};

struct CQScalarWeights {
    double dt = 0.0;
    int steps = 0;  // N; weights has N+1 entries
    std::vector<double> weights;
};

struct CQWeights {
    double dt = 0.0;
    int steps = 0;
    std::vector<Eigen::MatrixXd> weights;  // B_0 .. B_N
    int dim() const { return weights.empty() ? 0 : static_cast<int>(weights.front().rows()); }
};

using ScalarSymbol = std::function<Complex(Complex)>;
using MatrixSymbol = std::function<Eigen::MatrixXcd(Complex)>;

// Coefficients B_n of symbol(delta(zeta)/dt) = sum_n B_n zeta^n, evaluated by
// the scaled contour sums B_n ~ (lambda^-n / L) sum_l symbol(delta(lambda
// e^{-2 pi i l/L})/dt) e^{2 pi i l n/L}.
CQScalarWeights compute_weights_scalar(const ScalarSymbol& symbol, double dt, int n_steps,
                                       const CQOptions& opts = {});
CQWeights compute_weights(const MatrixSymbol& symbol, int dim, double dt, int n_steps,
                          const CQOptions& opts = {});

// (B(dt_partial) w)(n dt) = sum_{j<=n} B_{n-j} w_j.
double discrete_convolution(const CQScalarWeights& w, const std::vector<double>& samples, int n);
Eigen::VectorXd discrete_convolution(const CQWeights& w,
                                     const std::vector<Eigen::VectorXd>& samples, int n);

struct HerglotzCheck {
    double lhs = 0.0;    // dt * sum_n rho^{2n} <w_n, (B w)_n>
    double rhs = 0.0;    // dt * sum_n rho^{2n} weighted surrogate norms of the CQ antiderivative
    double scale = 0.0;  // magnitude proxy for the lhs tolerances
    double rho = 0.0;
};

// Scalar instance of the time-discrete coercivity sum with rho = e^{-dt/T},
// T = N dt.
HerglotzCheck check_discrete_herglotz(const CQScalarWeights& weights,
                                      const std::vector<double>& samples);

// Calderon instance: samples are stacked (phi; psi) coefficient vectors, the
// pairing of the boundary functions is 2 x^T (conv) and the right-hand side
// uses the L2(Gamma) surrogate Gram for both halves.
HerglotzCheck check_discrete_herglotz(const CQWeights& weights,
                                      const std::vector<Eigen::VectorXd>& samples,
                                      const Eigen::MatrixXd& gram, double eps_mu);

}  // namespace maxtbc
