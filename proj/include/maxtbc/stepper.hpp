#pragma once

#include <Eigen/Dense>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "maxtbc/cq.hpp"
#include "maxtbc/dg.hpp"

namespace maxtbc {

// State of the coupled scheme. Between steps H lives at the half grid
// (t_{n-1/2}); the freshly built initial state carries H at t_0 instead and
// the first half step converts it.
struct CoupledState {
    Eigen::VectorXd E;       // t_n
    Eigen::VectorXd H;       // t_{n-1/2}, or t_0 when h_at_integer_time
    Eigen::VectorXd psi;     // t_n
    std::vector<Eigen::VectorXd> history;  // stacked (phi^{j+1/2}; psibar^{j+1/2}), j < n
    int step = 0;
    double time = 0.0;
    bool h_at_integer_time = true;
};

struct CflEstimate {
    double dt_max = 0.0;  // sqrt(eps mu) / norm; infinity for a zero operator
    double norm = 0.0;    // ||M^{-1/2} D M^{-1/2}||_2 estimate
    int iterations = 0;
    bool converged = false;
    bool unbounded = false;
};

// Power iteration on (M^{-1/2} D M^{-1/2})^2 with block-exact M^{-1/2}.
// Stops at relative change < 1e-8 or 500 iterations; a non-converged run
// reports the best lower bound of the norm reached.
CflEstimate cfl_limit(const OperatorSet& ops, const MaterialParams& material,
                      unsigned seed = 20240601);

// G = [[1/2 eps^{-1} C0^T M^{-1} C0, 0], [0, 2 alpha mu^{-1} C1^T M^{-1} C1]],
// exactly symmetric by construction.
Eigen::MatrixXd assemble_G(const OperatorSet& ops, const MaterialParams& material, double alpha);

struct StepOperator {
    Eigen::MatrixXd B0;
    Eigen::MatrixXd G;
    double dt = 0.0;
    double alpha = 1.0;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu;  // of B0 + dt G
};

// Factorizes B0 + dt G once; throws with a condition estimate if the solve
// residual on a random probe exceeds 1e-10.
StepOperator make_step_operator(const Eigen::MatrixXd& B0, const Eigen::MatrixXd& G, double dt,
                                double alpha);

// Carries only the step size, for runs with the boundary solve disabled.
StepOperator passive_step_operator(double dt);

// mu M H' = mu M H + w dt (D E - C1 psi), w = 1/2 for a half step from an
// integer time, w = 1 for the combined half-to-half step.
Eigen::VectorXd leapfrog_step_H(const OperatorSet& ops, const MaterialParams& material, double dt,
                                const Eigen::VectorXd& H, const Eigen::VectorXd& E,
                                const Eigen::VectorXd& psi, bool half);

// eps M E' = eps M E + dt (-D^T H_half - C0 phi_half + M J_half).
Eigen::VectorXd leapfrog_step_E(const OperatorSet& ops, const MaterialParams& material, double dt,
                                const Eigen::VectorXd& E, const Eigen::VectorXd& H_half,
                                const Eigen::VectorXd& phi_half, const Eigen::VectorXd& J_half);

struct BoundaryStepResult {
    Eigen::VectorXd phi_half;  // phi^{n+1/2}
    Eigen::VectorXd psibar;    // psibar^{n+1/2}
    Eigen::VectorXd psi_next;  // psi^{n+1} = 2 psibar - psi^n
};

// Solves the CQ boundary equation at t_{n+1/2}: moves the convolution history
// to the right-hand side, eliminates E^{n+1} through the leapfrog update and
// psidot through psibar, and solves with the cached (B0 + dt G) factorization.
BoundaryStepResult boundary_step(const OperatorSet& ops, const CQWeights& weights,
                                 const StepOperator& stepop, const MaterialParams& material,
                                 const std::vector<Eigen::VectorXd>& history, int n,
                                 const Eigen::VectorXd& E, const Eigen::VectorXd& H_half,
                                 const Eigen::VectorXd& psi, const Eigen::VectorXd& J_half,
                                 int threads = 0);

// Residual of the discrete boundary equation after the full step, evaluated
// from the updated fields; used by the self-consistency tests.
double boundary_residual(const OperatorSet& ops, const CQWeights& weights,
                         const StepOperator& stepop, const MaterialParams& material,
                         const std::vector<Eigen::VectorXd>& history, int n,
                         const Eigen::VectorXd& E_old, const Eigen::VectorXd& E_new,
                         const Eigen::VectorXd& H_half, const Eigen::VectorXd& psi_old,
                         const Eigen::VectorXd& psi_next, const Eigen::VectorXd& J_half);

struct EnergyPair {
    double calE = 0.0;    // eps/2 |E|_M^2 + mu/2 |H|_M^2 with H at integer time
    double calE_n = 0.0;  // eps/2 |E|_M^2 + mu/4 (|H^{n+1/2}|_M^2 + |H^{n-1/2}|_M^2)
};

EnergyPair discrete_energy(const DgSpace& space, const MaterialParams& material,
                           const Eigen::VectorXd& E, const Eigen::VectorXd& H_plus,
                           const Eigen::VectorXd& H_minus);

struct EnergyRecord {
    std::vector<double> t, calE, calE_n, norm_phi, norm_psi;
    void write_csv(std::ostream& os) const;
    void write_csv(const std::string& path) const;
};

using SourceFn = std::function<Eigen::VectorXd(double)>;  // nodal J coefficients at time t

struct RunConfig {
    double dt = 0.0;
    int n_steps = 0;
    double alpha = 1.0;
    bool coupled = true;  // false imposes phi = psi = 0 (reflective closure)
    int threads = 0;
};

struct RunResult {
    CoupledState state;      // after the last completed step
    Eigen::VectorXd H_lead;  // H^{n+1/2} ahead of the final integer time
    EnergyRecord record;
    bool aborted = false;
    int abort_step = -1;
    // E snapshots at every integer step when requested (for error studies).
    std::vector<Eigen::VectorXd> e_snapshots;
};

// Executes the coupled scheme from the given state. The substep order per
// step is: H half step, boundary solve (anticipating E^{n+1}), E step; the H
// half steps of consecutive steps are fused. Aborts on non-finite state.
RunResult run(const OperatorSet& ops, const CQWeights& weights, const StepOperator& stepop,
              const RunConfig& config, CoupledState state, const SourceFn& source = nullptr,
              bool keep_snapshots = false);

CoupledState make_initial_state(const DgSpace& space, const BoundarySpace& bspace,
                                const Eigen::VectorXd& E0, const Eigen::VectorXd& H0);

// Checkpoint blob, version 1. Layout: magic "mxck", u32 version, i64 step,
// f64 time, u8 h_at_integer_time, i64 sizes (n_dofs, n_gamma2, n_history),
// then raw little-endian doubles: E, H, psi, history entries in order.
void save_checkpoint(const std::string& path, const CoupledState& state);
CoupledState load_checkpoint(const std::string& path);

// Smooth compactly supported bump p * A * exp(1 - 1/(1 - (|x-c|/R)^2)) for
// |x-c| < R, interpolated into the dG space.
Eigen::VectorXd bump_interpolant(const DgSpace& space, const Vec3& center, double radius,
                                 const Vec3& polarization, double amplitude);

// Divergence-free pulse grad(b) x p with the same bump profile b; initial
// electric fields built from it carry no electrostatic remainder.
Eigen::VectorXd solenoidal_bump_interpolant(const DgSpace& space, const Vec3& center,
                                            double radius, const Vec3& polarization,
                                            double amplitude);

}  // namespace maxtbc
