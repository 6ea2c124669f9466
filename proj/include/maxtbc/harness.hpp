#pragma once

#include <functional>
#include <string>
#include <vector>

#include "maxtbc/bem.hpp"
#include "maxtbc/cq.hpp"
#include "maxtbc/dg.hpp"
#include "maxtbc/stepper.hpp"

namespace maxtbc {

// Continuous piecewise-linear interpolation into the dG space (vertex values
// replicated to the element-local dofs).
Eigen::VectorXd interpolate_interior(const DgSpace& space,
                                     const std::function<Vec3(const Vec3&)>& field);

struct BoundaryInterpolant {
    Eigen::VectorXd coeffs;  // retained-basis coefficients
    double residual = 0.0;   // relative L2(Gamma) projection residual
    bool warning = false;    // residual > 1e-8: filtered basis cannot represent the target
};

// Nodal interpolation of chi followed by the facewise cross with nu, then a
// least-squares projection onto the retained basis.
BoundaryInterpolant interpolate_boundary(const BoundarySpace& bspace,
                                         const std::function<Vec3(const Vec3&)>& chi);

// Anti-symmetric pairing Gram [b_k, b_j]_Gamma of the retained basis.
Eigen::MatrixXd pairing_matrix(const BoundarySpace& bspace);

// Point evaluation helpers for error integration between meshes.
class BoxLocator {
  public:
    BoxLocator(const DgSpace& space, const Vec3& origin, const Vec3& extents,
               const std::array<int, 3>& divisions);
    // Tet index and barycentric coordinates of x; throws if outside the box.
    std::pair<int, Eigen::Vector4d> locate(const Vec3& x) const;
    Vec3 evaluate(const Eigen::VectorXd& u, const Vec3& x) const;

  private:
    const DgSpace* space_;
    Vec3 origin_, extents_;
    std::array<int, 3> divisions_;
};

// Analytic oracle: u(x) = curl curl (G(s, x - x0) p), an exact solution of
// eps mu s^2 u + curl curl u = 0 away from x0.
struct DipoleField {
    Vec3 source = Vec3(3.0, 0.0, 0.0);
    Vec3 polarization = Vec3(0.0, 0.0, 1.0);
    ComplexFrequency s{Complex(1.0, 0.0)};
    MaterialParams material;

    Eigen::Vector3cd field(const Vec3& x) const;
    Eigen::Vector3cd curl_field(const Vec3& x) const;
    // gamma_N density before the facewise cross: s^{-1} curl u.
    Eigen::Vector3cd neumann_field(const Vec3& x) const;
};

struct DipoleTraces {
    VectorXcd phi;  // interpolated gamma_N u
    VectorXcd psi;  // interpolated gamma_T u
    double residual_phi = 0.0;
    double residual_psi = 0.0;
};

// Trace data of the dipole field, interpolated into the boundary space. The
// source must lie outside the domain so u is regular inside.
DipoleTraces dipole_trace_data(const DipoleField& dipole, const TetMesh& mesh,
                               const BoundarySpace& bspace);

// Galerkin residual of V(s) phi + K(s) psi - 1/2 (gamma_T u interpolant) in
// the discrete dual norm (L2 surrogate), relative to the data norm.
double calderon_projector_residual(const ComplexFrequency& s, const BoundarySpace& bspace,
                                   const QuadratureConfig& quad, const DipoleField& dipole,
                                   const TetMesh& mesh, int threads = 0);

struct TransparencyConfig {
    int divisions = 2;   // interior cube [0,1]^3 divisions
    int outer_scale = 3;  // reference box is the cube scaled by this odd factor
    double t_obs = 0.9;
    MaterialParams material;
    double alpha = 1.0;
    double cfl_safety = 0.9;
    double dt = 0.0;  // 0: cfl_safety * dt_max, snapped to an integer step count
    Vec3 pulse_center = Vec3(0.5, 0.5, 0.5);
    double pulse_radius = 0.3;
    Vec3 pulse_polarization = Vec3(1.0, 0.0, 0.0);
    bool reflective = false;  // negative control: boundary solve disabled
    QuadratureConfig quad;
    int threads = 0;
};

struct TransparencyResult {
    std::vector<double> t;
    std::vector<double> rel_error;  // per step, vs the instantaneous reference norm
    std::vector<double> ref_norm;   // |E_ref|_M restricted to the interior domain
    std::vector<double> run_norm;   // |E|_M of the interior run
    double first_contact = 0.0;     // physical: (dist(center,Gamma) - radius) sqrt(eps mu)
    double first_discrete_contact = 0.0;  // first step with nonzero boundary data
    double pre_contact_max = 0.0;   // max error while boundary data are zero (abs / ref scale)
    double window_error = 0.0;      // max error after contact / max ref norm in the window
    double dt = 0.0;
    int steps = 0;
};

// Coupled run on the small domain against a pure-interior reference run on
// the enlarged domain, both from the same compactly supported pulse; the
// reference is valid while waves cannot re-enter from the outer boundary.
TransparencyResult transparency_test(const TransparencyConfig& config);

struct ConvergenceLevel {
    double parameter = 0.0;  // h or dt
    double error = 0.0;
};

struct ConvergenceReport {
    std::string kind;
    std::vector<ConvergenceLevel> levels;  // coarse to fine
    double observed_order = 0.0;
    double observed_order_tail = 0.0;  // fit without the coarsest level
    bool conclusive = true;
    bool degenerate = false;
    std::string note;
};

struct ConvergenceConfig {
    std::string kind = "time";  // "space" | "time" | "joint"
    double t_end = 0.5;
    int time_mesh_divisions = 2;
    std::vector<int> space_divisions = {2, 3, 4};
    int reference_divisions = 5;
    int time_levels = 3;
    MaterialParams material;
    double alpha = 1.0;
    double cfl_safety = 0.9;
    Vec3 pulse_center = Vec3(0.5, 0.5, 0.5);
    double pulse_radius = 0.3;
    Vec3 pulse_polarization = Vec3(1.0, 0.0, 0.0);
    QuadratureConfig quad;
    int threads = 0;
};

// Self-convergence study against the finest level. Time studies share one
// mesh so coefficient differences isolate the time error; space and joint
// studies integrate pointwise differences over the reference mesh.
ConvergenceReport convergence_study(const ConvergenceConfig& config);

struct TimeDiscreteCoercivityEntry {
    double lhs = 0.0;
    double rhs = 0.0;
    double scale = 0.0;
};

struct CoercivityReport {
    std::vector<CoercivityReportEntry> laplace;         // per sampled s
    std::vector<TimeDiscreteCoercivityEntry> discrete;  // per random sequence
    double min_rayleigh = 0.0;
    double min_lhs_normalized = 0.0;  // min lhs/scale over sequences
    double beta_estimate = 0.0;
};

struct CoercivityConfig {
    std::vector<Complex> s_samples = {Complex(0.1, 0.0), Complex(1.0, 0.0), Complex(1.0, 5.0),
                                      Complex(10.0, 0.0)};
    int trials = 200;
    int sequences = 20;
    int sequence_length = 32;
    double dt = 0.05;
    unsigned seed = 7771;
    QuadratureConfig quad;
    MaterialParams material;
    int threads = 0;
};

CoercivityReport coercivity_report(const BoundarySpace& bspace, const CoercivityConfig& config);

}  // namespace maxtbc
