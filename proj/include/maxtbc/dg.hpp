#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <array>
#include <iosfwd>
#include <vector>

#include "maxtbc/mesh.hpp"

namespace maxtbc {

struct MaterialParams {
    double epsilon = 1.0;
    double mu = 1.0;
    void validate() const;
    double eps_mu() const { return epsilon * mu; }
};

// Vector-valued P1 dG space: 12 dofs per tet, layout dof = 12*tet + 4*comp + node,
// so the mass matrix is block diagonal with three identical 4x4 blocks per tet.
class DgSpace {
  public:
    explicit DgSpace(const TetMesh& mesh);

    const TetMesh& mesh() const { return *mesh_; }
    std::size_t n_dofs() const { return 12 * mesh_->n_tets(); }
    static int dof(int tet, int comp, int node) { return 12 * tet + 4 * comp + node; }

    double volume(int t) const { return vol_[t]; }
    const std::array<Vec3, 4>& barycentric_gradients(int t) const { return grad_[t]; }
    int local_vertex(int t, int volume_vertex) const;

    // Exact block mass algebra. The per-component block is (V/20)(I + J) with
    // J the all-ones matrix, so inverses and square roots are closed-form.
    Eigen::VectorXd apply_mass(const Eigen::VectorXd& u) const;
    Eigen::VectorXd apply_mass_inverse(const Eigen::VectorXd& u) const;
    Eigen::VectorXd apply_mass_inv_sqrt(const Eigen::VectorXd& u) const;
    double mass_norm_sq(const Eigen::VectorXd& u) const;  // u^T M u

    Eigen::Matrix<double, 12, 12> mass_block(int t) const;
    Eigen::SparseMatrix<double> mass_matrix() const;

    // Pointwise evaluation of a dG vector inside tet t at barycentric coords.
    Vec3 evaluate(const Eigen::VectorXd& u, int t, const Eigen::Vector4d& bary) const;

  private:
    const TetMesh* mesh_;
    std::vector<double> vol_;
    std::vector<std::array<Vec3, 4>> grad_;
};

// Boundary element space: facewise (chi x nu) fields with chi piecewise linear
// and continuous. Candidates are (e_i N_k) x nu per surface node k and
// component i; rank filtering drops the L2(Gamma)-null directions (the
// nu-parallel combinations on flat patches) by pivoted Cholesky on the
// candidate Gram matrix.
class BoundarySpace {
  public:
    explicit BoundarySpace(const SurfaceMesh& surface, double rank_tol = 1e-10);

    const SurfaceMesh& surface() const { return *surf_; }
    int n_candidates() const { return 3 * static_cast<int>(surf_->n_nodes()); }
    int dim() const { return static_cast<int>(kept_.size()); }
    const std::vector<int>& kept() const { return kept_; }
    int retained_index(int candidate) const { return retained_of_candidate_[candidate]; }
    static int candidate_node(int candidate) { return candidate / 3; }
    static int candidate_comp(int candidate) { return candidate % 3; }

    // In-plane gradient of the nodal hat at local vertex lv of triangle tri.
    Vec3 hat_gradient(int tri, int lv) const { return hat_grad_[tri][lv]; }
    // Tangent direction e_comp x nu of a candidate on a given triangle.
    Vec3 candidate_tangent(int tri, int comp) const;
    // Facewise-constant surface divergence of a candidate on triangle tri
    // (zero if the candidate's node is not a vertex of tri).
    double candidate_divergence(int tri, int candidate) const;

    const Eigen::MatrixXd& gram() const { return gram_; }  // L2(Gamma), retained basis

    // Evaluate a retained-coefficient field on triangle tri at unit-triangle
    // coordinates (a, b).
    Vec3 evaluate(const Eigen::VectorXd& coeffs, int tri, double a, double b) const;

  private:
    const SurfaceMesh* surf_;
    std::vector<int> kept_;
    std::vector<int> retained_of_candidate_;
    std::vector<std::array<Vec3, 3>> hat_grad_;
    Eigen::MatrixXd gram_;
};

// Facewise linear 3-vector field on a surface; may jump across edges.
struct FaceField {
    std::vector<std::array<Vec3, 3>> value;  // per triangle, per local vertex
};

struct OperatorSet {
    const DgSpace* space = nullptr;
    const BoundarySpace* bspace = nullptr;
    MaterialParams material;
    Eigen::SparseMatrix<double> Q;   // curl form, Q(j,j') = (curl_h b_j', b_j)
    Eigen::SparseMatrix<double> D;   // -(Q + Q^T)/2, exactly symmetric
    Eigen::SparseMatrix<double> T;   // boundary trace pairing [gamma_T b_j, gamma_T b_j']
    Eigen::SparseMatrix<double> C1;  // N_Omega x N_Gamma coupling
    Eigen::SparseMatrix<double> C0;  // mu^{-1} C1
    Eigen::MatrixXd MG_l2;           // boundary Gram surrogate (diagnostics only)
};

Eigen::SparseMatrix<double> assemble_curl_form(const DgSpace& space, int threads = 0);
Eigen::SparseMatrix<double> assemble_curl_matrix(const DgSpace& space, int threads = 0);
Eigen::SparseMatrix<double> assemble_trace_pairing(const DgSpace& space,
                                                   const SurfaceMesh& surf);
Eigen::SparseMatrix<double> assemble_coupling(const DgSpace& space, const BoundarySpace& bspace);

OperatorSet assemble_operators(const DgSpace& space, const BoundarySpace& bspace,
                               const MaterialParams& material, int threads = 0);

// Interior-only variant for runs without boundary coupling: C1, C0, T and the
// boundary Gram stay empty.
OperatorSet assemble_interior_operators(const DgSpace& space, const MaterialParams& material,
                                        int threads = 0);

// Load vector w with w_j = (curl_h u, b_j).
Eigen::VectorXd apply_discrete_curl(const Eigen::SparseMatrix<double>& Q,
                                    const Eigen::VectorXd& u);

FaceField tangential_trace(const DgSpace& space, const SurfaceMesh& surf,
                           const Eigen::VectorXd& u);
std::array<Vec3, 3> tangential_trace(const DgSpace& space, const SurfaceMesh& surf,
                                     const Eigen::VectorXd& u, int tri);

// Anti-symmetric pairing int_Gamma (a x nu) . b dsigma (3-point rule, exact
// for the facewise quadratic integrands arising from linear fields).
double boundary_pairing(const SurfaceMesh& surf, const FaceField& a, const FaceField& b);

// |(curl_h u, w) - (u, curl_h w) + [gamma_T u, gamma_T w]_Gamma|, which is the
// discrete Green identity residual; the pairing enters with the sign that
// reduces the dG weak form to Maxwell's equations for smooth fields.
double check_discrete_green(const OperatorSet& ops, const Eigen::VectorXd& u,
                            const Eigen::VectorXd& w);

// ASCII export, header "sparse N M nnz" then "i j value" triplets.
void export_sparse(std::ostream& os, const Eigen::SparseMatrix<double>& A);

}  // namespace maxtbc
