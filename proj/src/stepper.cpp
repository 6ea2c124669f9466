#include "maxtbc/stepper.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

#include "maxtbc/util.hpp"

namespace maxtbc {

CflEstimate cfl_limit(const OperatorSet& ops, const MaterialParams& material, unsigned seed) {
    const DgSpace& space = *ops.space;
    const auto n = space.n_dofs();
    auto apply_S = [&](const Eigen::VectorXd& x) {
        return space.apply_mass_inv_sqrt(ops.D * space.apply_mass_inv_sqrt(x));
    };
    // Block power iteration on S^2 with Rayleigh-Ritz extraction. The top of
    // the spectrum of the centered-flux operator on structured meshes is
    // degenerate, so a single-vector iteration stalls; a small orthonormal
    // block restores geometric convergence of the leading Ritz value.
    const int block = static_cast<int>(std::min<std::size_t>(8, n));
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    Eigen::MatrixXd V(n, block);
    for (std::size_t i = 0; i < n; ++i)
        for (int j = 0; j < block; ++j) V(i, j) = dist(rng);
    {
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(V);
        V = qr.householderQ() * Eigen::MatrixXd::Identity(n, block);
    }

    CflEstimate est;
    double prev = 0.0;
    for (int it = 1; it <= 500; ++it) {
        Eigen::MatrixXd W(n, block);
        for (int j = 0; j < block; ++j) W.col(j) = apply_S(apply_S(V.col(j)));
        Eigen::MatrixXd R = V.transpose() * W;  // Ritz projection of S^2
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (R + R.transpose()));
        double lam = es.eigenvalues().maxCoeff();
        est.iterations = it;
        if (!(lam > 0.0)) {
            est.unbounded = true;
            est.converged = true;
            est.norm = 0.0;
            est.dt_max = std::numeric_limits<double>::infinity();
            return est;
        }
        double norm_est = std::sqrt(lam);
        est.norm = norm_est;
        if (it > 1 && std::abs(norm_est - prev) <= 1e-8 * norm_est) {
            est.converged = true;
            break;
        }
        prev = norm_est;
        Eigen::HouseholderQR<Eigen::MatrixXd> qr(W);
        V = qr.householderQ() * Eigen::MatrixXd::Identity(n, block);
    }
    est.dt_max = std::sqrt(material.eps_mu()) / est.norm;
    return est;
}

Eigen::MatrixXd assemble_G(const OperatorSet& ops, const MaterialParams& material, double alpha) {
    if (alpha < 0.0) throw std::invalid_argument("assemble_G: alpha must be >= 0");
    const DgSpace& space = *ops.space;
    const int ng = static_cast<int>(ops.C1.cols());
    auto gram_of = [&](const Eigen::SparseMatrix<double>& C) {
        Eigen::MatrixXd Y(C.rows(), C.cols());
        Y = Eigen::MatrixXd(C);
        for (int j = 0; j < Y.cols(); ++j) Y.col(j) = space.apply_mass_inv_sqrt(Y.col(j));
        Eigen::MatrixXd P = Y.transpose() * Y;
        return Eigen::MatrixXd(0.5 * (P + P.transpose()));  // exact symmetry
    };
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(2 * ng, 2 * ng);
    G.topLeftCorner(ng, ng) = (0.5 / material.epsilon) * gram_of(ops.C0);
    G.bottomRightCorner(ng, ng) = (2.0 * alpha / material.mu) * gram_of(ops.C1);
    return G;
}

StepOperator make_step_operator(const Eigen::MatrixXd& B0, const Eigen::MatrixXd& G, double dt,
                                double alpha) {
    if (B0.rows() != G.rows() || B0.cols() != G.cols())
        throw std::invalid_argument("make_step_operator: dimension mismatch");
    StepOperator op;
    op.B0 = B0;
    op.G = G;
    op.dt = dt;
    op.alpha = alpha;
    Eigen::MatrixXd A = B0 + dt * G;
    op.lu.compute(A);
    // Residual probe guards against a numerically singular step matrix.
    std::mt19937_64 rng(7);
    std::normal_distribution<double> dist(0.0, 1.0);
    Eigen::VectorXd b(A.rows());
    for (int i = 0; i < b.size(); ++i) b[i] = dist(rng);
    Eigen::VectorXd x = op.lu.solve(b);
    double res = (A * x - b).norm();
    if (!(res <= 1e-10 * b.norm()))
        throw std::runtime_error("step matrix B0 + dt G is numerically singular (rcond ~ " +
                                 std::to_string(op.lu.rcond()) + ")");
    return op;
}

StepOperator passive_step_operator(double dt) {
    StepOperator op;
    op.dt = dt;
    return op;
}

Eigen::VectorXd leapfrog_step_H(const OperatorSet& ops, const MaterialParams& material, double dt,
                                const Eigen::VectorXd& H, const Eigen::VectorXd& E,
                                const Eigen::VectorXd& psi, bool half) {
    double w = (half ? 0.5 : 1.0) * dt / material.mu;
    Eigen::VectorXd load = ops.D * E;
    if (psi.size() > 0) load -= ops.C1 * psi;
    return H + w * ops.space->apply_mass_inverse(load);
}

Eigen::VectorXd leapfrog_step_E(const OperatorSet& ops, const MaterialParams& material, double dt,
                                const Eigen::VectorXd& E, const Eigen::VectorXd& H_half,
                                const Eigen::VectorXd& phi_half, const Eigen::VectorXd& J_half) {
    Eigen::VectorXd load = -(ops.D.transpose() * H_half);
    if (phi_half.size() > 0) load -= ops.C0 * phi_half;
    if (J_half.size() > 0) load += ops.space->apply_mass(J_half);
    return E + (dt / material.epsilon) * ops.space->apply_mass_inverse(load);
}

namespace {

// History part of the discrete convolution at step n: sum_{j<n} B_{n-j} x_j,
// chunked with an ordered reduction so results are reproducible for a fixed
// thread count.
Eigen::VectorXd history_convolution(const CQWeights& weights,
                                    const std::vector<Eigen::VectorXd>& history, int n,
                                    int threads) {
    const int dim = weights.dim();
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(dim);
    if (n == 0 || history.empty()) return acc;
    const int count = std::min<int>(n, static_cast<int>(history.size()));
    const int nthreads = std::min(resolve_thread_count(threads), count);
    std::vector<Eigen::VectorXd> partial(nthreads, Eigen::VectorXd::Zero(dim));
    std::vector<int> bounds(nthreads + 1);
    for (int c = 0; c <= nthreads; ++c) bounds[c] = count * c / nthreads;
    parallel_for(
        static_cast<std::size_t>(nthreads),
        [&](std::size_t t0, std::size_t t1) {
            for (std::size_t t = t0; t < t1; ++t)
                for (int j = bounds[t]; j < bounds[t + 1]; ++j)
                    partial[t].noalias() += weights.weights[n - j] * history[j];
        },
        nthreads);
    for (const auto& p : partial) acc += p;
    return acc;
}

}  // namespace

BoundaryStepResult boundary_step(const OperatorSet& ops, const CQWeights& weights,
                                 const StepOperator& stepop, const MaterialParams& material,
                                 const std::vector<Eigen::VectorXd>& history, int n,
                                 const Eigen::VectorXd& E, const Eigen::VectorXd& H_half,
                                 const Eigen::VectorXd& psi, const Eigen::VectorXd& J_half,
                                 int threads) {
    const DgSpace& space = *ops.space;
    const int ng = static_cast<int>(ops.C1.cols());
    const double dt = stepop.dt;

    // E-bar contribution with phi unknown eliminated: Ebar = E + (dt/2)
    // eps^{-1} M^{-1}(-D^T H_half - C0 phi + M J); the phi part moved into
    // B0 + dt G.
    Eigen::VectorXd load = -(ops.D.transpose() * H_half);
    if (J_half.size() > 0) load += space.apply_mass(J_half);
    Eigen::VectorXd Ebar_known = E + (0.5 * dt / material.epsilon) * space.apply_mass_inverse(load);

    Eigen::VectorXd rhs(2 * ng);
    rhs.head(ng) = ops.C0.transpose() * Ebar_known;
    // Stabilizer: -alpha dt^2 mu^{-1} C1^T M^{-1} C1 psidot with
    // psidot = 2 (psibar - psi)/dt; the psibar part lives in dt G, the psi^n
    // part stays on the right.
    Eigen::VectorXd stab =
        (2.0 * stepop.alpha * dt / material.mu) *
        (ops.C1.transpose() * space.apply_mass_inverse(ops.C1 * psi));
    rhs.tail(ng) = ops.C1.transpose() * H_half + stab;

    rhs -= history_convolution(weights, history, n, threads);

    Eigen::VectorXd x = stepop.lu.solve(rhs);
    BoundaryStepResult out;
    out.phi_half = x.head(ng);
    out.psibar = x.tail(ng);
    out.psi_next = 2.0 * out.psibar - psi;
    return out;
}

double boundary_residual(const OperatorSet& ops, const CQWeights& weights,
                         const StepOperator& stepop, const MaterialParams& material,
                         const std::vector<Eigen::VectorXd>& history, int n,
                         const Eigen::VectorXd& E_old, const Eigen::VectorXd& E_new,
                         const Eigen::VectorXd& H_half, const Eigen::VectorXd& psi_old,
                         const Eigen::VectorXd& psi_next, const Eigen::VectorXd& J_half) {
    (void)J_half;
    const DgSpace& space = *ops.space;
    const int ng = static_cast<int>(ops.C1.cols());
    const double dt = stepop.dt;
    // Full convolution including the new half-step pair.
    Eigen::VectorXd conv = history_convolution(weights, history, n, 0);
    conv.noalias() += weights.weights[0] * history[n];
    Eigen::VectorXd rhs(2 * ng);
    Eigen::VectorXd Ebar = 0.5 * (E_new + E_old);
    rhs.head(ng) = ops.C0.transpose() * Ebar;
    Eigen::VectorXd psidot = (psi_next - psi_old) / dt;
    rhs.tail(ng) = ops.C1.transpose() * H_half -
                   (stepop.alpha * dt * dt / material.mu) *
                       (ops.C1.transpose() * space.apply_mass_inverse(ops.C1 * psidot));
    double scale = rhs.norm();
    return (conv - rhs).norm() / (scale > 0.0 ? scale : 1.0);
}

EnergyPair discrete_energy(const DgSpace& space, const MaterialParams& material,
                           const Eigen::VectorXd& E, const Eigen::VectorXd& H_plus,
                           const Eigen::VectorXd& H_minus) {
    EnergyPair out;
    double e2 = space.mass_norm_sq(E);
    Eigen::VectorXd Hn = 0.5 * (H_plus + H_minus);
    out.calE = 0.5 * material.epsilon * e2 + 0.5 * material.mu * space.mass_norm_sq(Hn);
    out.calE_n = 0.5 * material.epsilon * e2 +
                 0.25 * material.mu * (space.mass_norm_sq(H_plus) + space.mass_norm_sq(H_minus));
    return out;
}

void EnergyRecord::write_csv(std::ostream& os) const {
    os << "t,calE,calE_n,norm_phi,norm_psi\n";
    for (std::size_t i = 0; i < t.size(); ++i)
        os << format_double_17g(t[i]) << "," << format_double_17g(calE[i]) << ","
           << format_double_17g(calE_n[i]) << "," << format_double_17g(norm_phi[i]) << ","
           << format_double_17g(norm_psi[i]) << "\n";
}

void EnergyRecord::write_csv(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("energy record: cannot open " + path);
    write_csv(os);
}

CoupledState make_initial_state(const DgSpace& space, const BoundarySpace& bspace,
                                const Eigen::VectorXd& E0, const Eigen::VectorXd& H0) {
    CoupledState st;
    st.E = E0.size() ? E0 : Eigen::VectorXd::Zero(space.n_dofs());
    st.H = H0.size() ? H0 : Eigen::VectorXd::Zero(space.n_dofs());
    st.psi = Eigen::VectorXd::Zero(bspace.dim());
    st.step = 0;
    st.time = 0.0;
    st.h_at_integer_time = true;
    return st;
}

RunResult run(const OperatorSet& ops, const CQWeights& weights, const StepOperator& stepop,
              const RunConfig& config, CoupledState state, const SourceFn& source,
              bool keep_snapshots) {
    const DgSpace& space = *ops.space;
    const MaterialParams& material = ops.material;
    const int ng = static_cast<int>(ops.C1.cols());
    const double dt = stepop.dt;
    RunResult result;
    EnergyRecord& rec = result.record;
    if (config.coupled && state.step + config.n_steps > weights.steps)
        throw std::invalid_argument("run: not enough CQ weights for the requested steps");

    auto gram_norm = [&](const Eigen::VectorXd& v) {
        return std::sqrt(std::max(0.0, v.dot(ops.MG_l2 * v)));
    };

    if (keep_snapshots) result.e_snapshots.push_back(state.E);
    for (int k = 0; k < config.n_steps; ++k) {
        const int n = state.step;
        Eigen::VectorXd H_prev = state.H;  // H^{n-1/2} (or H^n on the first step)
        Eigen::VectorXd H_half =
            leapfrog_step_H(ops, material, dt, state.H, state.E, state.psi,
                            state.h_at_integer_time);

        EnergyPair en = discrete_energy(space, material, state.E, H_half,
                                        state.h_at_integer_time ? H_half : H_prev);
        if (state.h_at_integer_time) {
            // No H^{n-1/2} exists at start-up; calE uses the exact integer H.
            en.calE = 0.5 * material.epsilon * space.mass_norm_sq(state.E) +
                      0.5 * material.mu * space.mass_norm_sq(H_prev);
        }
        rec.t.push_back(state.time);
        rec.calE.push_back(en.calE);
        rec.calE_n.push_back(en.calE_n);

        Eigen::VectorXd J_half;
        if (source) J_half = source(state.time + 0.5 * dt);

        Eigen::VectorXd phi_half = Eigen::VectorXd::Zero(ng);
        Eigen::VectorXd psi_next = Eigen::VectorXd::Zero(ng);
        if (config.coupled) {
            BoundaryStepResult b = boundary_step(ops, weights, stepop, material, state.history, n,
                                                 state.E, H_half, state.psi, J_half,
                                                 config.threads);
            phi_half = b.phi_half;
            psi_next = b.psi_next;
            Eigen::VectorXd pair(2 * ng);
            pair.head(ng) = b.phi_half;
            pair.tail(ng) = b.psibar;
            state.history.push_back(std::move(pair));
            rec.norm_phi.push_back(gram_norm(phi_half));
            rec.norm_psi.push_back(gram_norm(state.psi));
        } else {
            rec.norm_phi.push_back(0.0);
            rec.norm_psi.push_back(0.0);
        }

        state.E = leapfrog_step_E(ops, material, dt, state.E, H_half, phi_half, J_half);
        state.H = H_half;
        state.psi = psi_next;
        state.h_at_integer_time = false;
        state.step = n + 1;
        state.time = state.step * dt;
        if (keep_snapshots) result.e_snapshots.push_back(state.E);

        if (!state.E.allFinite() || !state.H.allFinite() || !state.psi.allFinite()) {
            result.aborted = true;
            result.abort_step = state.step;
            break;
        }
    }

    // Advance H once more so the final record row has both half values.
    if (!result.aborted) {
        result.H_lead = leapfrog_step_H(ops, material, dt, state.H, state.E, state.psi,
                                        state.h_at_integer_time);
        EnergyPair en = discrete_energy(space, material, state.E, result.H_lead,
                                        state.h_at_integer_time ? result.H_lead : state.H);
        rec.t.push_back(state.time);
        rec.calE.push_back(en.calE);
        rec.calE_n.push_back(en.calE_n);
        rec.norm_phi.push_back(rec.norm_phi.empty() ? 0.0 : rec.norm_phi.back());
        rec.norm_psi.push_back(config.coupled ? gram_norm(state.psi) : 0.0);
    }
    result.state = std::move(state);
    return result;
}

namespace {

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
void read_pod(std::istream& is, T& v) {
    is.read(reinterpret_cast<char*>(&v), sizeof v);
}

void write_vec(std::ostream& os, const Eigen::VectorXd& v) {
    std::int64_t n = v.size();
    write_pod(os, n);
    os.write(reinterpret_cast<const char*>(v.data()), sizeof(double) * n);
}

Eigen::VectorXd read_vec(std::istream& is) {
    std::int64_t n = 0;
    read_pod(is, n);
    if (!is || n < 0) throw std::runtime_error("checkpoint: corrupt vector header");
    Eigen::VectorXd v(n);
    is.read(reinterpret_cast<char*>(v.data()), sizeof(double) * n);
    if (!is) throw std::runtime_error("checkpoint: truncated vector payload");
    return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const CoupledState& state) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot open " + path);
    os.write("mxck", 4);
    write_pod(os, std::uint32_t{1});
    write_pod(os, std::int64_t{state.step});
    write_pod(os, state.time);
    write_pod(os, std::uint8_t(state.h_at_integer_time ? 1 : 0));
    write_vec(os, state.E);
    write_vec(os, state.H);
    write_vec(os, state.psi);
    std::int64_t nh = static_cast<std::int64_t>(state.history.size());
    write_pod(os, nh);
    for (const auto& h : state.history) write_vec(os, h);
}

CoupledState load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[4];
    is.read(magic, 4);
    std::uint32_t version = 0;
    read_pod(is, version);
    if (!is || std::string(magic, 4) != "mxck" || version != 1)
        throw std::runtime_error("checkpoint: bad magic or version in " + path);
    CoupledState st;
    std::int64_t step = 0;
    read_pod(is, step);
    st.step = static_cast<int>(step);
    read_pod(is, st.time);
    std::uint8_t flag = 0;
    read_pod(is, flag);
    st.h_at_integer_time = flag != 0;
    st.E = read_vec(is);
    st.H = read_vec(is);
    st.psi = read_vec(is);
    std::int64_t nh = 0;
    read_pod(is, nh);
    if (!is || nh < 0) throw std::runtime_error("checkpoint: corrupt history count");
    st.history.reserve(nh);
    for (std::int64_t i = 0; i < nh; ++i) st.history.push_back(read_vec(is));
    return st;
}

Eigen::VectorXd bump_interpolant(const DgSpace& space, const Vec3& center, double radius,
                                 const Vec3& polarization, double amplitude) {
    if (!(radius > 0.0)) throw std::invalid_argument("bump_interpolant: radius must be positive");
    const TetMesh& mesh = space.mesh();
    Eigen::VectorXd u = Eigen::VectorXd::Zero(space.n_dofs());
    for (std::size_t t = 0; t < mesh.n_tets(); ++t)
        for (int a = 0; a < 4; ++a) {
            double rho = (mesh.vertices[mesh.tets[t][a]] - center).norm() / radius;
            if (rho >= 1.0) continue;
            double val = amplitude * std::exp(1.0 - 1.0 / (1.0 - rho * rho));
            for (int c = 0; c < 3; ++c)
                u[DgSpace::dof(static_cast<int>(t), c, a)] = val * polarization[c];
        }
    return u;
}

Eigen::VectorXd solenoidal_bump_interpolant(const DgSpace& space, const Vec3& center,
                                            double radius, const Vec3& polarization,
                                            double amplitude) {
    if (!(radius > 0.0))
        throw std::invalid_argument("solenoidal_bump_interpolant: radius must be positive");
    const TetMesh& mesh = space.mesh();
    Eigen::VectorXd u = Eigen::VectorXd::Zero(space.n_dofs());
    for (std::size_t t = 0; t < mesh.n_tets(); ++t)
        for (int a = 0; a < 4; ++a) {
            Vec3 d = mesh.vertices[mesh.tets[t][a]] - center;
            double rho2 = d.squaredNorm() / (radius * radius);
            if (rho2 >= 1.0) continue;
            double b = std::exp(1.0 - 1.0 / (1.0 - rho2));
            Vec3 grad = (-2.0 * b / ((1.0 - rho2) * (1.0 - rho2) * radius * radius)) * d;
            Vec3 val = amplitude * grad.cross(polarization);
            for (int c = 0; c < 3; ++c) u[DgSpace::dof(static_cast<int>(t), c, a)] = val[c];
        }
    return u;
}

}  // namespace maxtbc
