#include "maxtbc/cq.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "maxtbc/util.hpp"

namespace maxtbc {

Complex bdf2_delta(Complex zeta) {
    Complex one_minus = 1.0 - zeta;
    return one_minus + 0.5 * one_minus * one_minus;
}

namespace {

struct ContourSetup {
    double lambda;
    int L;
};

ContourSetup contour_setup(double dt, int n_steps, const CQOptions& opts) {
    if (!(dt > 0.0)) throw std::invalid_argument("cq: dt must be positive");
    if (n_steps < 0) throw std::invalid_argument("cq: n_steps must be >= 0");
    ContourSetup c;
    c.lambda = opts.lambda > 0.0 ? opts.lambda
                                 : std::pow(1e-16, 1.0 / (2.0 * std::max(n_steps, 1)));
    if (!(c.lambda > 0.0 && c.lambda < 1.0))
        throw std::invalid_argument("cq: contour radius must lie in (0,1)");
    c.L = opts.contour_points > 0 ? opts.contour_points : 2 * std::max(n_steps, 1);
    if (c.L < n_steps + 1)
        throw std::invalid_argument("cq: contour_points must be >= n_steps + 1");
    return c;
}

std::string cache_path(const CQOptions& opts, double dt, int n_steps, int dim,
                       const ContourSetup& c) {
    Fnv1a h;
    h.add(opts.cache_key);
    h.add(dt);
    h.add(static_cast<std::uint64_t>(n_steps));
    h.add(static_cast<std::uint64_t>(dim));
    h.add(c.lambda);
    h.add(static_cast<std::uint64_t>(c.L));
    return opts.cache_dir + "/cqw-" + h.hex() + ".bin";
}

bool load_cached(const std::string& path, double dt, int n_steps, int dim, CQWeights& out) {
    std::ifstream is(path, std::ios::binary);
    if (!is) return false;
    char magic[4];
    is.read(magic, 4);
    if (!is || std::string(magic, 4) != "cqw1") return false;
    double fdt = 0.0;
    std::int64_t fn = 0, fdim = 0;
    is.read(reinterpret_cast<char*>(&fdt), sizeof fdt);
    is.read(reinterpret_cast<char*>(&fn), sizeof fn);
    is.read(reinterpret_cast<char*>(&fdim), sizeof fdim);
    if (!is || fdt != dt || fn != n_steps || fdim != dim) return false;
    out.dt = dt;
    out.steps = n_steps;
    out.weights.assign(n_steps + 1, Eigen::MatrixXd(dim, dim));
    for (auto& W : out.weights) {
        is.read(reinterpret_cast<char*>(W.data()), sizeof(double) * dim * dim);
        if (!is) return false;
    }
    return true;
}

void store_cached(const std::string& path, const CQWeights& w) {
    std::error_code ec;
    std::filesystem::create_directories(std::filesystem::path(path).parent_path(), ec);
    std::ofstream os(path, std::ios::binary);
    if (!os) return;  // cache is best effort
    os.write("cqw1", 4);
    double dt = w.dt;
    std::int64_t n = w.steps, dim = w.dim();
    os.write(reinterpret_cast<const char*>(&dt), sizeof dt);
    os.write(reinterpret_cast<const char*>(&n), sizeof n);
    os.write(reinterpret_cast<const char*>(&dim), sizeof dim);
    for (const auto& W : w.weights)
        os.write(reinterpret_cast<const char*>(W.data()), sizeof(double) * dim * dim);
}

}  // namespace

CQWeights compute_weights(const MatrixSymbol& symbol, int dim, double dt, int n_steps,
                          const CQOptions& opts) {
    ContourSetup c = contour_setup(dt, n_steps, opts);
    const int N = n_steps, L = c.L;

    double bytes = static_cast<double>(N + 1) * dim * dim * sizeof(double) * 3;
    if (bytes > opts.memory_cap_gb * 1e9)
        throw std::length_error(
            "cq: weight storage " + std::to_string(bytes / 1e9) + " GB exceeds the cap of " +
            std::to_string(opts.memory_cap_gb) + " GB (raise cq.memory_cap_gb or reduce steps)");

    if (!opts.cache_dir.empty()) {
        CQWeights cached;
        if (load_cached(cache_path(opts, dt, N, dim, c), dt, N, dim, cached)) return cached;
    }

    std::vector<Eigen::MatrixXd> acc_re(N + 1, Eigen::MatrixXd::Zero(dim, dim));
    std::vector<Eigen::MatrixXd> acc_im;
    if (!opts.conjugate_symmetric) acc_im.assign(N + 1, Eigen::MatrixXd::Zero(dim, dim));

    const int l_max = opts.conjugate_symmetric ? L / 2 : L - 1;
    for (int l = 0; l <= l_max; ++l) {
        double theta = -2.0 * M_PI * l / L;
        Complex zeta = std::polar(c.lambda, theta);
        Complex s = bdf2_delta(zeta) / dt;
        Eigen::MatrixXcd F;
        try {
            F = symbol(s);
        } catch (const std::exception& e) {
            throw std::runtime_error("cq: symbol evaluation failed at s = (" +
                                     std::to_string(s.real()) + ", " + std::to_string(s.imag()) +
                                     "i): " + e.what());
        }
        if (F.rows() != dim || F.cols() != dim)
            throw std::invalid_argument("cq: symbol returned wrong dimension");
        if (opts.conjugate_symmetric) {
            // The l and L-l terms are conjugates, so each pair contributes
            // 2 Re(F e^{2 pi i l n / L}); l = 0 and l = L/2 are real already.
            const bool endpoint = (l == 0) || (2 * l == L);
            for (int n = 0; n <= N; ++n) {
                double ang = 2.0 * M_PI * l * n / L;
                Eigen::MatrixXd term = std::cos(ang) * F.real() - std::sin(ang) * F.imag();
                acc_re[n] += endpoint ? term : 2.0 * term;
            }
        } else {
            for (int n = 0; n <= N; ++n) {
                double ang = 2.0 * M_PI * l * n / L;
                double cn = std::cos(ang), sn = std::sin(ang);
                acc_re[n] += cn * F.real() - sn * F.imag();
                acc_im[n] += cn * F.imag() + sn * F.real();
            }
        }
    }

    CQWeights out;
    out.dt = dt;
    out.steps = N;
    out.weights.resize(N + 1);
    double max_re = 0.0, max_im = 0.0;
    double radial = 1.0;  // lambda^{-n}
    for (int n = 0; n <= N; ++n) {
        double scale = radial / L;
        out.weights[n] = scale * acc_re[n];
        max_re = std::max(max_re, out.weights[n].cwiseAbs().maxCoeff());
        if (!opts.conjugate_symmetric)
            max_im = std::max(max_im, scale * acc_im[n].cwiseAbs().maxCoeff());
        radial /= c.lambda;
    }
    if (!opts.conjugate_symmetric && max_im > opts.imag_tol * std::max(max_re, 1e-300))
        throw std::runtime_error("cq: imaginary residue " + std::to_string(max_im) +
                                 " exceeds tolerance; symbol is not real-valued in time");

    if (!opts.cache_dir.empty()) store_cached(cache_path(opts, dt, N, dim, c), out);
    return out;
}

CQScalarWeights compute_weights_scalar(const ScalarSymbol& symbol, double dt, int n_steps,
                                       const CQOptions& opts) {
    MatrixSymbol wrapped = [&symbol](Complex s) {
        Eigen::MatrixXcd m(1, 1);
        m(0, 0) = symbol(s);
        return m;
    };
    CQOptions o = opts;
    o.cache_dir.clear();  // scalar weights are cheap; never cached
    CQWeights w = compute_weights(wrapped, 1, dt, n_steps, o);
    CQScalarWeights out;
    out.dt = dt;
    out.steps = n_steps;
    out.weights.resize(n_steps + 1);
    for (int n = 0; n <= n_steps; ++n) out.weights[n] = w.weights[n](0, 0);
    return out;
}

double discrete_convolution(const CQScalarWeights& w, const std::vector<double>& samples, int n) {
    if (n < 0 || n > w.steps || n >= static_cast<int>(samples.size()))
        throw std::invalid_argument("discrete_convolution: step index out of range");
    double acc = 0.0;
    for (int j = 0; j <= n; ++j) acc += w.weights[n - j] * samples[j];
    return acc;
}

Eigen::VectorXd discrete_convolution(const CQWeights& w,
                                     const std::vector<Eigen::VectorXd>& samples, int n) {
    if (n < 0 || n > w.steps || n >= static_cast<int>(samples.size()))
        throw std::invalid_argument("discrete_convolution: step index out of range");
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(w.dim());
    for (int j = 0; j <= n; ++j) {
        if (samples[j].size() != w.dim())
            throw std::invalid_argument("discrete_convolution: sample dimension mismatch");
        acc.noalias() += w.weights[n - j] * samples[j];
    }
    return acc;
}

namespace {

CQScalarWeights antiderivative_weights(double dt, int n_steps) {
    return compute_weights_scalar([](Complex s) { return 1.0 / s; }, dt, n_steps);
}

}  // namespace

HerglotzCheck check_discrete_herglotz(const CQScalarWeights& weights,
                                      const std::vector<double>& samples) {
    const int N = weights.steps;
    const double dt = weights.dt;
    const double T = N * dt;
    HerglotzCheck out;
    out.rho = std::exp(-dt / T);
    CQScalarWeights integ = antiderivative_weights(dt, N);
    double rho2n = 1.0;
    for (int n = 0; n <= N && n < static_cast<int>(samples.size()); ++n) {
        double conv = discrete_convolution(weights, samples, n);
        double anti = discrete_convolution(integ, samples, n);
        out.lhs += dt * rho2n * samples[n] * conv;
        out.rhs += dt * rho2n * anti * anti;
        out.scale += dt * rho2n * std::abs(samples[n]) * std::abs(conv);
        rho2n *= out.rho * out.rho;
    }
    return out;
}

HerglotzCheck check_discrete_herglotz(const CQWeights& weights,
                                      const std::vector<Eigen::VectorXd>& samples,
                                      const Eigen::MatrixXd& gram, double eps_mu) {
    const int N = weights.steps;
    const double dt = weights.dt;
    const double T = N * dt;
    const int dim2 = weights.dim();
    const int half = dim2 / 2;
    if (gram.rows() != half)
        throw std::invalid_argument("check_discrete_herglotz: Gram dimension mismatch");
    HerglotzCheck out;
    out.rho = std::exp(-dt / T);
    CQScalarWeights integ = antiderivative_weights(dt, N);
    double rho2n = 1.0;
    const int n_max = std::min(N, static_cast<int>(samples.size()) - 1);
    for (int n = 0; n <= n_max; ++n) {
        Eigen::VectorXd conv = discrete_convolution(weights, samples, n);
        // The pairing of the boundary functions carries a factor 2 relative
        // to the half-weighted Galerkin matrices.
        out.lhs += dt * rho2n * 2.0 * samples[n].dot(conv);
        Eigen::VectorXd anti = Eigen::VectorXd::Zero(dim2);
        for (int j = 0; j <= n; ++j) anti += integ.weights[n - j] * samples[j];
        Eigen::VectorXd phi = anti.head(half), psi = anti.tail(half);
        out.rhs += dt * rho2n * (phi.dot(gram * phi) / eps_mu + psi.dot(gram * psi));
        out.scale += dt * rho2n * 2.0 * samples[n].norm() * conv.norm();
        rho2n *= out.rho * out.rho;
    }
    return out;
}

}  // namespace maxtbc
