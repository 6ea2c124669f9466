#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <random>

#include "doctest.h"
#include "maxtbc/cq.hpp"

using namespace maxtbc;

namespace {

// Power-series coefficients of dt / delta(zeta) by synthetic division
// against delta(zeta) = 3/2 - 2 zeta + zeta^2 / 2.
std::vector<double> series_inverse_delta(double dt, int n) {
    std::vector<double> w(n + 1);
    const double d0 = 1.5, d1 = -2.0, d2 = 0.5;
    w[0] = dt / d0;
    for (int k = 1; k <= n; ++k) {
        double acc = d1 * w[k - 1] + (k >= 2 ? d2 * w[k - 2] : 0.0);
        w[k] = -acc / d0;
    }
    return w;
}

// dt / (delta(zeta) + dt), the series of 1/(s+1).
std::vector<double> series_one_over_s_plus_1(double dt, int n) {
    std::vector<double> w(n + 1);
    const double d0 = 1.5 + dt, d1 = -2.0, d2 = 0.5;
    w[0] = dt / d0;
    for (int k = 1; k <= n; ++k) {
        double acc = d1 * w[k - 1] + (k >= 2 ? d2 * w[k - 2] : 0.0);
        w[k] = -acc / d0;
    }
    return w;
}

double fit_order(const std::vector<double>& dts, const std::vector<double>& errs) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const int n = static_cast<int>(dts.size());
    for (int i = 0; i < n; ++i) {
        double x = std::log(dts[i]), y = std::log(errs[i]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

}  // namespace

TEST_CASE("bdf2 generating function values") {
    CHECK(std::abs(bdf2_delta(Complex(1.0, 0.0))) == 0.0);
    CHECK(bdf2_delta(Complex(0.0, 0.0)).real() == doctest::Approx(1.5));
    CHECK(bdf2_delta(Complex(-1.0, 0.0)).real() == doctest::Approx(4.0));
}

namespace {
// Accuracy-oriented contour for weight-value oracles: for polynomial and
// rational symbols a larger radius removes the lambda^{-n} rounding
// amplification (aliasing is negligible for these symbols), so the power
// series values are met to 1e-10 and better. The default radius keeps the
// classical sqrt(eps) compromise used for operator symbols.
CQOptions oracle_contour(int n_steps) {
    CQOptions o;
    o.lambda = 0.8;
    o.contour_points = std::max(64, 8 * n_steps);
    return o;
}
}  // namespace

TEST_CASE("weights of symbol s are the BDF2 difference coefficients") {
    const double dt = 0.01;
    auto w = compute_weights_scalar([](Complex s) { return s; }, dt, 12, oracle_contour(12));
    CHECK(w.weights[0] == doctest::Approx(1.5 / dt).epsilon(1e-10));
    CHECK(w.weights[1] == doctest::Approx(-2.0 / dt).epsilon(1e-10));
    CHECK(w.weights[2] == doctest::Approx(0.5 / dt).epsilon(1e-10));
    for (int n = 3; n <= 12; ++n) CHECK(std::abs(w.weights[n]) < 1e-10 / dt);
}

TEST_CASE("weights of the constant symbol") {
    auto w = compute_weights_scalar([](Complex) { return Complex(1.0, 0.0); }, 0.05, 10,
                                    oracle_contour(10));
    CHECK(w.weights[0] == doctest::Approx(1.0).epsilon(1e-12));
    for (int n = 1; n <= 10; ++n) CHECK(std::abs(w.weights[n]) < 1e-12);
}

TEST_CASE("weights of 1/s and 1/(s+1) match the power-series oracle") {
    const double dt = 0.02;
    const int N = 24;
    auto w = compute_weights_scalar([](Complex s) { return 1.0 / s; }, dt, N, oracle_contour(N));
    auto ref = series_inverse_delta(dt, N);
    CHECK(w.weights[0] == doctest::Approx(2.0 * dt / 3.0).epsilon(1e-10));
    for (int n = 0; n <= N; ++n) CHECK(w.weights[n] == doctest::Approx(ref[n]).epsilon(1e-9));

    auto w2 = compute_weights_scalar([](Complex s) { return 1.0 / (s + 1.0); }, dt, N,
                                     oracle_contour(N));
    auto ref2 = series_one_over_s_plus_1(dt, N);
    for (int n = 0; n <= N; ++n)
        CHECK(std::abs(w2.weights[n] - ref2[n]) < 1e-10 * (std::abs(ref2[n]) + 1.0));
}

TEST_CASE("weight computation is deterministic") {
    auto a = compute_weights_scalar([](Complex s) { return std::sqrt(s); }, 0.01, 16);
    auto b = compute_weights_scalar([](Complex s) { return std::sqrt(s); }, 0.01, 16);
    for (int n = 0; n <= 16; ++n) CHECK(a.weights[n] == b.weights[n]);
}

TEST_CASE("matrix weights, b0 identity, and the symmetric shortcut") {
    const double dt = 0.05;
    const int N = 8;
    Eigen::MatrixXcd A(2, 2);
    A << Complex(1.0, 0.0), Complex(0.5, 0.0), Complex(-0.25, 0.0), Complex(2.0, 0.0);
    MatrixSymbol sym = [&A](Complex s) { return Eigen::MatrixXcd(s * A); };
    CQWeights w = compute_weights(sym, 2, dt, N, oracle_contour(N));
    auto scalar = compute_weights_scalar([](Complex s) { return s; }, dt, N, oracle_contour(N));
    for (int n = 0; n <= N; ++n)
        CHECK((w.weights[n] - scalar.weights[n] * A.real()).cwiseAbs().maxCoeff() <
              1e-9 * (std::abs(scalar.weights[n]) + 1.0));

    // B0 equals the symbol at delta(0)/dt = 3/(2 dt) up to contour error.
    Eigen::MatrixXcd B0 = sym(Complex(1.5 / dt, 0.0));
    CHECK((w.weights[0] - B0.real()).cwiseAbs().maxCoeff() < 1e-6 * B0.cwiseAbs().maxCoeff());

    // Full-contour path with the imaginary-residue check gives the same result.
    CQOptions opts = oracle_contour(N);
    opts.conjugate_symmetric = false;
    CQWeights w2 = compute_weights(sym, 2, dt, N, opts);
    for (int n = 0; n <= N; ++n)
        CHECK((w.weights[n] - w2.weights[n]).cwiseAbs().maxCoeff() <
              1e-9 * (w.weights[n].cwiseAbs().maxCoeff() + 1.0));

    // A symbol that is not conjugate-symmetric trips the residue check.
    MatrixSymbol bad = [](Complex s) {
        Eigen::MatrixXcd m(1, 1);
        m(0, 0) = Complex(0.0, 1.0) * s;
        return m;
    };
    CHECK_THROWS_AS(compute_weights(bad, 1, dt, N, opts), std::runtime_error);
}

TEST_CASE("argument validation and the memory cap") {
    auto sym = [](Complex s) { return s; };
    CHECK_THROWS_AS(compute_weights_scalar(sym, -0.1, 4), std::invalid_argument);
    CQOptions opts;
    opts.contour_points = 3;
    CHECK_THROWS_AS(compute_weights_scalar(sym, 0.1, 8, opts), std::invalid_argument);
    CQOptions tiny;
    tiny.memory_cap_gb = 1e-9;
    MatrixSymbol msym = [](Complex s) {
        return Eigen::MatrixXcd(s * Eigen::MatrixXcd::Identity(64, 64));
    };
    CHECK_THROWS_AS(compute_weights(msym, 64, 0.1, 64, tiny), std::length_error);
}

TEST_CASE("weight cache round trip") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "maxtbc-cq-cache-test";
    fs::remove_all(dir);
    CQOptions opts;
    opts.cache_dir = dir.string();
    opts.cache_key = "mesh-abc|quad-1";
    int evals = 0;
    MatrixSymbol sym = [&evals](Complex s) {
        ++evals;
        Eigen::MatrixXcd m(1, 1);
        m(0, 0) = 1.0 / (s + 2.0);
        return m;
    };
    CQWeights a = compute_weights(sym, 1, 0.02, 10, opts);
    int evals_first = evals;
    CHECK(evals_first > 0);
    CQWeights b = compute_weights(sym, 1, 0.02, 10, opts);
    CHECK(evals == evals_first);  // second run served from cache
    for (int n = 0; n <= 10; ++n) CHECK(a.weights[n](0, 0) == b.weights[n](0, 0));
    opts.cache_key = "mesh-other";
    compute_weights(sym, 1, 0.02, 10, opts);
    CHECK(evals > evals_first);
    fs::remove_all(dir);
}

TEST_CASE("discrete convolution basics") {
    auto w = compute_weights_scalar([](Complex s) { return s; }, 0.1, 5);
    std::vector<double> zeros(6, 0.0);
    for (int n = 0; n <= 5; ++n) CHECK(discrete_convolution(w, zeros, n) == 0.0);
    CHECK_THROWS_AS(discrete_convolution(w, zeros, 7), std::invalid_argument);

    CQWeights mw = compute_weights(
        [](Complex s) { return Eigen::MatrixXcd(s * Eigen::MatrixXcd::Identity(2, 2)); }, 2, 0.1,
        5);
    std::vector<Eigen::VectorXd> bad(6, Eigen::VectorXd::Zero(3));
    CHECK_THROWS_AS(discrete_convolution(mw, bad, 2), std::invalid_argument);
}

TEST_CASE("second-order convergence: differentiation of t^3") {
    std::vector<double> dts, errs;
    for (double dt : {1.0 / 16, 1.0 / 32, 1.0 / 64}) {
        int N = static_cast<int>(std::lround(1.0 / dt));
        auto w = compute_weights_scalar([](Complex s) { return s; }, dt, N);
        std::vector<double> samples(N + 1);
        for (int j = 0; j <= N; ++j) samples[j] = std::pow(j * dt, 3);
        double got = discrete_convolution(w, samples, N);
        errs.push_back(std::abs(got - 3.0));  // d/dt t^3 at t = 1
        dts.push_back(dt);
    }
    double order = fit_order(dts, errs);
    CHECK(order == doctest::Approx(2.0).epsilon(0.1));
}

TEST_CASE("second-order convergence: integration of t^2") {
    std::vector<double> dts, errs;
    for (double dt : {1.0 / 16, 1.0 / 32, 1.0 / 64}) {
        int N = static_cast<int>(std::lround(1.0 / dt));
        auto w = compute_weights_scalar([](Complex s) { return 1.0 / s; }, dt, N);
        std::vector<double> samples(N + 1);
        for (int j = 0; j <= N; ++j) samples[j] = (j * dt) * (j * dt);
        double got = discrete_convolution(w, samples, N);
        errs.push_back(std::abs(got - 1.0 / 3.0));
        dts.push_back(dt);
    }
    double order = fit_order(dts, errs);
    CHECK(order == doctest::Approx(2.0).epsilon(0.1));
}

TEST_CASE("nonzero initial data degrades the integration order to one") {
    // cos extended by zero to negative time is discontinuous, so the
    // second-order statement does not apply; the observed order drops.
    std::vector<double> dts, errs;
    for (double dt : {1.0 / 16, 1.0 / 32, 1.0 / 64}) {
        int N = static_cast<int>(std::lround(1.0 / dt));
        auto w = compute_weights_scalar([](Complex s) { return 1.0 / s; }, dt, N);
        std::vector<double> samples(N + 1);
        for (int j = 0; j <= N; ++j) samples[j] = std::cos(j * dt);
        errs.push_back(std::abs(discrete_convolution(w, samples, N) - std::sin(1.0)));
        dts.push_back(dt);
    }
    double order = fit_order(dts, errs);
    CHECK(order > 0.8);
    CHECK(order < 1.3);
}

TEST_CASE("scalar Herglotz check: coercive symbol stays nonnegative") {
    auto w = compute_weights_scalar([](Complex s) { return s; }, 0.05, 32);
    std::vector<double> zeros(33, 0.0);
    auto z = check_discrete_herglotz(w, zeros);
    CHECK(z.lhs == 0.0);
    CHECK(z.rhs == 0.0);

    std::mt19937_64 rng(2024);
    std::normal_distribution<double> dist(0.0, 1.0);
    for (int rep = 0; rep < 10; ++rep) {
        std::vector<double> samples(33);
        for (auto& v : samples) v = dist(rng);
        auto res = check_discrete_herglotz(w, samples);
        CHECK(res.lhs >= -1e-8 * res.scale);
    }
}
