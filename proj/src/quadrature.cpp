#include "maxtbc/quadrature.hpp"

#include <cmath>
#include <map>
#include <mutex>
#include <stdexcept>

namespace maxtbc {

Quad1D gauss_legendre(int n) {
    if (n < 1) throw std::invalid_argument("gauss_legendre: need n >= 1");
    Quad1D q;
    q.x.resize(n);
    q.w.resize(n);
    // Newton iteration on P_n over [-1,1], then map to [0,1].
    for (int i = 0; i < (n + 1) / 2; ++i) {
        double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
        double pp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = x;
            if (n == 1) p1 = x;
            for (int k = 2; k <= n; ++k) {
                double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            double pn = (n == 1) ? x : p1;
            double pnm1 = (n == 1) ? 1.0 : p0;
            pp = n * (x * pn - pnm1) / (x * x - 1.0);
            double dx = pn / pp;
            x -= dx;
            if (std::abs(dx) < 1e-15) break;
        }
        double w = 2.0 / ((1.0 - x * x) * pp * pp);
        q.x[i] = 0.5 * (1.0 - x);  // descending cos order; mirrored below
        q.w[i] = 0.5 * w;
        q.x[n - 1 - i] = 0.5 * (1.0 + x);
        q.w[n - 1 - i] = 0.5 * w;
    }
    return q;
}

namespace {

std::vector<TriPoint> make_tri_rule(int npoints) {
    std::vector<TriPoint> r;
    auto orbit3 = [&r](double a, double w) {
        // permutations of barycentric (a, a, 1-2a) expressed as (x,y)
        double c = 1.0 - 2.0 * a;
        r.push_back({a, a, w});
        r.push_back({c, a, w});
        r.push_back({a, c, w});
    };
    auto orbit6 = [&r](double a, double b, double w) {
        double c = 1.0 - a - b;
        r.push_back({a, b, w});
        r.push_back({b, a, w});
        r.push_back({a, c, w});
        r.push_back({c, a, w});
        r.push_back({b, c, w});
        r.push_back({c, b, w});
    };
    switch (npoints) {
        case 1:
            r.push_back({1.0 / 3.0, 1.0 / 3.0, 0.5});
            break;
        case 3:
            orbit3(1.0 / 6.0, 1.0 / 6.0);
            break;
        case 6:
            // Dunavant degree 4
            orbit3(0.091576213509771, 0.5 * 0.109951743655322);
            orbit3(0.445948490915965, 0.5 * 0.223381589678011);
            break;
        case 12:
            // Dunavant degree 6
            orbit3(0.063089014491502, 0.5 * 0.050844906370207);
            orbit3(0.249286745170910, 0.5 * 0.116786275726379);
            orbit6(0.310352451033785, 0.053145049844816, 0.5 * 0.082851075618374);
            break;
        default:
            throw std::invalid_argument("triangle_rule: unsupported count");
    }
    return r;
}

std::vector<TetPoint> make_tet_rule(int npoints) {
    std::vector<TetPoint> r;
    if (npoints == 1) {
        r.push_back({0.25, 0.25, 0.25, 1.0 / 6.0});
    } else {
        const double a = 0.585410196624969;  // (5 + 3*sqrt(5)) / 20
        const double b = 0.138196601125011;  // (5 - sqrt(5)) / 20
        r.push_back({a, b, b, 1.0 / 24.0});
        r.push_back({b, a, b, 1.0 / 24.0});
        r.push_back({b, b, a, 1.0 / 24.0});
        r.push_back({b, b, b, 1.0 / 24.0});
    }
    return r;
}

int snap_tri(int n) {
    if (n <= 1) return 1;
    if (n <= 3) return 3;
    if (n <= 6) return 6;
    return 12;
}

}  // namespace

const std::vector<TriPoint>& triangle_rule(int npoints) {
    static std::map<int, std::vector<TriPoint>> cache;
    static std::mutex mtx;
    std::lock_guard<std::mutex> lk(mtx);
    int n = snap_tri(npoints);
    auto it = cache.find(n);
    if (it == cache.end()) it = cache.emplace(n, make_tri_rule(n)).first;
    return it->second;
}

const std::vector<TetPoint>& tet_rule(int npoints) {
    static std::map<int, std::vector<TetPoint>> cache;
    static std::mutex mtx;
    std::lock_guard<std::mutex> lk(mtx);
    int n = npoints <= 1 ? 1 : 4;
    auto it = cache.find(n);
    if (it == cache.end()) it = cache.emplace(n, make_tet_rule(n)).first;
    return it->second;
}

// Sauter-Schwab regularizing transforms. Each case decomposes the 4D pair
// integral into subdomains where a Duffy-type substitution removes the
// singularity; the resulting smooth integrands are handled by tensor Gauss
// rules. Coordinates below are simplex coordinates (x1, x2), 0<=x2<=x1<=1;
// the shift a = x1-x2, b = x2 converts to unit-triangle coordinates for the
// affine map x = v0 + a(v1-v0) + b(v2-v0).
std::vector<PairPoint> sauter_schwab_rule(int ncommon, int order) {
    if (order < 1) throw std::invalid_argument("sauter_schwab_rule: order >= 1");
    Quad1D g = gauss_legendre(order);
    std::vector<PairPoint> rule;
    auto push = [&rule](double x1a, double x2a, double x1b, double x2b, double w) {
        rule.push_back({x1a - x2a, x2a, x1b - x2b, x2b, w});
    };
    const int n = order;
    for (int i0 = 0; i0 < n; ++i0) {
        const double xi = g.x[i0], wxi = g.w[i0];
        for (int i1 = 0; i1 < n; ++i1) {
            const double e1 = g.x[i1], w1 = wxi * g.w[i1];
            for (int i2 = 0; i2 < n; ++i2) {
                const double e2 = g.x[i2], w2 = w1 * g.w[i2];
                for (int i3 = 0; i3 < n; ++i3) {
                    const double e3 = g.x[i3], w3 = w2 * g.w[i3];
                    const double xi3 = xi * xi * xi;
                    switch (ncommon) {
                        case 3: {
                            const double lw = w3 * xi3 * e1 * e1 * e2;
                            push(xi, xi * (1 - e1 + e1 * e2), xi * (1 - e1 * e2 * e3),
                                 xi * (1 - e1), lw);
                            push(xi * (1 - e1 * e2 * e3), xi * (1 - e1), xi,
                                 xi * (1 - e1 + e1 * e2), lw);
                            push(xi, xi * e1 * (1 - e2 + e2 * e3), xi * (1 - e1 * e2),
                                 xi * e1 * (1 - e2), lw);
                            push(xi * (1 - e1 * e2), xi * e1 * (1 - e2), xi,
                                 xi * e1 * (1 - e2 + e2 * e3), lw);
                            push(xi * (1 - e1 * e2 * e3), xi * e1 * (1 - e2 * e3), xi,
                                 xi * e1 * (1 - e2), lw);
                            push(xi, xi * e1 * (1 - e2), xi * (1 - e1 * e2 * e3),
                                 xi * e1 * (1 - e2 * e3), lw);
                            break;
                        }
                        case 2: {
                            const double lw = w3 * xi3 * e1 * e1 * e2;
                            push(xi, xi * e1 * e3, xi * (1 - e1 * e2), xi * e1 * (1 - e2),
                                 w3 * xi3 * e1 * e1);
                            push(xi, xi * e1, xi * (1 - e1 * e2 * e3), xi * e1 * e2 * (1 - e3),
                                 lw);
                            push(xi * (1 - e1 * e2), xi * e1 * (1 - e2), xi, xi * e1 * e2 * e3,
                                 lw);
                            push(xi * (1 - e1 * e2 * e3), xi * e1 * e2 * (1 - e3), xi, xi * e1,
                                 lw);
                            push(xi * (1 - e1 * e2 * e3), xi * e1 * (1 - e2 * e3), xi,
                                 xi * e1 * e2, lw);
                            break;
                        }
                        case 1: {
                            const double lw = w3 * xi3 * e2;
                            push(xi, xi * e1, xi * e2, xi * e2 * e3, lw);
                            push(xi * e2, xi * e2 * e3, xi, xi * e1, lw);
                            break;
                        }
                        case 0: {
                            push(xi, xi * e1, e2, e2 * e3, w3 * xi * e2);
                            break;
                        }
                        default:
                            throw std::invalid_argument("sauter_schwab_rule: ncommon in 0..3");
                    }
                }
            }
        }
    }
    return rule;
}

}  // namespace maxtbc
