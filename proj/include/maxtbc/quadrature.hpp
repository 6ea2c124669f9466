#pragma once

#include <vector>

namespace maxtbc {

struct Quad1D {
    std::vector<double> x;  // nodes on [0,1]
    std::vector<double> w;  // weights summing to 1
};

// Gauss-Legendre rule with n points, mapped to [0,1].
Quad1D gauss_legendre(int n);

// Symmetric rules on the reference triangle {(a,b): a,b >= 0, a+b <= 1}.
// Weights sum to 1/2 (the reference area); integrals over a physical triangle
// of area A are sum_q w_q f(x_q) * 2A.
struct TriPoint {
    double a, b, w;
};
// Supported point counts: 1 (degree 1), 3 (degree 2), 6 (degree 4),
// 12 (degree 6). Other requests snap up to the nearest supported rule.
const std::vector<TriPoint>& triangle_rule(int npoints);

// Rules on the reference tetrahedron (barycentric last coordinate implied);
// weights sum to 1/6.
struct TetPoint {
    double a, b, c, w;
};
// 1 point (degree 1) or 4 points (degree 2).
const std::vector<TetPoint>& tet_rule(int npoints);

// Sauter-Schwab relative-coordinate rules for triangle-pair integrals with
// shared vertices. Points are unit-triangle coordinates for each factor after
// ordering both triangles so the shared vertices come first (same order on
// both). Weights are reference weights: a physical pair integral is
// sum_q w_q k(x(q), y(q)) * (2A_x)(2A_y).
struct PairPoint {
    double a1, b1, a2, b2, w;
};
// ncommon = 3 (coincident), 2 (shared edge), 1 (shared vertex),
// 0 (tensor rule for separated pairs). order = 1D Gauss points per dimension.
std::vector<PairPoint> sauter_schwab_rule(int ncommon, int order);

}  // namespace maxtbc
