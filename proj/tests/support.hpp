#pragma once

// Shared fixtures for coupled-scheme tests: a cube domain with assembled
// interior operators and a Calderon symbol ready for CQ weight computation.

#include <memory>

#include "maxtbc/bem.hpp"
#include "maxtbc/cq.hpp"
#include "maxtbc/dg.hpp"
#include "maxtbc/mesh.hpp"
#include "maxtbc/stepper.hpp"

namespace maxtbc::testing {

struct CoupledSetup {
    TetMesh mesh;
    SurfaceMesh surf;
    std::unique_ptr<DgSpace> space;
    std::unique_ptr<BoundarySpace> bspace;
    MaterialParams material;
    QuadratureConfig quad;
    OperatorSet ops;

    explicit CoupledSetup(int divisions, MaterialParams mat = {1.0, 1.0},
                          QuadratureConfig q = {})
        : mesh(build_box_mesh({1, 1, 1}, {divisions, divisions, divisions})),
          surf(extract_boundary(mesh)),
          material(mat),
          quad(q) {
        space = std::make_unique<DgSpace>(mesh);
        bspace = std::make_unique<BoundarySpace>(surf);
        ops = assemble_operators(*space, *bspace, material);
    }

    MatrixSymbol calderon_symbol() const {
        return [this](Complex s) {
            return assemble_B(ComplexFrequency{s}, *bspace, quad, material).B;
        };
    }

    CQWeights calderon_weights(double dt, int n_steps) const {
        return compute_weights(calderon_symbol(), 2 * bspace->dim(), dt, n_steps);
    }
};

}  // namespace maxtbc::testing
