#pragma once

#include <utility>

#include "usct/types.hpp"

namespace usct {

struct ConfidenceParams {
    double alpha = 2.0;    // depth attenuation rate
    double beta = 90.0;    // intensity contrast sensitivity
    double gamma = 0.06;   // lateral edge penalty
    double cg_tol = 1e-6;  // relative residual tolerance
    int cg_max_iters = 2000;
    bool multigrid_precond = true;  // V-cycle preconditioner; false = Jacobi

    void validate() const;
};

/// Random-walk confidence: probability that a walker starting at each pixel
/// reaches the transducer row. Top row is exactly 1, bottom row exactly 0;
/// the interior solves a graph-Laplacian Dirichlet problem on the 8-connected
/// lattice with edge weights exp(-beta |g_i - g_j|) + 1e-6 on depth-attenuated
/// intensities, lateral/diagonal edges scaled by gamma and gamma/sqrt(2). The
/// 1e-6 floor keeps the lattice connected under large beta.
/// Throws SolverFailure if CG does not reach cg_tol within cg_max_iters.
/// When given, *residual_out receives the final relative residual.
ConfidenceMap confidence(const Image2D& img, const ConfidenceParams& p = {}, double* residual_out = nullptr);

std::pair<ConfidenceMap, ConfidenceMap> confidence_pair(const Image2D& i0, const Image2D& i1,
                                                        const ConfidenceParams& p = {});

}  // namespace usct
