#pragma once

#include <cstdint>
#include <vector>

#include "irn/distributions.hpp"
#include "irn/vec.hpp"

namespace irn {

// Function sampled on a uniform, strictly increasing grid.
struct GridFunction {
  Vec grid;
  Vec values;

  int size() const { return (int)grid.size(); }
  double spacing() const { return (grid.back() - grid.front()) / (size() - 1); }
};

// Throws std::invalid_argument on non-uniform / non-increasing grids or
// non-finite values.
void validate_grid_function(const GridFunction& g);

struct SolverOptions {
  double gap_tol = 1e-9;  // duality gap tolerance, relative to scale
};

struct ProjectionResult {
  GridFunction psi;
  double objective = 0.0;
  double duality_gap = 0.0;
  double scale = 1.0;  // max(1, objective magnitudes); gap tolerance unit
  bool converged = false;
};

// Adjoint-based optimality certificate. lambda holds the right integral
// of p_Z (psi - psi_hat), so lambda(z_1) = 0 by construction; where
// lambda is positive the slope must sit at 1/(1+L), where negative at
// 1/(1-L). max_violation is the worst slope deviation demanded by the
// sign conditions (plus any slope-box breach), in slope units.
struct ProjectionCertificate {
  GridFunction lambda;
  double max_violation = 0.0;
  std::vector<uint8_t> lower_active;  // per segment: slope pinned at 1/(1+L)
  std::vector<uint8_t> upper_active;  // per segment: slope pinned at 1/(1-L)
};

// Everything needed to reproduce one 1-D projection scenario.
struct ProjectionScenario {
  GridFunction psi_hat;
  GridFunction p_z;
  double L = 0.0;
  double sigma_sq = 1.0;
  GaussianMixture1D mixture;
  NoiseSpec noise;
};

// Weighted L2 projection of psi_hat onto piecewise-linear functions with
// node-to-node slopes in [1/(1+L), 1/(1-L)] and free starting value.
// Solved exactly by dynamic programming over the convex value function's
// derivative; the reported duality gap is computed a posteriori from the
// KKT multipliers and certifies the solution.
ProjectionResult project_constrained(const GridFunction& psi_hat,
                                     const GridFunction& p_z, double L,
                                     SolverOptions opts = {});

ProjectionCertificate certify_pontryagin(const GridFunction& psi,
                                         const GridFunction& psi_hat,
                                         const GridFunction& p_z, double L);

// Samples the posterior mean and the pushforward density of the mixture
// observation model on a uniform grid covering mean +- 8 stddev of p_Z.
ProjectionScenario build_figure4_scenario(double L, const GaussianMixture1D& mixture,
                                          NoiseSpec noise, double sigma_sq,
                                          int grid_size = 2001);

// Trapezoid discretization of (1/2) integral p_z (psi - psi_hat)^2.
double grid_objective(const GridFunction& psi, const GridFunction& psi_hat,
                      const GridFunction& p_z);

// Feasible comparison point: slopes of psi_hat clipped into the bound box,
// level shifted to the weighted optimum.
GridFunction clipped_slope_heuristic(const GridFunction& psi_hat,
                                     const GridFunction& p_z, double L);

// Trapezoid node weights of the density grid (h/2 at the ends).
Vec trapezoid_weights(const GridFunction& p_z);

}  // namespace irn
