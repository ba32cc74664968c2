#pragma once

#include <string>
#include <vector>

#include "irn/distributions.hpp"
#include "irn/linops.hpp"
#include "irn/vec.hpp"

namespace irn {

// Which KKT branch produced an affine solution.
enum class CaseTag { unconstrained, upper_clipped, lower_clipped, exact_fit };

std::string to_string(CaseTag t);

// One spectral component's affine residual f(x) = m x + b (approximation
// training, |m| <= L) or affine reconstruction psi(z) = m z + b
// (reconstruction training, m in [1/(1+L), 1/(1-L)]).
struct AffineSolution {
  double m = 0.0;
  double b = 0.0;
  CaseTag case_tag = CaseTag::unconstrained;
};

// Componentwise linear regularization scheme: x_rec = sum_j
// (filter[j] * z_j + bias[j]) v_j over retained components.
struct FilterScheme {
  Vec filter;  // per retained component
  Vec bias;    // eigencoordinates
  double L = 0.0;
};

enum class PriorFamily { gaussian, laplace };

// Residual of the MAP estimator written as x - <reconstruction>, per
// spectral component: affine for a Gaussian prior, piecewise affine with
// a jump (hence not Lipschitz) for a Laplace prior with delta > 0.
struct MapResidual {
  PriorFamily family = PriorFamily::gaussian;
  double sigma_sq = 1.0;
  double delta = 0.0;
  double mean = 0.0;   // prior location
  double scale = 1.0;  // Gaussian stddev / Laplace scale
  double slope = 0.0;      // Gaussian only
  double intercept = 0.0;  // Gaussian only
  double lip = 0.0;        // Gaussian only: |slope|
  bool non_lipschitz = false;

  double eval(double x) const;
};

struct MapFeasibility {
  bool feasible = false;
  double margin = 0.0;  // L - |slope|
  std::string reason;   // empty when feasible
};

// Best affine residual for approximation training on one component:
// f(x) = (1 - sigma_sq) x when that slope already satisfies the bound,
// otherwise the clipped slope L with intercept matching the prior mean.
AffineSolution solve_approx_affine(double sigma_sq, double L, double mu_x);

// Best constrained affine reconstruction for one component. Unconstrained
// slope sigma_sq*var_x / (sigma_sq^2*var_x + var_eta) (exactly 1/sigma_sq
// when var_eta = 0), clamped to [1/(1+L), 1/(1-L)], intercept
// (1 - sigma_sq*m) mu_x recomputed from the clamped slope.
AffineSolution solve_reco_affine(double sigma_sq, double L, double mu_x,
                                 double var_x, double var_eta);

// Approximation training with noise correlated to the signal. Requires
// L < 1 - sigma_sq; branches on rho = cov/var_x.
AffineSolution solve_approx_affine_correlated(double sigma_sq, double L,
                                              const JointMoments& moments);

// Componentwise filter 1/max(sigma_j^2, 1-L) with bias only where
// sigma_j^2 < 1-L. mu_x_per_component is given in eigencoordinates.
FilterScheme squared_soft_tsvd(const EigenOperator& op, double L,
                               const Vec& mu_x_per_component);

// Filter form of the inverted affine network: component j maps
// z -> (z + b_j) / (1 - m_j). Agrees with squared_soft_tsvd; the filter
// reciprocals match to absolute 1e-14 and the clipped components are
// bitwise identical.
FilterScheme affine_inverse_as_filter(const std::vector<AffineSolution>& sols,
                                      const EigenOperator& op);

// MAP residual for a single-Gaussian prior.
MapResidual map_residual(const GaussianMixture1D& prior, double sigma_sq,
                         double delta);

// MAP residual for a Laplace(mean, scale) prior.
MapResidual map_residual_laplace(double mean, double scale, double sigma_sq,
                                 double delta);

// Whether the MAP residual respects the Lipschitz bound L. Laplace
// residuals are never feasible.
MapFeasibility map_lipschitz_feasible(const MapResidual& residual, double L);

}  // namespace irn
