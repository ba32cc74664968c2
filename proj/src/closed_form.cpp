#include "irn/closed_form.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace irn {
namespace {

void check_sigma_l(double sigma_sq, double L) {
  if (!(sigma_sq > 0.0 && sigma_sq <= 1.0))
    throw std::invalid_argument("sigma_sq must be in (0, 1]");
  if (!(L >= 0.0 && L < 1.0)) throw std::invalid_argument("L must be in [0, 1)");
}

}  // namespace

std::string to_string(CaseTag t) {
  switch (t) {
    case CaseTag::unconstrained: return "unconstrained";
    case CaseTag::upper_clipped: return "upper_clipped";
    case CaseTag::lower_clipped: return "lower_clipped";
    case CaseTag::exact_fit: return "exact_fit";
  }
  return "?";
}

AffineSolution solve_approx_affine(double sigma_sq, double L, double mu_x) {
  check_sigma_l(sigma_sq, L);
  const double want = 1.0 - sigma_sq;
  if (want <= L) return {want, 0.0, CaseTag::exact_fit};
  return {L, (want - L) * mu_x, CaseTag::upper_clipped};
}

AffineSolution solve_reco_affine(double sigma_sq, double L, double mu_x,
                                 double var_x, double var_eta) {
  check_sigma_l(sigma_sq, L);
  if (!(var_x > 0.0)) throw std::invalid_argument("var_x must be positive");
  if (var_eta < 0.0) throw std::invalid_argument("var_eta must be nonnegative");
  const double m0 = var_eta == 0.0
                        ? 1.0 / sigma_sq
                        : sigma_sq * var_x / (sigma_sq * sigma_sq * var_x + var_eta);
  const double lo = 1.0 / (1.0 + L), hi = 1.0 / (1.0 - L);
  AffineSolution s;
  if (m0 > hi) {
    s.m = hi;
    s.case_tag = CaseTag::upper_clipped;
  } else if (m0 < lo) {
    s.m = lo;
    s.case_tag = CaseTag::lower_clipped;
  } else {
    s.m = m0;
    s.case_tag = CaseTag::unconstrained;
  }
  s.b = (1.0 - sigma_sq * s.m) * mu_x;
  return s;
}

AffineSolution solve_approx_affine_correlated(double sigma_sq, double L,
                                              const JointMoments& moments) {
  check_sigma_l(sigma_sq, L);
  if (!(L < 1.0 - sigma_sq))
    throw std::invalid_argument("correlated solution requires L < 1 - sigma_sq");
  if (!(moments.var_x > 0.0)) throw std::invalid_argument("var_x must be positive");
  const double rho = moments.cov_x_eta / moments.var_x;
  const double mu_x = moments.mu_x, mu_h = moments.mu_eta;
  const double c = 1.0 - sigma_sq;
  if (rho < c - L) return {L, (c - L) * mu_x - mu_h, CaseTag::upper_clipped};
  if (rho > c + L) return {-L, (c + L) * mu_x - mu_h, CaseTag::lower_clipped};
  return {c - rho, rho * mu_x - mu_h, CaseTag::unconstrained};
}

FilterScheme squared_soft_tsvd(const EigenOperator& op, double L,
                               const Vec& mu_x_per_component) {
  if (!(L >= 0.0 && L < 1.0)) throw std::invalid_argument("L must be in [0, 1)");
  const int n = op.n_retained();
  if ((int)mu_x_per_component.size() != n)
    throw std::invalid_argument("mean has wrong component count");
  FilterScheme fs;
  fs.L = L;
  fs.filter.resize(n);
  fs.bias.assign(n, 0.0);
  const double cut = 1.0 - L;
  for (int j = 0; j < n; ++j) {
    const double s = op.eigenvalues[j];
    fs.filter[j] = 1.0 / std::max(s, cut);
    if (s < cut) fs.bias[j] = ((1.0 - s - L) / cut) * mu_x_per_component[j];
  }
  return fs;
}

FilterScheme affine_inverse_as_filter(const std::vector<AffineSolution>& sols,
                                      const EigenOperator& op) {
  const int n = op.n_retained();
  if ((int)sols.size() != n)
    throw std::invalid_argument("solution count does not match operator");
  FilterScheme fs;
  fs.filter.resize(n);
  fs.bias.resize(n);
  for (int j = 0; j < n; ++j) {
    const double denom = 1.0 - sols[j].m;
    if (!(denom > 0.0))
      throw std::invalid_argument("residual slope >= 1 is not invertible");
    fs.filter[j] = 1.0 / denom;
    fs.bias[j] = sols[j].b / denom;
  }
  return fs;
}

double MapResidual::eval(double x) const {
  if (family == PriorFamily::gaussian) return slope * x + intercept;
  const double s = x > mean ? 1.0 : (x < mean ? -1.0 : 0.0);
  return (1.0 - sigma_sq) * x - delta * delta * s / scale;
}

MapResidual map_residual(const GaussianMixture1D& prior, double sigma_sq,
                         double delta) {
  if (prior.comp.size() != 1)
    throw std::invalid_argument("MAP residual needs a single-Gaussian prior");
  if (!(sigma_sq > 0.0 && sigma_sq <= 1.0))
    throw std::invalid_argument("sigma_sq must be in (0, 1]");
  const double b = prior.comp[0].stddev;
  if (b == 0.0) throw std::invalid_argument("Gaussian prior with zero stddev");
  MapResidual r;
  r.family = PriorFamily::gaussian;
  r.sigma_sq = sigma_sq;
  r.delta = delta;
  r.mean = prior.comp[0].mean;
  r.scale = b;
  r.slope = 1.0 - sigma_sq - delta * delta / (b * b);
  r.intercept = delta * delta * r.mean / (b * b);
  r.lip = std::fabs(r.slope);
  return r;
}

MapResidual map_residual_laplace(double mean, double scale, double sigma_sq,
                                 double delta) {
  if (!(scale > 0.0)) throw std::invalid_argument("Laplace scale must be positive");
  if (!(sigma_sq > 0.0 && sigma_sq <= 1.0))
    throw std::invalid_argument("sigma_sq must be in (0, 1]");
  MapResidual r;
  r.family = PriorFamily::laplace;
  r.sigma_sq = sigma_sq;
  r.delta = delta;
  r.mean = mean;
  r.scale = scale;
  r.non_lipschitz = true;
  return r;
}

MapFeasibility map_lipschitz_feasible(const MapResidual& residual, double L) {
  if (!(L >= 0.0 && L < 1.0)) throw std::invalid_argument("L must be in [0, 1)");
  if (residual.family == PriorFamily::laplace)
    return {false, -std::numeric_limits<double>::infinity(), "non_lipschitz"};
  const double margin = L - residual.lip;
  if (margin >= 0.0) return {true, margin, ""};
  return {false, margin, "slope_exceeds_bound"};
}

}  // namespace irn
