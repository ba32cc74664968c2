#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "irn/datasets.hpp"
#include "irn/iresnet.hpp"
#include "irn/linops.hpp"
#include "irn/vec.hpp"

namespace irn {

// Data-dependent filter surface of a trained network. Component j of the
// inverse is probed at s(q) = sigma_j^2 (mu_j + q std_j) and reported as
// the product form
//   R_L(sigma_j, q) = psi_j(s(q)) - b_hat_j,   b_hat_j = psi_j(0),
// which stays finite at s(q) = 0 where the filter ratio itself would
// divide by zero.
struct FilterProfile {
  Vec sigma;      // singular values sqrt(eigenvalue), descending
  Vec q;          // offsets in units of per-component stddev
  Mat surface;    // n_components x q.size(), R_L values
  Vec intercept;  // b_hat per component
  Mat s;          // evaluation points, same shape as surface
  double L = 0.0;
};

// 41 offsets equispaced in [-5, 5].
Vec default_q_grid();

// Probes every component of the inverse over the dataset's per-component
// mean +- q std window. Probes invert well below the 1e-8 evaluation
// tolerance: an affine model's surface must come out constant in q to
// 1e-10, which a looser fixed point cannot guarantee at small s(q).
// Component counts of net, op and ds must agree.
FilterProfile extract_filter_surface(const DiagonalIResNet& net,
                                     const EigenOperator& op,
                                     const Dataset& ds, const Vec& q_grid);

// Per-sample operator-approximation errors of phi against A and of the
// round trip through the inverse:
//   forward_error[i] = ||phi(x_i) - A x_i||
//   inverse_error[i] = ||x_i - phi^{-1}(A x_i)||
// Norms are over the full image space when ds carries samples (the
// component of x outside the retained basis then enters both errors);
// coordinate-only datasets are measured over the retained coordinates.
// delta_hat is carried through as metadata for reporting.
struct ApproxErrorReport {
  Vec forward_error;
  Vec inverse_error;
  double forward_mean = 0.0;
  double inverse_mean = 0.0;
  double L = 0.0;
  double delta_hat = 0.0;
};

ApproxErrorReport approx_errors(const DiagonalIResNet& net, const Dataset& ds,
                                const EigenOperator& op,
                                double delta_hat = 0.0);

// Mean structural similarity (wang2004) between two side x side images
// stored row-major: 11 x 11 Gaussian window with stddev 1.5 in valid
// positions, K1 = 0.01, K2 = 0.03 against the given dynamic range.
// Requires side >= 11.
double ssim_index(const Vec& a, const Vec& b, int side, double dynamic_range);

// Reconstruction quality from noisy data z = sigma_j^2 x_j + delta eps:
//   mse  = mean ||x_i - psi(z_i)||^2
//   ssim = mean SSIM(x_i, reconstruction_i)
// Noise follows the dataset module's matched-noise contract for
// (delta_hat, seed). SSIM uses the dataset's max - min as dynamic range
// and is skipped (has_ssim = false, notice filled) when the samples are
// not square images of side >= 11 or the dataset is coordinate-only.
struct RecoErrorReport {
  double mse = 0.0;
  double ssim = 0.0;
  bool has_ssim = false;
  std::string notice;  // why ssim is absent
  Vec per_sample_sq;   // squared reconstruction error per sample
  double L = 0.0;
  double delta_hat = 0.0;
};

RecoErrorReport reco_errors(const DiagonalIResNet& net, const Dataset& ds,
                            const EigenOperator& op, double delta_hat,
                            uint64_t seed);

// Empirical slopes of each residual component over mean_j +- 6 std_j at
// step std_j / 200. Components with zero spread report zero slopes.
// lipschitz = max_j max(|min_slope_j|, |max_slope_j|).
struct LipschitzReport {
  Vec min_slope;
  Vec max_slope;
  double lipschitz = 0.0;
};

LipschitzReport lipschitz_track(const DiagonalIResNet& net, const Vec& mean,
                                const Vec& std);
LipschitzReport lipschitz_track(const DiagonalIResNet& net, const Dataset& ds);

// Gaussian restricted to [lo, hi], density normalized over that interval.
struct TruncatedGaussian {
  double mean = 0.0;
  double stddev = 1.0;
  double lo = -1.0;
  double hi = 1.0;

  double pdf(double x) const;
};

// Deterministic orthonormal completion of the retained eigenvectors:
// dim x nullspace_dim columns spanning the orthogonal complement.
Mat nullspace_basis(const EigenOperator& op);

// Vanishing-noise behavior of the conditional mean for an operator with a
// nontrivial nullspace. The prior is a product of truncated Gaussians in
// the basis [retained eigenvectors | nullspace_basis(op)]; noise is
// isotropic Gaussian with stddev delta, so the posterior factorizes per
// coordinate and each factor is evaluated by adaptive quadrature. The
// limit is the pseudoinverse part z_j / sigma_j^2 combined with the
// nullspace conditional expectation, and each row records the distance
//   || psi_hat_delta(z) - limit ||
// together with whether z still lies numerically inside the data support
// at that delta (any per-coordinate evidence mass below 1e-12 clears the
// flag). Throws when the nullspace is trivial, sizes disagree, or a delta
// is not positive.
struct LimitCheckRow {
  double delta = 0.0;
  double distance = 0.0;
  bool in_support = true;
};

struct LimitCheckReport {
  Vec limit_coords;  // retained coordinates then nullspace coordinates
  Mat estimates;     // deltas.size() x dim, coordinates per delta
  std::vector<LimitCheckRow> rows;
};

LimitCheckReport posterior_limit_check(
    const EigenOperator& op, const Mat& null_basis,
    const std::vector<TruncatedGaussian>& prior, const Vec& deltas,
    const Vec& z);

// CSV emission, one header row then data rows. Provenance comments are the
// caller's responsibility.
void write_filter_surface_csv(std::ostream& out, const FilterProfile& p,
                              double delta_hat, const std::string& mode);
void write_error_row_csv(std::ostream& out, double L, double delta_hat,
                         const std::string& metric, double value,
                         const std::string& mode, bool header = false);
void write_limit_check_csv(std::ostream& out, const LimitCheckReport& r);

}  // namespace irn
