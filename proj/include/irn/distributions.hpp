#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "irn/rng.hpp"

namespace irn {

struct MixtureComponent {
  double weight;
  double mean;
  double stddev;
};

// Finite Gaussian mixture on R. Weights sum to 1, stddevs > 0 (a zero
// stddev is tolerated only as the pushforward of an atom; densities then
// reject evaluation).
struct GaussianMixture1D {
  std::vector<MixtureComponent> comp;
};

void validate_mixture(const GaussianMixture1D& p);

// Zero-mean Gaussian noise; stddev 0 means noiseless.
struct NoiseSpec {
  double stddev = 0.0;
};

struct JointMoments {
  double mu_x = 0, mu_eta = 0;
  double var_x = 0, var_eta = 0;
  double cov_x_eta = 0;
};

// (mean, variance)
std::pair<double, double> mixture_moments(const GaussianMixture1D& p);

double mixture_log_pdf(const GaussianMixture1D& p, double x);
double mixture_pdf(const GaussianMixture1D& p, double x);
double mixture_cdf(const GaussianMixture1D& p, double x);
double sample_mixture(const GaussianMixture1D& p, RngStream& rng);

// Density of z = sigma_sq * x + eta: same weights, means t_k*sigma_sq,
// stddevs sqrt(w^2 + (sigma_sq*v_k)^2).
GaussianMixture1D pushforward_density(const GaussianMixture1D& p, NoiseSpec noise,
                                      double sigma_sq);

// Conditional mean E(x | z) for the mixture prior under Gaussian noise,
// evaluated in log-space so far-tail z stays finite. Noiseless convention:
// returns z / sigma_sq.
struct PosteriorMeanOracle {
  GaussianMixture1D prior;
  NoiseSpec noise;
  double sigma_sq = 1.0;

  double operator()(double z) const;
};

double posterior_mean(const PosteriorMeanOracle& o, double z);

// Independent check of the closed form: adaptive Simpson quadrature of
// the posterior integrals over mean +- 12 stddev support.
double posterior_mean_quadrature(const GaussianMixture1D& prior, NoiseSpec noise,
                                 double sigma_sq, double z, double rel_tol = 1e-9);

// Unbiased sample moments (n-1 denominators). Requires >= 2 samples.
JointMoments estimate_joint_moments(const std::vector<std::pair<double, double>>& xy);

// Adaptive Simpson on [a, b]; exposed for reuse by other quadrature checks.
double adaptive_simpson(const std::function<double(double)>& f, double a, double b,
                        double tol, int max_depth = 40);

}  // namespace irn
