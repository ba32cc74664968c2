#pragma once

// Monte Carlo brute-force machinery for checking the analytic affine
// solutions: the empirical quadratic objective is expanded in sample
// moments, so a full (m, b) grid sweep costs one closed-form b-step per
// slope instead of a pass over the samples.

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "irn/closed_form.hpp"
#include "irn/distributions.hpp"
#include "irn/rng.hpp"
#include "irn/vec.hpp"

namespace bf {

struct Samples {
  irn::Vec x, e;
  double s1x = 0, s2x = 0, s1e = 0, s2e = 0, sxe = 0;

  void finalize() {
    const double n = (double)x.size();
    s1x = s2x = s1e = s2e = sxe = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
      s1x += x[i];
      s2x += x[i] * x[i];
      s1e += e[i];
      s2e += e[i] * e[i];
      sxe += x[i] * e[i];
    }
    s1x /= n;
    s2x /= n;
    s1e /= n;
    s2e /= n;
    sxe /= n;
  }
};

// eta = eta0 + alpha (x - mu_x) + w g; alpha = 0 gives independent noise.
inline Samples draw_joint(const irn::GaussianMixture1D& prior, double w, double eta0,
                          double alpha, int n, irn::RngStream& rng) {
  Samples s;
  s.x.resize(n);
  s.e.resize(n);
  const double mu = irn::mixture_moments(prior).first;
  for (int i = 0; i < n; ++i) {
    s.x[i] = irn::sample_mixture(prior, rng);
    s.e[i] = eta0 + alpha * (s.x[i] - mu) + w * rng.next_normal();
  }
  s.finalize();
  return s;
}

// Residual of approximation training: phi(x) - (A x + eta) per sample.
inline double approx_residual(double sigma_sq, double m, double b, double x, double e) {
  return (1.0 - sigma_sq - m) * x - b - e;
}

// Residual of reconstruction training: psi(z) - x with z = A x + eta.
inline double reco_residual(double sigma_sq, double m, double b, double x, double e) {
  return (m * sigma_sq - 1.0) * x + m * e + b;
}

inline double approx_objective(double sigma_sq, double m, double b, const Samples& s) {
  const double c = 1.0 - sigma_sq - m;
  return c * c * s.s2x - 2.0 * c * (b * s.s1x + s.sxe) + b * b + 2.0 * b * s.s1e + s.s2e;
}

inline double reco_objective(double sigma_sq, double m, double b, const Samples& s) {
  const double a = m * sigma_sq - 1.0;
  return a * a * s.s2x + 2.0 * a * (m * s.sxe + b * s.s1x) + m * m * s.s2e +
         2.0 * m * b * s.s1e + b * b;
}

struct GridPoint {
  double m = 0, b = 0, value = 0;
};

namespace detail {

// The objective is convex in b for fixed m, so only the two grid
// neighbors of the clamped stationary point can carry the row minimum.
template <class Objective, class BStar>
GridPoint sweep(double m_lo, double m_hi, double clamp_lo, double clamp_hi,
                const Objective& obj, const BStar& b_star_of_m) {
  GridPoint best;
  best.value = std::numeric_limits<double>::infinity();
  const double step = 1e-3;
  const int steps = (int)std::llround((m_hi - m_lo) / step);
  for (int i = 0; i <= steps; ++i) {
    const double m = std::clamp(m_lo + i * step, clamp_lo, clamp_hi);
    const double bs = std::clamp(b_star_of_m(m), -5.0, 5.0);
    const int kf = (int)std::floor((bs + 5.0) / step);
    for (int k : {kf, kf + 1}) {
      const int kk = std::clamp(k, 0, 10000);
      const double b = -5.0 + kk * step;
      const double v = obj(m, b);
      if (v < best.value) best = {m, b, v};
    }
  }
  return best;
}

}  // namespace detail

inline GridPoint grid_min_approx(double sigma_sq, double L, const Samples& s) {
  return detail::sweep(
      -2.0, 2.0, -L, L,
      [&](double m, double b) { return approx_objective(sigma_sq, m, b, s); },
      [&](double m) { return (1.0 - sigma_sq - m) * s.s1x - s.s1e; });
}

inline GridPoint grid_min_reco(double sigma_sq, double L, const Samples& s) {
  const double lo = 1.0 / (1.0 + L), hi = 1.0 / (1.0 - L);
  return detail::sweep(
      lo - 0.2, hi + 0.2, lo, hi,
      [&](double m, double b) { return reco_objective(sigma_sq, m, b, s); },
      [&](double m) { return -((m * sigma_sq - 1.0) * s.s1x + m * s.s1e); });
}

// z-score of the paired objective difference grid-minimum minus analytic;
// dominance holds when the return value is >= -3.
template <class Residual>
double dominance_z(const Residual& res, double sigma_sq, const GridPoint& grid,
                   double m_a, double b_a, const Samples& s) {
  const size_t n = s.x.size();
  double sum = 0.0, sumsq = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double rg = res(sigma_sq, grid.m, grid.b, s.x[i], s.e[i]);
    const double ra = res(sigma_sq, m_a, b_a, s.x[i], s.e[i]);
    const double d = rg * rg - ra * ra;
    sum += d;
    sumsq += d * d;
  }
  const double mean = sum / n;
  const double var = std::max(0.0, sumsq / n - mean * mean);
  const double se = std::sqrt(var / n);
  if (se == 0.0) return mean >= 0.0 ? 1e9 : -1e9;
  return mean / se;
}

}  // namespace bf
