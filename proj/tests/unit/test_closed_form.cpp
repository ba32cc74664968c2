#include "doctest.h"

#include <cmath>
#include <stdexcept>
#include <vector>

#include "irn/closed_form.hpp"
#include "irn/linops.hpp"
#include "irn/rng.hpp"
#include "support/brute_force.hpp"

using irn::AffineSolution;
using irn::CaseTag;
using irn::GaussianMixture1D;
using irn::JointMoments;

namespace {

irn::EigenOperator diag_operator(const irn::Vec& eigenvalues) {
  irn::Mat m((int)eigenvalues.size(), (int)eigenvalues.size());
  for (size_t i = 0; i < eigenvalues.size(); ++i) m((int)i, (int)i) = eigenvalues[i];
  return irn::decompose_and_normalize(m, 0.0);
}

GaussianMixture1D random_prior(irn::RngStream& rng) {
  const int K = 1 + (int)(rng.next_double() * 3.0);
  GaussianMixture1D p;
  double wsum = 0.0;
  for (int k = 0; k < K; ++k) {
    const double wk = 0.2 + rng.next_double();
    p.comp.push_back({wk, 3.0 * (rng.next_double() - 0.5), 0.05 + rng.next_double()});
    wsum += wk;
  }
  for (auto& c : p.comp) c.weight /= wsum;
  return p;
}

}  // namespace

TEST_CASE("approximation solution branches") {
  const AffineSolution a = irn::solve_approx_affine(0.9, 0.5, 3.0);
  CHECK(a.m == doctest::Approx(0.1).epsilon(1e-14));
  CHECK(a.b == 0.0);
  CHECK(a.case_tag == CaseTag::exact_fit);

  const AffineSolution b = irn::solve_approx_affine(0.2, 0.5, 1.0);
  CHECK(b.m == 0.5);
  CHECK(b.b == doctest::Approx(0.3).epsilon(1e-14));
  CHECK(b.case_tag == CaseTag::upper_clipped);

  const AffineSolution c = irn::solve_approx_affine(1.0, 0.7, -4.0);
  CHECK(c.m == 0.0);
  CHECK(c.b == 0.0);
  CHECK(c.case_tag == CaseTag::exact_fit);

  CHECK_THROWS_AS((void)irn::solve_approx_affine(0.0, 0.5, 0.0), std::invalid_argument);
  CHECK_THROWS_AS((void)irn::solve_approx_affine(0.5, 1.0, 0.0), std::invalid_argument);
}

TEST_CASE("reconstruction solution branches") {
  const AffineSolution a = irn::solve_reco_affine(0.5, 0.3, 0.0, 1.0, 0.0);
  CHECK(a.m == doctest::Approx(10.0 / 7.0).epsilon(1e-14));
  CHECK(a.b == 0.0);
  CHECK(a.case_tag == CaseTag::upper_clipped);

  const AffineSolution b = irn::solve_reco_affine(1.0, 0.5, 1.0, 1.0, 10.0);
  CHECK(b.m == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  CHECK(b.b == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
  CHECK(b.case_tag == CaseTag::lower_clipped);

  const AffineSolution c = irn::solve_reco_affine(1.0, 0.5, 2.0, 1.0, 0.0);
  CHECK(c.m == 1.0);
  CHECK(c.b == 0.0);
  CHECK(c.case_tag == CaseTag::unconstrained);

  CHECK_THROWS_AS((void)irn::solve_reco_affine(0.5, 0.3, 0.0, 0.0, 1.0),
                  std::invalid_argument);
  CHECK_THROWS_AS((void)irn::solve_reco_affine(0.5, 0.3, 0.0, 1.0, -1.0),
                  std::invalid_argument);
}

TEST_CASE("correlated solution branches on the correlation ratio") {
  JointMoments m;
  m.mu_x = 2.0;
  m.mu_eta = 0.5;
  m.var_x = 1.0;

  m.cov_x_eta = 0.0;  // rho = 0 < 1 - 0.2 - 0.3
  const AffineSolution ind = irn::solve_approx_affine_correlated(0.2, 0.3, m);
  CHECK(ind.m == 0.3);
  CHECK(ind.b == doctest::Approx((1.0 - 0.2 - 0.3) * 2.0 - 0.5).epsilon(1e-14));
  CHECK(ind.case_tag == CaseTag::upper_clipped);

  m.cov_x_eta = 0.5;  // rho = 0.5 in [0.5, 1.1]
  const AffineSolution mid = irn::solve_approx_affine_correlated(0.2, 0.3, m);
  CHECK(mid.m == doctest::Approx(0.3).epsilon(1e-14));
  CHECK(mid.b == doctest::Approx(0.5 * 2.0 - 0.5).epsilon(1e-14));
  CHECK(mid.case_tag == CaseTag::unconstrained);

  m.cov_x_eta = 1.0;  // rho = 1 = 2 (1 - sigma_sq) > 1 - 0.5 + 0.1
  const AffineSolution neg = irn::solve_approx_affine_correlated(0.5, 0.1, m);
  CHECK(neg.m == -0.1);
  CHECK(neg.b == doctest::Approx((1.0 - 0.5 + 0.1) * 2.0 - 0.5).epsilon(1e-14));
  CHECK(neg.case_tag == CaseTag::lower_clipped);

  CHECK_THROWS_AS((void)irn::solve_approx_affine_correlated(0.8, 0.3, m),
                  std::invalid_argument);
}

TEST_CASE("squared soft filter values and bias support") {
  const irn::EigenOperator op = diag_operator({1.0, 0.5, 0.1});
  const irn::FilterScheme fs = irn::squared_soft_tsvd(op, 0.25, {1.0, 2.0, 3.0});
  CHECK(fs.filter[0] == 1.0);
  CHECK(fs.filter[1] == doctest::Approx(4.0 / 3.0).epsilon(1e-15));
  CHECK(fs.filter[2] == doctest::Approx(4.0 / 3.0).epsilon(1e-15));
  CHECK(fs.bias[0] == 0.0);
  CHECK(fs.bias[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
  CHECK(fs.bias[2] == doctest::Approx((1.0 - 0.1 - 0.25) / 0.75 * 3.0).epsilon(1e-14));

  // L close to 1: the filter tends to the pseudo-inverse, bias to zero.
  const irn::FilterScheme lim = irn::squared_soft_tsvd(op, 1.0 - 1e-9, {1.0, 2.0, 3.0});
  CHECK(lim.filter[2] == doctest::Approx(10.0).epsilon(1e-8));
  CHECK(std::fabs(lim.bias[2]) < 1e-8);

  CHECK_THROWS_AS((void)irn::squared_soft_tsvd(op, 0.25, {1.0}), std::invalid_argument);
}

TEST_CASE("inverted affine network equals the analytic filter") {
  const irn::Vec evs = {1.0, 0.8, 0.37, 0.11, 0.042, 0.0051};
  const irn::EigenOperator op = diag_operator(evs);
  const irn::Vec mu = {0.4, -1.2, 2.0, 0.03, -0.7, 1.5};
  for (double L : {0.0, 2.0 / 3.0, 26.0 / 27.0, 242.0 / 243.0}) {
    std::vector<AffineSolution> sols;
    for (int j = 0; j < op.n_retained(); ++j)
      sols.push_back(irn::solve_approx_affine(op.eigenvalues[j], L, mu[j]));
    const irn::FilterScheme a = irn::affine_inverse_as_filter(sols, op);
    const irn::FilterScheme t = irn::squared_soft_tsvd(op, L, mu);
    for (int j = 0; j < op.n_retained(); ++j) {
      // Clipped components agree bitwise; the rest agree to 1e-14 in the
      // well conditioned reciprocal parametrization.
      if (op.eigenvalues[j] < 1.0 - L) {
        CHECK(a.filter[j] == t.filter[j]);
      } else {
        CHECK(std::fabs(1.0 / a.filter[j] - 1.0 / t.filter[j]) <= 1e-14);
        CHECK(std::fabs(a.filter[j] - t.filter[j]) <= 1e-13 * t.filter[j]);
      }
      CHECK(std::fabs(a.bias[j] - t.bias[j]) <= 1e-14 * std::max(1.0, std::fabs(t.bias[j])));
    }
  }
  CHECK_THROWS_AS((void)irn::affine_inverse_as_filter({}, op), std::invalid_argument);
}

TEST_CASE("noiseless reconstruction inverts to the approximation solution") {
  irn::RngStream rng(41, 0, "noiseless-consistency");
  for (int trial = 0; trial < 50; ++trial) {
    const double L = 0.05 + 0.9 * rng.next_double();
    const double sigma_sq = (1.0 - L) * rng.next_double() * 0.999;
    if (!(sigma_sq > 0.0)) continue;  // keep 1 - sigma_sq > L
    const double mu = 4.0 * (rng.next_double() - 0.5);
    const AffineSolution reco = irn::solve_reco_affine(sigma_sq, L, mu, 1.0, 0.0);
    const AffineSolution approx = irn::solve_approx_affine(sigma_sq, L, mu);
    // phi = psi^{-1}: slope 1/m, so the residual f = Id - phi has slope
    // 1 - 1/m and intercept b/m.
    CHECK(1.0 - 1.0 / reco.m == doctest::Approx(approx.m).epsilon(1e-12));
    CHECK(reco.b / reco.m == doctest::Approx(approx.b).epsilon(1e-11));
  }
}

TEST_CASE("map residual formulas") {
  const irn::MapResidual g = irn::map_residual({{{1.0, 0.7, 1.0}}}, 0.5, 0.5);
  CHECK(g.slope == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(g.intercept == doctest::Approx(0.25 * 0.7).epsilon(1e-14));
  CHECK(g.lip == doctest::Approx(0.25).epsilon(1e-14));
  CHECK_FALSE(g.non_lipschitz);
  CHECK(g.eval(2.0) == doctest::Approx(0.25 * 2.0 + 0.175).epsilon(1e-14));

  // delta^2 / b^2 = 1 - sigma_sq makes the residual vanish entirely.
  const irn::MapResidual zero =
      irn::map_residual({{{1.0, 0.0, 1.0}}}, 0.5, std::sqrt(0.5));
  CHECK(zero.slope == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(zero.lip == doctest::Approx(0.0).epsilon(1e-14));

  const irn::MapResidual lap = irn::map_residual_laplace(0.3, 0.8, 0.4, 0.2);
  CHECK(lap.non_lipschitz);
  // Piecewise affine with a downward jump of 2 delta^2 / scale at the mean.
  const double left = lap.eval(0.3 - 1e-12), right = lap.eval(0.3 + 1e-12);
  CHECK(left - right == doctest::Approx(2.0 * 0.04 / 0.8).epsilon(1e-3));

  CHECK_THROWS_AS((void)irn::map_residual({{{1.0, 0.0, 0.0}}}, 0.5, 0.1),
                  std::invalid_argument);
  CHECK_THROWS_AS((void)irn::map_residual({{{0.5, 0.0, 1.0}, {0.5, 1.0, 1.0}}}, 0.5, 0.1),
                  std::invalid_argument);
}

TEST_CASE("map feasibility margins") {
  const irn::MapResidual small_delta = irn::map_residual({{{1.0, 0.0, 1.0}}}, 0.9, 0.01);
  const irn::MapFeasibility f1 = irn::map_lipschitz_feasible(small_delta, 0.1);
  CHECK(f1.feasible);
  CHECK(f1.margin > 0.0);

  const irn::MapResidual no_delta = irn::map_residual({{{1.0, 0.0, 1.0}}}, 0.1, 0.0);
  const irn::MapFeasibility f2 = irn::map_lipschitz_feasible(no_delta, 0.5);
  CHECK_FALSE(f2.feasible);
  CHECK(f2.margin == doctest::Approx(-0.4).epsilon(1e-14));
  CHECK(f2.reason == "slope_exceeds_bound");

  const irn::MapResidual boundary =
      irn::map_residual({{{1.0, 0.0, 1.0}}}, 0.1, std::sqrt(0.4));
  const irn::MapFeasibility f3 = irn::map_lipschitz_feasible(boundary, 0.5);
  CHECK(f3.margin == doctest::Approx(0.0).epsilon(1e-14));

  const irn::MapFeasibility f4 =
      irn::map_lipschitz_feasible(irn::map_residual_laplace(0.0, 1.0, 0.5, 0.1), 0.9);
  CHECK_FALSE(f4.feasible);
  CHECK(f4.reason == "non_lipschitz");
}

TEST_CASE("grid search never beats the analytic approximation solution") {
  irn::RngStream rng(42, 0, "bf-approx-unit");
  for (int trial = 0; trial < 12; ++trial) {
    const GaussianMixture1D prior = random_prior(rng);
    const double sigma_sq = 0.05 + 0.95 * rng.next_double();
    const double L = 0.9 * rng.next_double();
    const double w = 1.2 * rng.next_double();
    irn::RngStream srng = rng.split(trial, "samples");
    const bf::Samples s = bf::draw_joint(prior, w, 0.0, 0.0, 20000, srng);
    const AffineSolution a =
        irn::solve_approx_affine(sigma_sq, L, irn::mixture_moments(prior).first);
    const bf::GridPoint g = bf::grid_min_approx(sigma_sq, L, s);
    const double z = bf::dominance_z(
        [](double ss, double m, double b, double x, double e) {
          return bf::approx_residual(ss, m, b, x, e);
        },
        sigma_sq, g, a.m, a.b, s);
    CHECK(z >= -3.0);
  }
}

TEST_CASE("grid search never beats the analytic reconstruction solution") {
  irn::RngStream rng(43, 0, "bf-reco-unit");
  for (int trial = 0; trial < 12; ++trial) {
    const GaussianMixture1D prior = random_prior(rng);
    const double sigma_sq = 0.05 + 0.95 * rng.next_double();
    const double L = 0.9 * rng.next_double();
    const double w = trial % 4 == 0 ? 0.0 : 1.2 * rng.next_double();
    irn::RngStream srng = rng.split(trial, "samples");
    const bf::Samples s = bf::draw_joint(prior, w, 0.0, 0.0, 20000, srng);
    const auto [mu, var] = irn::mixture_moments(prior);
    const AffineSolution a = irn::solve_reco_affine(sigma_sq, L, mu, var, w * w);
    const bf::GridPoint g = bf::grid_min_reco(sigma_sq, L, s);
    const double z = bf::dominance_z(
        [](double ss, double m, double b, double x, double e) {
          return bf::reco_residual(ss, m, b, x, e);
        },
        sigma_sq, g, a.m, a.b, s);
    CHECK(z >= -3.0);
  }
}

TEST_CASE("grid search never beats the correlated solution") {
  irn::RngStream rng(44, 0, "bf-corr-unit");
  for (int trial = 0; trial < 12; ++trial) {
    const GaussianMixture1D prior = random_prior(rng);
    const double sigma_sq = 0.05 + 0.85 * rng.next_double();
    const double L = (1.0 - sigma_sq) * 0.95 * rng.next_double();
    const double w = 0.1 + rng.next_double();
    const double alpha = -0.5 + 3.0 * rng.next_double();
    const double eta0 = rng.next_double() - 0.5;
    irn::RngStream srng = rng.split(trial, "samples");
    const bf::Samples s = bf::draw_joint(prior, w, eta0, alpha, 20000, srng);
    irn::JointMoments m;
    m.mu_x = irn::mixture_moments(prior).first;
    m.mu_eta = eta0;
    m.var_x = irn::mixture_moments(prior).second;
    m.cov_x_eta = alpha * m.var_x;
    const AffineSolution a = irn::solve_approx_affine_correlated(sigma_sq, L, m);
    const bf::GridPoint g = bf::grid_min_approx(sigma_sq, L, s);
    const double z = bf::dominance_z(
        [](double ss, double mm, double b, double x, double e) {
          return bf::approx_residual(ss, mm, b, x, e);
        },
        sigma_sq, g, a.m, a.b, s);
    CHECK(z >= -3.0);
  }
}
