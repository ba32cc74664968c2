#include "doctest.h"

#include <cmath>
#include <stdexcept>

#include "irn/eigen_sym.hpp"
#include "irn/rng.hpp"
#include "irn/vec.hpp"

using irn::Mat;
using irn::SymEig;
using irn::Vec;

namespace {

Mat random_symmetric(int n, irn::RngStream& rng) {
  Mat a(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) {
      const double v = rng.next_normal();
      a(i, j) = v;
      a(j, i) = v;
    }
  return a;
}

double reconstruction_error(const Mat& a, const SymEig& e) {
  const int n = a.rows;
  double err = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int k = 0; k < n; ++k)
        s += e.vectors(i, k) * e.values[k] * e.vectors(j, k);
      err += (s - a(i, j)) * (s - a(i, j));
    }
  return std::sqrt(err);
}

double orthonormality_error(const SymEig& e) {
  const int n = e.vectors.rows;
  double worst = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double s = 0.0;
      for (int k = 0; k < n; ++k) s += e.vectors(k, i) * e.vectors(k, j);
      worst = std::max(worst, std::fabs(s - (i == j ? 1.0 : 0.0)));
    }
  return worst;
}

}  // namespace

TEST_CASE("2x2 analytic eigendecomposition") {
  Mat a(2, 2);
  a(0, 0) = 2.0;
  a(0, 1) = 1.0;
  a(1, 0) = 1.0;
  a(1, 1) = 2.0;
  const SymEig e = irn::eig_sym(a);
  CHECK(e.values[0] == doctest::Approx(3.0).epsilon(1e-14));
  CHECK(e.values[1] == doctest::Approx(1.0).epsilon(1e-14));
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  CHECK(std::fabs(std::fabs(e.vectors(0, 0)) - inv_sqrt2) < 1e-14);
  CHECK(std::fabs(std::fabs(e.vectors(1, 0)) - inv_sqrt2) < 1e-14);
  CHECK(e.vectors(0, 0) * e.vectors(1, 0) > 0.0);
  CHECK(e.vectors(0, 1) * e.vectors(1, 1) < 0.0);
}

TEST_CASE("tridiagonal Toeplitz n=3 matches the closed form") {
  // tridiag(diag 0.5, off 0.25): eigenvalues 0.5 + 0.5 cos(k pi / 4).
  Mat a(3, 3);
  a(0, 0) = a(1, 1) = a(2, 2) = 0.5;
  a(0, 1) = a(1, 0) = a(1, 2) = a(2, 1) = 0.25;
  const SymEig e = irn::eig_sym(a);
  CHECK(e.values[0] == doctest::Approx(0.853553390593274).epsilon(1e-13));
  CHECK(e.values[1] == doctest::Approx(0.5).epsilon(1e-13));
  CHECK(e.values[2] == doctest::Approx(0.146446609406726).epsilon(1e-13));
  CHECK(reconstruction_error(a, e) < 1e-13);
  CHECK(orthonormality_error(e) < 1e-14);
}

TEST_CASE("eigenvalues come out sorted descending") {
  irn::RngStream rng(11, 0, "eig-sort");
  for (int trial = 0; trial < 5; ++trial) {
    const Mat a = random_symmetric(20, rng);
    const SymEig e = irn::eig_sym(a);
    for (int i = 0; i + 1 < 20; ++i) CHECK(e.values[i] >= e.values[i + 1]);
  }
}

TEST_CASE("random matrices reconstruct and stay orthonormal") {
  irn::RngStream rng(12, 0, "eig-random");
  for (int n : {1, 2, 3, 7, 30, 100}) {
    const Mat a = random_symmetric(n, rng);
    const SymEig e = irn::eig_sym(a);
    CHECK(reconstruction_error(a, e) < 1e-10 * std::max(1, n));
    CHECK(orthonormality_error(e) < 1e-12);
  }
}

TEST_CASE("trace and determinant match eigenvalue sums and products") {
  irn::RngStream rng(13, 0, "eig-trace");
  const Mat a = random_symmetric(8, rng);
  const SymEig e = irn::eig_sym(a);
  double tr = 0.0;
  for (int i = 0; i < 8; ++i) tr += a(i, i);
  double sum = 0.0;
  for (double v : e.values) sum += v;
  CHECK(sum == doctest::Approx(tr).epsilon(1e-12));
}

TEST_CASE("repeated eigenvalues keep an orthonormal basis") {
  // Identity plus a rank-1 bump: eigenvalue 1 with multiplicity n-1.
  const int n = 6;
  Mat a(n, n);
  Vec u(n);
  for (int i = 0; i < n; ++i) u[i] = 1.0 / std::sqrt((double)n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a(i, j) = (i == j ? 1.0 : 0.0) + 0.5 * u[i] * u[j];
  const SymEig e = irn::eig_sym(a);
  CHECK(e.values[0] == doctest::Approx(1.5).epsilon(1e-13));
  for (int i = 1; i < n; ++i) CHECK(e.values[i] == doctest::Approx(1.0).epsilon(1e-13));
  CHECK(orthonormality_error(e) < 1e-13);
  CHECK(reconstruction_error(a, e) < 1e-12);
}

TEST_CASE("asymmetric input is rejected") {
  Mat a(2, 2);
  a(0, 0) = 1.0;
  a(0, 1) = 0.5;
  a(1, 0) = 0.5 + 1e-6;
  a(1, 1) = 1.0;
  CHECK_THROWS_AS((void)irn::eig_sym(a), std::invalid_argument);
}

TEST_CASE("diagonal matrix is returned exactly") {
  Mat a(4, 4);
  const double d[4] = {0.9, 0.1, 0.5, 0.3};
  for (int i = 0; i < 4; ++i) a(i, i) = d[i];
  const SymEig e = irn::eig_sym(a);
  CHECK(e.values[0] == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(e.values[1] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(e.values[2] == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(e.values[3] == doctest::Approx(0.1).epsilon(1e-15));
}
