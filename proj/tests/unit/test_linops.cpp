#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>

#include "irn/linops.hpp"
#include "irn/rng.hpp"
#include "irn/vec.hpp"

using irn::EigenOperator;
using irn::Mat;
using irn::Vec;

namespace {

Vec random_vec(int n, irn::RngStream& rng) {
  Vec x(n);
  for (double& v : x) v = rng.next_normal();
  return x;
}

// Direct zero-padded 2-D convolution, the oracle for the matrix form.
Vec conv2d_reference(const Mat& kernel, const Vec& img, int side) {
  const int hw = kernel.rows / 2;
  Vec out((size_t)side * side, 0.0);
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) {
      double s = 0.0;
      for (int dr = -hw; dr <= hw; ++dr)
        for (int dc = -hw; dc <= hw; ++dc) {
          const int rr = r + dr, cc = c + dc;
          if (rr < 0 || rr >= side || cc < 0 || cc >= side) continue;
          s += kernel(dr + hw, dc + hw) * img[(size_t)rr * side + cc];
        }
      out[(size_t)r * side + c] = s;
    }
  return out;
}

}  // namespace

TEST_CASE("frozen tridiagonal example normalizes as expected") {
  Mat a(3, 3);
  a(0, 0) = a(1, 1) = a(2, 2) = 0.5;
  a(0, 1) = a(1, 0) = a(1, 2) = a(2, 1) = 0.25;
  const EigenOperator op = irn::decompose_and_normalize(a);
  REQUIRE(op.n_retained() == 3);
  CHECK(op.eigenvalues[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(op.eigenvalues[1] == doctest::Approx(0.585786437626905).epsilon(1e-12));
  CHECK(op.eigenvalues[2] == doctest::Approx(0.171572875253810).epsilon(1e-12));
  CHECK(op.nullspace_dim == 0);
}

TEST_CASE("largest normalized eigenvalue is exactly one") {
  irn::RngStream rng(21, 0, "linops-norm");
  Mat b(6, 6);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) b(i, j) = rng.next_normal();
  const Mat a = irn::gram(b);
  const EigenOperator op = irn::decompose_and_normalize(a);
  CHECK(op.eigenvalues[0] == 1.0);
  for (int j = 0; j < op.n_retained(); ++j) {
    CHECK(op.eigenvalues[j] > 0.0);
    CHECK(op.eigenvalues[j] <= 1.0);
  }
}

TEST_CASE("floor drops small eigenvalues into the nullspace") {
  Mat a(3, 3);
  a(0, 0) = 1.0;
  a(1, 1) = 0.5;
  a(2, 2) = 1e-13;
  const EigenOperator op = irn::decompose_and_normalize(a);
  CHECK(op.n_retained() == 2);
  CHECK(op.nullspace_dim == 1);

  const EigenOperator keep = irn::decompose_and_normalize(a, 1e-14);
  CHECK(keep.n_retained() == 3);

  Mat z(2, 2);
  CHECK_THROWS_AS((void)irn::decompose_and_normalize(z), std::invalid_argument);

  Mat npsd(2, 2);
  npsd(0, 0) = 1.0;
  npsd(1, 1) = -0.5;
  CHECK_THROWS_AS((void)irn::decompose_and_normalize(npsd), std::invalid_argument);
}

TEST_CASE("apply and pseudo-inverse satisfy the projector identity") {
  irn::RngStream rng(22, 0, "linops-pinv");
  // Rank-deficient PSD: gram of a wide matrix.
  Mat b(4, 7);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 7; ++j) b(i, j) = rng.next_normal();
  const Mat a = irn::gram(b);
  const EigenOperator op = irn::decompose_and_normalize(a);
  REQUIRE(op.nullspace_dim == 3);

  for (int trial = 0; trial < 10; ++trial) {
    const Vec x = random_vec(7, rng);
    const Vec ax = op.apply(x);
    const Vec pinv_ax = op.pseudo_inverse_apply(ax);
    // A^+ A x equals the projection of x onto the retained span.
    const Vec proj = op.assemble(op.coeffs(x));
    double err = 0.0;
    for (int i = 0; i < 7; ++i) err = std::max(err, std::fabs(pinv_ax[i] - proj[i]));
    CHECK(err < 1e-8);

    // Monotonicity of a normalized PSD operator: |Ax|^2 <= <Ax, x>.
    CHECK(irn::dot(ax, ax) <= irn::dot(ax, x) + 1e-12);
  }
}

TEST_CASE("operator reconstructs the normalized matrix") {
  irn::RngStream rng(23, 0, "linops-recon");
  Mat b(9, 9);
  for (int i = 0; i < 9; ++i)
    for (int j = 0; j < 9; ++j) b(i, j) = rng.next_normal();
  const Mat a = irn::gram(b);
  const EigenOperator op = irn::decompose_and_normalize(a, 0.0);

  // Feed unit vectors through apply to rebuild the matrix column by column.
  // Compare with A / lambda_max.
  double lmax = 0.0;
  {
    const EigenOperator raw = irn::decompose_and_normalize(a, 0.0);
    // Recover lambda_max via the Rayleigh quotient of the top eigenvector.
    Vec v0(9);
    for (int i = 0; i < 9; ++i) v0[i] = raw.eigenvectors(i, 0);
    Vec av;
    irn::gemv(a, v0, av);
    lmax = irn::dot(v0, av);
  }
  double err = 0.0;
  for (int j = 0; j < 9; ++j) {
    Vec e(9, 0.0);
    e[j] = 1.0;
    const Vec col = op.apply(e);
    for (int i = 0; i < 9; ++i) err += (col[i] - a(i, j) / lmax) * (col[i] - a(i, j) / lmax);
  }
  CHECK(std::sqrt(err) < 1e-8);
}

TEST_CASE("gaussian kernel is normalized and rotation-symmetric") {
  const Mat k = irn::gaussian_kernel(5, 1.0);
  double s = 0.0;
  for (double v : k.a) s += v;
  CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) CHECK(k(i, j) == k(4 - i, 4 - j));
  CHECK_THROWS_AS((void)irn::gaussian_kernel(4, 1.0), std::invalid_argument);
}

TEST_CASE("convolution matrix matches the direct stencil oracle") {
  irn::RngStream rng(24, 0, "linops-conv");
  const Mat k = irn::gaussian_kernel(3, 0.8);
  const int side = 6;
  const Mat m = irn::build_convolution_operator(k, side);
  REQUIRE(m.rows == side * side);
  // Symmetry comes from the 180-degree kernel symmetry.
  for (int i = 0; i < m.rows; ++i)
    for (int j = 0; j < m.cols; ++j) CHECK(m(i, j) == doctest::Approx(m(j, i)).epsilon(1e-15));
  for (int trial = 0; trial < 5; ++trial) {
    const Vec img = random_vec(side * side, rng);
    Vec via_matrix;
    irn::gemv(m, img, via_matrix);
    const Vec ref = conv2d_reference(k, img, side);
    for (int i = 0; i < side * side; ++i)
      CHECK(via_matrix[i] == doctest::Approx(ref[i]).epsilon(1e-13));
  }
}

TEST_CASE("convolution operator rejects bad kernels") {
  Mat bad(3, 3);
  bad(0, 0) = 0.5;
  bad(2, 2) = 0.25;  // not 180-degree symmetric
  bad(1, 1) = 0.25;
  CHECK_THROWS_AS((void)irn::build_convolution_operator(bad, 8), std::invalid_argument);
  const Mat k = irn::gaussian_kernel(9, 2.0);
  CHECK_THROWS_AS((void)irn::build_convolution_operator(k, 8), std::invalid_argument);
}

TEST_CASE("radon normal operator is the gram of the projection matrix") {
  const int side = 8, angles = 6, dets = 11;
  const Mat r = irn::build_radon_matrix(side, angles, dets);
  REQUIRE(r.rows == angles * dets);
  REQUIRE(r.cols == side * side);
  // Every pixel distributes unit weight per angle.
  for (int a = 0; a < angles; ++a)
    for (int p = 0; p < side * side; ++p) {
      double s = 0.0;
      for (int d = 0; d < dets; ++d) s += r(a * dets + d, p);
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
  const Mat n = irn::build_radon_normal_operator(side, angles, dets);
  const Mat g = irn::gram(r);
  for (size_t i = 0; i < n.a.size(); ++i) CHECK(n.a[i] == g.a[i]);
  // Decomposition must succeed and keep eigenvalues in (0, 1].
  const EigenOperator op = irn::decompose_and_normalize(n);
  CHECK(op.eigenvalues[0] == 1.0);
  CHECK(op.eigenvalues.back() > 0.0);
}

TEST_CASE("operator file round-trips bitwise") {
  Mat a(3, 3);
  a(0, 0) = a(1, 1) = a(2, 2) = 0.5;
  a(0, 1) = a(1, 0) = a(1, 2) = a(2, 1) = 0.25;
  const EigenOperator op = irn::decompose_and_normalize(a);
  const std::string path = "test_op_roundtrip.eop";
  irn::save_operator(op, path);
  const EigenOperator back = irn::load_operator(path);
  std::remove(path.c_str());
  REQUIRE(back.dim == op.dim);
  REQUIRE(back.n_retained() == op.n_retained());
  CHECK(back.nullspace_dim == op.nullspace_dim);
  for (int j = 0; j < op.n_retained(); ++j) CHECK(back.eigenvalues[j] == op.eigenvalues[j]);
  for (size_t i = 0; i < op.eigenvectors.a.size(); ++i)
    CHECK(back.eigenvectors.a[i] == op.eigenvectors.a[i]);
}
