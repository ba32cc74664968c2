#pragma once

#include <string>

#include "irn/vec.hpp"

namespace irn {

// Self-adjoint PSD operator in eigendecomposed, norm-normalized form:
// eigenvalues descending in (0, 1] with the largest exactly 1, orthonormal
// eigenvector columns, components below the decomposition floor dropped
// into the nullspace count.
struct EigenOperator {
  int dim = 0;
  Vec eigenvalues;  // size n_retained, descending
  Mat eigenvectors; // dim x n_retained, orthonormal columns
  int nullspace_dim = 0;

  int n_retained() const { return (int)eigenvalues.size(); }

  Vec coeffs(const Vec& x) const;    // V^T x
  Vec assemble(const Vec& c) const;  // V c
  Vec apply(const Vec& x) const;     // sum_j sigma_j^2 <x,v_j> v_j
  Vec pseudo_inverse_apply(const Vec& z) const;  // sum_j sigma_j^-2 <z,v_j> v_j
};

// Normalized 2-D Gaussian stencil (sums to 1), k odd.
Mat gaussian_kernel(int k, double stddev);

// Zero-padded 2-D convolution as a dense symmetric matrix on
// image_side^2 pixels. The kernel must be symmetric under 180-degree
// rotation (that is what makes the matrix symmetric) and k <= image_side.
Mat build_convolution_operator(const Mat& kernel, int image_side);

// Pixel-driven discrete Radon matrix: rows indexed by (angle, detector),
// each pixel center projects onto the detector axis and splits its weight
// linearly between the two nearest detector bins. Angles cover [0, pi),
// detector pitch is one pixel, array centered on the image.
Mat build_radon_matrix(int image_side, int num_angles, int num_detectors);

// A = R^T R for the Radon matrix above; symmetric PSD by construction.
Mat build_radon_normal_operator(int image_side, int num_angles, int num_detectors);

// Full symmetric eigendecomposition, eigenvalues divided by the largest,
// pairs below the floor dropped. Pass floor < 0 for the default
// 1e-10 * (largest eigenvalue). Rejects non-PSD input (min eigenvalue
// below -1e-8 relative) and the all-floored (zero) operator.
EigenOperator decompose_and_normalize(const Mat& m, double eigenvalue_floor = -1.0);

// Binary container: magic "EOP1", little-endian u32 dim, u32 n_retained,
// f64 eigenvalues, f64 eigenvector entries column-major.
void save_operator(const EigenOperator& op, const std::string& path);
EigenOperator load_operator(const std::string& path);

}  // namespace irn
