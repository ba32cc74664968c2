#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <vector>

namespace irn {

using Vec = std::vector<double>;

// Dense row-major matrix. Heap-backed; copyable; no aliasing tricks.
struct Mat {
  int rows = 0;
  int cols = 0;
  Vec a;

  Mat() = default;
  Mat(int r, int c, double fill = 0.0) : rows(r), cols(c), a((size_t)r * c, fill) {}

  double& operator()(int i, int j) { return a[(size_t)i * cols + j]; }
  double operator()(int i, int j) const { return a[(size_t)i * cols + j]; }

  double* row(int i) { return a.data() + (size_t)i * cols; }
  const double* row(int i) const { return a.data() + (size_t)i * cols; }
};

inline double dot(const Vec& x, const Vec& y) {
  assert(x.size() == y.size());
  double s = 0.0;
  for (size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
  return s;
}

inline double nrm2(const Vec& x) { return std::sqrt(dot(x, x)); }

inline void axpy(double a, const Vec& x, Vec& y) {
  assert(x.size() == y.size());
  for (size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

inline void scal(double a, Vec& x) {
  for (double& v : x) v *= a;
}

// y = M x
inline void gemv(const Mat& m, const Vec& x, Vec& y) {
  assert((int)x.size() == m.cols);
  y.assign(m.rows, 0.0);
  for (int i = 0; i < m.rows; ++i) {
    const double* r = m.row(i);
    double s = 0.0;
    for (int j = 0; j < m.cols; ++j) s += r[j] * x[j];
    y[i] = s;
  }
}

// y = M^T x
inline void gemv_t(const Mat& m, const Vec& x, Vec& y) {
  assert((int)x.size() == m.rows);
  y.assign(m.cols, 0.0);
  for (int i = 0; i < m.rows; ++i) {
    const double* r = m.row(i);
    const double xi = x[i];
    for (int j = 0; j < m.cols; ++j) y[j] += r[j] * xi;
  }
}

// C = A B
inline void gemm(const Mat& a, const Mat& b, Mat& c) {
  assert(a.cols == b.rows);
  c = Mat(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i) {
    const double* ar = a.row(i);
    double* cr = c.row(i);
    for (int k = 0; k < a.cols; ++k) {
      const double aik = ar[k];
      if (aik == 0.0) continue;
      const double* br = b.row(k);
      for (int j = 0; j < b.cols; ++j) cr[j] += aik * br[j];
    }
  }
}

// C = A^T B
inline void gemm_tn(const Mat& a, const Mat& b, Mat& c) {
  assert(a.rows == b.rows);
  c = Mat(a.cols, b.cols);
  for (int k = 0; k < a.rows; ++k) {
    const double* ar = a.row(k);
    const double* br = b.row(k);
    for (int i = 0; i < a.cols; ++i) {
      const double aki = ar[i];
      if (aki == 0.0) continue;
      double* cr = c.row(i);
      for (int j = 0; j < b.cols; ++j) cr[j] += aki * br[j];
    }
  }
}

// C = A B^T
inline void gemm_nt(const Mat& a, const Mat& b, Mat& c) {
  assert(a.cols == b.cols);
  c = Mat(a.rows, b.rows);
  for (int i = 0; i < a.rows; ++i) {
    const double* ar = a.row(i);
    double* cr = c.row(i);
    for (int j = 0; j < b.rows; ++j) {
      const double* br = b.row(j);
      double s = 0.0;
      for (int k = 0; k < a.cols; ++k) s += ar[k] * br[k];
      cr[j] = s;
    }
  }
}

// C = A^T A, exploiting symmetry of the result.
inline Mat gram(const Mat& a) {
  Mat c(a.cols, a.cols);
  for (int i = 0; i < a.rows; ++i) {
    const double* r = a.row(i);
    for (int j = 0; j < a.cols; ++j) {
      const double rj = r[j];
      if (rj == 0.0) continue;
      double* cj = c.row(j);
      for (int k = j; k < a.cols; ++k) cj[k] += rj * r[k];
    }
  }
  for (int j = 0; j < a.cols; ++j)
    for (int k = j + 1; k < a.cols; ++k) c(k, j) = c(j, k);
  return c;
}

}  // namespace irn
