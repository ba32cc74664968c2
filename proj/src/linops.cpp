#include "irn/linops.hpp"

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>

#include "irn/eigen_sym.hpp"

namespace irn {

Vec EigenOperator::coeffs(const Vec& x) const {
  Vec c;
  gemv_t(eigenvectors, x, c);
  return c;
}

Vec EigenOperator::assemble(const Vec& c) const {
  Vec x;
  gemv(eigenvectors, c, x);
  return x;
}

Vec EigenOperator::apply(const Vec& x) const {
  Vec c = coeffs(x);
  for (int j = 0; j < n_retained(); ++j) c[j] *= eigenvalues[j];
  return assemble(c);
}

Vec EigenOperator::pseudo_inverse_apply(const Vec& z) const {
  Vec c = coeffs(z);
  for (int j = 0; j < n_retained(); ++j) c[j] /= eigenvalues[j];
  return assemble(c);
}

Mat gaussian_kernel(int k, double stddev) {
  if (k < 1 || k % 2 == 0) throw std::invalid_argument("gaussian_kernel: k must be odd");
  Mat ker(k, k);
  const int c = k / 2;
  double sum = 0.0;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      const double dx = i - c, dy = j - c;
      ker(i, j) = std::exp(-(dx * dx + dy * dy) / (2.0 * stddev * stddev));
      sum += ker(i, j);
    }
  for (double& v : ker.a) v /= sum;
  return ker;
}

Mat build_convolution_operator(const Mat& kernel, int image_side) {
  const int k = kernel.rows;
  if (kernel.cols != k || k % 2 == 0)
    throw std::invalid_argument("convolution kernel must be square with odd side");
  if (k > image_side)
    throw std::invalid_argument("kernel larger than image");
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j)
      if (std::fabs(kernel(i, j) - kernel(k - 1 - i, k - 1 - j)) > 1e-14)
        throw std::invalid_argument(
            "kernel not symmetric under 180-degree rotation; "
            "the convolution matrix would not be self-adjoint");

  const int s = image_side, hw = k / 2;
  Mat m(s * s, s * s);
  for (int r = 0; r < s; ++r)
    for (int c = 0; c < s; ++c) {
      double* row = m.row(r * s + c);
      for (int dr = -hw; dr <= hw; ++dr) {
        const int r2 = r + dr;
        if (r2 < 0 || r2 >= s) continue;
        for (int dc = -hw; dc <= hw; ++dc) {
          const int c2 = c + dc;
          if (c2 < 0 || c2 >= s) continue;
          row[r2 * s + c2] = kernel(dr + hw, dc + hw);
        }
      }
    }
  return m;
}

Mat build_radon_matrix(int image_side, int num_angles, int num_detectors) {
  if (image_side < 1 || num_angles < 1 || num_detectors < 1)
    throw std::invalid_argument("radon parameters must be positive");
  const int s = image_side;
  Mat r(num_angles * num_detectors, s * s);
  const double half = (s - 1) / 2.0;
  const double dhalf = (num_detectors - 1) / 2.0;
  for (int a = 0; a < num_angles; ++a) {
    const double th = M_PI * a / num_angles;
    const double ct = std::cos(th), st = std::sin(th);
    for (int pr = 0; pr < s; ++pr)
      for (int pc = 0; pc < s; ++pc) {
        const double x = pc - half, y = half - pr;
        const double u = x * ct + y * st + dhalf;  // detector coordinate
        const int k0 = (int)std::floor(u);
        const double w = u - k0;
        const int p = pr * s + pc;
        if (k0 >= 0 && k0 < num_detectors) r(a * num_detectors + k0, p) += 1.0 - w;
        if (k0 + 1 >= 0 && k0 + 1 < num_detectors) r(a * num_detectors + k0 + 1, p) += w;
      }
  }
  return r;
}

Mat build_radon_normal_operator(int image_side, int num_angles, int num_detectors) {
  return gram(build_radon_matrix(image_side, num_angles, num_detectors));
}

EigenOperator decompose_and_normalize(const Mat& m, double eigenvalue_floor) {
  SymEig eig = eig_sym(m);
  const int n = m.rows;
  const double lmax = eig.values[0];
  if (lmax <= 0.0) throw std::invalid_argument("operator has no positive eigenvalue");
  if (eig.values[n - 1] < -1e-8 * lmax)
    throw std::invalid_argument("operator not positive semidefinite");
  const double floor = eigenvalue_floor >= 0.0 ? eigenvalue_floor : 1e-10 * lmax;

  int keep = 0;
  while (keep < n && eig.values[keep] >= floor && eig.values[keep] > 0.0) ++keep;
  if (keep == 0) throw std::invalid_argument("all eigenvalues below floor (zero operator)");

  EigenOperator op;
  op.dim = n;
  op.nullspace_dim = n - keep;
  op.eigenvalues.resize(keep);
  op.eigenvectors = Mat(n, keep);
  for (int j = 0; j < keep; ++j) {
    op.eigenvalues[j] = eig.values[j] / lmax;
    for (int i = 0; i < n; ++i) op.eigenvectors(i, j) = eig.vectors(i, j);
  }
  return op;
}

namespace {

void write_or_throw(std::FILE* f, const void* p, size_t bytes, const std::string& path) {
  if (std::fwrite(p, 1, bytes, f) != bytes) {
    std::fclose(f);
    throw std::runtime_error("short write: " + path);
  }
}

void read_or_throw(std::FILE* f, void* p, size_t bytes, const std::string& path) {
  if (std::fread(p, 1, bytes, f) != bytes) {
    std::fclose(f);
    throw std::runtime_error("short read: " + path);
  }
}

}  // namespace

void save_operator(const EigenOperator& op, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  write_or_throw(f, "EOP1", 4, path);
  const uint32_t n = (uint32_t)op.dim, r = (uint32_t)op.n_retained();
  write_or_throw(f, &n, 4, path);
  write_or_throw(f, &r, 4, path);
  write_or_throw(f, op.eigenvalues.data(), 8 * r, path);
  Vec col(op.dim);
  for (uint32_t j = 0; j < r; ++j) {
    for (int i = 0; i < op.dim; ++i) col[i] = op.eigenvectors(i, (int)j);
    write_or_throw(f, col.data(), 8 * (size_t)op.dim, path);
  }
  std::fclose(f);
}

EigenOperator load_operator(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("cannot open: " + path);
  char magic[4];
  read_or_throw(f, magic, 4, path);
  if (std::string(magic, 4) != "EOP1") {
    std::fclose(f);
    throw std::runtime_error("bad magic in " + path);
  }
  uint32_t n = 0, r = 0;
  read_or_throw(f, &n, 4, path);
  read_or_throw(f, &r, 4, path);
  if (r > n || n > 1u << 20) {
    std::fclose(f);
    throw std::runtime_error("implausible header in " + path);
  }
  EigenOperator op;
  op.dim = (int)n;
  op.nullspace_dim = (int)(n - r);
  op.eigenvalues.resize(r);
  read_or_throw(f, op.eigenvalues.data(), 8 * r, path);
  op.eigenvectors = Mat((int)n, (int)r);
  Vec col(n);
  for (uint32_t j = 0; j < r; ++j) {
    read_or_throw(f, col.data(), 8 * (size_t)n, path);
    for (uint32_t i = 0; i < n; ++i) op.eigenvectors((int)i, (int)j) = col[i];
  }
  std::fclose(f);
  return op;
}

}  // namespace irn
