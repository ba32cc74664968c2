#include "irn/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace irn {

namespace {

void compute_stats(Dataset& ds) {
  const int n = ds.eigencoords.rows;
  const int r = ds.eigencoords.cols;
  ds.component_mean.assign(r, 0.0);
  ds.component_std.assign(r, 0.0);
  ds.std_dataset = 0.0;
  if (n == 0 || r == 0) return;
  for (int i = 0; i < n; ++i) {
    const double* row = ds.eigencoords.row(i);
    for (int j = 0; j < r; ++j) ds.component_mean[j] += row[j];
  }
  for (int j = 0; j < r; ++j) ds.component_mean[j] /= n;
  for (int i = 0; i < n; ++i) {
    const double* row = ds.eigencoords.row(i);
    for (int j = 0; j < r; ++j) {
      const double d = row[j] - ds.component_mean[j];
      ds.component_std[j] += d * d;
    }
  }
  for (int j = 0; j < r; ++j) {
    ds.component_std[j] = std::sqrt(ds.component_std[j] / n);
    ds.std_dataset += ds.component_std[j];
  }
  ds.std_dataset /= r;
}

// Big-endian IDX reader with byte-offset diagnostics.
struct IdxReader {
  std::FILE* f;
  std::string path;
  size_t offset = 0;

  IdxReader(std::FILE* file, std::string p) : f(file), path(std::move(p)) {}
  IdxReader(IdxReader&& o) noexcept
      : f(o.f), path(std::move(o.path)), offset(o.offset) {
    o.f = nullptr;
  }
  IdxReader(const IdxReader&) = delete;
  IdxReader& operator=(const IdxReader&) = delete;

  ~IdxReader() {
    if (f) std::fclose(f);
  }

  void read(void* p, size_t bytes) {
    if (std::fread(p, 1, bytes, f) != bytes)
      throw std::runtime_error("truncated IDX file " + path + " at byte " +
                               std::to_string(offset));
    offset += bytes;
  }

  uint32_t read_u32_be() {
    unsigned char b[4];
    read(b, 4);
    return ((uint32_t)b[0] << 24) | ((uint32_t)b[1] << 16) |
           ((uint32_t)b[2] << 8) | (uint32_t)b[3];
  }
};

IdxReader open_idx(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("cannot open: " + path);
  return IdxReader(f, path);
}

}  // namespace

ExperimentGrid experiment_grid() {
  ExperimentGrid g;
  g.noise_levels.push_back(0.0);
  long den = 1;
  for (int l = 1; l <= 6; ++l) {
    den *= 3;
    g.noise_levels.push_back(1.0 / (double)den);
  }
  den = 1;
  for (int m = 1; m <= 5; ++m) {
    den *= 3;
    g.lipschitz_bounds.push_back((double)(den - 1) / (double)den);
  }
  return g;
}

GaussianMixture1D bimodal_mixture() {
  GaussianMixture1D p;
  p.comp = {{0.35, -0.6, 0.15}, {0.65, 0.6, 0.15}};
  return p;
}

Dataset load_mnist_idx(const std::string& images_path,
                       const std::string& labels_path, int limit) {
  IdxReader img = open_idx(images_path);
  const uint32_t img_magic = img.read_u32_be();
  if (img_magic != 0x00000803u)
    throw std::runtime_error("bad image magic in " + images_path +
                             " at byte 0");
  const uint32_t n_total = img.read_u32_be();
  const uint32_t rows = img.read_u32_be();
  const uint32_t cols = img.read_u32_be();
  if (rows == 0 || cols == 0 || rows > 4096 || cols > 4096)
    throw std::runtime_error("implausible image dimensions in " + images_path);

  IdxReader lab = open_idx(labels_path);
  const uint32_t lab_magic = lab.read_u32_be();
  if (lab_magic != 0x00000801u)
    throw std::runtime_error("bad label magic in " + labels_path +
                             " at byte 0");
  const uint32_t n_labels = lab.read_u32_be();
  if (n_labels != n_total)
    throw std::runtime_error("label count " + std::to_string(n_labels) +
                             " does not match image count " +
                             std::to_string(n_total));

  const uint32_t n =
      limit >= 0 ? std::min((uint32_t)limit, n_total) : n_total;
  const size_t dim = (size_t)rows * cols;

  Dataset ds;
  ds.samples = Mat((int)n, (int)dim);
  ds.labels.resize(n);
  std::vector<unsigned char> buf(dim);
  for (uint32_t i = 0; i < n; ++i) {
    img.read(buf.data(), dim);
    double* row = ds.samples.row((int)i);
    for (size_t k = 0; k < dim; ++k) row[k] = buf[k] / 255.0;
  }
  lab.read(ds.labels.data(), n);
  return ds;
}

void attach_eigencoords(Dataset& ds, const EigenOperator& op) {
  if (ds.samples.cols != op.dim)
    throw std::invalid_argument("sample dimension does not match operator");
  const int n = ds.samples.rows;
  const int r = op.n_retained();
  ds.eigencoords = Mat(n, r);
  Vec x(op.dim), c;
  for (int i = 0; i < n; ++i) {
    const double* row = ds.samples.row(i);
    std::copy(row, row + op.dim, x.begin());
    c = op.coeffs(x);
    std::copy(c.begin(), c.end(), ds.eigencoords.row(i));
  }
  compute_stats(ds);
}

Dataset make_bimodal_dataset(const EigenOperator& op, int n, uint64_t seed) {
  if (n < 1) throw std::invalid_argument("need at least one sample");
  const GaussianMixture1D prior = bimodal_mixture();
  const int r = op.n_retained();
  Dataset ds;
  ds.eigencoords = Mat(n, r);
  for (int j = 0; j < r; ++j) {
    RngStream rng(seed, (uint64_t)j, "bimodal-coords");
    for (int i = 0; i < n; ++i)
      ds.eigencoords(i, j) = sample_mixture(prior, rng);
  }
  ds.samples = Mat(n, op.dim);
  Vec c(r);
  for (int i = 0; i < n; ++i) {
    const double* row = ds.eigencoords.row(i);
    std::copy(row, row + r, c.begin());
    const Vec x = op.assemble(c);
    std::copy(x.begin(), x.end(), ds.samples.row(i));
  }
  compute_stats(ds);
  return ds;
}

NoisyPairs make_noisy_pairs(const Dataset& ds, const EigenOperator& op,
                            double delta_hat, uint64_t seed) {
  if (!(delta_hat >= 0.0))
    throw std::invalid_argument("noise level must be nonnegative");
  if (!ds.has_coords())
    throw std::invalid_argument("dataset has no eigencoordinates");
  if (ds.eigencoords.cols != op.n_retained())
    throw std::invalid_argument("coordinate count does not match operator");
  const int n = ds.eigencoords.rows;
  const int r = ds.eigencoords.cols;
  NoisyPairs out;
  out.delta = delta_hat * ds.std_dataset;
  out.x = ds.eigencoords;
  out.z = Mat(n, r);
  for (int j = 0; j < r; ++j) {
    RngStream rng(seed, (uint64_t)j, "pair-noise");
    const double ssq = op.eigenvalues[j];
    for (int i = 0; i < n; ++i)
      out.z(i, j) = ssq * out.x(i, j) + out.delta * rng.next_normal();
  }
  return out;
}

namespace {

void write_or_throw(std::FILE* f, const void* p, size_t bytes,
                    const std::string& path) {
  if (std::fwrite(p, 1, bytes, f) != bytes) {
    std::fclose(f);
    throw std::runtime_error("short write: " + path);
  }
}

}  // namespace

void save_dataset(const Dataset& ds, const std::string& path) {
  if (!ds.has_coords())
    throw std::invalid_argument("dataset has no eigencoordinates to save");
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  write_or_throw(f, "DST1", 4, path);
  const uint32_t n = (uint32_t)ds.eigencoords.rows;
  const uint32_t r = (uint32_t)ds.eigencoords.cols;
  write_or_throw(f, &n, 4, path);
  write_or_throw(f, &r, 4, path);
  write_or_throw(f, ds.eigencoords.a.data(), 8 * ds.eigencoords.a.size(),
                 path);
  std::fclose(f);
}

Dataset load_dataset(const std::string& path, const EigenOperator* op) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("cannot open: " + path);
  char magic[4];
  if (std::fread(magic, 1, 4, f) != 4 || std::string(magic, 4) != "DST1") {
    std::fclose(f);
    throw std::runtime_error("bad magic in " + path);
  }
  uint32_t n = 0, r = 0;
  if (std::fread(&n, 4, 1, f) != 1 || std::fread(&r, 4, 1, f) != 1) {
    std::fclose(f);
    throw std::runtime_error("truncated header in " + path);
  }
  if (r > (1u << 20) || n > (1u << 26)) {
    std::fclose(f);
    throw std::runtime_error("implausible header in " + path);
  }
  Dataset ds;
  ds.eigencoords = Mat((int)n, (int)r);
  if (std::fread(ds.eigencoords.a.data(), 8, ds.eigencoords.a.size(), f) !=
      ds.eigencoords.a.size()) {
    std::fclose(f);
    throw std::runtime_error("truncated coefficients in " + path);
  }
  std::fclose(f);
  if (op) {
    if (op->n_retained() != (int)r)
      throw std::invalid_argument("operator does not match stored width");
    ds.samples = Mat((int)n, op->dim);
    Vec c(r);
    for (uint32_t i = 0; i < n; ++i) {
      const double* row = ds.eigencoords.row((int)i);
      std::copy(row, row + r, c.begin());
      const Vec x = op->assemble(c);
      std::copy(x.begin(), x.end(), ds.samples.row((int)i));
    }
  }
  compute_stats(ds);
  return ds;
}

}  // namespace irn
