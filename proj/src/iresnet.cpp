#include "irn/iresnet.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>
#include <utility>

namespace irn {

namespace {

constexpr int kPowerIterations = 16;
constexpr double kProjectionSlack = 1.0 - 1e-6;
// Iteration cap for the 1e-10-tolerance inversions inside the certificate
// checks; covers L up to the 26/27 grid point with a wide margin.
constexpr int kCheckMaxIterations = 4000;
constexpr double kCheckTol = 1e-10;

double relu(double x) { return x > 0.0 ? x : 0.0; }

double norm1(const Mat& w) {
  Vec colsum(w.cols, 0.0);
  for (int i = 0; i < w.rows; ++i) {
    const double* r = w.row(i);
    for (int j = 0; j < w.cols; ++j) colsum[j] += std::fabs(r[j]);
  }
  double m = 0.0;
  for (double c : colsum) m = std::max(m, c);
  return m;
}

double norminf(const Mat& w) {
  double m = 0.0;
  for (int i = 0; i < w.rows; ++i) {
    const double* r = w.row(i);
    double s = 0.0;
    for (int j = 0; j < w.cols; ++j) s += std::fabs(r[j]);
    m = std::max(m, s);
  }
  return m;
}

void fill_normalized_ones(Vec& v, int n) {
  v.assign(n, 1.0 / std::sqrt((double)n));
}

// Repeats the per-step estimator until the Rayleigh value stabilizes, so a
// cold-started layer enters training with converged persistent vectors.
void warm_power(AffineLayer& layer) {
  double prev = -1.0;
  for (int block = 0; block < 64; ++block) {
    const double est =
        estimate_spectral_norm(layer.weight, layer.pow_u, layer.pow_v,
                               kPowerIterations);
    if (std::fabs(est - prev) <= 1e-13 * std::max(1.0, est)) return;
    prev = est;
  }
}

void validate_bound(double L) {
  if (!(L >= 0.0) || !(L < 1.0))
    throw std::invalid_argument("Lipschitz bound must lie in [0, 1)");
}

AffineLayer make_layer(int out_dim, int in_dim) {
  AffineLayer l;
  l.out_dim = out_dim;
  l.in_dim = in_dim;
  l.weight = Mat(out_dim, in_dim);
  l.bias.assign(out_dim, 0.0);
  fill_normalized_ones(l.pow_u, out_dim);
  fill_normalized_ones(l.pow_v, in_dim);
  return l;
}

void check_component(const DiagonalIResNet& net, int component) {
  if (component < 0 || component >= net.n_components())
    throw std::invalid_argument("component index out of range");
}

// psi samples for the pairwise checks, inverted to the certificate
// tolerance.
Vec invert_batch_scalar(const DiagonalIResNet& net, int component,
                        const Vec& zs) {
  Vec out(zs.size());
  for (size_t i = 0; i < zs.size(); ++i)
    out[i] = invert_component(net, component, zs[i], kCheckMaxIterations,
                              kCheckTol);
  return out;
}

}  // namespace

double SlopeScan::lipschitz() const {
  return std::max(std::fabs(min_slope), std::fabs(max_slope));
}

double spectral_norm_upper_bound(const Mat& w) {
  return std::sqrt(norm1(w) * norminf(w));
}

double estimate_spectral_norm(const Mat& w, Vec& u, Vec& v, int iterations) {
  const double ub = spectral_norm_upper_bound(w);
  if (ub == 0.0) return 0.0;
  if ((int)u.size() != w.rows) fill_normalized_ones(u, w.rows);
  if ((int)v.size() != w.cols) fill_normalized_ones(v, w.cols);
  for (int k = 0; k < iterations; ++k) {
    gemv(w, v, u);
    const double nu = nrm2(u);
    if (!(nu > 0.0)) {
      fill_normalized_ones(v, w.cols);
      continue;
    }
    scal(1.0 / nu, u);
    gemv_t(w, u, v);
    const double nv = nrm2(v);
    if (!(nv > 0.0)) {
      fill_normalized_ones(v, w.cols);
      continue;
    }
    scal(1.0 / nv, v);
  }
  Vec wv;
  gemv(w, v, wv);
  const double est = dot(u, wv);
  if (!std::isfinite(est) || est <= 0.0) return ub;
  return std::min(est, ub);
}

void project_spectral(AffineLayer& layer, double cap) {
  const double est = estimate_spectral_norm(layer.weight, layer.pow_u,
                                            layer.pow_v, kPowerIterations);
  if (est <= 0.0) return;
  const double scale = std::min(1.0, cap / est * kProjectionSlack);
  if (scale < 1.0) scal(scale, layer.weight.a);
}

void project_subnet(Subnet& s) {
  for (AffineLayer& l : s.layer) project_spectral(l, s.layer_cap);
}

Subnet make_subnet(double L, int hidden) {
  validate_bound(L);
  if (hidden < 1) throw std::invalid_argument("hidden width must be >= 1");
  Subnet s;
  s.layer_cap = std::cbrt(L);
  s.layer[0] = make_layer(hidden, 1);
  s.layer[1] = make_layer(hidden, hidden);
  s.layer[2] = make_layer(1, hidden);
  return s;
}

Subnet make_subnet(double L, int hidden, RngStream& rng) {
  Subnet s = make_subnet(L, hidden);
  for (AffineLayer& l : s.layer) {
    const double limit = std::sqrt(6.0 / l.in_dim);
    for (double& w : l.weight.a) w = limit * (2.0 * rng.next_double() - 1.0);
    warm_power(l);
    project_spectral(l, s.layer_cap);
  }
  return s;
}

DiagonalIResNet make_diagonal_iresnet(double L, int components, uint64_t seed,
                                      const EigenOperator* ctx, int hidden) {
  validate_bound(L);
  if (components < 1) throw std::invalid_argument("need at least one component");
  if (ctx && ctx->n_retained() != components)
    throw std::invalid_argument(
        "component count does not match the operator's retained spectrum");
  DiagonalIResNet net;
  net.L = L;
  net.eigen_context = ctx;
  net.subnets.reserve(components);
  for (int j = 0; j < components; ++j) {
    RngStream rng(seed, (uint64_t)j, "subnet-init");
    net.subnets.push_back(make_subnet(L, hidden, rng));
  }
  return net;
}

double subnet_eval(const Subnet& s, double x) {
  thread_local Vec h1, h2;
  const int h = s.hidden();
  h1.resize(h);
  h2.resize(h);
  const AffineLayer& l1 = s.layer[0];
  const AffineLayer& l2 = s.layer[1];
  const AffineLayer& l3 = s.layer[2];
  for (int i = 0; i < h; ++i) h1[i] = relu(l1.weight(i, 0) * x + l1.bias[i]);
  for (int i = 0; i < h; ++i) {
    const double* r = l2.weight.row(i);
    double acc = l2.bias[i];
    for (int k = 0; k < h; ++k) acc += r[k] * h1[k];
    h2[i] = relu(acc);
  }
  const double* r = l3.weight.row(0);
  double acc = l3.bias[0];
  for (int k = 0; k < h; ++k) acc += r[k] * h2[k];
  return acc;
}

void subnet_eval_batch(const Subnet& s, const double* xs, double* fx, int n) {
  for (int i = 0; i < n; ++i) fx[i] = subnet_eval(s, xs[i]);
}

Vec forward_coords(const DiagonalIResNet& net, const Vec& xt) {
  if ((int)xt.size() != net.n_components())
    throw std::invalid_argument("coordinate length does not match components");
  Vec out(xt.size());
  for (size_t j = 0; j < xt.size(); ++j)
    out[j] = xt[j] - subnet_eval(net.subnets[j], xt[j]);
  return out;
}

Vec forward(const DiagonalIResNet& net, const Vec& x) {
  const EigenOperator* op = net.eigen_context;
  if (!op) throw std::invalid_argument("full-space forward needs eigen_context");
  if ((int)x.size() != op->dim)
    throw std::invalid_argument("dimension mismatch in forward");
  Vec c = op->coeffs(x);
  for (size_t j = 0; j < c.size(); ++j)
    c[j] = subnet_eval(net.subnets[j], c[j]);
  // x - V f(c): the nullspace part of x rides along untouched.
  Vec fc = op->assemble(c);
  Vec out = x;
  axpy(-1.0, fc, out);
  return out;
}

std::pair<Vec, InversionReport> invert_coords(const DiagonalIResNet& net,
                                              const Vec& zt, int max_iter,
                                              double tol) {
  if ((int)zt.size() != net.n_components())
    throw std::invalid_argument("coordinate length does not match components");
  if (max_iter < 1) throw std::invalid_argument("max_iter must be >= 1");
  InversionReport rep;
  Vec x = zt;
  Vec xn(zt.size());
  double prev_inc = -1.0;
  for (int k = 1; k <= max_iter; ++k) {
    double inc_sq = 0.0;
    for (size_t j = 0; j < x.size(); ++j) {
      xn[j] = zt[j] + subnet_eval(net.subnets[j], x[j]);
      const double d = xn[j] - x[j];
      inc_sq += d * d;
    }
    std::swap(x, xn);
    const double inc = std::sqrt(inc_sq);
    rep.iterations = k;
    if (prev_inc > 0.0) rep.contraction = std::max(rep.contraction, inc / prev_inc);
    prev_inc = inc;
    if (inc <= tol) break;
  }
  double res_sq = 0.0;
  for (size_t j = 0; j < x.size(); ++j) {
    const double d = zt[j] + subnet_eval(net.subnets[j], x[j]) - x[j];
    res_sq += d * d;
  }
  rep.residual = std::sqrt(res_sq);
  return {std::move(x), rep};
}

std::pair<Vec, InversionReport> invert_fixed_point(const DiagonalIResNet& net,
                                                   const Vec& z, int max_iter,
                                                   double tol) {
  const EigenOperator* op = net.eigen_context;
  if (!op) throw std::invalid_argument("full-space inverse needs eigen_context");
  if ((int)z.size() != op->dim)
    throw std::invalid_argument("dimension mismatch in inverse");
  const Vec cz = op->coeffs(z);
  auto [cx, rep] = invert_coords(net, cz, max_iter, tol);
  // z + V (psi(c_z) - c_z): retained coords replaced, nullspace untouched.
  axpy(-1.0, cz, cx);
  Vec out = z;
  Vec lift = op->assemble(cx);
  axpy(1.0, lift, out);
  return {std::move(out), rep};
}

double invert_component(const DiagonalIResNet& net, int component, double z,
                        int max_iter, double tol) {
  check_component(net, component);
  if (max_iter < 1) throw std::invalid_argument("max_iter must be >= 1");
  const Subnet& s = net.subnets[component];
  double x = z;
  for (int k = 0; k < max_iter; ++k) {
    const double xn = z + subnet_eval(s, x);
    const double inc = std::fabs(xn - x);
    x = xn;
    if (inc <= tol) break;
  }
  return x;
}

double inverse_as_scaled_iresnet_check(const DiagonalIResNet& net,
                                       const std::vector<Vec>& samples) {
  const double w = 1.0 - net.L * net.L;
  std::vector<Vec> g(samples.size());
  for (size_t i = 0; i < samples.size(); ++i) {
    auto [psi, rep] = invert_coords(net, samples[i], kCheckMaxIterations,
                                    kCheckTol);
    (void)rep;
    g[i] = samples[i];
    axpy(-w, psi, g[i]);
  }
  double worst = 0.0;
  for (size_t i = 0; i < samples.size(); ++i)
    for (size_t k = i + 1; k < samples.size(); ++k) {
      double dz_sq = 0.0, dg_sq = 0.0;
      for (size_t j = 0; j < samples[i].size(); ++j) {
        const double dz = samples[i][j] - samples[k][j];
        const double dg = g[i][j] - g[k][j];
        dz_sq += dz * dz;
        dg_sq += dg * dg;
      }
      if (dz_sq == 0.0) continue;
      worst = std::max(worst, std::sqrt(dg_sq / dz_sq));
    }
  return worst;
}

double inverse_as_scaled_iresnet_check(const DiagonalIResNet& net,
                                       int component, const Vec& samples) {
  check_component(net, component);
  const double w = 1.0 - net.L * net.L;
  const Vec psi = invert_batch_scalar(net, component, samples);
  double worst = 0.0;
  for (size_t i = 0; i < samples.size(); ++i)
    for (size_t k = i + 1; k < samples.size(); ++k) {
      const double dz = samples[i] - samples[k];
      if (dz == 0.0) continue;
      const double dg = (samples[i] - w * psi[i]) - (samples[k] - w * psi[k]);
      worst = std::max(worst, std::fabs(dg / dz));
    }
  return worst;
}

double condition_2_check(const DiagonalIResNet& net, const std::vector<Vec>& z1,
                         const std::vector<Vec>& z2) {
  if (z1.size() != z2.size())
    throw std::invalid_argument("pair lists must have equal length");
  const double w = 1.0 - net.L * net.L;
  double worst = -std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < z1.size(); ++i) {
    auto [p1, r1] = invert_coords(net, z1[i], kCheckMaxIterations, kCheckTol);
    auto [p2, r2] = invert_coords(net, z2[i], kCheckMaxIterations, kCheckTol);
    (void)r1;
    (void)r2;
    double dz_sq = 0.0, dp_sq = 0.0, cross = 0.0;
    for (size_t j = 0; j < z1[i].size(); ++j) {
      const double dz = z1[i][j] - z2[i][j];
      const double dp = p1[j] - p2[j];
      dz_sq += dz * dz;
      dp_sq += dp * dp;
      cross += dz * dp;
    }
    if (dz_sq == 0.0) continue;
    worst = std::max(worst, (w * dp_sq + dz_sq - 2.0 * cross) / dz_sq);
  }
  if (!std::isfinite(worst)) return 0.0;
  return worst;
}

double condition_2_check(const DiagonalIResNet& net, int component,
                         const Vec& z1, const Vec& z2) {
  check_component(net, component);
  if (z1.size() != z2.size())
    throw std::invalid_argument("pair lists must have equal length");
  const double w = 1.0 - net.L * net.L;
  const Vec p1 = invert_batch_scalar(net, component, z1);
  const Vec p2 = invert_batch_scalar(net, component, z2);
  double worst = -std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < z1.size(); ++i) {
    const double dz = z1[i] - z2[i];
    if (dz == 0.0) continue;
    const double dp = p1[i] - p2[i];
    worst = std::max(worst, (w * dp * dp + dz * dz - 2.0 * dz * dp) / (dz * dz));
  }
  if (!std::isfinite(worst)) return 0.0;
  return worst;
}

SlopeScan slope_scan(const DiagonalIResNet& net, int component, double a,
                     double b, double step) {
  check_component(net, component);
  if (!(step > 0.0)) throw std::invalid_argument("step must be positive");
  if (!(b > a)) throw std::invalid_argument("interval must have b > a");
  const Subnet& s = net.subnets[component];
  int n = (int)std::floor((b - a) / step * (1.0 + 1e-12)) + 1;
  n = std::max(n, 2);
  SlopeScan scan;
  scan.min_slope = std::numeric_limits<double>::infinity();
  scan.max_slope = -scan.min_slope;
  double prev = subnet_eval(s, a);
  for (int i = 1; i < n; ++i) {
    const double cur = subnet_eval(s, a + i * step);
    const double slope = (cur - prev) / step;
    scan.min_slope = std::min(scan.min_slope, slope);
    scan.max_slope = std::max(scan.max_slope, slope);
    prev = cur;
  }
  return scan;
}

double network_lipschitz(const DiagonalIResNet& net, double a, double b,
                         double step) {
  double worst = 0.0;
  for (int j = 0; j < net.n_components(); ++j)
    worst = std::max(worst, slope_scan(net, j, a, b, step).lipschitz());
  return worst;
}

namespace {

void write_or_throw(std::FILE* f, const void* p, size_t bytes,
                    const std::string& path) {
  if (std::fwrite(p, 1, bytes, f) != bytes) {
    std::fclose(f);
    throw std::runtime_error("short write: " + path);
  }
}

struct CheckpointReader {
  std::FILE* f;
  const std::string& path;
  size_t offset = 0;

  void read(void* p, size_t bytes) {
    if (std::fread(p, 1, bytes, f) != bytes) {
      std::fclose(f);
      throw std::runtime_error("truncated checkpoint " + path + " at byte " +
                               std::to_string(offset));
    }
    offset += bytes;
  }

  uint32_t read_u32() {
    uint32_t v = 0;
    read(&v, 4);
    return v;
  }

  double read_f64() {
    double v = 0.0;
    read(&v, 8);
    return v;
  }
};

}  // namespace

void save_checkpoint(const DiagonalIResNet& net, const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  write_or_throw(f, "IRN1", 4, path);
  write_or_throw(f, &net.L, 8, path);
  const uint32_t count = (uint32_t)net.subnets.size();
  write_or_throw(f, &count, 4, path);
  for (const Subnet& s : net.subnets) {
    const uint32_t n_layers = (uint32_t)s.layer.size();
    write_or_throw(f, &n_layers, 4, path);
    for (const AffineLayer& l : s.layer) {
      const uint32_t out = (uint32_t)l.out_dim, in = (uint32_t)l.in_dim;
      write_or_throw(f, &out, 4, path);
      write_or_throw(f, &in, 4, path);
      write_or_throw(f, l.weight.a.data(), 8 * l.weight.a.size(), path);
      write_or_throw(f, l.bias.data(), 8 * l.bias.size(), path);
    }
  }
  std::fclose(f);
}

DiagonalIResNet load_checkpoint(const std::string& path,
                                const EigenOperator* ctx) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("cannot open: " + path);
  CheckpointReader r{f, path};
  char magic[4];
  r.read(magic, 4);
  if (std::string(magic, 4) != "IRN1") {
    std::fclose(f);
    throw std::runtime_error("bad magic in " + path);
  }
  const double L = r.read_f64();
  if (!std::isfinite(L) || L < 0.0 || L >= 1.0) {
    std::fclose(f);
    throw std::runtime_error("implausible Lipschitz bound in " + path);
  }
  const uint32_t count = r.read_u32();
  if (count < 1 || count > (1u << 20)) {
    std::fclose(f);
    throw std::runtime_error("implausible component count in " + path);
  }
  if (ctx && ctx->n_retained() != (int)count) {
    std::fclose(f);
    throw std::runtime_error(
        "checkpoint component count does not match the operator: " + path);
  }
  DiagonalIResNet net;
  net.L = L;
  net.eigen_context = ctx;
  net.subnets.reserve(count);
  for (uint32_t sidx = 0; sidx < count; ++sidx) {
    const uint32_t n_layers = r.read_u32();
    if (n_layers != 3) {
      std::fclose(f);
      throw std::runtime_error("unsupported layer count in " + path +
                               " at byte " + std::to_string(r.offset - 4));
    }
    uint32_t dims[3][2];
    Subnet s;
    s.layer_cap = std::cbrt(L);
    for (int li = 0; li < 3; ++li) {
      dims[li][0] = r.read_u32();
      dims[li][1] = r.read_u32();
      const uint32_t out = dims[li][0], in = dims[li][1];
      if (out < 1 || in < 1 || out > (1u << 20) || in > (1u << 20)) {
        std::fclose(f);
        throw std::runtime_error("implausible layer shape in " + path +
                                 " at byte " + std::to_string(r.offset - 8));
      }
      AffineLayer l = make_layer((int)out, (int)in);
      r.read(l.weight.a.data(), 8 * l.weight.a.size());
      r.read(l.bias.data(), 8 * l.bias.size());
      s.layer[li] = std::move(l);
    }
    const uint32_t h = dims[0][0];
    if (dims[0][1] != 1 || dims[1][0] != h || dims[1][1] != h ||
        dims[2][0] != 1 || dims[2][1] != h) {
      std::fclose(f);
      throw std::runtime_error("layer shapes do not chain 1->h->h->1 in " +
                               path);
    }
    for (AffineLayer& l : s.layer) warm_power(l);
    net.subnets.push_back(std::move(s));
  }
  // A well-formed checkpoint ends exactly after the last bias.
  char extra;
  if (std::fread(&extra, 1, 1, f) == 1) {
    std::fclose(f);
    throw std::runtime_error("trailing bytes in " + path + " at byte " +
                             std::to_string(r.offset));
  }
  std::fclose(f);
  return net;
}

}  // namespace irn
