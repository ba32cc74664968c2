#include "irn/diagnostics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <stdexcept>

#include "irn/distributions.hpp"

namespace irn {
namespace {

// Filter probes run far below the evaluation tolerance: the surface of an
// affine model must be constant in q to 1e-10, which leaves no room for
// 1e-8 fixed-point remainders at small probe points.
constexpr int kFilterMaxIterations = 4000;
constexpr double kFilterTol = 1e-13;

// Evidence mass per coordinate below this reads as data outside the
// support of p_Z at that noise level.
constexpr double kSupportFloor = 1e-12;

constexpr double kQuadTol = 1e-12;

double norm_cdf(double t) { return 0.5 * std::erfc(-t / std::sqrt(2.0)); }

double gauss_pdf(double d, double stddev) {
  const double t = d / stddev;
  return std::exp(-0.5 * t * t) / (stddev * std::sqrt(2.0 * std::acos(-1.0)));
}

// Shortest round-tripping decimal form; keeps CSV output byte-stable.
std::string fmt(double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void check_component_match(const DiagonalIResNet& net, const EigenOperator& op,
                           const char* what) {
  if (net.n_components() != op.n_retained())
    throw std::invalid_argument(std::string(what) +
                                ": network and operator component counts differ");
}

// ||x||^2 - sum_j <x, v_j>^2, the squared mass outside the retained basis.
// Clamped at zero against rounding when the basis is complete.
double outside_sq(const Mat& samples, const Mat& coords, int i) {
  double full = 0.0;
  const double* row = samples.row(i);
  for (int c = 0; c < samples.cols; ++c) full += row[c] * row[c];
  double inside = 0.0;
  const double* cr = coords.row(i);
  for (int j = 0; j < coords.cols; ++j) inside += cr[j] * cr[j];
  return std::max(0.0, full - inside);
}

double tg_moment(const TruncatedGaussian& p, bool weighted) {
  const auto f = [&](double x) {
    return (weighted ? x : 1.0) * p.pdf(x);
  };
  return adaptive_simpson(f, p.lo, p.hi, kQuadTol);
}

// Conditional mean and evidence mass of one retained coordinate:
//   E(x | z) with density p(x) gauss(z - ev x; delta).
// The integration window follows the Gaussian factor so that vanishing
// noise keeps the peak resolved.
std::pair<double, double> conditional_range_mean(const TruncatedGaussian& p,
                                                 double ev, double z,
                                                 double delta) {
  const double center = z / ev;
  const double width = 16.0 * delta / ev;
  double a = std::max(p.lo, center - width);
  double b = std::min(p.hi, center + width);
  if (!(a < b)) {
    a = p.lo;
    b = p.hi;
  }
  const auto f = [&](double x) { return p.pdf(x) * gauss_pdf(z - ev * x, delta); };
  const double den = adaptive_simpson(f, a, b, kQuadTol);
  const double num =
      adaptive_simpson([&](double x) { return x * f(x); }, a, b, kQuadTol);
  return {num / den, den};
}

}  // namespace

Vec default_q_grid() {
  Vec q(41);
  for (int k = 0; k < 41; ++k) q[k] = -5.0 + 0.25 * k;
  return q;
}

FilterProfile extract_filter_surface(const DiagonalIResNet& net,
                                     const EigenOperator& op,
                                     const Dataset& ds, const Vec& q_grid) {
  check_component_match(net, op, "filter surface");
  const int nc = net.n_components();
  if ((int)ds.component_mean.size() != nc ||
      (int)ds.component_std.size() != nc)
    throw std::invalid_argument(
        "filter surface: dataset statistics do not cover every component");
  if (q_grid.empty())
    throw std::invalid_argument("filter surface: empty probe grid");

  const int nq = (int)q_grid.size();
  FilterProfile p;
  p.L = net.L;
  p.q = q_grid;
  p.sigma.resize(nc);
  p.intercept.resize(nc);
  p.surface = Mat(nc, nq);
  p.s = Mat(nc, nq);
  for (int j = 0; j < nc; ++j) {
    const double ev = op.eigenvalues[j];
    p.sigma[j] = std::sqrt(ev);
    p.intercept[j] =
        invert_component(net, j, 0.0, kFilterMaxIterations, kFilterTol);
    for (int k = 0; k < nq; ++k) {
      const double s =
          ev * (ds.component_mean[j] + q_grid[k] * ds.component_std[j]);
      p.s(j, k) = s;
      p.surface(j, k) =
          invert_component(net, j, s, kFilterMaxIterations, kFilterTol) -
          p.intercept[j];
    }
  }
  return p;
}

ApproxErrorReport approx_errors(const DiagonalIResNet& net, const Dataset& ds,
                                const EigenOperator& op, double delta_hat) {
  check_component_match(net, op, "approximation errors");
  const int nc = net.n_components();
  if (!ds.has_coords() || ds.eigencoords.cols != nc)
    throw std::invalid_argument(
        "approximation errors: dataset eigencoordinates missing or mismatched");
  const bool full_space = ds.samples.rows > 0;
  if (full_space && ds.samples.cols != op.dim)
    throw std::invalid_argument(
        "approximation errors: sample dimension does not match the operator");

  const int n = ds.eigencoords.rows;
  ApproxErrorReport rep;
  rep.L = net.L;
  rep.delta_hat = delta_hat;
  rep.forward_error.resize(n);
  rep.inverse_error.resize(n);
  for (int i = 0; i < n; ++i) {
    double fsq = 0.0, isq = 0.0;
    for (int j = 0; j < nc; ++j) {
      const double x = ds.eigencoords(i, j);
      const double target = op.eigenvalues[j] * x;
      const double fwd = x - subnet_eval(net.subnets[j], x) - target;
      fsq += fwd * fwd;
      const double rec = x - invert_component(net, j, target);
      isq += rec * rec;
    }
    if (full_space) {
      const double nsq = outside_sq(ds.samples, ds.eigencoords, i);
      fsq += nsq;
      isq += nsq;
    }
    rep.forward_error[i] = std::sqrt(fsq);
    rep.inverse_error[i] = std::sqrt(isq);
    rep.forward_mean += rep.forward_error[i];
    rep.inverse_mean += rep.inverse_error[i];
  }
  rep.forward_mean /= n;
  rep.inverse_mean /= n;
  return rep;
}

double ssim_index(const Vec& a, const Vec& b, int side, double dynamic_range) {
  if (side < 11)
    throw std::invalid_argument("ssim: window needs images of side >= 11");
  if ((int)a.size() != side * side || (int)b.size() != side * side)
    throw std::invalid_argument("ssim: images do not match the given side");

  const Mat w = gaussian_kernel(11, 1.5);
  const double c1 = (0.01 * dynamic_range) * (0.01 * dynamic_range);
  const double c2 = (0.03 * dynamic_range) * (0.03 * dynamic_range);
  double acc = 0.0;
  const int valid = side - 10;
  for (int i = 0; i < valid; ++i)
    for (int j = 0; j < valid; ++j) {
      double ma = 0, mb = 0, aa = 0, bb = 0, ab = 0;
      for (int u = 0; u < 11; ++u) {
        const double* ar = &a[(i + u) * side + j];
        const double* br = &b[(i + u) * side + j];
        const double* wr = w.row(u);
        for (int v = 0; v < 11; ++v) {
          ma += wr[v] * ar[v];
          mb += wr[v] * br[v];
          aa += wr[v] * ar[v] * ar[v];
          bb += wr[v] * br[v] * br[v];
          ab += wr[v] * ar[v] * br[v];
        }
      }
      const double va = aa - ma * ma, vb = bb - mb * mb, cov = ab - ma * mb;
      acc += ((2 * ma * mb + c1) * (2 * cov + c2)) /
             ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
  return acc / (valid * valid);
}

RecoErrorReport reco_errors(const DiagonalIResNet& net, const Dataset& ds,
                            const EigenOperator& op, double delta_hat,
                            uint64_t seed) {
  check_component_match(net, op, "reconstruction errors");
  const int nc = net.n_components();
  if (!ds.has_coords() || ds.eigencoords.cols != nc)
    throw std::invalid_argument(
        "reconstruction errors: dataset eigencoordinates missing or mismatched");
  const NoisyPairs pairs = make_noisy_pairs(ds, op, delta_hat, seed);
  const int n = pairs.x.rows;

  RecoErrorReport rep;
  rep.L = net.L;
  rep.delta_hat = delta_hat;
  rep.per_sample_sq.resize(n);

  const bool full_space = ds.samples.rows > 0;
  const int side = (int)std::lround(std::sqrt((double)op.dim));
  if (!full_space)
    rep.notice = "dataset carries no image samples";
  else if (side * side != op.dim)
    rep.notice = "samples are not square images";
  else if (side < 11)
    rep.notice = "image side is below the 11 pixel ssim window";
  const bool want_ssim = full_space && rep.notice.empty();

  double range = 0.0;
  if (want_ssim) {
    double lo = ds.samples.a[0], hi = ds.samples.a[0];
    for (double v : ds.samples.a) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    range = hi - lo;
  }

  Vec rec(nc), truth(op.dim);
  double acc_sq = 0.0, acc_ssim = 0.0;
  for (int i = 0; i < n; ++i) {
    double sq = 0.0;
    for (int j = 0; j < nc; ++j) {
      rec[j] = invert_component(net, j, pairs.z(i, j));
      const double d = pairs.x(i, j) - rec[j];
      sq += d * d;
    }
    if (full_space) sq += outside_sq(ds.samples, ds.eigencoords, i);
    rep.per_sample_sq[i] = sq;
    acc_sq += sq;
    if (want_ssim) {
      const double* row = ds.samples.row(i);
      truth.assign(row, row + op.dim);
      acc_ssim += ssim_index(truth, op.assemble(rec), side, range);
    }
  }
  rep.mse = acc_sq / n;
  if (want_ssim) {
    rep.ssim = acc_ssim / n;
    rep.has_ssim = true;
  }
  return rep;
}

LipschitzReport lipschitz_track(const DiagonalIResNet& net, const Vec& mean,
                                const Vec& std) {
  const int nc = net.n_components();
  if ((int)mean.size() != nc || (int)std.size() != nc)
    throw std::invalid_argument(
        "lipschitz track: statistics do not cover every component");
  LipschitzReport rep;
  rep.min_slope.assign(nc, 0.0);
  rep.max_slope.assign(nc, 0.0);
  for (int j = 0; j < nc; ++j) {
    if (!(std[j] > 0.0)) continue;
    const SlopeScan scan = slope_scan(net, j, mean[j] - 6.0 * std[j],
                                      mean[j] + 6.0 * std[j], std[j] / 200.0);
    rep.min_slope[j] = scan.min_slope;
    rep.max_slope[j] = scan.max_slope;
    rep.lipschitz = std::max(rep.lipschitz, scan.lipschitz());
  }
  return rep;
}

LipschitzReport lipschitz_track(const DiagonalIResNet& net, const Dataset& ds) {
  return lipschitz_track(net, ds.component_mean, ds.component_std);
}

double TruncatedGaussian::pdf(double x) const {
  if (x < lo || x > hi) return 0.0;
  const double zc = norm_cdf((hi - mean) / stddev) - norm_cdf((lo - mean) / stddev);
  return gauss_pdf(x - mean, stddev) / zc;
}

Mat nullspace_basis(const EigenOperator& op) {
  const int d = op.dim, k = op.n_retained(), r = op.nullspace_dim;
  Mat basis(d, r);
  int found = 0;
  Vec v(d);
  for (int cand = 0; cand < d && found < r; ++cand) {
    std::fill(v.begin(), v.end(), 0.0);
    v[cand] = 1.0;
    // Two orthogonalization passes keep the columns orthonormal to
    // working precision even for near-parallel candidates.
    for (int pass = 0; pass < 2; ++pass) {
      for (int j = 0; j < k; ++j) {
        double dot = 0.0;
        for (int i = 0; i < d; ++i) dot += v[i] * op.eigenvectors(i, j);
        for (int i = 0; i < d; ++i) v[i] -= dot * op.eigenvectors(i, j);
      }
      for (int j = 0; j < found; ++j) {
        double dot = 0.0;
        for (int i = 0; i < d; ++i) dot += v[i] * basis(i, j);
        for (int i = 0; i < d; ++i) v[i] -= dot * basis(i, j);
      }
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm <= 1e-6) continue;
    for (int i = 0; i < d; ++i) basis(i, found) = v[i] / norm;
    ++found;
  }
  if (found < r)
    throw std::runtime_error("nullspace basis completion came up short");
  return basis;
}

LimitCheckReport posterior_limit_check(
    const EigenOperator& op, const Mat& null_basis,
    const std::vector<TruncatedGaussian>& prior, const Vec& deltas,
    const Vec& z) {
  const int k = op.n_retained(), r = op.nullspace_dim, d = op.dim;
  if (r < 1)
    throw std::invalid_argument(
        "posterior limit check: operator needs a nontrivial nullspace");
  if (null_basis.rows != d || null_basis.cols != r)
    throw std::invalid_argument(
        "posterior limit check: nullspace basis shape mismatch");
  if ((int)prior.size() != k + r)
    throw std::invalid_argument(
        "posterior limit check: prior must cover every coordinate");
  if ((int)z.size() != d)
    throw std::invalid_argument("posterior limit check: data dimension mismatch");
  if (deltas.empty())
    throw std::invalid_argument("posterior limit check: empty noise sequence");
  for (double del : deltas)
    if (!(del > 0.0))
      throw std::invalid_argument(
          "posterior limit check: noise levels must be positive");
  for (const TruncatedGaussian& p : prior)
    if (!(p.stddev > 0.0) || !(p.hi > p.lo))
      throw std::invalid_argument("posterior limit check: degenerate prior");

  const Vec zr = op.coeffs(z);
  Vec zn(r, 0.0);
  for (int c = 0; c < r; ++c)
    for (int i = 0; i < d; ++i) zn[c] += null_basis(i, c) * z[i];

  LimitCheckReport rep;
  rep.limit_coords.resize(k + r);
  for (int j = 0; j < k; ++j) rep.limit_coords[j] = zr[j] / op.eigenvalues[j];
  // Product prior: conditioning the nullspace part on the pseudoinverse
  // solution reduces to the nullspace marginals' expectations.
  for (int c = 0; c < r; ++c)
    rep.limit_coords[k + c] =
        tg_moment(prior[k + c], true) / tg_moment(prior[k + c], false);

  const int nd = (int)deltas.size();
  rep.estimates = Mat(nd, k + r);
  rep.rows.reserve(nd);
  for (int t = 0; t < nd; ++t) {
    const double del = deltas[t];
    bool ok = true;
    for (int j = 0; j < k; ++j) {
      const auto [est, mass] =
          conditional_range_mean(prior[j], op.eigenvalues[j], zr[j], del);
      rep.estimates(t, j) = est;
      ok = ok && mass > kSupportFloor;
    }
    for (int c = 0; c < r; ++c) {
      // The observed nullspace coordinate is pure noise; the posterior for
      // the sample's nullspace part stays the prior marginal.
      rep.estimates(t, k + c) = rep.limit_coords[k + c];
      ok = ok && gauss_pdf(zn[c], del) > kSupportFloor;
    }
    double dist_sq = 0.0;
    for (int j = 0; j < k + r; ++j) {
      const double gap = rep.estimates(t, j) - rep.limit_coords[j];
      dist_sq += gap * gap;
    }
    rep.rows.push_back({del, std::sqrt(dist_sq), ok});
  }
  return rep;
}

void write_filter_surface_csv(std::ostream& out, const FilterProfile& p,
                              double delta_hat, const std::string& mode) {
  out << "sigma,q,value,L,delta_hat,training_mode\n";
  for (int j = 0; j < p.surface.rows; ++j)
    for (int kq = 0; kq < p.surface.cols; ++kq)
      out << fmt(p.sigma[j]) << ',' << fmt(p.q[kq]) << ','
          << fmt(p.surface(j, kq)) << ',' << fmt(p.L) << ',' << fmt(delta_hat)
          << ',' << mode << '\n';
}

void write_error_row_csv(std::ostream& out, double L, double delta_hat,
                         const std::string& metric, double value,
                         const std::string& mode, bool header) {
  if (header) out << "L,delta_hat,metric,value,mode\n";
  out << fmt(L) << ',' << fmt(delta_hat) << ',' << metric << ',' << fmt(value)
      << ',' << mode << '\n';
}

void write_limit_check_csv(std::ostream& out, const LimitCheckReport& r) {
  out << "delta,distance\n";
  for (const LimitCheckRow& row : r.rows)
    out << fmt(row.delta) << ',' << fmt(row.distance) << '\n';
}

}  // namespace irn
