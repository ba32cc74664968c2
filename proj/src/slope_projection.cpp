#include "irn/slope_projection.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace irn {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_same_grid(const GridFunction& a, const GridFunction& b) {
  if (a.size() != b.size()) throw std::invalid_argument("grids differ in size");
  const double tol = 1e-12 * std::max({1.0, std::fabs(a.grid.front()),
                                       std::fabs(a.grid.back())});
  for (int i = 0; i < a.size(); ++i)
    if (std::fabs(a.grid[i] - b.grid[i]) > tol)
      throw std::invalid_argument("grids do not match");
}

void check_density(const GridFunction& p) {
  double mass = 0.0;
  for (double v : p.values) {
    if (v < 0.0) throw std::invalid_argument("density must be nonnegative");
    mass += v;
  }
  if (!(mass > 0.0)) throw std::invalid_argument("density must carry mass");
}

// Derivative of the running value function: continuous, piecewise linear,
// nondecreasing. Between breakpoints it interpolates linearly; beyond the
// ends it extends with slopes sL / sR (each equal to the cumulative node
// weight). Empty breakpoint list encodes the identically-zero derivative.
struct PLDerivative {
  std::vector<double> xs, ds;
  double sL = 0.0, sR = 0.0;

  bool empty() const { return xs.empty(); }
};

// Minimizer interval of the underlying convex function: [m1, m2] with
// m1 = inf{x : f(x) >= 0}, m2 = sup{x : f(x) <= 0}.
std::pair<double, double> crossing(const PLDerivative& f) {
  if (f.empty()) return {-kInf, kInf};
  const int k = (int)f.xs.size();
  double m1, m2;
  if (f.ds.front() >= 0.0) {
    m1 = f.xs.front() - f.ds.front() / f.sL;
  } else {
    int j = 0;
    while (j < k && f.ds[j] < 0.0) ++j;
    if (j == k) {
      m1 = f.xs.back() - f.ds.back() / f.sR;
    } else {
      m1 = f.xs[j - 1] -
           f.ds[j - 1] * (f.xs[j] - f.xs[j - 1]) / (f.ds[j] - f.ds[j - 1]);
    }
  }
  if (f.ds.back() <= 0.0) {
    m2 = f.xs.back() - f.ds.back() / f.sR;
  } else {
    int j = k - 1;
    while (j >= 0 && f.ds[j] > 0.0) --j;
    if (j < 0) {
      m2 = f.xs.front() - f.ds.front() / f.sL;
    } else {
      m2 = f.xs[j] -
           f.ds[j] * (f.xs[j + 1] - f.xs[j]) / (f.ds[j + 1] - f.ds[j]);
    }
  }
  return {m1, m2};
}

// Add (1/2) w (x - c)^2 to the value function: the derivative gains the
// linear term w (x - c), which moves breakpoint values but adds no kink.
void add_quadratic(PLDerivative& f, double w, double c) {
  if (w == 0.0) return;
  if (f.empty()) {
    f.xs = {c};
    f.ds = {0.0};
    f.sL = f.sR = w;
    return;
  }
  for (size_t j = 0; j < f.xs.size(); ++j) f.ds[j] += w * (f.xs[j] - c);
  f.sL += w;
  f.sR += w;
}

// Replace V by W(x) = min over d in [a, b] of V(x - d): the negative part
// of the derivative shifts right by a, the positive part by b, and the
// minimizer interval widens into a flat zero stretch in between.
void shift(PLDerivative& f, double a, double b, double m1, double m2) {
  if (f.empty()) return;
  std::vector<double> xs, ds;
  xs.reserve(f.xs.size() + 2);
  ds.reserve(f.xs.size() + 2);
  auto push = [&](double x, double d) {
    if (!xs.empty() && x <= xs.back()) return;
    xs.push_back(x);
    ds.push_back(d);
  };
  for (size_t j = 0; j < f.xs.size(); ++j)
    if (f.ds[j] < 0.0) push(f.xs[j] + a, f.ds[j]);
  push(m1 + a, 0.0);
  push(m2 + b, 0.0);
  for (size_t j = 0; j < f.xs.size(); ++j)
    if (f.ds[j] > 0.0) push(f.xs[j] + b, f.ds[j]);
  f.xs = std::move(xs);
  f.ds = std::move(ds);
}

}  // namespace

void validate_grid_function(const GridFunction& g) {
  if (g.grid.size() < 2) throw std::invalid_argument("grid needs at least 2 nodes");
  if (g.grid.size() != g.values.size())
    throw std::invalid_argument("grid/value size mismatch");
  const int n = g.size();
  const double h = g.spacing();
  if (!(h > 0.0)) throw std::invalid_argument("grid must be increasing");
  const double tol =
      1e-12 * std::max({1.0, std::fabs(g.grid.front()), std::fabs(g.grid.back())});
  for (int i = 0; i < n; ++i) {
    if (std::fabs(g.grid[i] - (g.grid.front() + i * h)) > tol)
      throw std::invalid_argument("grid is not uniform");
    if (!std::isfinite(g.values[i]))
      throw std::invalid_argument("grid function value not finite");
  }
}

Vec trapezoid_weights(const GridFunction& p_z) {
  const int n = p_z.size();
  const double h = p_z.spacing();
  Vec w(n);
  for (int i = 0; i < n; ++i)
    w[i] = p_z.values[i] * (i == 0 || i == n - 1 ? 0.5 * h : h);
  return w;
}

double grid_objective(const GridFunction& psi, const GridFunction& psi_hat,
                      const GridFunction& p_z) {
  check_same_grid(psi, psi_hat);
  check_same_grid(psi, p_z);
  const Vec w = trapezoid_weights(p_z);
  double j = 0.0;
  for (int i = 0; i < psi.size(); ++i) {
    const double r = psi.values[i] - psi_hat.values[i];
    j += 0.5 * w[i] * r * r;
  }
  return j;
}

GridFunction clipped_slope_heuristic(const GridFunction& psi_hat,
                                     const GridFunction& p_z, double L) {
  validate_grid_function(psi_hat);
  check_same_grid(psi_hat, p_z);
  const int n = psi_hat.size();
  const double h = psi_hat.spacing();
  const double lo = 1.0 / (1.0 + L), hi = 1.0 / (1.0 - L);
  GridFunction out;
  out.grid = psi_hat.grid;
  out.values.resize(n);
  out.values[0] = psi_hat.values[0];
  for (int i = 0; i + 1 < n; ++i) {
    const double d = std::clamp(psi_hat.values[i + 1] - psi_hat.values[i], lo * h, hi * h);
    out.values[i + 1] = out.values[i] + d;
  }
  const Vec w = trapezoid_weights(p_z);
  double wsum = 0.0, shift_num = 0.0;
  for (int i = 0; i < n; ++i) {
    wsum += w[i];
    shift_num += w[i] * (psi_hat.values[i] - out.values[i]);
  }
  const double shift_level = wsum > 0.0 ? shift_num / wsum : 0.0;
  for (double& v : out.values) v += shift_level;
  return out;
}

ProjectionResult project_constrained(const GridFunction& psi_hat,
                                     const GridFunction& p_z, double L,
                                     SolverOptions opts) {
  validate_grid_function(psi_hat);
  validate_grid_function(p_z);
  check_same_grid(psi_hat, p_z);
  check_density(p_z);
  if (!(L >= 0.0 && L < 1.0)) throw std::invalid_argument("L must be in [0, 1)");

  const int n = psi_hat.size();
  const double h = psi_hat.spacing();
  const double a = h / (1.0 + L), b = h / (1.0 - L);
  const Vec w = trapezoid_weights(p_z);
  const Vec& target = psi_hat.values;

  // Forward pass: evolve the value-function derivative, remember each
  // node's minimizer interval for the backtrack.
  PLDerivative f;
  std::vector<std::pair<double, double>> opt(n);
  add_quadratic(f, w[0], target[0]);
  opt[0] = crossing(f);
  for (int i = 1; i < n; ++i) {
    shift(f, a, b, opt[i - 1].first, opt[i - 1].second);
    add_quadratic(f, w[i], target[i]);
    opt[i] = crossing(f);
  }

  ProjectionResult res;
  res.psi.grid = psi_hat.grid;
  res.psi.values.resize(n);
  Vec& psi = res.psi.values;

  // Backtrack, steering free stretches toward the clipped psi_hat slope.
  {
    const double anchor = std::isfinite(opt[n - 1].first)
                              ? std::clamp(target[n - 1], opt[n - 1].first,
                                           opt[n - 1].second)
                              : target[n - 1];
    psi[n - 1] = anchor;
  }
  for (int i = n - 2; i >= 0; --i) {
    // psi_i minimizes the prefix value function V_i over the increment
    // window; when the window misses V_i's minimizer interval the convex
    // function is monotone there and the nearest window end is optimal.
    const double wlo = psi[i + 1] - b, whi = psi[i + 1] - a;
    const double lo_i = std::max(opt[i].first, wlo);
    const double hi_i = std::min(opt[i].second, whi);
    if (lo_i <= hi_i) {
      const double tie =
          psi[i + 1] - std::clamp(target[i + 1] - target[i], a, b);
      psi[i] = std::clamp(tie, lo_i, hi_i);
    } else if (opt[i].second < wlo) {
      psi[i] = wlo;
    } else {
      psi[i] = whi;
    }
  }

  // Primal objective and a posteriori duality gap from increment
  // multipliers recovered off the primal solution.
  double primal = 0.0;
  for (int i = 0; i < n; ++i) {
    const double r = psi[i] - target[i];
    primal += 0.5 * w[i] * r * r;
  }
  double target_mag = 0.0;
  for (int i = 0; i < n; ++i) target_mag += 0.5 * w[i] * target[i] * target[i];
  const double scale = std::max({1.0, primal, target_mag});

  // Multiplier increments r_j = w_j (psi_j - target_j) as exact per-node
  // products; the multiplier vector is their real-valued suffix sum. The
  // heaviest node absorbs the telescoping defect so no light tail node
  // ever divides another scale's rounding dust by its own weight, and the
  // price term carries a rigorous margin for its float accumulation.
  double dual = 0.0;
  {
    const double eps = std::numeric_limits<double>::epsilon();
    int m = 0;
    for (int j = 1; j < n; ++j)
      if (w[j] > w[m]) m = j;
    Vec r(n);
    double sum_abs = 0.0;
    for (int j = 0; j < n; ++j) {
      r[j] = w[j] * (psi[j] - target[j]);
      sum_abs += std::fabs(r[j]);
    }
    {
      double s = 0.0, comp = 0.0;
      for (int j = 0; j < n; ++j) {
        if (j == m) continue;
        const double t = s + r[j];
        comp += std::fabs(s) >= std::fabs(r[j]) ? (s - t) + r[j] : (r[j] - t) + s;
        s = t;
      }
      r[m] = -(s + comp);
    }
    for (int j = 0; j < n; ++j)
      if (w[j] > 0.0) dual += -0.5 * r[j] * r[j] / w[j] - r[j] * target[j];
    // w_j = 0 makes r_j an exact zero: such nodes price nothing.
    double run = 0.0, price = 0.0;
    for (int i = n - 2; i >= 0; --i) {
      run -= r[i + 1];
      price += -b * std::max(run, 0.0) + a * std::max(-run, 0.0);
    }
    dual += price - (std::fabs(a) + std::fabs(b)) * n * (n * eps * sum_abs);
  }

  res.objective = primal;
  res.scale = scale;
  res.duality_gap = primal - dual;
  res.converged = res.duality_gap <= opts.gap_tol * res.scale;
  return res;
}

ProjectionCertificate certify_pontryagin(const GridFunction& psi,
                                         const GridFunction& psi_hat,
                                         const GridFunction& p_z, double L) {
  validate_grid_function(psi);
  check_same_grid(psi, psi_hat);
  check_same_grid(psi, p_z);
  const int n = psi.size();
  const double h = psi.spacing();
  const double lo = 1.0 / (1.0 + L), hi = 1.0 / (1.0 - L);

  ProjectionCertificate cert;
  cert.lambda.grid = psi.grid;
  cert.lambda.values.assign(n, 0.0);
  Vec g(n);
  for (int i = 0; i < n; ++i)
    g[i] = p_z.values[i] * (psi.values[i] - psi_hat.values[i]);
  for (int i = n - 2; i >= 0; --i)
    cert.lambda.values[i] =
        cert.lambda.values[i + 1] + 0.5 * h * (g[i] + g[i + 1]);

  double lam_max = 0.0;
  for (double v : cert.lambda.values) lam_max = std::max(lam_max, std::fabs(v));
  // A purely relative sign tolerance degenerates when the residual is
  // rounding dust (psi == psi_hat); the floor prices the worst rounding
  // the trapezoid accumulation can carry at this quadrature scale.
  double gscale = 0.0;
  for (int i = 0; i < n; ++i)
    gscale += h * p_z.values[i] *
              (std::fabs(psi.values[i]) + std::fabs(psi_hat.values[i]));
  const double tol = 1e-7 * lam_max +
                     4096.0 * std::numeric_limits<double>::epsilon() *
                         std::max(1.0, gscale);
  const double tol_s = 1e-6;

  cert.lower_active.assign(n - 1, 0);
  cert.upper_active.assign(n - 1, 0);
  double worst = 0.0;
  for (int i = 0; i + 1 < n; ++i) {
    const double s = (psi.values[i + 1] - psi.values[i]) / h;
    cert.lower_active[i] = s <= lo + tol_s;
    cert.upper_active[i] = s >= hi - tol_s;
    worst = std::max({worst, s - hi, lo - s});
    const double la = cert.lambda.values[i], lb = cert.lambda.values[i + 1];
    if (la > tol && lb > tol) worst = std::max(worst, std::fabs(s - lo));
    if (la < -tol && lb < -tol) worst = std::max(worst, std::fabs(s - hi));
  }
  cert.max_violation = std::max(worst, 0.0);
  return cert;
}

ProjectionScenario build_figure4_scenario(double L, const GaussianMixture1D& mixture,
                                          NoiseSpec noise, double sigma_sq,
                                          int grid_size) {
  if (grid_size < 2) throw std::invalid_argument("grid_size must be at least 2");
  ProjectionScenario sc;
  sc.L = L;
  sc.sigma_sq = sigma_sq;
  sc.mixture = mixture;
  sc.noise = noise;
  const GaussianMixture1D push = pushforward_density(mixture, noise, sigma_sq);
  const auto [mean, var] = mixture_moments(push);
  const double sd = std::sqrt(var);
  const double z0 = mean - 8.0 * sd, z1 = mean + 8.0 * sd;
  const PosteriorMeanOracle oracle{mixture, noise, sigma_sq};
  sc.psi_hat.grid.resize(grid_size);
  sc.psi_hat.values.resize(grid_size);
  sc.p_z.grid.resize(grid_size);
  sc.p_z.values.resize(grid_size);
  for (int i = 0; i < grid_size; ++i) {
    const double z = z0 + (z1 - z0) * i / (grid_size - 1);
    sc.psi_hat.grid[i] = z;
    sc.p_z.grid[i] = z;
    sc.psi_hat.values[i] = oracle(z);
    sc.p_z.values[i] = mixture_pdf(push, z);
  }
  return sc;
}

}  // namespace irn
