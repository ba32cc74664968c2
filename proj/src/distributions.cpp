#include "irn/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace irn {
namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;

double log_normal_pdf(double x, double mean, double stddev) {
  const double d = (x - mean) / stddev;
  return -0.5 * (kLog2Pi + d * d) - std::log(stddev);
}

}  // namespace

void validate_mixture(const GaussianMixture1D& p) {
  if (p.comp.empty()) throw std::invalid_argument("mixture: no components");
  double wsum = 0.0;
  for (const auto& c : p.comp) {
    if (!(c.weight > 0.0)) throw std::invalid_argument("mixture: weight must be positive");
    if (c.stddev < 0.0) throw std::invalid_argument("mixture: negative stddev");
    wsum += c.weight;
  }
  if (std::fabs(wsum - 1.0) > 1e-12)
    throw std::invalid_argument("mixture: weights must sum to 1");
}

std::pair<double, double> mixture_moments(const GaussianMixture1D& p) {
  validate_mixture(p);
  double mean = 0.0, second = 0.0;
  for (const auto& c : p.comp) {
    mean += c.weight * c.mean;
    second += c.weight * (c.stddev * c.stddev + c.mean * c.mean);
  }
  return {mean, second - mean * mean};
}

double mixture_log_pdf(const GaussianMixture1D& p, double x) {
  double best = -std::numeric_limits<double>::infinity();
  // log-sum-exp over components
  for (const auto& c : p.comp) {
    if (c.stddev <= 0.0) throw std::invalid_argument("mixture pdf: zero stddev component");
    best = std::max(best, std::log(c.weight) + log_normal_pdf(x, c.mean, c.stddev));
  }
  double s = 0.0;
  for (const auto& c : p.comp)
    s += std::exp(std::log(c.weight) + log_normal_pdf(x, c.mean, c.stddev) - best);
  return best + std::log(s);
}

double mixture_pdf(const GaussianMixture1D& p, double x) {
  return std::exp(mixture_log_pdf(p, x));
}

double mixture_cdf(const GaussianMixture1D& p, double x) {
  double s = 0.0;
  for (const auto& c : p.comp) {
    if (c.stddev <= 0.0) {
      s += x >= c.mean ? c.weight : 0.0;
    } else {
      s += c.weight * 0.5 * std::erfc(-(x - c.mean) / (c.stddev * std::sqrt(2.0)));
    }
  }
  return s;
}

double sample_mixture(const GaussianMixture1D& p, RngStream& rng) {
  const double u = rng.next_double();
  double acc = 0.0;
  size_t pick = p.comp.size() - 1;
  for (size_t k = 0; k < p.comp.size(); ++k) {
    acc += p.comp[k].weight;
    if (u < acc) {
      pick = k;
      break;
    }
  }
  const auto& c = p.comp[pick];
  return c.mean + c.stddev * rng.next_normal();
}

GaussianMixture1D pushforward_density(const GaussianMixture1D& p, NoiseSpec noise,
                                      double sigma_sq) {
  validate_mixture(p);
  if (!(sigma_sq > 0.0 && sigma_sq <= 1.0))
    throw std::invalid_argument("pushforward: sigma_sq must be in (0, 1]");
  bool degenerate = noise.stddev == 0.0;
  GaussianMixture1D out;
  for (const auto& c : p.comp) {
    if (c.stddev > 0.0) degenerate = false;
    const double u = std::sqrt(noise.stddev * noise.stddev +
                               sigma_sq * sigma_sq * c.stddev * c.stddev);
    out.comp.push_back({c.weight, c.mean * sigma_sq, u});
  }
  if (degenerate)
    throw std::invalid_argument("pushforward: atomic prior with zero noise");
  return out;
}

double PosteriorMeanOracle::operator()(double z) const {
  const double w = noise.stddev;
  if (w == 0.0) return z / sigma_sq;
  double best = -std::numeric_limits<double>::infinity();
  const size_t K = prior.comp.size();
  std::vector<double> lg(K), usq(K);
  for (size_t k = 0; k < K; ++k) {
    const auto& c = prior.comp[k];
    usq[k] = w * w + sigma_sq * sigma_sq * c.stddev * c.stddev;
    const double u = std::sqrt(usq[k]);
    lg[k] = std::log(c.weight) + log_normal_pdf(z, c.mean * sigma_sq, u);
    best = std::max(best, lg[k]);
  }
  double denom = 0.0, num_v = 0.0, num_t = 0.0;
  for (size_t k = 0; k < K; ++k) {
    const auto& c = prior.comp[k];
    const double om = std::exp(lg[k] - best);
    denom += om;
    num_v += om * c.stddev * c.stddev / usq[k];
    num_t += om * c.mean / usq[k];
  }
  return (sigma_sq * z * num_v + w * w * num_t) / denom;
}

double posterior_mean(const PosteriorMeanOracle& o, double z) { return o(z); }

double adaptive_simpson(const std::function<double(double)>& f, double a, double b,
                        double tol, int max_depth) {
  struct Rec {
    static double go(const std::function<double(double)>& f, double a, double b,
                     double fa, double fm, double fb, double whole, double tol,
                     int depth) {
      const double m = 0.5 * (a + b);
      const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
      const double flm = f(lm), frm = f(rm);
      const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
      const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
      const double delta = left + right - whole;
      if (depth <= 0 || std::fabs(delta) <= 15.0 * tol)
        return left + right + delta / 15.0;
      return go(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
             go(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
    }
  };
  // A fixed initial panelization keeps narrow features from being skipped
  // when the first three samples all miss them.
  const int panels = 64;
  const double h = (b - a) / panels;
  double total = 0.0;
  double fl = f(a);
  for (int i = 0; i < panels; ++i) {
    const double pa = a + i * h;
    const double pb = i + 1 == panels ? b : pa + h;
    const double fm = f(0.5 * (pa + pb));
    const double fr = f(pb);
    const double whole = (pb - pa) / 6.0 * (fl + 4.0 * fm + fr);
    total += Rec::go(f, pa, pb, fl, fm, fr, whole, tol / panels, max_depth);
    fl = fr;
  }
  return total;
}

double posterior_mean_quadrature(const GaussianMixture1D& prior, NoiseSpec noise,
                                 double sigma_sq, double z, double rel_tol) {
  validate_mixture(prior);
  const double w = noise.stddev;
  if (!(w > 0.0)) throw std::invalid_argument("posterior quadrature needs w > 0");

  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& c : prior.comp) {
    lo = std::min(lo, c.mean - 12.0 * c.stddev);
    hi = std::max(hi, c.mean + 12.0 * c.stddev);
  }
  // Clip to where the likelihood has mass; keeps the integrand scale sane.
  lo = std::max(lo, (z - 12.0 * w) / sigma_sq);
  hi = std::min(hi, (z + 12.0 * w) / sigma_sq);
  if (!(lo < hi)) {
    // Prior and likelihood supports barely overlap; widen to the prior box.
    lo = hi = 0;
    for (const auto& c : prior.comp) {
      lo = std::min(lo, c.mean - 12.0 * c.stddev);
      hi = std::max(hi, c.mean + 12.0 * c.stddev);
    }
  }

  // Shift by the max of the log integrand so exp() stays in range, and
  // restrict integration to coarse-scan cells that carry mass: a narrow
  // posterior far off the interval midpoint must not be skipped.
  const auto logf = [&](double x) {
    return mixture_log_pdf(prior, x) + log_normal_pdf(z, sigma_sq * x, w);
  };
  const int scan = 4096;
  std::vector<double> lv(scan + 1);
  double m = -std::numeric_limits<double>::infinity();
  for (int i = 0; i <= scan; ++i) {
    lv[i] = logf(lo + (hi - lo) * i / scan);
    m = std::max(m, lv[i]);
  }
  std::vector<std::pair<double, double>> pieces;
  {
    const double cut = m - 60.0;  // exp(-60) ~ 9e-27 relative mass
    int i = 0;
    while (i < scan) {
      if (lv[i] < cut && lv[i + 1] < cut) {
        ++i;
        continue;
      }
      int j = i;
      while (j < scan && !(lv[j] < cut && lv[j + 1] < cut)) ++j;
      const int a = std::max(0, i - 1), b = std::min(scan, j + 1);
      pieces.emplace_back(lo + (hi - lo) * a / scan, lo + (hi - lo) * b / scan);
      i = j + 1;
    }
  }

  const auto f0 = [&](double x) { return std::exp(logf(x) - m); };
  const auto f1 = [&](double x) { return x * std::exp(logf(x) - m); };
  const double scale = std::max({1.0, std::fabs(lo), std::fabs(hi)});
  double i0 = 0.0, i1 = 0.0;
  for (const auto& [pa, pb] : pieces) {
    i0 += adaptive_simpson(f0, pa, pb, rel_tol * (pb - pa) * 0.1);
    i1 += adaptive_simpson(f1, pa, pb, rel_tol * (pb - pa) * 0.1 * scale);
  }
  return i1 / i0;
}

JointMoments estimate_joint_moments(const std::vector<std::pair<double, double>>& xy) {
  const size_t n = xy.size();
  if (n < 2) throw std::invalid_argument("joint moments need at least 2 samples");
  JointMoments m;
  for (const auto& [x, e] : xy) {
    m.mu_x += x;
    m.mu_eta += e;
  }
  m.mu_x /= (double)n;
  m.mu_eta /= (double)n;
  for (const auto& [x, e] : xy) {
    m.var_x += (x - m.mu_x) * (x - m.mu_x);
    m.var_eta += (e - m.mu_eta) * (e - m.mu_eta);
    m.cov_x_eta += (x - m.mu_x) * (e - m.mu_eta);
  }
  m.var_x /= (double)(n - 1);
  m.var_eta /= (double)(n - 1);
  m.cov_x_eta /= (double)(n - 1);
  return m;
}

}  // namespace irn
