#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "irn/linops.hpp"
#include "irn/rng.hpp"
#include "irn/vec.hpp"

namespace irn {

// Fixed-point inversion defaults: training unrolls a fixed 30 steps,
// diagnostics iterate to tolerance.
inline constexpr int kDefaultUnrollSteps = 30;
inline constexpr int kEvalMaxIterations = 500;
inline constexpr double kEvalInversionTol = 1e-8;

// One affine map y = W x + b plus the persistent power-iteration state used
// to keep its spectral norm under the layer cap.
struct AffineLayer {
  int out_dim = 0;
  int in_dim = 0;
  Mat weight;  // out_dim x in_dim
  Vec bias;    // out_dim
  Vec pow_u;   // out_dim, persistent left iterate
  Vec pow_v;   // in_dim, persistent right iterate
};

// Scalar residual network f: R -> R, three affine layers 1 -> hidden ->
// hidden -> 1 with ReLU after the first two. Each layer's spectral norm is
// kept at or below layer_cap = L^{1/3}, so Lip(f) <= L by construction.
struct Subnet {
  std::array<AffineLayer, 3> layer;
  double layer_cap = 0.0;

  int hidden() const { return layer[0].out_dim; }
};

// Residual network acting diagonally in the eigenbasis of a linear
// operator: phi(x) = x - sum_j f_j(<x, v_j>) v_j. The nullspace part of x
// is untouched. eigen_context may be null for coordinate-space use.
struct DiagonalIResNet {
  double L = 0.0;
  std::vector<Subnet> subnets;
  const EigenOperator* eigen_context = nullptr;

  int n_components() const { return (int)subnets.size(); }
};

struct InversionReport {
  int iterations = 0;
  double residual = 0.0;     // ||phi(x_final) - z|| over retained coords
  double contraction = 0.0;  // max observed ratio of successive increments
};

struct SlopeScan {
  double min_slope = 0.0;
  double max_slope = 0.0;

  double lipschitz() const;  // max |slope| over the scanned interval
};

// Exact upper bound sqrt(||W||_1 ||W||_inf) on the spectral norm.
double spectral_norm_upper_bound(const Mat& w);

// Power iteration with Rayleigh estimate, warm-started from u/v. The
// result never exceeds the exact 1-norm/inf-norm bound; a non-finite or
// degenerate iterate falls back to that bound.
double estimate_spectral_norm(const Mat& w, Vec& u, Vec& v, int iterations);

// In-place hard projection: weight *= min(1, cap/estimate * (1 - 1e-6)).
// 16 power iterations per call; persistent vectors make repeated calls
// track slowly moving weights.
void project_spectral(AffineLayer& layer, double cap);
void project_subnet(Subnet& s);

// Zero-initialized subnet: f = 0, so phi = Id.
Subnet make_subnet(double L, int hidden = 35);

// He-style uniform init on the weights (biases zero), then immediate
// projection under the layer cap. The persistent power vectors are warmed
// to convergence so the very first projection is already tight.
Subnet make_subnet(double L, int hidden, RngStream& rng);

// One subnet per retained component, seeded per (seed, component). When ctx
// is non-null, components must equal ctx->n_retained().
DiagonalIResNet make_diagonal_iresnet(double L, int components, uint64_t seed,
                                      const EigenOperator* ctx = nullptr,
                                      int hidden = 35);

double subnet_eval(const Subnet& s, double x);
void subnet_eval_batch(const Subnet& s, const double* xs, double* fx, int n);

// Componentwise phi over eigencoordinates; xt.size() must equal the
// component count.
Vec forward_coords(const DiagonalIResNet& net, const Vec& xt);

// Full-space phi(x) = x - sum_j f_j(<x, v_j>) v_j; requires eigen_context.
Vec forward(const DiagonalIResNet& net, const Vec& x);

// Fixed-point inversion x^{k+1} = z + f(x^k), x^0 = z. Stops after
// max_iter steps or once the increment norm drops to tol.
std::pair<Vec, InversionReport> invert_coords(const DiagonalIResNet& net,
                                              const Vec& zt,
                                              int max_iter = kDefaultUnrollSteps,
                                              double tol = 0.0);

// Full-space inversion; the nullspace part of z passes through unchanged.
std::pair<Vec, InversionReport> invert_fixed_point(
    const DiagonalIResNet& net, const Vec& z,
    int max_iter = kDefaultUnrollSteps, double tol = 0.0);

// Scalar inversion of a single component's phi_j.
double invert_component(const DiagonalIResNet& net, int component, double z,
                        int max_iter = kEvalMaxIterations,
                        double tol = kEvalInversionTol);

// Largest empirical Lipschitz ratio of g := Id - (1-L^2) psi over all pairs
// of the given coordinate-space samples; the inverse-is-an-iResNet view
// demands ratio <= L. Inversion runs to tol 1e-10 (iteration cap scaled to
// reach it).
double inverse_as_scaled_iresnet_check(const DiagonalIResNet& net,
                                       const std::vector<Vec>& samples);
double inverse_as_scaled_iresnet_check(const DiagonalIResNet& net,
                                       int component, const Vec& samples);

// Largest normalized value of
//   (1-L^2)||psi(z1)-psi(z2)||^2 + ||z1-z2||^2 - 2<z1-z2, psi(z1)-psi(z2)>
// over the sample pairs, divided by ||z1-z2||^2; invertibility demands a
// nonpositive result. Coincident pairs are skipped.
double condition_2_check(const DiagonalIResNet& net,
                         const std::vector<Vec>& z1,
                         const std::vector<Vec>& z2);
double condition_2_check(const DiagonalIResNet& net, int component,
                         const Vec& z1, const Vec& z2);

// Finite-difference slopes of f_j over [a, b] at the given step.
SlopeScan slope_scan(const DiagonalIResNet& net, int component, double a,
                     double b, double step);

// max_j of slope_scan(net, j, a, b, step).lipschitz()
double network_lipschitz(const DiagonalIResNet& net, double a, double b,
                         double step);

// Binary container: magic "IRN1", f64 L, u32 component count, then per
// subnet u32 layer count and per layer u32 out/in dims, f64 row-major
// weights, f64 biases. Little-endian.
void save_checkpoint(const DiagonalIResNet& net, const std::string& path);
DiagonalIResNet load_checkpoint(const std::string& path,
                                const EigenOperator* ctx = nullptr);

}  // namespace irn
