#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "irn/datasets.hpp"
#include "irn/iresnet.hpp"
#include "irn/vec.hpp"

namespace irn {

enum class TrainMode { approx, reco };

struct TrainConfig {
  TrainMode mode = TrainMode::approx;
  double learning_rate = 1e-3;
  int batch_size = 256;
  int epochs = 200;
  int unroll_steps = kDefaultUnrollSteps;  // reco only
  uint64_t seed = 0;
  double L = 2.0 / 3.0;      // must equal the trained network's bound
  double noise_level = 0.0;  // delta baked into the pairs; bookkeeping only
  double grad_clip = 1e3;    // global-norm cap per update; <= 0 disables
  int workers = 0;           // component worker threads; 0 = hardware pick
  std::string progress_csv;   // appends epoch,component,loss,lipschitz rows
  std::string snapshot_path;  // checkpoint written on non-finite loss
};

// Loss and residual-slope histories, one row per epoch and one column per
// component. final_loss is recomputed on the full data after the last
// update, so it reflects the returned weights rather than the moving ones.
struct TrainTrace {
  Mat epoch_loss;
  Mat epoch_lipschitz;
  Vec final_loss;
  double loss = 0.0;  // sum of final_loss over components
  double wall_seconds = 0.0;
};

// Gradients shaped like one subnet's parameters.
struct SubnetGrads {
  std::array<Mat, 3> weight;
  std::array<Vec, 3> bias;
};

SubnetGrads make_grads(const Subnet& s);
double grad_norm(const SubnetGrads& g);

// Rescales so the global norm does not exceed max_norm; no-op when it
// already fits or when max_norm <= 0.
void clip_grads(SubnetGrads& g, double max_norm);

// Mean squared residual of phi over one component's scalar batch:
// mean_i (x_i - f(x_i) - z_i)^2.
double approx_loss(const Subnet& s, const Vec& xs, const Vec& zs);

// Mean squared reconstruction error of the unroll_steps-step fixed-point
// inverse applied to zs: mean_i (psi~(z_i) - x_i)^2.
double reco_loss(const Subnet& s, const Vec& xs, const Vec& zs,
                 int unroll_steps);

// Same losses with reverse-mode gradients accumulated into g (g is
// overwritten). The reconstruction gradient backpropagates through every
// unrolled step.
double approx_loss_grad(const Subnet& s, const Vec& xs, const Vec& zs,
                        SubnetGrads& g);
double reco_loss_grad(const Subnet& s, const Vec& xs, const Vec& zs,
                      int unroll_steps, SubnetGrads& g);

// Whole-network losses over eigencoordinate batches (rows = samples,
// columns = components); the objective separates into a sum of
// per-component means.
double approx_loss(const DiagonalIResNet& net, const Mat& x, const Mat& z);
double reco_loss(const DiagonalIResNet& net, const Mat& x, const Mat& z,
                 int unroll_steps);

// Bias-corrected Adam over one flat parameter block (beta1 = 0.9,
// beta2 = 0.999, eps = 1e-8). Moment vectors are sized on first use.
struct AdamState {
  int t = 0;
  Vec m;
  Vec v;
};

void adam_step(Vec& params, const Vec& grads, AdamState& st, double lr);

// Per-component Adam loop with a hard spectral projection after every
// update. Components are independent and may run on parallel workers;
// results are identical for any worker count. Aborts with a diagnostic
// checkpoint when a batch loss turns non-finite.
TrainTrace train(DiagonalIResNet& net, const NoisyPairs& pairs,
                 const TrainConfig& cfg);

}  // namespace irn
