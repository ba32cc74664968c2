#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "irn/distributions.hpp"
#include "irn/linops.hpp"
#include "irn/vec.hpp"

namespace irn {

// Immutable after construction. samples may be empty for coordinate-only
// datasets (e.g. loaded from the binary container without an operator).
struct Dataset {
  Mat samples;                  // N x dim, image space
  Mat eigencoords;              // N x n_retained, <x^(i), v_j>
  std::vector<uint8_t> labels;  // parallel to samples; may be empty
  Vec component_mean;           // per retained component
  Vec component_std;            // population stddev per component
  double std_dataset = 0.0;     // mean_j component_std[j]

  int n_samples() const {
    return samples.rows > 0 ? samples.rows : eigencoords.rows;
  }
  bool has_coords() const { return eigencoords.cols > 0; }
};

// Noise and bound ladders for the parameter studies. noise_levels[l] is
// (1/3)^l with the l = 0 entry pinned to zero; lipschitz_bounds[m-1] is
// 1 - (1/3)^m for m = 1..5. Entries are single correctly rounded
// divisions of exact integers, so e.g. the third bound equals 26.0/27.0
// bitwise.
struct ExperimentGrid {
  Vec noise_levels;      // size 7
  Vec lipschitz_bounds;  // size 5
};
ExperimentGrid experiment_grid();

// The two-humped prior used across the 1-D studies:
// 0.35 N(-0.6, 0.15^2) + 0.65 N(+0.6, 0.15^2).
GaussianMixture1D bimodal_mixture();

// IDX ingestion: big-endian headers, magic 0x00000803 (images) and
// 0x00000801 (labels), pixels scaled to [0, 1] by /255, images flattened
// row-major. limit >= 0 keeps only the first `limit` samples. Malformed
// input is rejected with the offending byte offset.
Dataset load_mnist_idx(const std::string& images_path,
                       const std::string& labels_path, int limit = -1);

// Projects samples onto the retained basis and fills eigencoords and the
// per-component statistics.
void attach_eigencoords(Dataset& ds, const EigenOperator& op);

// Coordinates drawn i.i.d. per component from the bimodal mixture,
// samples assembled as sum_j x_j v_j. Streams split per (seed, component).
Dataset make_bimodal_dataset(const EigenOperator& op, int n, uint64_t seed);

struct NoisyPairs {
  Mat x;             // N x n_retained clean eigencoords
  Mat z;             // sigma_j^2 x_j + noise
  double delta = 0.0;  // realized noise stddev, delta_hat * std_dataset
};

// z_j = sigma_j^2 x_j + delta * eps_j with eps_j standard normal drawn per
// (seed, component); the eps draws do not depend on delta_hat, so sweeps
// over noise levels under one seed share the same noise directions.
NoisyPairs make_noisy_pairs(const Dataset& ds, const EigenOperator& op,
                            double delta_hat, uint64_t seed);

// Binary container: magic "DST1", little-endian u32 N, u32 n_retained,
// f64 eigencoords row-major. Samples are not stored; pass an operator at
// load time to reassemble them from the coordinates.
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path,
                     const EigenOperator* op = nullptr);

}  // namespace irn
