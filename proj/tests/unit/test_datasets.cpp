#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "irn/datasets.hpp"
#include "irn/distributions.hpp"
#include "irn/linops.hpp"
#include "irn/rng.hpp"

namespace {

using irn::Mat;
using irn::Vec;

irn::EigenOperator scalar_operator() {
  irn::EigenOperator op;
  op.dim = 1;
  op.eigenvalues = {1.0};
  op.eigenvectors = Mat(1, 1, 1.0);
  return op;
}

irn::EigenOperator diag_operator(const Vec& eigenvalues) {
  irn::EigenOperator op;
  op.dim = (int)eigenvalues.size();
  op.eigenvalues = eigenvalues;
  op.eigenvectors = Mat(op.dim, op.dim);
  for (int j = 0; j < op.dim; ++j) op.eigenvectors(j, j) = 1.0;
  return op;
}

void write_be32(std::ofstream& o, uint32_t v) {
  const unsigned char b[4] = {(unsigned char)(v >> 24), (unsigned char)(v >> 16),
                              (unsigned char)(v >> 8), (unsigned char)v};
  o.write((const char*)b, 4);
}

void write_idx_pair(const std::string& img_path, const std::string& lab_path,
                    const std::vector<std::vector<unsigned char>>& images,
                    const std::vector<unsigned char>& labels, int rows,
                    int cols, uint32_t img_magic = 0x00000803u,
                    uint32_t lab_magic = 0x00000801u,
                    int declared_images = -1, int declared_labels = -1) {
  std::ofstream img(img_path, std::ios::binary);
  write_be32(img, img_magic);
  write_be32(img, declared_images >= 0 ? (uint32_t)declared_images
                                       : (uint32_t)images.size());
  write_be32(img, (uint32_t)rows);
  write_be32(img, (uint32_t)cols);
  for (const auto& im : images)
    img.write((const char*)im.data(), (std::streamsize)im.size());
  std::ofstream lab(lab_path, std::ios::binary);
  write_be32(lab, lab_magic);
  write_be32(lab, declared_labels >= 0 ? (uint32_t)declared_labels
                                       : (uint32_t)labels.size());
  lab.write((const char*)labels.data(), (std::streamsize)labels.size());
}

}  // namespace

TEST_CASE("experiment grid entries are exact rationals") {
  const irn::ExperimentGrid g = irn::experiment_grid();
  REQUIRE(g.noise_levels.size() == 7);
  REQUIRE(g.lipschitz_bounds.size() == 5);

  CHECK(g.noise_levels[0] == 0.0);
  CHECK(g.noise_levels[1] == 1.0 / 3.0);
  CHECK(g.noise_levels[2] == 1.0 / 9.0);
  CHECK(g.noise_levels[6] == 1.0 / 729.0);
  for (size_t l = 2; l < g.noise_levels.size(); ++l)
    CHECK(g.noise_levels[l] < g.noise_levels[l - 1]);

  CHECK(g.lipschitz_bounds[0] == 2.0 / 3.0);
  CHECK(g.lipschitz_bounds[1] == 8.0 / 9.0);
  CHECK(g.lipschitz_bounds[2] == 26.0 / 27.0);
  CHECK(g.lipschitz_bounds[4] == 242.0 / 243.0);
  for (size_t m = 1; m < g.lipschitz_bounds.size(); ++m) {
    CHECK(g.lipschitz_bounds[m] > g.lipschitz_bounds[m - 1]);
    CHECK(g.lipschitz_bounds[m] < 1.0);
  }
}

TEST_CASE("bimodal coordinates match the target mixture") {
  const irn::EigenOperator op = scalar_operator();
  const int n = 100000;
  const irn::Dataset ds = irn::make_bimodal_dataset(op, n, 2211);
  REQUIRE(ds.n_samples() == n);
  REQUIRE(ds.eigencoords.cols == 1);

  const auto [mu, var] = irn::mixture_moments(irn::bimodal_mixture());
  CHECK(mu == doctest::Approx(0.18).epsilon(1e-12));
  CHECK(var == doctest::Approx(0.3501).epsilon(1e-12));

  // Sample moments inside generous Monte Carlo bands.
  CHECK(std::fabs(ds.component_mean[0] - mu) <= 3.0 * std::sqrt(var / n));
  CHECK(ds.component_std[0] == doctest::Approx(std::sqrt(var)).epsilon(0.02));
  CHECK(ds.std_dataset == ds.component_std[0]);

  // Kolmogorov-Smirnov distance against the analytic CDF.
  Vec sorted(ds.eigencoords.a);
  std::sort(sorted.begin(), sorted.end());
  const irn::GaussianMixture1D mix = irn::bimodal_mixture();
  double ks = 0.0;
  for (int i = 0; i < n; ++i) {
    const double cdf = irn::mixture_cdf(mix, sorted[i]);
    ks = std::max(ks, std::fabs(cdf - (double)i / n));
    ks = std::max(ks, std::fabs(cdf - (double)(i + 1) / n));
  }
  CHECK(ks <= 0.02);

  // Deterministic per seed, including the single-sample edge case.
  const irn::Dataset again = irn::make_bimodal_dataset(op, 50, 2211);
  for (int i = 0; i < 50; ++i)
    CHECK(again.eigencoords(i, 0) == ds.eigencoords(i, 0));
  const irn::Dataset one_a = irn::make_bimodal_dataset(op, 1, 7);
  const irn::Dataset one_b = irn::make_bimodal_dataset(op, 1, 7);
  CHECK(one_a.eigencoords(0, 0) == one_b.eigencoords(0, 0));
  CHECK(one_a.eigencoords(0, 0) != ds.eigencoords(0, 0));

  // Components draw from independent streams: a two-component operator
  // reuses neither stream for the other column.
  const irn::EigenOperator op2 = diag_operator({1.0, 0.4});
  const irn::Dataset two = irn::make_bimodal_dataset(op2, 50, 2211);
  for (int i = 0; i < 50; ++i)
    CHECK(two.eigencoords(i, 0) == ds.eigencoords(i, 0));
  double corr = 0.0;
  for (int i = 0; i < 50; ++i)
    corr += (two.eigencoords(i, 0) - two.component_mean[0]) *
            (two.eigencoords(i, 1) - two.component_mean[1]);
  CHECK(std::fabs(corr / (50.0 * two.component_std[0] *
                          two.component_std[1])) < 0.5);
}

TEST_CASE("noisy pairs scale with the dataset spread and freeze directions") {
  const irn::EigenOperator op = diag_operator({1.0, 0.205, 0.075});
  const irn::Dataset ds = irn::make_bimodal_dataset(op, 4000, 99);

  // Zero noise level: z is exactly sigma^2 x.
  const irn::NoisyPairs clean = irn::make_noisy_pairs(ds, op, 0.0, 5);
  CHECK(clean.delta == 0.0);
  for (int i = 0; i < clean.x.rows; ++i)
    for (int j = 0; j < 3; ++j)
      CHECK(clean.z(i, j) == op.eigenvalues[j] * clean.x(i, j));

  // Realized stddev tracks delta = delta_hat * std_dataset within 1%.
  const irn::EigenOperator sop = scalar_operator();
  const irn::Dataset big = irn::make_bimodal_dataset(sop, 100000, 31);
  const double dh = 1.0 / 9.0;
  const irn::NoisyPairs noisy = irn::make_noisy_pairs(big, sop, dh, 5);
  const double delta = dh * big.std_dataset;
  CHECK(noisy.delta == delta);
  double m1 = 0.0, m2 = 0.0, cross = 0.0;
  for (int i = 0; i < noisy.x.rows; ++i) {
    const double eta = noisy.z(i, 0) - noisy.x(i, 0);
    m1 += eta;
    m2 += eta * eta;
    cross += eta * (noisy.x(i, 0) - big.component_mean[0]);
  }
  m1 /= noisy.x.rows;
  m2 = std::sqrt(m2 / noisy.x.rows - m1 * m1);
  CHECK(m2 == doctest::Approx(delta).epsilon(0.01));
  // Noise independent of the signal.
  const double corr =
      cross / (noisy.x.rows * m2 * big.component_std[0]);
  CHECK(std::fabs(corr) <= 3.0 / std::sqrt((double)noisy.x.rows));

  // One seed pins the noise directions across noise levels.
  const irn::NoisyPairs a = irn::make_noisy_pairs(ds, op, 1.0 / 3.0, 5);
  const irn::NoisyPairs b = irn::make_noisy_pairs(ds, op, 1.0 / 27.0, 5);
  for (int i = 0; i < 40; ++i)
    for (int j = 0; j < 3; ++j) {
      const double ea = (a.z(i, j) - op.eigenvalues[j] * a.x(i, j)) / a.delta;
      const double eb = (b.z(i, j) - op.eigenvalues[j] * b.x(i, j)) / b.delta;
      CHECK(ea == doctest::Approx(eb).epsilon(1e-12));
    }

  CHECK_THROWS_AS(irn::make_noisy_pairs(ds, op, -0.1, 5),
                  std::invalid_argument);
  CHECK_THROWS_AS(irn::make_noisy_pairs(ds, sop, 0.1, 5),
                  std::invalid_argument);
}

TEST_CASE("idx loader scales pixels and enforces the format") {
  std::vector<std::vector<unsigned char>> images(10,
                                                 std::vector<unsigned char>(4, 0));
  std::vector<unsigned char> labels(10, 0);
  images[0][0] = 255;
  images[0][1] = 128;
  labels[3] = 7;
  write_idx_pair("idx_ok_img.bin", "idx_ok_lab.bin", images, labels, 2, 2);

  irn::Dataset ds = irn::load_mnist_idx("idx_ok_img.bin", "idx_ok_lab.bin");
  REQUIRE(ds.n_samples() == 10);
  REQUIRE(ds.samples.cols == 4);
  CHECK(ds.samples(0, 0) == 1.0);
  CHECK(ds.samples(0, 1) == 128.0 / 255.0);
  CHECK(ds.samples(0, 2) == 0.0);
  CHECK(ds.samples(5, 3) == 0.0);
  CHECK(ds.labels[3] == 7);
  CHECK_FALSE(ds.has_coords());

  const irn::Dataset limited =
      irn::load_mnist_idx("idx_ok_img.bin", "idx_ok_lab.bin", 3);
  CHECK(limited.n_samples() == 3);
  CHECK(limited.labels.size() == 3);

  // Malformed inputs: wrong magics, truncation, count mismatch.
  write_idx_pair("idx_badmagic_img.bin", "idx_badmagic_lab.bin", images,
                 labels, 2, 2, 0x00000804u);
  CHECK_THROWS_AS(
      irn::load_mnist_idx("idx_badmagic_img.bin", "idx_badmagic_lab.bin"),
      std::runtime_error);
  write_idx_pair("idx_badlab_img.bin", "idx_badlab_lab.bin", images, labels, 2,
                 2, 0x00000803u, 0x00000802u);
  CHECK_THROWS_AS(
      irn::load_mnist_idx("idx_badlab_img.bin", "idx_badlab_lab.bin"),
      std::runtime_error);
  write_idx_pair("idx_short_img.bin", "idx_short_lab.bin", images, labels, 2,
                 2, 0x00000803u, 0x00000801u, 20, 20);
  try {
    irn::load_mnist_idx("idx_short_img.bin", "idx_short_lab.bin");
    CHECK(false);
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("byte") != std::string::npos);
  }
  write_idx_pair("idx_count_img.bin", "idx_count_lab.bin", images, labels, 2,
                 2, 0x00000803u, 0x00000801u, -1, 9);
  CHECK_THROWS_AS(
      irn::load_mnist_idx("idx_count_img.bin", "idx_count_lab.bin"),
      std::runtime_error);
  CHECK_THROWS_AS(irn::load_mnist_idx("idx_missing.bin", "idx_ok_lab.bin"),
                  std::runtime_error);

  for (const char* p :
       {"idx_ok_img.bin", "idx_ok_lab.bin", "idx_badmagic_img.bin",
        "idx_badmagic_lab.bin", "idx_badlab_img.bin", "idx_badlab_lab.bin",
        "idx_short_img.bin", "idx_short_lab.bin", "idx_count_img.bin",
        "idx_count_lab.bin"})
    std::remove(p);
}

TEST_CASE("bundled digit fixture loads as genuine 28x28 data") {
  const irn::Dataset ds =
      irn::load_mnist_idx(IRN_MNIST_IMAGES, IRN_MNIST_LABELS, 100);
  REQUIRE(ds.n_samples() == 100);
  REQUIRE(ds.samples.cols == 784);
  double peak = 0.0;
  for (int i = 0; i < 100; ++i) {
    CHECK(ds.labels[i] <= 9);
    for (int k = 0; k < 784; ++k) {
      CHECK(ds.samples(i, k) >= 0.0);
      CHECK(ds.samples(i, k) <= 1.0);
      peak = std::max(peak, ds.samples(i, k));
    }
  }
  CHECK(peak == 1.0);

  const irn::Dataset full = irn::load_mnist_idx(IRN_MNIST_IMAGES,
                                                IRN_MNIST_LABELS);
  CHECK(full.n_samples() >= 2000);
  std::vector<int> counts(10, 0);
  for (uint8_t l : full.labels) ++counts[l];
  for (int d = 0; d < 10; ++d) CHECK(counts[d] >= 100);
}

TEST_CASE("eigencoordinates round-trip through the operator basis") {
  irn::RngStream rng(515, 3, "dataset-op");
  Mat c(3, 5);
  for (double& v : c.a) v = rng.next_normal();
  const irn::EigenOperator op = irn::decompose_and_normalize(irn::gram(c));
  REQUIRE(op.n_retained() == 3);

  const irn::Dataset ds = irn::make_bimodal_dataset(op, 200, 606);
  REQUIRE(ds.samples.cols == 5);

  // Re-projecting the assembled samples reproduces the cached coords.
  irn::Dataset copy;
  copy.samples = ds.samples;
  irn::attach_eigencoords(copy, op);
  for (int i = 0; i < 200; ++i)
    for (int j = 0; j < 3; ++j)
      CHECK(std::fabs(copy.eigencoords(i, j) - ds.eigencoords(i, j)) <= 1e-10);

  // Statistics definition: std_dataset is the mean component spread.
  double acc = 0.0;
  for (double s : ds.component_std) acc += s;
  CHECK(ds.std_dataset == doctest::Approx(acc / 3.0).epsilon(1e-15));

  irn::Dataset wrong;
  wrong.samples = Mat(4, 2);
  CHECK_THROWS_AS(irn::attach_eigencoords(wrong, op), std::invalid_argument);
}

TEST_CASE("dataset container round-trips coordinates") {
  const irn::EigenOperator op = diag_operator({1.0, 0.4});
  const irn::Dataset ds = irn::make_bimodal_dataset(op, 64, 17);
  irn::save_dataset(ds, "dataset_roundtrip.bin");

  const irn::Dataset coords_only = irn::load_dataset("dataset_roundtrip.bin");
  REQUIRE(coords_only.eigencoords.rows == 64);
  REQUIRE(coords_only.eigencoords.cols == 2);
  CHECK(coords_only.eigencoords.a == ds.eigencoords.a);
  CHECK(coords_only.std_dataset == ds.std_dataset);
  CHECK(coords_only.samples.rows == 0);

  const irn::Dataset full = irn::load_dataset("dataset_roundtrip.bin", &op);
  CHECK(full.samples.a == ds.samples.a);

  const irn::EigenOperator narrow = diag_operator({1.0});
  CHECK_THROWS_AS(irn::load_dataset("dataset_roundtrip.bin", &narrow),
                  std::invalid_argument);

  {
    std::ofstream bad("dataset_badmagic.bin", std::ios::binary);
    bad.write("DSTX", 4);
  }
  CHECK_THROWS_AS(irn::load_dataset("dataset_badmagic.bin"),
                  std::runtime_error);
  {
    std::ifstream in("dataset_roundtrip.bin", std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
    std::ofstream out("dataset_short.bin", std::ios::binary);
    out.write(bytes.data(), (std::streamsize)bytes.size() - 4);
  }
  CHECK_THROWS_AS(irn::load_dataset("dataset_short.bin"), std::runtime_error);

  irn::Dataset no_coords;
  no_coords.samples = Mat(3, 3);
  CHECK_THROWS_AS(irn::save_dataset(no_coords, "dataset_nocoords.bin"),
                  std::invalid_argument);

  for (const char* p : {"dataset_roundtrip.bin", "dataset_badmagic.bin",
                        "dataset_short.bin"})
    std::remove(p);
}
