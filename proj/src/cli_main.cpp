// Batch command-line driver. Every subcommand reads a flat key=value
// configuration (file plus positional overrides), validates it against a
// schema, runs, and writes CSV/PGM artifacts whose first line records the
// configuration hash, seed, and version. Reruns with the same configuration
// produce byte-identical outputs.

#include <sys/wait.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <CLI11.hpp>

#include "irn/closed_form.hpp"
#include "irn/datasets.hpp"
#include "irn/diagnostics.hpp"
#include "irn/distributions.hpp"
#include "irn/iresnet.hpp"
#include "irn/linops.hpp"
#include "irn/rng.hpp"
#include "irn/slope_projection.hpp"
#include "irn/training.hpp"
#include "irn/vec.hpp"

namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "0.1.0";

// Exit codes: 0 success, 1 configuration error, 2 runtime failure,
// 3 failed acceptance check (oracle-suite only).
constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitCheck = 3;

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shortest round-trip decimal text, same convention as the CSV writers in
// the diagnostics module.
std::string fmt(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string hex16(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return std::string(buf);
}

uint64_t fnv1a(std::string_view s) {
  uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string trim(std::string_view s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string_view::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(a, b - a + 1));
}

enum class KeyKind { integer, unsigned64, real, text, choice, int_list, real_list, triple_list, quad_list };

struct KeySpec {
  std::string key;
  KeyKind kind;
  std::string def;
  std::string note;
  std::vector<std::string> choices;
};

long long parse_ll(const std::string& key, const std::string& v) {
  long long out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size())
    throw ConfigError("key '" + key + "' expects an integer, got '" + v + "'");
  return out;
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
  uint64_t out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size())
    throw ConfigError("key '" + key + "' expects an unsigned integer, got '" + v + "'");
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  double out = 0;
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc{} || res.ptr != v.data() + v.size())
    throw ConfigError("key '" + key + "' expects a number, got '" + v + "'");
  return out;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}

// Resolved configuration for one subcommand: schema-validated key=value map
// with typed accessors. The canonical form (sorted key=value lines) feeds the
// provenance hash so identical configurations hash identically regardless of
// how the values were supplied.
class Config {
 public:
  Config(std::vector<KeySpec> schema, const std::string& file,
         const std::vector<std::string>& overrides)
      : schema_(std::move(schema)) {
    for (const auto& ks : schema_) values_[ks.key] = ks.def;
    if (!file.empty()) {
      std::ifstream in(file);
      if (!in) throw ConfigError("cannot open config file '" + file + "'");
      std::string line;
      while (std::getline(in, line)) {
        size_t hash_pos = line.find('#');
        if (hash_pos != std::string::npos) line.resize(hash_pos);
        std::string t = trim(line);
        if (t.empty()) continue;
        apply(t, "config file " + file);
      }
    }
    for (const auto& ov : overrides) apply(ov, "command line");
    // Eager parse so type errors surface before any work starts.
    for (const auto& ks : schema_) validate(ks);
  }

  const std::string& text(const std::string& key) const { return at(key); }

  int integer(const std::string& key) const {
    return static_cast<int>(parse_ll(key, at(key)));
  }

  uint64_t unsigned64(const std::string& key) const { return parse_u64(key, at(key)); }

  double real(const std::string& key) const { return parse_real(key, at(key)); }

  std::vector<int> int_list(const std::string& key) const {
    std::vector<int> out;
    for (const auto& part : split(at(key), ','))
      out.push_back(static_cast<int>(parse_ll(key, part)));
    return out;
  }

  std::vector<double> real_list(const std::string& key) const {
    std::vector<double> out;
    for (const auto& part : split(at(key), ','))
      out.push_back(parse_real(key, part));
    return out;
  }

  // weight:mean:stddev triples separated by commas.
  irn::GaussianMixture1D mixture(const std::string& key) const {
    irn::GaussianMixture1D mix;
    for (const auto& part : split(at(key), ',')) {
      auto fields = split(part, ':');
      if (fields.size() != 3)
        throw ConfigError("key '" + key + "' expects weight:mean:stddev triples, got '" + part + "'");
      mix.comp.push_back({parse_real(key, fields[0]), parse_real(key, fields[1]),
                                parse_real(key, fields[2])});
    }
    irn::validate_mixture(mix);
    return mix;
  }

  // mean:stddev:lo:hi quadruples separated by commas.
  std::vector<irn::TruncatedGaussian> truncated_list(const std::string& key) const {
    std::vector<irn::TruncatedGaussian> out;
    for (const auto& part : split(at(key), ',')) {
      auto fields = split(part, ':');
      if (fields.size() != 4)
        throw ConfigError("key '" + key + "' expects mean:stddev:lo:hi quadruples, got '" + part + "'");
      irn::TruncatedGaussian tg;
      tg.mean = parse_real(key, fields[0]);
      tg.stddev = parse_real(key, fields[1]);
      tg.lo = parse_real(key, fields[2]);
      tg.hi = parse_real(key, fields[3]);
      if (!(tg.stddev > 0) || !(tg.lo < tg.hi))
        throw ConfigError("key '" + key + "' has an invalid truncated Gaussian '" + part + "'");
      out.push_back(tg);
    }
    return out;
  }

  uint64_t seed() const { return unsigned64("seed"); }

  // The hash covers every schema key except --jobs style runtime knobs,
  // which never appear in the schema to begin with.
  uint64_t hash() const {
    std::vector<std::string> keys;
    keys.reserve(values_.size());
    for (const auto& kv : values_) keys.push_back(kv.first);
    std::sort(keys.begin(), keys.end());
    std::string canon;
    for (const auto& k : keys) {
      canon += k;
      canon += '=';
      canon += values_.at(k);
      canon += '\n';
    }
    return fnv1a(canon);
  }

  std::string provenance() const {
    return "# config=" + hex16(hash()) + " seed=" + std::to_string(seed()) +
           " version=" + kVersion + "\n";
  }

 private:
  const std::string& at(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("internal: key '" + key + "' missing from schema");
    return it->second;
  }

  void apply(const std::string& assignment, const std::string& origin) {
    size_t eq = assignment.find('=');
    if (eq == std::string::npos)
      throw ConfigError("expected key=value in " + origin + ", got '" + assignment + "'");
    std::string key = trim(assignment.substr(0, eq));
    std::string value = trim(assignment.substr(eq + 1));
    if (key.empty()) throw ConfigError("empty key in " + origin);
    if (values_.find(key) == values_.end())
      throw ConfigError("unknown key '" + key + "' in " + origin);
    values_[key] = value;
  }

  void validate(const KeySpec& ks) const {
    const std::string& v = at(ks.key);
    switch (ks.kind) {
      case KeyKind::integer: parse_ll(ks.key, v); break;
      case KeyKind::unsigned64: parse_u64(ks.key, v); break;
      case KeyKind::real: parse_real(ks.key, v); break;
      case KeyKind::text: break;
      case KeyKind::choice: {
        if (std::find(ks.choices.begin(), ks.choices.end(), v) == ks.choices.end()) {
          std::string opts;
          for (const auto& c : ks.choices) opts += (opts.empty() ? "" : ", ") + c;
          throw ConfigError("key '" + ks.key + "' must be one of {" + opts + "}, got '" + v + "'");
        }
        break;
      }
      case KeyKind::int_list: int_list(ks.key); break;
      case KeyKind::real_list: real_list(ks.key); break;
      case KeyKind::triple_list: mixture(ks.key); break;
      case KeyKind::quad_list: truncated_list(ks.key); break;
    }
  }

  std::vector<KeySpec> schema_;
  std::map<std::string, std::string> values_;
};

// ---------------------------------------------------------------------------
// Schemas

void add_operator_keys(std::vector<KeySpec>& s) {
  s.push_back({"op", KeyKind::choice, "conv", "forward operator family", {"conv", "radon"}});
  s.push_back({"op.side", KeyKind::integer, "28", "image side length", {}});
  s.push_back({"op.kernel_size", KeyKind::integer, "9", "convolution kernel size (odd)", {}});
  // Zero-padding a truncated Gaussian puts sidelobes in the symbol; stddev
  // 1.3 is the widest round value whose 9x9/side-28 matrix stays PSD.
  s.push_back({"op.kernel_std", KeyKind::real, "1.3", "convolution kernel standard deviation", {}});
  s.push_back({"op.angles", KeyKind::integer, "30", "radon projection angle count", {}});
  s.push_back({"op.detectors", KeyKind::integer, "41", "radon detector bin count", {}});
  s.push_back({"op.load", KeyKind::text, "", "load a saved operator instead of building one", {}});
}

void add_dataset_keys(std::vector<KeySpec>& s, const std::string& n_def) {
  s.push_back({"data", KeyKind::choice, "bimodal", "dataset source", {"bimodal", "mnist"}});
  s.push_back({"data.n", KeyKind::integer, n_def, "bimodal sample count", {}});
  s.push_back({"data.images", KeyKind::text, "", "mnist images idx file", {}});
  s.push_back({"data.labels", KeyKind::text, "", "mnist labels idx file", {}});
  s.push_back({"data.limit", KeyKind::integer, "-1", "keep only the first samples (-1 for all)", {}});
  s.push_back({"data.load", KeyKind::text, "", "load a saved dataset instead of sampling", {}});
}

void add_grid_keys(std::vector<KeySpec>& s, const std::string& l_def, const std::string& m_def) {
  s.push_back({"grid.l", KeyKind::int_list, l_def, "noise level indices (0..6)", {}});
  s.push_back({"grid.m", KeyKind::int_list, m_def, "Lipschitz bound indices (1..5)", {}});
}

void add_train_keys(std::vector<KeySpec>& s) {
  s.push_back({"train.lr", KeyKind::real, "0.001", "Adam learning rate", {}});
  s.push_back({"train.batch", KeyKind::integer, "256", "minibatch size", {}});
  s.push_back({"train.epochs", KeyKind::integer, "200", "training epochs", {}});
  s.push_back({"train.unroll", KeyKind::integer, "30", "fixed-point unroll steps (reconstruction loss)", {}});
  s.push_back({"train.clip", KeyKind::real, "1000", "gradient clipping threshold", {}});
}

void add_common_keys(std::vector<KeySpec>& s) {
  s.push_back({"out", KeyKind::text, "out", "output directory", {}});
  s.push_back({"seed", KeyKind::unsigned64, "0", "master seed", {}});
}

void add_ckpt_keys(std::vector<KeySpec>& s) {
  s.push_back({"ckpt_dir", KeyKind::text, "", "checkpoint directory (defaults to out)", {}});
  s.push_back({"mode", KeyKind::choice, "both", "which training modes to evaluate",
               {"approx", "reco", "both"}});
}

std::vector<KeySpec> schema_for(const std::string& name) {
  std::vector<KeySpec> s;
  add_common_keys(s);
  if (name == "train-approx" || name == "train-reco") {
    add_operator_keys(s);
    add_dataset_keys(s, "2000");
    add_grid_keys(s, "0", "2");
    add_train_keys(s);
  } else if (name == "solutions-1d") {
    s.push_back({"sigma_sq", KeyKind::real_list, "0.205,0.075",
                 "squared singular values of the diagonal operator (each in (0,1])", {}});
    s.push_back({"data.n", KeyKind::integer, "20000", "bimodal sample count", {}});
    s.push_back({"curve_points", KeyKind::integer, "201", "output points per curve", {}});
    add_grid_keys(s, "0,6,2", "2");
    add_train_keys(s);
  } else if (name == "filters") {
    add_operator_keys(s);
    add_dataset_keys(s, "2000");
    add_grid_keys(s, "0,6,2", "1,2,3");
    add_ckpt_keys(s);
  } else if (name == "reconstruct") {
    add_operator_keys(s);
    add_dataset_keys(s, "2000");
    add_grid_keys(s, "0,6,4,3", "1,2,3");
    add_ckpt_keys(s);
    s.push_back({"sample", KeyKind::integer, "0", "dataset sample index to reconstruct", {}});
  } else if (name == "convergence") {
    add_operator_keys(s);
    add_dataset_keys(s, "2000");
    add_grid_keys(s, "0", "1,2,3,4");
    add_ckpt_keys(s);
  } else if (name == "errors-vs-noise" || name == "lipschitz") {
    add_operator_keys(s);
    add_dataset_keys(s, "2000");
    add_grid_keys(s, "0,1,2,3,4,5,6", "1,2,3,4,5");
    add_ckpt_keys(s);
  } else if (name == "project-1d") {
    s.push_back({"sigma_sq", KeyKind::real, "0.075", "squared singular value of the component", {}});
    s.push_back({"m", KeyKind::integer, "2", "Lipschitz bound index (1..5)", {}});
    s.push_back({"l", KeyKind::integer, "2", "noise level index (0..6)", {}});
    s.push_back({"noise_w", KeyKind::real, "-1",
                 "absolute noise standard deviation (overrides l when >= 0)", {}});
    s.push_back({"prior", KeyKind::triple_list, "0.35:-0.6:0.15,0.65:0.6:0.15",
                 "prior mixture as weight:mean:stddev triples", {}});
    s.push_back({"grid_n", KeyKind::integer, "2001", "projection grid size", {}});
  } else if (name == "limit-check") {
    s.push_back({"op.eigenvalues", KeyKind::real_list, "1",
                 "retained squared singular values, nonincreasing in (0,1]", {}});
    s.push_back({"op.dim", KeyKind::integer, "2", "ambient dimension (> retained count)", {}});
    s.push_back({"prior", KeyKind::quad_list, "0.2:0.4:-1:1,0.3:0.5:-1:1",
                 "per-coordinate truncated Gaussians as mean:stddev:lo:hi", {}});
    s.push_back({"z", KeyKind::real_list, "0.5,0", "observation vector", {}});
    s.push_back({"levels", KeyKind::integer, "10", "number of noise levels delta=(1/2)^k", {}});
  } else if (name == "oracle-suite") {
    // Common keys only.
  } else {
    throw std::logic_error("no schema for subcommand " + name);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Builders shared by subcommands

irn::EigenOperator build_operator(const Config& c) {
  const std::string load = c.text("op.load");
  if (!load.empty()) {
    if (!fs::exists(load)) throw ConfigError("op.load file '" + load + "' does not exist");
    return irn::load_operator(load);
  }
  try {
    if (c.text("op") == "conv") {
      const int side = c.integer("op.side");
      const int ksize = c.integer("op.kernel_size");
      const double kstd = c.real("op.kernel_std");
      if (side < 1) throw ConfigError("op.side must be positive");
      if (ksize < 1 || ksize % 2 == 0)
        throw ConfigError("op.kernel_size must be odd and positive");
      if (!(kstd > 0)) throw ConfigError("op.kernel_std must be positive");
      irn::Mat kernel = irn::gaussian_kernel(ksize, kstd);
      return irn::decompose_and_normalize(irn::build_convolution_operator(kernel, side));
    }
    const int side = c.integer("op.side");
    const int angles = c.integer("op.angles");
    const int detectors = c.integer("op.detectors");
    if (side < 1 || angles < 1 || detectors < 1)
      throw ConfigError("op.side, op.angles and op.detectors must be positive");
    return irn::decompose_and_normalize(irn::build_radon_normal_operator(side, angles, detectors));
  } catch (const std::invalid_argument& e) {
    // Rejected construction parameters are configuration problems, not
    // runtime failures.
    throw ConfigError(e.what());
  }
}

irn::Dataset build_dataset(const Config& c, const irn::EigenOperator& op) {
  const std::string load = c.text("data.load");
  if (!load.empty()) {
    if (!fs::exists(load)) throw ConfigError("data.load file '" + load + "' does not exist");
    return irn::load_dataset(load, &op);
  }
  if (c.text("data") == "mnist") {
    const std::string images = c.text("data.images");
    const std::string labels = c.text("data.labels");
    if (images.empty() || labels.empty())
      throw ConfigError("data=mnist requires data.images and data.labels");
    if (!fs::exists(images)) throw ConfigError("data.images file '" + images + "' does not exist");
    if (!fs::exists(labels)) throw ConfigError("data.labels file '" + labels + "' does not exist");
    irn::Dataset ds = irn::load_mnist_idx(images, labels, c.integer("data.limit"));
    irn::attach_eigencoords(ds, op);
    return ds;
  }
  const int n = c.integer("data.n");
  if (n < 1) throw ConfigError("data.n must be positive");
  return irn::make_bimodal_dataset(op, n, c.seed());
}

std::vector<int> noise_indices(const Config& c) {
  std::vector<int> l = c.int_list("grid.l");
  for (int v : l)
    if (v < 0 || v > 6) throw ConfigError("grid.l entries must lie in 0..6");
  if (l.empty()) throw ConfigError("grid.l must not be empty");
  return l;
}

std::vector<int> bound_indices(const Config& c) {
  std::vector<int> m = c.int_list("grid.m");
  for (int v : m)
    if (v < 1 || v > 5) throw ConfigError("grid.m entries must lie in 1..5");
  if (m.empty()) throw ConfigError("grid.m must not be empty");
  return m;
}

std::vector<std::string> selected_modes(const Config& c) {
  const std::string& m = c.text("mode");
  if (m == "both") return {"approx", "reco"};
  return {m};
}

fs::path ensure_out_dir(const Config& c) {
  fs::path out(c.text("out"));
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec && !fs::is_directory(out))
    throw std::runtime_error("cannot create output directory '" + out.string() + "'");
  return out;
}

fs::path checkpoint_dir(const Config& c) {
  std::string dir = c.text("ckpt_dir");
  if (dir.empty()) dir = c.text("out");
  return fs::path(dir);
}

std::string tag(const std::string& mode, int l, int m) {
  return mode + "_l" + std::to_string(l) + "_m" + std::to_string(m);
}

irn::DiagonalIResNet load_net_or_fail(const fs::path& dir, const std::string& mode, int l, int m,
                                      const irn::EigenOperator& op) {
  fs::path p = dir / ("ckpt_" + tag(mode, l, m) + ".irn");
  if (!fs::exists(p))
    throw ConfigError("checkpoint '" + p.string() + "' does not exist; run train-" + mode + " first");
  return irn::load_checkpoint(p.string(), &op);
}

std::ofstream open_csv(const fs::path& path, const Config& c) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << c.provenance();
  return out;
}

void write_pgm(const fs::path& path, const double* px, int side) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << "P5\n" << side << ' ' << side << "\n255\n";
  for (int i = 0; i < side * side; ++i) {
    double v = std::clamp(px[i], 0.0, 1.0);
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
  }
}

// ---------------------------------------------------------------------------
// train-approx / train-reco

int run_train(const Config& c, irn::TrainMode mode, int jobs) {
  const irn::ExperimentGrid grid = irn::experiment_grid();
  const std::vector<int> ls = noise_indices(c);
  const std::vector<int> ms = bound_indices(c);
  const int epochs = c.integer("train.epochs");
  if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
  if (c.integer("train.batch") < 1) throw ConfigError("train.batch must be positive");
  if (!(c.real("train.lr") > 0)) throw ConfigError("train.lr must be positive");
  if (c.integer("train.unroll") < 1) throw ConfigError("train.unroll must be positive");

  const irn::EigenOperator op = build_operator(c);
  const irn::Dataset ds = build_dataset(c, op);
  const fs::path out = ensure_out_dir(c);
  const std::string mode_name = mode == irn::TrainMode::approx ? "approx" : "reco";

  for (int m : ms) {
    for (int l : ls) {
      const double L = grid.lipschitz_bounds[m - 1];
      const double delta_hat = grid.noise_levels[l];
      // Same seed for every (l, m) cell: runs across the grid start from the
      // same initialization, so differences are attributable to training.
      irn::DiagonalIResNet net = irn::make_diagonal_iresnet(L, op.n_retained(), c.seed(), &op);
      irn::NoisyPairs pairs = irn::make_noisy_pairs(ds, op, delta_hat, c.seed());

      const fs::path loss_csv = out / ("loss_" + tag(mode_name, l, m) + ".csv");
      {
        std::ofstream head = open_csv(loss_csv, c);
        head << "epoch,component,loss,lipschitz\n";
      }
      irn::TrainConfig tc;
      tc.mode = mode;
      tc.learning_rate = c.real("train.lr");
      tc.batch_size = c.integer("train.batch");
      tc.epochs = epochs;
      tc.unroll_steps = c.integer("train.unroll");
      tc.seed = c.seed();
      tc.L = L;
      tc.noise_level = delta_hat;
      tc.grad_clip = c.real("train.clip");
      tc.workers = jobs;
      tc.progress_csv = loss_csv.string();
      irn::TrainTrace trace = irn::train(net, pairs, tc);

      const fs::path ckpt = out / ("ckpt_" + tag(mode_name, l, m) + ".irn");
      irn::save_checkpoint(net, ckpt.string());
      std::cout << "trained " << tag(mode_name, l, m) << " loss=" << fmt(trace.loss)
                << " checkpoint=" << ckpt.string() << '\n';
    }
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// solutions-1d: trained and analytic pointwise solution curves on a diagonal
// operator whose retained spectrum is {1, sigma_sq...}.

int run_solutions(const Config& c, int jobs) {
  const irn::ExperimentGrid grid = irn::experiment_grid();
  const std::vector<int> ls = noise_indices(c);
  const std::vector<int> ms = bound_indices(c);
  std::vector<double> sig = c.real_list("sigma_sq");
  for (double s : sig)
    if (!(s > 0) || s > 1) throw ConfigError("sigma_sq entries must lie in (0,1]");
  std::sort(sig.begin(), sig.end(), std::greater<double>());
  const int n = c.integer("data.n");
  if (n < 2) throw ConfigError("data.n must be at least 2");
  const int curve_points = c.integer("curve_points");
  if (curve_points < 2) throw ConfigError("curve_points must be at least 2");
  const int epochs = c.integer("train.epochs");
  if (epochs < 0) throw ConfigError("train.epochs must be >= 0");

  irn::EigenOperator op;
  op.dim = 1 + static_cast<int>(sig.size());
  op.eigenvalues.push_back(1.0);
  for (double s : sig) op.eigenvalues.push_back(s);
  op.eigenvectors = irn::Mat(op.dim, op.dim);
  for (int i = 0; i < op.dim; ++i) op.eigenvectors(i, i) = 1.0;
  op.nullspace_dim = 0;

  const irn::GaussianMixture1D prior = irn::bimodal_mixture();
  const auto prior_mom = irn::mixture_moments(prior);
  const irn::Dataset ds = irn::make_bimodal_dataset(op, n, c.seed());
  const fs::path out = ensure_out_dir(c);

  // Dense analytic grid with the requested output points as an exact
  // subgrid, so curve_points only changes sampling density, not values.
  const int stride = std::max(1, (2000 + curve_points - 2) / (curve_points - 1));
  const int dense_n = (curve_points - 1) * stride + 1;

  for (int m : ms) {
    for (int l : ls) {
      const double L = grid.lipschitz_bounds[m - 1];
      const double delta_hat = grid.noise_levels[l];
      irn::NoisyPairs pairs = irn::make_noisy_pairs(ds, op, delta_hat, c.seed());

      irn::TrainConfig tc;
      tc.learning_rate = c.real("train.lr");
      tc.batch_size = c.integer("train.batch");
      tc.epochs = epochs;
      tc.unroll_steps = c.integer("train.unroll");
      tc.seed = c.seed();
      tc.L = L;
      tc.noise_level = delta_hat;
      tc.grad_clip = c.real("train.clip");
      tc.workers = jobs;

      irn::DiagonalIResNet net_a = irn::make_diagonal_iresnet(L, op.n_retained(), c.seed(), &op);
      tc.mode = irn::TrainMode::approx;
      irn::train(net_a, pairs, tc);
      irn::DiagonalIResNet net_r = irn::make_diagonal_iresnet(L, op.n_retained(), c.seed(), &op);
      tc.mode = irn::TrainMode::reco;
      irn::train(net_r, pairs, tc);

      for (int j = 0; j < op.n_retained(); ++j) {
        const double sigma_sq = op.eigenvalues[j];
        const double delta = pairs.delta;
        const irn::NoiseSpec noise{delta};

        const irn::AffineSolution approx_star =
            irn::solve_approx_affine(sigma_sq, L, prior_mom.first);
        irn::ProjectionScenario scen =
            irn::build_figure4_scenario(L, prior, noise, sigma_sq, dense_n);
        irn::ProjectionResult proj = irn::project_constrained(scen.psi_hat, scen.p_z, L);
        const irn::PosteriorMeanOracle oracle{prior, noise, sigma_sq};

        const fs::path csv =
            out / ("solutions_l" + std::to_string(l) + "_m" + std::to_string(m) + "_c" +
                   std::to_string(j) + ".csv");
        std::ofstream f = open_csv(csv, c);
        f << "# sigma_sq=" << fmt(sigma_sq) << " L=" << fmt(L) << " delta=" << fmt(delta) << '\n';
        f << "z,approx,reco,approx_star,reco_star,posterior_mean,p_z\n";
        for (int i = 0; i < curve_points; ++i) {
          const int node = i * stride;
          const double z = scen.psi_hat.grid[node];
          // Trained curves: the approximation network maps x to z, so its
          // solution map is the network inverse; the reconstruction network
          // trains the inverse directly.
          const double approx_val = irn::invert_component(net_a, j, z);
          const double reco_val = irn::invert_component(net_r, j, z);
          const double star_a = (z + approx_star.b) / (1.0 - approx_star.m);
          f << fmt(z) << ',' << fmt(approx_val) << ',' << fmt(reco_val) << ',' << fmt(star_a)
            << ',' << fmt(proj.psi.values[node]) << ',' << fmt(oracle(z)) << ','
            << fmt(scen.p_z.values[node]) << '\n';
        }
      }
      std::cout << "solutions " << tag("grid", l, m) << " written\n";
    }
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// filters

int run_filters(const Config& c, int) {
  const irn::ExperimentGrid grid = irn::experiment_grid();
  const irn::EigenOperator op = build_operator(c);
  const irn::Dataset ds = build_dataset(c, op);
  const fs::path out = ensure_out_dir(c);
  const fs::path ckpts = checkpoint_dir(c);
  const irn::Vec q_grid = irn::default_q_grid();

  for (const std::string& mode : selected_modes(c)) {
    for (int m : bound_indices(c)) {
      for (int l : noise_indices(c)) {
        irn::DiagonalIResNet net = load_net_or_fail(ckpts, mode, l, m, op);
        irn::FilterProfile prof = irn::extract_filter_surface(net, op, ds, q_grid);
        const fs::path csv = out / ("filter_" + tag(mode, l, m) + ".csv");
        std::ofstream f = open_csv(csv, c);
        irn::write_filter_surface_csv(f, prof, grid.noise_levels[l], mode);
        std::cout << "filter surface " << tag(mode, l, m) << " written\n";
      }
    }
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------
// reconstruct: one sample, image-space noise, PGM images plus an error table.

int run_reconstruct(const Config& c, int) {
  const irn::ExperimentGrid grid = irn::experiment_grid();
  const irn::EigenOperator op = build_operator(c);
  const irn::Dataset ds = build_dataset(c, op);
  if (ds.samples.rows == 0)
    throw ConfigError("reconstruct needs full image samples; the dataset has only coordinates");
  const int sample = c.integer("sample");
  if (sample < 0 || sample >= ds.n_samples())
    throw ConfigError("sample index out of range (dataset has " +
                      std::to_string(ds.n_samples()) + " samples)");
  const fs::path out = ensure_out_dir(c);
  const fs::path ckpts = checkpoint_dir(c);

  const int dim = op.dim;
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(dim))));
  if (side * side != dim) throw ConfigError("reconstruct needs a square image dimension");

  irn::Vec x(ds.samples.row(sample), ds.samples.row(sample) + dim);
  double px_min = x[0], px_max = x[0];
  for (double v : x) {
    px_min = std::min(px_min, v);
    px_max = std::max(px_max, v);
  }
  write_pgm(out / "truth.pgm", x.data(), side);

  // One noise draw shared across every noise level and checkpoint, so rows
  // differ only through delta and the network.
  irn::RngStream rng(c.seed(), static_cast<uint64_t>(sample), "reconstruct-noise");
  irn::Vec eps(dim);
  for (double& e : eps) e = rng.next_normal();

  const irn::Vec ax = op.apply(x);
  const std::vector<int> ls = noise_indices(c);
  std::map<int, irn::Vec> observations;
  for (int l : ls) {
    const double delta = grid.noise_levels[l] * ds.std_dataset;
    irn::Vec z = ax;
    for (int i = 0; i < dim; ++i) z[i] += delta * eps[i];
    observations[l] = z;
    write_pgm(out / ("observation_l" + std::to_string(l) + ".pgm"), z.data(), side);
  }

  const fs::path table = out / "table_reconstruct.csv";
  std::ofstream f = open_csv(table, c);
  f << "mode,l,m,L,delta_hat,mse,ssim\n";
  const bool ssim_ok = side >= 11 && px_max > px_min;
  for (const std::string& mode : selected_modes(c)) {
    for (int l : ls) {
      for (int m : bound_indices(c)) {
        irn::DiagonalIResNet net = load_net_or_fail(ckpts, mode, l, m, op);
        auto [rec, iters] = irn::invert_fixed_point(net, observations[l],
                                                    irn::kEvalMaxIterations,
                                                    irn::kEvalInversionTol);
        (void)iters;
        double mse = 0;
        for (int i = 0; i < dim; ++i) {
          const double d = x[i] - rec[i];
          mse += d * d;
        }
        write_pgm(out / ("reco_" + tag(mode, l, m) + ".pgm"), rec.data(), side);
        f << mode << ',' << l << ',' << m << ',' << fmt(grid.lipschitz_bounds[m - 1]) << ','
          << fmt(grid.noise_levels[l]) << ',' << fmt(mse);
        if (ssim_ok)
          f << ',' << fmt(irn::ssim_index(x, rec, side, px_max - px_min));
        else
          f << ',';
        f << '\n';
      }
    }
  }
  std::cout << "reconstruction table written to " << table.string() << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// convergence / errors-vs-noise / lipschitz: per-checkpoint scalar metrics in
// one long-format CSV each.

int run_convergence(const Config& c, int) {
  const irn::ExperimentGrid grid = irn::experiment_grid();
  const irn::EigenOperator op = build_operator(c);
  const irn::Dataset ds = build_dataset(c, op);
  const fs::path out = ensure_out_dir(c);
  const fs::path ckpts = checkpoint_dir(c);

  std::ofstream f = open_csv(out / "convergence.csv", c);
  bool header = true;
  for (const std::string& mode : selected_modes(c)) {
    for (int m : bound_indices(c)) {
      for (int l : noise_indices(c)) {
        irn::DiagonalIResNet net = load_net_or_fail(ckpts, mode, l, m, op);
        irn::ApproxErrorReport rep = irn::approx_errors(net, ds, op, grid.noise_levels[l]);
        irn::write_error_row_csv(f, rep.L, rep.delta_hat, "E_mean", rep.forward_mean, mode, header);
        header = false;
        irn::write_error_row_csv(f, rep.L, rep.delta_hat, "Etilde_mean", rep.inverse_mean, mode,
                                 false);
      }
    }
  }
  std::cout << "convergence table written\n";
  return kExitOk;
}

int run_errors_vs_noise(const Config& c, int) {
  const irn::ExperimentGrid grid = irn::experiment_grid();
  const irn::EigenOperator op = build_operator(c);
  const irn::Dataset ds = build_dataset(c, op);
  const fs::path out = ensure_out_dir(c);
  const fs::path ckpts = checkpoint_dir(c);

  std::ofstream f = open_csv(out / "errors_vs_noise.csv", c);
  bool header = true;
  for (const std::string& mode : selected_modes(c)) {
    for (int m : bound_indices(c)) {
      for (int l : noise_indices(c)) {
        irn::DiagonalIResNet net = load_net_or_fail(ckpts, mode, l, m, op);
        if (mode == "approx") {
          irn::ApproxErrorReport rep = irn::approx_errors(net, ds, op, grid.noise_levels[l]);
          irn::write_error_row_csv(f, rep.L, rep.delta_hat, "E_mean", rep.forward_mean, mode,
                                   header);
          header = false;
          irn::write_error_row_csv(f, rep.L, rep.delta_hat, "Etilde_mean", rep.inverse_mean, mode,
                                   false);
        } else {
          irn::RecoErrorReport rep = irn::reco_errors(net, ds, op, grid.noise_levels[l], c.seed());
          irn::write_error_row_csv(f, rep.L, rep.delta_hat, "mse", rep.mse, mode, header);
          header = false;
          if (rep.has_ssim)
            irn::write_error_row_csv(f, rep.L, rep.delta_hat, "ssim", rep.ssim, mode, false);
        }
      }
    }
  }
  std::cout << "error table written\n";
  return kExitOk;
}

int run_lipschitz(const Config& c, int) {
  const irn::EigenOperator op = build_operator(c);
  const irn::ExperimentGrid grid = irn::experiment_grid();
  const irn::Dataset ds = build_dataset(c, op);
  const fs::path out = ensure_out_dir(c);
  const fs::path ckpts = checkpoint_dir(c);

  std::ofstream f = open_csv(out / "lipschitz.csv", c);
  bool header = true;
  for (const std::string& mode : selected_modes(c)) {
    for (int m : bound_indices(c)) {
      for (int l : noise_indices(c)) {
        irn::DiagonalIResNet net = load_net_or_fail(ckpts, mode, l, m, op);
        irn::LipschitzReport rep = irn::lipschitz_track(net, ds);
        irn::write_error_row_csv(f, net.L, grid.noise_levels[l], "lipschitz", rep.lipschitz, mode,
                                 header);
        header = false;
      }
    }
  }
  std::cout << "slope table written\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// project-1d: data-free constrained projection of the posterior mean with the
// optimality certificate printed to stdout.

int run_project(const Config& c, int) {
  const irn::ExperimentGrid grid = irn::experiment_grid();
  const double sigma_sq = c.real("sigma_sq");
  if (!(sigma_sq > 0) || sigma_sq > 1) throw ConfigError("sigma_sq must lie in (0,1]");
  const int m = c.integer("m");
  if (m < 1 || m > 5) throw ConfigError("m must lie in 1..5");
  const int l = c.integer("l");
  if (l < 0 || l > 6) throw ConfigError("l must lie in 0..6");
  const int grid_n = c.integer("grid_n");
  if (grid_n < 11) throw ConfigError("grid_n must be at least 11");
  const irn::GaussianMixture1D prior = c.mixture("prior");

  const double L = grid.lipschitz_bounds[m - 1];
  double w = c.real("noise_w");
  if (w < 0) {
    const auto mom = irn::mixture_moments(prior);
    w = grid.noise_levels[l] * std::sqrt(mom.second);
  }
  if (!(w > 0)) throw ConfigError("the noise level must be positive; set noise_w or l > 0");

  const fs::path out = ensure_out_dir(c);
  irn::ProjectionScenario scen =
      irn::build_figure4_scenario(L, prior, irn::NoiseSpec{w}, sigma_sq, grid_n);
  irn::ProjectionResult res = irn::project_constrained(scen.psi_hat, scen.p_z, L);
  irn::ProjectionCertificate cert =
      irn::certify_pontryagin(res.psi, scen.psi_hat, scen.p_z, L);

  {
    std::ofstream f = open_csv(out / "projection.csv", c);
    f << "z,psi_hat,psi_star,lambda,p_z\n";
    for (int i = 0; i < grid_n; ++i) {
      f << fmt(scen.psi_hat.grid[i]) << ',' << fmt(scen.psi_hat.values[i]) << ','
        << fmt(res.psi.values[i]) << ',' << fmt(cert.lambda.values[i]) << ','
        << fmt(scen.p_z.values[i]) << '\n';
    }
  }
  {
    std::ofstream f = open_csv(out / "projection_segments.csv", c);
    f << "z_left,z_right,slope,lower_active,upper_active\n";
    for (int i = 0; i + 1 < grid_n; ++i) {
      const double slope =
          (res.psi.values[i + 1] - res.psi.values[i]) / (res.psi.grid[i + 1] - res.psi.grid[i]);
      f << fmt(res.psi.grid[i]) << ',' << fmt(res.psi.grid[i + 1]) << ',' << fmt(slope) << ','
        << int(cert.lower_active[i]) << ',' << int(cert.upper_active[i]) << '\n';
    }
  }
  std::cout << "max_violation=" << fmt(cert.max_violation)
            << " duality_gap=" << fmt(res.duality_gap) << " converged=" << (res.converged ? 1 : 0)
            << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// limit-check: small-noise limit of the data-consistent posterior mean.

int run_limit_check(const Config& c, int) {
  std::vector<double> ev = c.real_list("op.eigenvalues");
  if (ev.empty()) throw ConfigError("op.eigenvalues must not be empty");
  for (size_t i = 0; i < ev.size(); ++i) {
    if (!(ev[i] > 0) || ev[i] > 1) throw ConfigError("op.eigenvalues entries must lie in (0,1]");
    if (i > 0 && ev[i] > ev[i - 1]) throw ConfigError("op.eigenvalues must be nonincreasing");
  }
  const int dim = c.integer("op.dim");
  if (dim <= static_cast<int>(ev.size()))
    throw ConfigError("op.dim must exceed the retained eigenvalue count");
  const std::vector<irn::TruncatedGaussian> prior = c.truncated_list("prior");
  if (static_cast<int>(prior.size()) != dim)
    throw ConfigError("prior needs exactly op.dim truncated Gaussians");
  const std::vector<double> z = c.real_list("z");
  if (static_cast<int>(z.size()) != dim) throw ConfigError("z needs exactly op.dim entries");
  const int levels = c.integer("levels");
  if (levels < 1 || levels > 40) throw ConfigError("levels must lie in 1..40");

  irn::EigenOperator op;
  op.dim = dim;
  op.eigenvalues = ev;
  op.eigenvectors = irn::Mat(dim, static_cast<int>(ev.size()));
  for (int j = 0; j < static_cast<int>(ev.size()); ++j) op.eigenvectors(j, j) = 1.0;
  op.nullspace_dim = dim - static_cast<int>(ev.size());

  irn::Mat null_basis = irn::nullspace_basis(op);
  irn::Vec deltas(levels);
  for (int k = 0; k < levels; ++k) deltas[k] = std::pow(0.5, k + 1);

  const fs::path out = ensure_out_dir(c);
  irn::LimitCheckReport rep = irn::posterior_limit_check(op, null_basis, prior, deltas, z);
  std::ofstream f = open_csv(out / "limit_check.csv", c);
  irn::write_limit_check_csv(f, rep);
  for (const auto& row : rep.rows)
    std::cout << "delta=" << fmt(row.delta) << " distance=" << fmt(row.distance)
              << " in_support=" << (row.in_support ? 1 : 0) << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// oracle-suite: self-contained numerical checks of the analytic results the
// library implements. Any failure exits with code 3.

struct CheckResult {
  std::string name;
  double value;
  double threshold;
  bool pass;
};

// Empirical mean of ((1-m) x - b - z)^2 collapses to five sample moments, so
// grid search costs O(1) per node after one pass over the data.
struct QuadraticObjective {
  double xx = 0, x1 = 0, zz = 0, z1 = 0, xz = 0;
  int n = 0;

  static QuadraticObjective from(const irn::Vec& x, const irn::Vec& z) {
    QuadraticObjective q;
    q.n = static_cast<int>(x.size());
    for (int i = 0; i < q.n; ++i) {
      q.xx += x[i] * x[i];
      q.x1 += x[i];
      q.zz += z[i] * z[i];
      q.z1 += z[i];
      q.xz += x[i] * z[i];
    }
    q.xx /= q.n;
    q.x1 /= q.n;
    q.zz /= q.n;
    q.z1 /= q.n;
    q.xz /= q.n;
    return q;
  }

  // mean((a x - b - z)^2) for a = coefficient on x.
  double eval(double a, double b) const {
    return a * a * xx - 2.0 * a * xz + zz - 2.0 * b * (a * x1 - z1) + b * b;
  }
};

struct GridBest {
  double a = 0, b = 0;
};

GridBest grid_search(const QuadraticObjective& q, double a_lo, double a_hi, double step) {
  GridBest best;
  double best_val = std::numeric_limits<double>::infinity();
  const int na = static_cast<int>(std::floor((a_hi - a_lo) / step)) + 1;
  for (int ia = 0; ia < na; ++ia) {
    const double a = a_lo + ia * step;
    // For fixed a the optimum over b is known in closed form; searching b on
    // a grid too keeps this an honest discrete search.
    for (double b = -5.0; b <= 5.0 + 1e-12; b += step) {
      const double v = q.eval(a, b);
      if (v < best_val) {
        best_val = v;
        best = {a, b};
      }
    }
  }
  return best;
}

// Paired-difference score: positive when the grid point beats the analytic
// optimum on this sample, in standard-error units.
double improvement_score(const irn::Vec& x, const irn::Vec& z, double a_star, double b_star,
                         double a_grid, double b_grid) {
  const int n = static_cast<int>(x.size());
  double mean = 0;
  irn::Vec d(n);
  for (int i = 0; i < n; ++i) {
    const double rs = a_star * x[i] - b_star - z[i];
    const double rg = a_grid * x[i] - b_grid - z[i];
    d[i] = rs * rs - rg * rg;
    mean += d[i];
  }
  mean /= n;
  double var = 0;
  for (int i = 0; i < n; ++i) {
    const double dd = d[i] - mean;
    var += dd * dd;
  }
  var /= (n - 1);
  const double se = std::sqrt(var / n);
  if (se < 1e-300) return 0.0;
  return mean / se;
}

irn::GaussianMixture1D random_mixture(irn::RngStream& rng) {
  irn::GaussianMixture1D mix;
  const int k = 1 + static_cast<int>(rng.next_u64() % 3);
  double total = 0;
  for (int i = 0; i < k; ++i) {
    irn::MixtureComponent comp;
    comp.weight = 0.2 + rng.next_double();
    comp.mean = -3.0 + 6.0 * rng.next_double();
    comp.stddev = 0.05 + 1.95 * rng.next_double();
    total += comp.weight;
    mix.comp.push_back(comp);
  }
  for (auto& comp : mix.comp) comp.weight /= total;
  return mix;
}

void check_affine_optimality(std::vector<CheckResult>& results, uint64_t seed) {
  const int tuples = 20, n = 20000;
  const double step = 1e-2;
  double worst_approx = 0, worst_reco = 0, worst_corr = 0;

  for (int t = 0; t < tuples; ++t) {
    irn::RngStream rng(seed, 100 + t, "oracle-affine");
    const irn::GaussianMixture1D mix = random_mixture(rng);
    const auto mom = irn::mixture_moments(mix);
    const double sigma_sq = 0.05 + 0.9 * rng.next_double();
    const double L = 0.05 + 0.85 * rng.next_double();
    const double w = 0.05 + 1.95 * rng.next_double();

    irn::Vec x(n), z(n);
    for (int i = 0; i < n; ++i) {
      x[i] = irn::sample_mixture(mix, rng);
      z[i] = sigma_sq * x[i] + w * rng.next_normal();
    }
    const QuadraticObjective q = QuadraticObjective::from(x, z);

    // Approximation training: residual (1-m) x - b - z with |m| <= L.
    {
      const irn::AffineSolution sol = irn::solve_approx_affine(sigma_sq, L, mom.first);
      const GridBest g = grid_search(q, 1.0 - L, 1.0 + L, step);
      worst_approx = std::max(
          worst_approx, improvement_score(x, z, 1.0 - sol.m, sol.b, g.a, g.b));
    }
    // Reconstruction training: residual m z + b - x with slope in the
    // inverse box.
    {
      const irn::AffineSolution sol =
          irn::solve_reco_affine(sigma_sq, L, mom.first, mom.second, w * w);
      QuadraticObjective qr = QuadraticObjective::from(z, x);
      const GridBest g = grid_search(qr, 1.0 / (1.0 + L), 1.0 / (1.0 - L), step);
      worst_reco = std::max(
          worst_reco, improvement_score(z, x, sol.m, -sol.b, g.a, g.b));
    }
    // Correlated noise, requires L < 1 - sigma_sq.
    {
      const double sig_c = 0.05 + 0.55 * rng.next_double();
      const double L_c = 0.05 + 0.85 * (1.0 - sig_c - 0.05) * rng.next_double();
      const double rho = -0.5 + rng.next_double();
      const double wv = 0.05 + 0.95 * rng.next_double();
      irn::JointMoments jm;
      jm.mu_x = mom.first;
      jm.mu_eta = rho * mom.first;
      jm.var_x = mom.second;
      jm.var_eta = rho * rho * mom.second + wv * wv;
      jm.cov_x_eta = rho * mom.second;
      irn::Vec zc(n);
      for (int i = 0; i < n; ++i)
        zc[i] = sig_c * x[i] + rho * x[i] + wv * rng.next_normal();
      const irn::AffineSolution sol = irn::solve_approx_affine_correlated(sig_c, L_c, jm);
      QuadraticObjective qc = QuadraticObjective::from(x, zc);
      const GridBest g = grid_search(qc, 1.0 - L_c, 1.0 + L_c, step);
      worst_corr = std::max(
          worst_corr, improvement_score(x, zc, 1.0 - sol.m, sol.b, g.a, g.b));
    }
  }
  results.push_back({"approx_affine_optimality", worst_approx, 3.0, worst_approx <= 3.0});
  results.push_back({"reco_affine_optimality", worst_reco, 3.0, worst_reco <= 3.0});
  results.push_back({"correlated_affine_optimality", worst_corr, 3.0, worst_corr <= 3.0});
}

void check_filter_equivalence(std::vector<CheckResult>& results) {
  const irn::ExperimentGrid grid = irn::experiment_grid();
  // Kernel spread chosen so the zero-padded convolution matrix stays PSD
  // (a 3x3 separable Gaussian needs the center weight >= twice a neighbor).
  irn::Mat kernel = irn::gaussian_kernel(3, 0.8);
  irn::EigenOperator op = irn::decompose_and_normalize(irn::build_convolution_operator(kernel, 8));
  irn::Vec mu(op.n_retained(), 0.18);
  double worst = 0;
  for (double L : grid.lipschitz_bounds) {
    irn::FilterScheme direct = irn::squared_soft_tsvd(op, L, mu);
    std::vector<irn::AffineSolution> sols;
    for (int j = 0; j < op.n_retained(); ++j)
      sols.push_back(irn::solve_approx_affine(op.eigenvalues[j], L, mu[j]));
    irn::FilterScheme via_inverse = irn::affine_inverse_as_filter(sols, op);
    for (int j = 0; j < op.n_retained(); ++j) {
      // Filters reach 1/(1-L) = 243 at the largest bound, so compare in the
      // well conditioned reciprocal parametrization; clipped components
      // agree bitwise and contribute zero either way.
      worst = std::max(worst,
                       std::fabs(1.0 / direct.filter[j] - 1.0 / via_inverse.filter[j]));
      worst = std::max(worst, std::fabs(direct.bias[j] - via_inverse.bias[j]) /
                                  std::max(1.0, std::fabs(direct.bias[j])));
    }
  }
  results.push_back({"filter_equivalence", worst, 1e-14, worst <= 1e-14});
}

void check_posterior_quadrature(std::vector<CheckResult>& results, uint64_t seed) {
  double worst = 0;
  for (int t = 0; t < 100; ++t) {
    irn::RngStream rng(seed, 300 + t, "oracle-quadrature");
    const irn::GaussianMixture1D mix = random_mixture(rng);
    const double sigma_sq = 0.05 + 0.95 * rng.next_double();
    const double w = 0.01 + 9.99 * rng.next_double();
    const irn::NoiseSpec noise{w};
    const irn::GaussianMixture1D pz = irn::pushforward_density(mix, noise, sigma_sq);
    const auto zmom = irn::mixture_moments(pz);
    const double z = zmom.first + (-3.0 + 6.0 * rng.next_double()) * std::sqrt(zmom.second);
    const irn::PosteriorMeanOracle oracle{mix, noise, sigma_sq};
    const double closed = oracle(z);
    const double quad = irn::posterior_mean_quadrature(mix, noise, sigma_sq, z);
    const double rel = std::fabs(closed - quad) / std::max(1.0, std::fabs(closed));
    worst = std::max(worst, rel);
  }
  results.push_back({"posterior_mean_quadrature", worst, 1e-6, worst <= 1e-6});
}

void check_projection(std::vector<CheckResult>& results) {
  const irn::ExperimentGrid grid = irn::experiment_grid();
  const double L = grid.lipschitz_bounds[1];
  double worst_cert = 0;

  // Bimodal prior at the paper scenario scale.
  {
    const irn::GaussianMixture1D mix = irn::bimodal_mixture();
    const auto mom = irn::mixture_moments(mix);
    const double w = grid.noise_levels[2] * std::sqrt(mom.second);
    irn::ProjectionScenario scen =
        irn::build_figure4_scenario(L, mix, irn::NoiseSpec{w}, 0.075, 2001);
    irn::ProjectionResult res = irn::project_constrained(scen.psi_hat, scen.p_z, L);
    irn::ProjectionCertificate cert =
        irn::certify_pontryagin(res.psi, scen.psi_hat, scen.p_z, L);
    worst_cert = std::max(worst_cert, cert.max_violation);
  }
  // Single Gaussian prior: the projection must match the affine closed form.
  double worst_affine = 0;
  {
    irn::GaussianMixture1D mix;
    mix.comp.push_back({1.0, 0.3, 0.8});
    const double sigma_sq = 0.5, w = 1.5;
    irn::ProjectionScenario scen =
        irn::build_figure4_scenario(L, mix, irn::NoiseSpec{w}, sigma_sq, 2001);
    irn::ProjectionResult res = irn::project_constrained(scen.psi_hat, scen.p_z, L);
    irn::ProjectionCertificate cert =
        irn::certify_pontryagin(res.psi, scen.psi_hat, scen.p_z, L);
    worst_cert = std::max(worst_cert, cert.max_violation);
    const irn::AffineSolution sol =
        irn::solve_reco_affine(sigma_sq, L, 0.3, 0.64, w * w);
    for (int i = 0; i < res.psi.size(); ++i) {
      const double line = sol.m * res.psi.grid[i] + sol.b;
      worst_affine = std::max(worst_affine, std::fabs(res.psi.values[i] - line));
    }
  }
  results.push_back({"projection_certificate", worst_cert, 1e-6, worst_cert <= 1e-6});
  results.push_back({"projection_gaussian_affine", worst_affine, 1e-6, worst_affine <= 1e-6});
}

void check_inversion(std::vector<CheckResult>& results, uint64_t seed) {
  const double L = 0.8;
  irn::DiagonalIResNet net = irn::make_diagonal_iresnet(L, 3, seed + 1);
  irn::RngStream rng(seed, 7, "oracle-inverse");
  const int n = 200;
  std::vector<irn::Vec> zs(n), xs(n);
  double worst_rt = 0;
  for (int i = 0; i < n; ++i) {
    irn::Vec z(3);
    for (double& v : z) v = 2.0 * rng.next_normal();
    auto [x, iters] = irn::invert_coords(net, z, 4000, 1e-8);
    (void)iters;
    irn::Vec fwd = irn::forward_coords(net, x);
    double r = 0;
    for (int j = 0; j < 3; ++j) {
      const double d = fwd[j] - z[j];
      r += d * d;
    }
    worst_rt = std::max(worst_rt, std::sqrt(r));
    zs[i] = z;
    xs[i] = x;
  }
  double worst_lip = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      double num = 0, den = 0;
      for (int k = 0; k < 3; ++k) {
        const double dx = xs[i][k] - xs[j][k];
        const double dz = zs[i][k] - zs[j][k];
        num += dx * dx;
        den += dz * dz;
      }
      if (den > 0) worst_lip = std::max(worst_lip, std::sqrt(num / den));
    }
  }
  const double scaled = irn::inverse_as_scaled_iresnet_check(net, zs);
  std::vector<irn::Vec> z1(zs.begin(), zs.begin() + n / 2);
  std::vector<irn::Vec> z2(zs.begin() + n / 2, zs.end());
  const double cond = irn::condition_2_check(net, z1, z2);

  results.push_back({"inversion_round_trip", worst_rt, 1e-7, worst_rt <= 1e-7});
  const double lip_bound = 1.0 / (1.0 - L) + 1e-6;
  results.push_back({"inverse_lipschitz", worst_lip, lip_bound, worst_lip <= lip_bound});
  results.push_back({"scaled_iresnet_ratio", scaled, L + 1e-3, scaled <= L + 1e-3});
  results.push_back({"invertibility_condition", cond, 1e-6, cond <= 1e-6});
}

void check_limit_decay(std::vector<CheckResult>& results) {
  irn::EigenOperator op;
  op.dim = 2;
  op.eigenvalues = {1.0};
  op.eigenvectors = irn::Mat(2, 1);
  op.eigenvectors(0, 0) = 1.0;
  op.nullspace_dim = 1;
  irn::Mat nb = irn::nullspace_basis(op);
  std::vector<irn::TruncatedGaussian> prior(2);
  prior[0].mean = 0.2;
  prior[0].stddev = 0.4;
  prior[1].mean = 0.3;
  prior[1].stddev = 0.5;
  irn::Vec deltas(10);
  for (int k = 0; k < 10; ++k) deltas[k] = std::pow(0.5, k + 1);
  irn::Vec z = {0.5, 0.0};
  irn::LimitCheckReport rep = irn::posterior_limit_check(op, nb, prior, deltas, z);
  bool decreasing = true;
  for (size_t k = 2; k + 1 < rep.rows.size(); ++k)
    decreasing = decreasing && rep.rows[k + 1].distance < rep.rows[k].distance;
  const double final_dist = rep.rows.back().distance;
  results.push_back(
      {"limit_check_decay", final_dist, 1e-3, final_dist <= 1e-3 && decreasing});
}

void check_adam(std::vector<CheckResult>& results) {
  {
    irn::Vec p = {0.5};
    irn::Vec g = {3.7};
    irn::AdamState st;
    irn::adam_step(p, g, st, 0.1);
    const double err = std::fabs(p[0] - 0.40000000027027027);
    results.push_back({"adam_first_step", err, 1e-13, err <= 1e-13});
  }
  {
    irn::Vec p = {1.0};
    irn::AdamState st;
    irn::Vec g = p;
    irn::adam_step(p, g, st, 0.1);
    g[0] = p[0];
    irn::adam_step(p, g, st, 0.1);
    const double err = std::fabs(p[0] - 0.80041222971233794);
    results.push_back({"adam_two_steps", err, 1e-13, err <= 1e-13});
  }
}

void check_map_residual(std::vector<CheckResult>& results) {
  irn::GaussianMixture1D prior;
  prior.comp.push_back({1.0, 0.7, 1.0});
  // sigma_sq 0.5, delta^2/b^2 = 0.25: slope 1 - 0.5 - 0.25 = 0.25 exactly.
  irn::MapResidual res = irn::map_residual(prior, 0.5, 0.5);
  irn::MapFeasibility feas = irn::map_lipschitz_feasible(res, 0.5);
  const double err = std::fabs(res.slope - 0.25) + std::fabs(res.lip - 0.25) +
                     std::fabs(feas.margin - 0.25) + (feas.feasible ? 0.0 : 1.0);
  results.push_back({"map_gaussian_margin", err, 0.0, err <= 0.0});

  irn::MapResidual lap = irn::map_residual_laplace(0.0, 1.0, 0.5, 0.1);
  irn::MapFeasibility lfeas = irn::map_lipschitz_feasible(lap, 0.9);
  const double flag = (lap.non_lipschitz && !lfeas.feasible) ? 0.0 : 1.0;
  results.push_back({"map_laplace_infeasible", flag, 0.0, flag <= 0.0});
}

int run_oracle_suite(const Config& c, int) {
  const fs::path out = ensure_out_dir(c);
  std::vector<CheckResult> results;
  check_affine_optimality(results, c.seed());
  check_filter_equivalence(results);
  check_posterior_quadrature(results, c.seed());
  check_projection(results);
  check_inversion(results, c.seed());
  check_limit_decay(results);
  check_adam(results);
  check_map_residual(results);

  std::ofstream f = open_csv(out / "oracle_suite.csv", c);
  f << "check,value,threshold,pass\n";
  bool all_pass = true;
  for (const auto& r : results) {
    f << r.name << ',' << fmt(r.value) << ',' << fmt(r.threshold) << ',' << (r.pass ? 1 : 0)
      << '\n';
    std::cout << (r.pass ? "ok   " : "FAIL ") << r.name << " value=" << fmt(r.value)
              << " threshold=" << fmt(r.threshold) << '\n';
    all_pass = all_pass && r.pass;
  }
  std::cout << (all_pass ? "oracle suite passed" : "oracle suite FAILED") << '\n';
  return all_pass ? kExitOk : kExitCheck;
}

// ---------------------------------------------------------------------------

struct SubcommandState {
  std::string config_file;
  std::vector<std::string> overrides;
};

int dispatch(const std::string& name, const SubcommandState& st, int jobs) {
  Config c(schema_for(name), st.config_file, st.overrides);
  if (name == "train-approx") return run_train(c, irn::TrainMode::approx, jobs);
  if (name == "train-reco") return run_train(c, irn::TrainMode::reco, jobs);
  if (name == "solutions-1d") return run_solutions(c, jobs);
  if (name == "filters") return run_filters(c, jobs);
  if (name == "reconstruct") return run_reconstruct(c, jobs);
  if (name == "convergence") return run_convergence(c, jobs);
  if (name == "errors-vs-noise") return run_errors_vs_noise(c, jobs);
  if (name == "lipschitz") return run_lipschitz(c, jobs);
  if (name == "project-1d") return run_project(c, jobs);
  if (name == "limit-check") return run_limit_check(c, jobs);
  if (name == "oracle-suite") return run_oracle_suite(c, jobs);
  throw std::logic_error("unhandled subcommand " + name);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"invertible residual network regularization experiments"};
  app.require_subcommand(1);
  int jobs = 0;
  app.add_option("--jobs", jobs, "worker pool bound (0 = serial)");

  const std::vector<std::pair<std::string, std::string>> subs = {
      {"train-approx", "train approximation-mode networks over the experiment grid"},
      {"train-reco", "train reconstruction-mode networks over the experiment grid"},
      {"solutions-1d", "pointwise solution curves on a diagonal operator"},
      {"filters", "filter surfaces of trained checkpoints"},
      {"reconstruct", "reconstruct one sample and tabulate errors"},
      {"convergence", "noiseless error decay across Lipschitz bounds"},
      {"errors-vs-noise", "error metrics across the noise grid"},
      {"lipschitz", "empirical inverse slopes of trained checkpoints"},
      {"project-1d", "constrained projection of the posterior mean with certificate"},
      {"limit-check", "small-noise limit of the data-consistent posterior mean"},
      {"oracle-suite", "run the numerical acceptance checks"},
  };
  std::map<std::string, SubcommandState> states;
  for (const auto& [name, desc] : subs) {
    CLI::App* sub = app.add_subcommand(name, desc);
    SubcommandState& st = states[name];
    sub->add_option("--config", st.config_file, "key=value configuration file");
    sub->add_option("overrides", st.overrides, "key=value overrides");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    return dispatch(name, states[name], jobs);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}
