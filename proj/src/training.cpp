#include "irn/training.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <thread>
#include <vector>

namespace irn {
namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

void resize_mat(Mat& m, int rows, int cols) {
  m.rows = rows;
  m.cols = cols;
  m.a.resize((size_t)rows * cols);
}

// Post-ReLU activations for one scalar batch; rows are neurons, columns are
// samples. A unit is active iff its stored value is positive, so the tape
// doubles as the backward mask.
struct Tape {
  Mat h1;
  Mat h2;
  Vec out;
};

void forward_tape(const Subnet& s, const Vec& xs, Tape& t) {
  const int h = s.hidden();
  const int n = (int)xs.size();
  const AffineLayer& l1 = s.layer[0];
  const AffineLayer& l2 = s.layer[1];
  const AffineLayer& l3 = s.layer[2];

  resize_mat(t.h1, h, n);
  for (int r = 0; r < h; ++r) {
    const double w = l1.weight(r, 0);
    const double b = l1.bias[r];
    double* row = t.h1.row(r);
    for (int i = 0; i < n; ++i) {
      const double p = w * xs[i] + b;
      row[i] = p > 0.0 ? p : 0.0;
    }
  }

  resize_mat(t.h2, h, n);
  for (int r = 0; r < h; ++r) {
    const double* wr = l2.weight.row(r);
    double* row = t.h2.row(r);
    std::fill(row, row + n, l2.bias[r]);
    for (int k = 0; k < h; ++k) {
      const double w = wr[k];
      if (w == 0.0) continue;
      const double* hk = t.h1.row(k);
      for (int i = 0; i < n; ++i) row[i] += w * hk[i];
    }
    for (int i = 0; i < n; ++i)
      if (row[i] <= 0.0) row[i] = 0.0;
  }

  t.out.assign(n, l3.bias[0]);
  for (int r = 0; r < h; ++r) {
    const double w = l3.weight(0, r);
    if (w == 0.0) continue;
    const double* row = t.h2.row(r);
    for (int i = 0; i < n; ++i) t.out[i] += w * row[i];
  }
}

// Reverse pass for one forward_tape application. Accumulates parameter
// gradients into g; when gx is non-null also emits dLoss/d(input).
void backward_tape(const Subnet& s, const Vec& xs, const Tape& t,
                   const Vec& gout, SubnetGrads& g, Vec* gx, Mat& g2,
                   Mat& g1) {
  const int h = s.hidden();
  const int n = (int)xs.size();
  const AffineLayer& l1 = s.layer[0];
  const AffineLayer& l2 = s.layer[1];
  const AffineLayer& l3 = s.layer[2];

  double db3 = 0.0;
  for (int i = 0; i < n; ++i) db3 += gout[i];
  g.bias[2][0] += db3;
  for (int r = 0; r < h; ++r) {
    const double* row = t.h2.row(r);
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += gout[i] * row[i];
    g.weight[2](0, r) += acc;
  }

  resize_mat(g2, h, n);
  for (int r = 0; r < h; ++r) {
    const double w = l3.weight(0, r);
    const double* hrow = t.h2.row(r);
    double* grow = g2.row(r);
    for (int i = 0; i < n; ++i)
      grow[i] = hrow[i] > 0.0 ? w * gout[i] : 0.0;
  }
  for (int r = 0; r < h; ++r) {
    const double* grow = g2.row(r);
    double* wrow = g.weight[1].row(r);
    for (int k = 0; k < h; ++k) {
      const double* hrow = t.h1.row(k);
      double acc = 0.0;
      for (int i = 0; i < n; ++i) acc += grow[i] * hrow[i];
      wrow[k] += acc;
    }
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += grow[i];
    g.bias[1][r] += acc;
  }

  resize_mat(g1, h, n);
  std::fill(g1.a.begin(), g1.a.end(), 0.0);
  for (int k = 0; k < h; ++k) {
    const double* wr = l2.weight.row(k);
    const double* grow = g2.row(k);
    for (int r = 0; r < h; ++r) {
      const double w = wr[r];
      if (w == 0.0) continue;
      double* target = g1.row(r);
      for (int i = 0; i < n; ++i) target[i] += w * grow[i];
    }
  }
  for (int r = 0; r < h; ++r) {
    const double* hrow = t.h1.row(r);
    double* grow = g1.row(r);
    for (int i = 0; i < n; ++i)
      if (hrow[i] <= 0.0) grow[i] = 0.0;
  }
  for (int r = 0; r < h; ++r) {
    const double* grow = g1.row(r);
    double accw = 0.0;
    double accb = 0.0;
    for (int i = 0; i < n; ++i) {
      accw += grow[i] * xs[i];
      accb += grow[i];
    }
    g.weight[0](r, 0) += accw;
    g.bias[0][r] += accb;
  }

  if (gx) {
    gx->assign(n, 0.0);
    for (int r = 0; r < h; ++r) {
      const double w = l1.weight(r, 0);
      if (w == 0.0) continue;
      const double* grow = g1.row(r);
      for (int i = 0; i < n; ++i) (*gx)[i] += w * grow[i];
    }
  }
}

// Per-thread reusable buffers for the unrolled passes.
struct Workspace {
  std::vector<Tape> tape;
  std::vector<Vec> iter;
  Vec gout;
  Vec gx;
  Mat g2;
  Mat g1;
};

Workspace& workspace() {
  thread_local Workspace w;
  return w;
}

void check_batch(const Vec& xs, const Vec& zs) {
  if (xs.empty()) throw std::invalid_argument("empty training batch");
  if (xs.size() != zs.size())
    throw std::invalid_argument("mismatched batch lengths");
}

void zero_grads(const Subnet& s, SubnetGrads& g) {
  for (int l = 0; l < 3; ++l) {
    const AffineLayer& layer = s.layer[l];
    resize_mat(g.weight[l], layer.out_dim, layer.in_dim);
    std::fill(g.weight[l].a.begin(), g.weight[l].a.end(), 0.0);
    g.bias[l].assign(layer.bias.size(), 0.0);
  }
}

// Empirical bound on |f'| over mu +/- 6 sd at step sd/200, evaluated on the
// grid in one batched pass.
double residual_slope_bound(const Subnet& s, double mu, double sd) {
  if (!(sd > 0.0)) return 0.0;
  const double step = sd / 200.0;
  const int points = 2401;
  Vec grid(points), fx(points);
  for (int i = 0; i < points; ++i) grid[i] = mu - 6.0 * sd + i * step;
  subnet_eval_batch(s, grid.data(), fx.data(), points);
  double worst = 0.0;
  for (int i = 0; i + 1 < points; ++i)
    worst = std::max(worst, std::fabs(fx[i + 1] - fx[i]) / step);
  return worst;
}

void validate_config(const DiagonalIResNet& net, const NoisyPairs& pairs,
                     const TrainConfig& cfg) {
  if (pairs.x.rows <= 0)
    throw std::invalid_argument("train: empty pair set");
  if (pairs.x.rows != pairs.z.rows || pairs.x.cols != pairs.z.cols)
    throw std::invalid_argument("train: x/z shape mismatch");
  if (pairs.x.cols != net.n_components())
    throw std::invalid_argument("train: component count mismatch");
  if (!(cfg.learning_rate > 0.0))
    throw std::invalid_argument("train: learning_rate must be positive");
  if (cfg.batch_size < 1)
    throw std::invalid_argument("train: batch_size must be >= 1");
  if (cfg.epochs < 0)
    throw std::invalid_argument("train: epochs must be >= 0");
  if (cfg.mode == TrainMode::reco && cfg.unroll_steps < 1)
    throw std::invalid_argument("train: unroll_steps must be >= 1");
  if (cfg.L != net.L)
    throw std::invalid_argument(
        "train: config bound differs from the network's");
}

void train_component(Subnet& s, const NoisyPairs& pairs, int j,
                     const TrainConfig& cfg, TrainTrace& trace) {
  const int n = pairs.x.rows;
  Vec xs(n), zs(n);
  for (int i = 0; i < n; ++i) {
    xs[i] = pairs.x(i, j);
    zs[i] = pairs.z(i, j);
  }
  double mu = 0.0;
  for (double v : xs) mu += v;
  mu /= n;
  double var = 0.0;
  for (double v : xs) var += (v - mu) * (v - mu);
  const double sd = std::sqrt(var / n);

  RngStream shuffle_rng(cfg.seed, (uint64_t)j, "train-shuffle");
  std::vector<int> idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;

  std::array<AdamState, 3> wstate;
  std::array<AdamState, 3> bstate;
  SubnetGrads g = make_grads(s);
  Vec xb, zb;

  for (int e = 0; e < cfg.epochs; ++e) {
    for (int i = n - 1; i > 0; --i) {
      const int k = (int)(shuffle_rng.next_u64() % (uint64_t)(i + 1));
      std::swap(idx[i], idx[k]);
    }
    double esum = 0.0;
    for (int start = 0; start < n; start += cfg.batch_size) {
      const int nb = std::min(cfg.batch_size, n - start);
      xb.resize(nb);
      zb.resize(nb);
      for (int i = 0; i < nb; ++i) {
        xb[i] = xs[idx[start + i]];
        zb[i] = zs[idx[start + i]];
      }
      const double loss =
          cfg.mode == TrainMode::approx
              ? approx_loss_grad(s, xb, zb, g)
              : reco_loss_grad(s, xb, zb, cfg.unroll_steps, g);
      if (!std::isfinite(loss)) {
        char msg[160];
        std::snprintf(msg, sizeof(msg),
                      "non-finite training loss at component %d, epoch %d, "
                      "sample offset %d",
                      j, e, start);
        throw std::runtime_error(msg);
      }
      clip_grads(g, cfg.grad_clip);
      for (int l = 0; l < 3; ++l) {
        adam_step(s.layer[l].weight.a, g.weight[l].a, wstate[l],
                  cfg.learning_rate);
        adam_step(s.layer[l].bias, g.bias[l], bstate[l], cfg.learning_rate);
      }
      project_subnet(s);
      esum += loss * nb;
    }
    trace.epoch_loss(e, j) = esum / n;
    trace.epoch_lipschitz(e, j) = residual_slope_bound(s, mu, sd);
  }

  trace.final_loss[j] = cfg.mode == TrainMode::approx
                            ? approx_loss(s, xs, zs)
                            : reco_loss(s, xs, zs, cfg.unroll_steps);
}

}  // namespace

SubnetGrads make_grads(const Subnet& s) {
  SubnetGrads g;
  for (int l = 0; l < 3; ++l) {
    g.weight[l] = Mat(s.layer[l].out_dim, s.layer[l].in_dim);
    g.bias[l].assign(s.layer[l].bias.size(), 0.0);
  }
  return g;
}

double grad_norm(const SubnetGrads& g) {
  double acc = 0.0;
  for (int l = 0; l < 3; ++l) {
    for (double v : g.weight[l].a) acc += v * v;
    for (double v : g.bias[l]) acc += v * v;
  }
  return std::sqrt(acc);
}

void clip_grads(SubnetGrads& g, double max_norm) {
  if (!(max_norm > 0.0)) return;
  const double norm = grad_norm(g);
  if (norm <= max_norm) return;
  const double scale = max_norm / norm;
  for (int l = 0; l < 3; ++l) {
    scal(scale, g.weight[l].a);
    scal(scale, g.bias[l]);
  }
}

double approx_loss(const Subnet& s, const Vec& xs, const Vec& zs) {
  check_batch(xs, zs);
  const int n = (int)xs.size();
  Vec fx(n);
  subnet_eval_batch(s, xs.data(), fx.data(), n);
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const double r = xs[i] - fx[i] - zs[i];
    acc += r * r;
  }
  return acc / n;
}

double reco_loss(const Subnet& s, const Vec& xs, const Vec& zs,
                 int unroll_steps) {
  check_batch(xs, zs);
  if (unroll_steps < 1)
    throw std::invalid_argument("unroll_steps must be >= 1");
  const int n = (int)xs.size();
  Vec cur = zs;
  Vec fx(n);
  for (int k = 0; k < unroll_steps; ++k) {
    subnet_eval_batch(s, cur.data(), fx.data(), n);
    for (int i = 0; i < n; ++i) cur[i] = zs[i] + fx[i];
  }
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    const double r = cur[i] - xs[i];
    acc += r * r;
  }
  return acc / n;
}

double approx_loss_grad(const Subnet& s, const Vec& xs, const Vec& zs,
                        SubnetGrads& g) {
  check_batch(xs, zs);
  const int n = (int)xs.size();
  Workspace& w = workspace();
  if (w.tape.empty()) w.tape.resize(1);
  forward_tape(s, xs, w.tape[0]);
  double acc = 0.0;
  w.gout.resize(n);
  for (int i = 0; i < n; ++i) {
    const double r = xs[i] - w.tape[0].out[i] - zs[i];
    acc += r * r;
    w.gout[i] = -2.0 * r / n;
  }
  zero_grads(s, g);
  backward_tape(s, xs, w.tape[0], w.gout, g, nullptr, w.g2, w.g1);
  return acc / n;
}

double reco_loss_grad(const Subnet& s, const Vec& xs, const Vec& zs,
                      int unroll_steps, SubnetGrads& g) {
  check_batch(xs, zs);
  if (unroll_steps < 1)
    throw std::invalid_argument("unroll_steps must be >= 1");
  const int n = (int)xs.size();
  Workspace& w = workspace();
  if ((int)w.tape.size() < unroll_steps) w.tape.resize(unroll_steps);
  w.iter.resize(unroll_steps + 1);

  w.iter[0] = zs;
  for (int k = 0; k < unroll_steps; ++k) {
    forward_tape(s, w.iter[k], w.tape[k]);
    w.iter[k + 1].resize(n);
    for (int i = 0; i < n; ++i) w.iter[k + 1][i] = zs[i] + w.tape[k].out[i];
  }

  double acc = 0.0;
  w.gout.resize(n);
  for (int i = 0; i < n; ++i) {
    const double r = w.iter[unroll_steps][i] - xs[i];
    acc += r * r;
    w.gout[i] = 2.0 * r / n;
  }

  zero_grads(s, g);
  for (int k = unroll_steps - 1; k >= 0; --k) {
    backward_tape(s, w.iter[k], w.tape[k], w.gout, g, &w.gx, w.g2, w.g1);
    std::swap(w.gout, w.gx);
  }
  return acc / n;
}

double approx_loss(const DiagonalIResNet& net, const Mat& x, const Mat& z) {
  if (x.rows <= 0 || x.rows != z.rows || x.cols != z.cols ||
      x.cols != net.n_components())
    throw std::invalid_argument("approx_loss: batch shape mismatch");
  double total = 0.0;
  Vec xs(x.rows), zs(x.rows);
  for (int j = 0; j < x.cols; ++j) {
    for (int i = 0; i < x.rows; ++i) {
      xs[i] = x(i, j);
      zs[i] = z(i, j);
    }
    total += approx_loss(net.subnets[j], xs, zs);
  }
  return total;
}

double reco_loss(const DiagonalIResNet& net, const Mat& x, const Mat& z,
                 int unroll_steps) {
  if (x.rows <= 0 || x.rows != z.rows || x.cols != z.cols ||
      x.cols != net.n_components())
    throw std::invalid_argument("reco_loss: batch shape mismatch");
  double total = 0.0;
  Vec xs(x.rows), zs(x.rows);
  for (int j = 0; j < x.cols; ++j) {
    for (int i = 0; i < x.rows; ++i) {
      xs[i] = x(i, j);
      zs[i] = z(i, j);
    }
    total += reco_loss(net.subnets[j], xs, zs, unroll_steps);
  }
  return total;
}

void adam_step(Vec& params, const Vec& grads, AdamState& st, double lr) {
  if (params.size() != grads.size())
    throw std::invalid_argument("adam_step: parameter/gradient size mismatch");
  if (st.m.size() != params.size()) {
    st.m.assign(params.size(), 0.0);
    st.v.assign(params.size(), 0.0);
    st.t = 0;
  }
  st.t += 1;
  const double c1 = 1.0 - std::pow(kBeta1, st.t);
  const double c2 = 1.0 - std::pow(kBeta2, st.t);
  for (size_t i = 0; i < params.size(); ++i) {
    const double gi = grads[i];
    st.m[i] = kBeta1 * st.m[i] + (1.0 - kBeta1) * gi;
    st.v[i] = kBeta2 * st.v[i] + (1.0 - kBeta2) * gi * gi;
    const double mhat = st.m[i] / c1;
    const double vhat = st.v[i] / c2;
    params[i] -= lr * mhat / (std::sqrt(vhat) + kAdamEps);
  }
}

TrainTrace train(DiagonalIResNet& net, const NoisyPairs& pairs,
                 const TrainConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  validate_config(net, pairs, cfg);

  TrainTrace trace;
  const int comps = net.n_components();
  if (cfg.epochs == 0) {
    trace.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    return trace;
  }
  trace.epoch_loss = Mat(cfg.epochs, comps);
  trace.epoch_lipschitz = Mat(cfg.epochs, comps);
  trace.final_loss.assign(comps, 0.0);

  std::atomic<int> next{0};
  std::atomic<bool> failed{false};
  std::vector<std::string> errors(comps);

  const auto worker = [&]() {
    for (;;) {
      const int j = next.fetch_add(1);
      if (j >= comps || failed.load()) break;
      try {
        train_component(net.subnets[j], pairs, j, cfg, trace);
      } catch (const std::exception& e) {
        errors[j] = e.what();
        failed.store(true);
      }
    }
  };

  int nworkers =
      cfg.workers > 0 ? cfg.workers : (int)std::thread::hardware_concurrency();
  nworkers = std::clamp(nworkers, 1, comps);
  if (nworkers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(nworkers);
    for (int t = 0; t < nworkers; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }

  if (failed.load()) {
    const std::string snap =
        cfg.snapshot_path.empty() ? "nan-snapshot.irn" : cfg.snapshot_path;
    save_checkpoint(net, snap);
    std::string why;
    for (const std::string& e : errors)
      if (!e.empty()) {
        why = e;
        break;
      }
    throw std::runtime_error("training aborted: " + why +
                             "; diagnostic checkpoint written to " + snap);
  }

  if (!cfg.progress_csv.empty()) {
    FILE* fp = std::fopen(cfg.progress_csv.c_str(), "ab");
    if (!fp)
      throw std::runtime_error("cannot open progress csv: " +
                               cfg.progress_csv);
    for (int e = 0; e < cfg.epochs; ++e)
      for (int j = 0; j < comps; ++j)
        std::fprintf(fp, "%d,%d,%.17g,%.17g\n", e, j, trace.epoch_loss(e, j),
                     trace.epoch_lipschitz(e, j));
    std::fclose(fp);
  }

  trace.loss = 0.0;
  for (double v : trace.final_loss) trace.loss += v;
  trace.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return trace;
}

}  // namespace irn
