#pragma once

// Patch pools, the training loop, full-image inference and the ablation grid.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <spdlog/spdlog.h>

#include "epiorm/metrics.hpp"
#include "epiorm/network.hpp"
#include "epiorm/nn/optim.hpp"
#include "epiorm/refocus.hpp"
#include "epiorm/synth.hpp"

namespace epiorm {

struct Scene {
  std::string name;
  LightField4D lf;
  DisparityMap gt;
};

// 2*half+1 columns of `epi` centred on column `center`, edges replicated.
inline EPI crop_epi(const EPI& epi, int center, int half) {
  EPI out(epi.A, 2 * half + 1, epi.C, epi.orientation);
  out.fixed_view = epi.fixed_view;
  out.fixed_pixel = epi.fixed_pixel;
  for (int a = 0; a < epi.A; ++a)
    for (int k = 0; k < out.S; ++k) {
      const int s = std::clamp(center - half + k, 0, epi.S - 1);
      for (int c = 0; c < epi.C; ++c) out.at(a, k, c) = epi.at(a, s, c);
    }
  return out;
}

// Half-width of the stored EPI strip so that refocusing by |s| <= max_shift
// never reads replicated edge columns into a W-wide patch.
inline int seed_half_width(int W, int A, double max_shift) {
  return (W - 1) / 2 + static_cast<int>(std::ceil(std::abs(max_shift) * (A - 1) / 2.0)) + 1;
}

inline double max_abs_shift(const std::vector<double>& shifts) {
  double m = 0.0;
  for (double s : shifts) m = std::max(m, std::abs(s));
  return m;
}

inline AugmentSeed seed_from_lightfield(const LightField4D& lf, const DisparityMap& gt, int x, int y, int half) {
  AugmentSeed s;
  s.horizontal = crop_epi(horizontal_epi(lf, y), x, half);
  s.vertical = crop_epi(vertical_epi(lf, x), y, half);
  s.center_x = half;
  s.center_y = half;
  s.gt = gt.at(x, y);
  return s;
}

// Renders the two EPI strips through centre-view pixel (x, y) directly from
// the scene description; equal to slicing gen_lightfield(scene) when the
// strip lies inside the image.
inline AugmentSeed seed_from_scene(const SyntheticScene& scene, int x, int y, int half) {
  scene.validate();
  const int u0 = (scene.U - 1) / 2, v0 = (scene.V - 1) / 2;
  AugmentSeed s;
  s.horizontal = EPI(scene.U, 2 * half + 1, scene.C, Orientation::horizontal);
  s.horizontal.fixed_view = v0;
  s.horizontal.fixed_pixel = y;
  s.vertical = EPI(scene.V, 2 * half + 1, scene.C, Orientation::vertical);
  s.vertical.fixed_view = u0;
  s.vertical.fixed_pixel = x;
  for (int a = 0; a < scene.U; ++a)
    for (int k = 0; k <= 2 * half; ++k)
      scene.radiance(a, v0, x - half + k, y, &s.horizontal.at(a, k, 0));
  for (int a = 0; a < scene.V; ++a)
    for (int k = 0; k <= 2 * half; ++k)
      scene.radiance(u0, a, x, y - half + k, &s.vertical.at(a, k, 0));
  s.center_x = half;
  s.center_y = half;
  s.gt = scene.visible(u0, v0, x, y).disparity;
  return s;
}

// Seeds drawn uniformly over all (scene, masked ground-truth pixel) pairs.
inline std::vector<AugmentSeed> sample_seeds(const std::vector<Scene>& scenes, std::size_t n, std::mt19937_64& rng,
                                             int half, std::vector<int>* scene_ids = nullptr) {
  if (scenes.empty()) throw ArgumentError("cannot sample patches from an empty dataset");
  std::vector<std::vector<std::size_t>> pixels(scenes.size());
  std::vector<std::size_t> prefix;
  std::size_t total = 0;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const auto& gt = scenes[i].gt;
    if (gt.width != scenes[i].lf.X() || gt.height != scenes[i].lf.Y())
      throw ShapeError("scene '" + scenes[i].name + "' ground truth does not match the light field");
    for (std::size_t p = 0; p < gt.mask.size(); ++p)
      if (gt.mask[p]) pixels[i].push_back(p);
    total += pixels[i].size();
    prefix.push_back(total);
  }
  if (total == 0) throw ArgumentError("dataset has no ground-truth pixels to sample");
  std::uniform_int_distribution<std::size_t> pick(0, total - 1);
  std::vector<AugmentSeed> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t r = pick(rng);
    const std::size_t i = static_cast<std::size_t>(std::upper_bound(prefix.begin(), prefix.end(), r) - prefix.begin());
    const std::size_t p = pixels[i][r - (i == 0 ? 0 : prefix[i - 1])];
    const int w = scenes[i].gt.width;
    out.push_back(seed_from_lightfield(scenes[i].lf, scenes[i].gt, static_cast<int>(p % w), static_cast<int>(p / w), half));
    if (scene_ids) scene_ids->push_back(static_cast<int>(i));
  }
  return out;
}

// n horizontal/vertical patch pairs centred on the same scene pixel,
// replicate border policy.
inline std::vector<AugmentedSample> sample_patches(const std::vector<Scene>& scenes, std::size_t n,
                                                   std::mt19937_64& rng, int W = 29) {
  const auto seeds = sample_seeds(scenes, n, rng, (W - 1) / 2);
  std::vector<AugmentedSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < seeds.size(); ++i) out.push_back(make_sample(seeds[i], 0.0, W, Interp::linear, i));
  return out;
}

struct PairPool {
  std::vector<AugmentSeed> seeds;
  std::vector<int> scene_ids;
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;

  int views() const { return seeds.empty() ? 0 : seeds.front().horizontal.A; }
  int channels() const { return seeds.empty() ? 0 : seeds.front().horizontal.C; }
};

// Validation share taken evenly from every scene: samples are ordered by
// (scene, random key) and every sample that crosses a multiple of
// 1 / val_fraction goes to validation.
inline void split_pool(PairPool& pool, double val_fraction, std::uint64_t seed) {
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw RangeError("validation fraction must lie in [0, 1)");
  if (pool.scene_ids.size() != pool.seeds.size()) pool.scene_ids.assign(pool.seeds.size(), 0);
  std::mt19937_64 rng(seed);
  std::vector<std::pair<std::pair<int, std::uint64_t>, std::size_t>> order;
  for (std::size_t i = 0; i < pool.seeds.size(); ++i) order.push_back({{pool.scene_ids[i], rng()}, i});
  std::sort(order.begin(), order.end());
  pool.train.clear();
  pool.val.clear();
  for (std::size_t j = 0; j < order.size(); ++j) {
    const bool v = std::floor((j + 1) * val_fraction) > std::floor(j * val_fraction);
    (v ? pool.val : pool.train).push_back(order[j].second);
  }
  std::sort(pool.train.begin(), pool.train.end());
  std::sort(pool.val.begin(), pool.val.end());
}

struct ToyDataConfig {
  std::size_t pairs = 20000;
  double d_min = -2.0;
  double d_max = 2.0;
  int scene_size = 64;
  int max_foreground = 2;
  int views = 9;
  int channels = 3;
  std::uint64_t seed = 1;
};

// Every pair comes from its own random layered scene, at a uniformly drawn
// pixel; ground truth is the front-most layer there.
inline PairPool build_toy_pool(const ToyDataConfig& cfg, int half) {
  if (cfg.pairs == 0) throw ArgumentError("toy dataset needs at least one pair");
  if (!(cfg.d_min <= cfg.d_max)) throw RangeError("toy disparity range is empty");
  PairPool pool;
  pool.seeds.reserve(cfg.pairs);
  std::seed_seq base{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32)};
  std::mt19937_64 master(base);
  for (std::size_t i = 0; i < cfg.pairs; ++i) {
    Rng rng(master());
    const auto scene =
        random_scene(rng, cfg.scene_size, cfg.scene_size, cfg.d_min, cfg.d_max, cfg.max_foreground, cfg.views, cfg.channels);
    std::uniform_int_distribution<int> px(0, cfg.scene_size - 1);
    const int x = px(rng), y = px(rng);
    pool.seeds.push_back(seed_from_scene(scene, x, y, half));
    pool.scene_ids.push_back(static_cast<int>(i));
  }
  return pool;
}

enum class Precision { f32, f64 };

inline std::string to_string(Precision p) { return p == Precision::f32 ? "float32" : "float64"; }

struct TrainConfig {
  long iterations = 10000;
  int batch_size = 128;
  double lr = 1e-4;
  long lr_decay_interval = 0;  // halve the rate every this many iterations; 0 keeps it flat
  double weight_decay = 1e-5;
  double rho = 0.9;
  bool augment = true;
  std::vector<double> shifts = default_shift_set();
  Interp interp = Interp::linear;
  std::uint64_t seed = 0;
  long log_interval = 100;
  long checkpoint_interval = 0;
  double val_fraction = 0.1;
  Precision precision = Precision::f32;

  void validate() const {
    if (iterations < 1) throw RangeError("iterations must be at least 1");
    if (batch_size < 2) throw RangeError("batch size must be at least 2 for batch normalisation");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw RangeError("learning rate must be positive");
    if (weight_decay < 0.0) throw RangeError("weight decay must be non-negative");
    if (!(rho > 0.0 && rho < 1.0)) throw RangeError("rho must lie in (0, 1)");
    if (log_interval < 1) throw RangeError("log interval must be at least 1");
    if (augment) validate_shifts(shifts);
  }
};

struct TrainLogEntry {
  long iteration = 0;
  double loss = 0.0;  // mean MAE over the iterations since the previous entry
  double lr = 0.0;
  double seconds = 0.0;

  std::string line() const {
    char buf[128];
    std::snprintf(buf, sizeof buf, "%ld,%.6f,%.6g,%.3f", iteration, loss, lr, seconds);
    return buf;
  }
  static std::string header() { return "iter,loss,lr,seconds"; }
};

struct TrainResult {
  std::vector<TrainLogEntry> log;
  double val_mae = std::numeric_limits<double>::quiet_NaN();
  double seconds = 0.0;
  std::size_t samples_available = 0;  // originals plus kept refocused copies
};

struct TrainHooks {
  std::function<void(const TrainLogEntry&)> on_log;
  std::function<void(long iteration)> on_checkpoint;
};

// One entry per trainable (seed, shift); shift index -1 is the original.
// Refocused copies whose adjusted target leaves the patch are dropped.
inline std::vector<std::pair<std::size_t, int>> training_samples(const PairPool& pool, const TrainConfig& cfg, int W) {
  std::vector<std::pair<std::size_t, int>> out;
  const double limit = representable_slope(pool.views(), W);
  for (std::size_t i : pool.train) {
    out.emplace_back(i, -1);
    if (!cfg.augment) continue;
    for (std::size_t k = 0; k < cfg.shifts.size(); ++k)
      if (std::abs(adjust_gt(pool.seeds[i].gt, cfg.shifts[k])) <= limit) out.emplace_back(i, static_cast<int>(k));
  }
  return out;
}

template <typename T>
struct Batch {
  Tensor<T> horizontal;
  Tensor<T> vertical;
  Tensor<T> gt;
};

template <typename T>
Batch<T> assemble_batch(const PairPool& pool, const std::vector<std::pair<std::size_t, int>>& picks,
                        const std::vector<double>& shifts, int W, Interp interp) {
  const int A = pool.views(), C = pool.channels();
  const int n = static_cast<int>(picks.size());
  Batch<T> b{Tensor<T>({n, A, W, C}), Tensor<T>({n, A, W, C}), Tensor<T>({n, 1})};
  const std::size_t each = static_cast<std::size_t>(A) * W * C;
  for (int i = 0; i < n; ++i) {
    const auto [seed, k] = picks[static_cast<std::size_t>(i)];
    const double s = k < 0 ? 0.0 : shifts[static_cast<std::size_t>(k)];
    const auto sample = make_sample(pool.seeds[seed], s, W, interp, seed);
    std::copy(sample.horizontal.data.begin(), sample.horizontal.data.end(), b.horizontal.data() + i * each);
    std::copy(sample.vertical.data.begin(), sample.vertical.data.end(), b.vertical.data() + i * each);
    b.gt[static_cast<std::size_t>(i)] = static_cast<T>(sample.gt);
  }
  return b;
}

// Eval-mode mean |prediction - gt| over the unshifted originals.
template <typename T>
double mean_abs_error(Network<T>& net, const PairPool& pool, const std::vector<std::size_t>& indices,
                      int batch = 256) {
  if (indices.empty()) throw ArgumentError("no samples to evaluate");
  const int W = net.config().W;
  double sum = 0.0;
  for (std::size_t start = 0; start < indices.size(); start += static_cast<std::size_t>(batch)) {
    std::vector<std::pair<std::size_t, int>> picks;
    for (std::size_t j = start; j < std::min(indices.size(), start + batch); ++j) picks.emplace_back(indices[j], -1);
    const auto b = assemble_batch<T>(pool, picks, {}, W, Interp::linear);
    const auto pred = net.predict(b.horizontal, b.vertical);
    for (std::size_t j = 0; j < pred.size(); ++j) sum += std::abs(static_cast<double>(pred[j]) - b.gt[j]);
  }
  return sum / static_cast<double>(indices.size());
}

namespace detail {
template <typename T>
std::string batch_stats(const Batch<T>& b) {
  double gmin = 1e300, gmax = -1e300, gsum = 0.0, xsum = 0.0;
  for (auto v : b.gt.values()) {
    gmin = std::min<double>(gmin, v);
    gmax = std::max<double>(gmax, v);
    gsum += v;
  }
  for (auto v : b.horizontal.values()) xsum += v;
  std::ostringstream os;
  os << "gt mean " << gsum / b.gt.size() << " range [" << gmin << ", " << gmax << "], input mean "
     << xsum / b.horizontal.size();
  return os.str();
}
}  // namespace detail

// Sample, forward (train mode), MAE, backward, RMSprop; repeated for
// cfg.iterations. Aborts with NumericError on a non-finite loss.
template <typename T>
TrainResult train(Network<T>& net, const PairPool& pool, const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  cfg.validate();
  if (pool.train.empty()) throw ArgumentError("training split is empty");
  const auto& nc = net.config();
  if (pool.views() != nc.H || pool.channels() != nc.C)
    throw ArgumentError("pool has " + std::to_string(pool.views()) + " views x " + std::to_string(pool.channels()) +
                        " channels, network expects " + std::to_string(nc.H) + " x " + std::to_string(nc.C));
  const auto samples = training_samples(pool, cfg, nc.W);
  TrainResult result;
  result.samples_available = samples.size();

  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick(0, samples.size() - 1);
  nn::RMSprop<T> opt({cfg.lr, cfg.rho, 1e-8, cfg.weight_decay});
  const auto start = std::chrono::steady_clock::now();
  double window_loss = 0.0;
  long window = 0;

  for (long it = 1; it <= cfg.iterations; ++it) {
    std::vector<std::pair<std::size_t, int>> picks(static_cast<std::size_t>(cfg.batch_size));
    for (auto& p : picks) p = samples[pick(rng)];
    const auto batch = assemble_batch<T>(pool, picks, cfg.shifts, nc.W, cfg.interp);
    const double lr = nn::step_decay_lr(cfg.lr, it - 1, cfg.lr_decay_interval);

    Tape<T> tape;
    Var pred = net.forward(tape, tape.constant(batch.horizontal), tape.constant(batch.vertical), Mode::train);
    Var loss = nn::mae_loss(tape, pred, tape.constant(batch.gt));
    const double loss_value = static_cast<double>(tape.value(loss)[0]);
    if (!std::isfinite(loss_value))
      throw NumericError("non-finite loss at iteration " + std::to_string(it) + " (lr " + std::to_string(lr) + "; " +
                         detail::batch_stats(batch) + ")");
    net.zero_grad();
    tape.backward(loss);
    opt.step(net.parameters(), lr);

    window_loss += loss_value;
    ++window;
    if (it % cfg.log_interval == 0 || it == cfg.iterations) {
      TrainLogEntry e{it, window_loss / window, lr,
                      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()};
      result.log.push_back(e);
      if (hooks.on_log) hooks.on_log(e);
      window_loss = 0.0;
      window = 0;
    }
    if (hooks.on_checkpoint && cfg.checkpoint_interval > 0 && it % cfg.checkpoint_interval == 0)
      hooks.on_checkpoint(it);
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!pool.val.empty()) result.val_mae = mean_abs_error(net, pool, pool.val);
  return result;
}

// Pixels whose W-wide patches need no replicated border columns.
inline Mask interior_mask(int X, int Y, int W) {
  const int half = (W - 1) / 2;
  Mask m(static_cast<std::size_t>(X) * Y, 0);
  for (int y = half; y < Y - half; ++y)
    for (int x = half; x < X - half; ++x) m[static_cast<std::size_t>(y) * X + x] = 1;
  return m;
}

// Disparity for every centre-view pixel from replicate-bordered patch pairs,
// eval mode. The mask flags the interior band.
template <typename T>
DisparityMap infer_map(const LightField4D& lf, Network<T>& net, int batch = 512) {
  const auto& nc = net.config();
  if (lf.U() != nc.H || lf.V() != nc.H)
    throw ArgumentError("light field has " + std::to_string(lf.U()) + "x" + std::to_string(lf.V()) +
                        " views, network expects " + std::to_string(nc.H) + "x" + std::to_string(nc.H));
  if (lf.C() != nc.C) throw ArgumentError("light field channel count does not match the network");
  const int X = lf.X(), Y = lf.Y(), W = nc.W;
  std::vector<EPI> rows, cols;
  for (int y = 0; y < Y; ++y) rows.push_back(horizontal_epi(lf, y));
  for (int x = 0; x < X; ++x) cols.push_back(vertical_epi(lf, x));
  DisparityMap out(X, Y);
  out.mask = interior_mask(X, Y, W);
  const std::size_t each = static_cast<std::size_t>(nc.H) * W * nc.C;
  const std::size_t total = static_cast<std::size_t>(X) * Y;
  for (std::size_t start = 0; start < total; start += static_cast<std::size_t>(batch)) {
    const int n = static_cast<int>(std::min<std::size_t>(batch, total - start));
    Tensor<T> ph({n, nc.H, W, nc.C}), pv({n, nc.H, W, nc.C});
    for (int i = 0; i < n; ++i) {
      const int x = static_cast<int>((start + i) % X), y = static_cast<int>((start + i) / X);
      const auto h = extract_patch(rows[static_cast<std::size_t>(y)], x, W, BorderPolicy::replicate);
      const auto v = extract_patch(cols[static_cast<std::size_t>(x)], y, W, BorderPolicy::replicate);
      std::copy(h.data.begin(), h.data.end(), ph.data() + i * each);
      std::copy(v.data.begin(), v.data.end(), pv.data() + i * each);
    }
    const auto pred = net.predict(ph, pv);
    std::copy(pred.begin(), pred.end(), out.values.begin() + static_cast<std::ptrdiff_t>(start));
  }
  return out;
}

struct AblationCell {
  std::string name;
  bool use_orm = false;
  std::vector<double> shifts;  // empty: no refocusing augmentation
};

// Baseline / w/ ORM / w/ EPIR / Full model
inline std::vector<AblationCell> table1_cells(const std::vector<double>& shifts = default_shift_set()) {
  return {{"Baseline", false, {}}, {"w/ ORM", true, {}}, {"w/ EPIR", false, shifts}, {"Full model", true, shifts}};
}

// Baseline and EPIRxk for k in {2, 4, 6, 8, 10}; xk keeps the original plus
// the first k-1 shifts of an alternating near-to-far sequence, so x8 is the
// default shift set.
inline std::vector<AblationCell> table2_cells() {
  static const std::vector<double> order{-0.5, 0.5, -1.0, 1.0, -1.5, 1.5, 2.0, -2.0, 2.5};
  std::vector<AblationCell> cells{{"Baseline", false, {}}};
  for (int k : {2, 4, 6, 8, 10})
    cells.push_back({"EPIRx" + std::to_string(k), false, std::vector<double>(order.begin(), order.begin() + (k - 1))});
  return cells;
}

struct AblationResult {
  AblationTable table;
  std::vector<double> val_mae;
  std::vector<double> seconds;
};

// Trains one network per cell with the same seeds and budget, then scores
// each on the evaluation scenes over the interior band (intersected with the
// ground-truth mask). Metrics are averaged over scenes.
template <typename T>
AblationResult run_ablation(const std::vector<AblationCell>& cells, const NetworkConfig& base, const TrainConfig& tc,
                            std::uint64_t init_seed, const PairPool& pool, const std::vector<Scene>& eval_scenes,
                            const std::function<void(const std::string&, const TrainLogEntry&)>& on_log = {}) {
  if (eval_scenes.empty()) throw ArgumentError("ablation needs at least one evaluation scene");
  AblationResult r;
  for (const auto& cell : cells) {
    NetworkConfig nc = base;
    nc.num_orms = cell.use_orm ? (base.num_orms > 0 ? base.num_orms : 2) : 0;
    TrainConfig cfg = tc;
    cfg.augment = !cell.shifts.empty();
    if (cfg.augment) cfg.shifts = cell.shifts;
    Network<T> net(nc, init_seed);
    TrainHooks hooks;
    if (on_log) hooks.on_log = [&](const TrainLogEntry& e) { on_log(cell.name, e); };
    const auto res = train(net, pool, cfg, hooks);
    double bp = 0.0, mse = 0.0;
    for (const auto& sc : eval_scenes) {
      const auto pred = infer_map(sc.lf, net);
      const auto mask = intersect(pred.mask, sc.gt.mask);
      bp += badpix(pred, sc.gt, mask);
      mse += mse100(pred, sc.gt, mask);
    }
    r.table.columns.push_back(cell.name);
    r.table.badpix.push_back(bp / eval_scenes.size());
    r.table.mse100.push_back(mse / eval_scenes.size());
    r.val_mae.push_back(res.val_mae);
    r.seconds.push_back(res.seconds);
    spdlog::info("ablation cell '{}': badpix {:.2f}, mse100 {:.3f}, val MAE {:.4f}, {:.1f} s", cell.name,
                 r.table.badpix.back(), r.table.mse100.back(), res.val_mae, res.seconds);
  }
  return r;
}

}  // namespace epiorm
