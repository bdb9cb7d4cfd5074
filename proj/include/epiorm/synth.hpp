#pragma once

// Synthetic light fields with analytic ground truth, and the shear-variance
// slope oracle used to check everything that touches EPI geometry.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "epiorm/errors.hpp"
#include "epiorm/lightfield.hpp"

namespace epiorm {

using Rng = std::mt19937_64;

struct TextureOptions {
  int min_waves = 3;
  int max_waves = 8;
  double min_frequency = 0.02;  // cycles per pixel
  double max_frequency = 0.12;
  double noise_amplitude = 0.08;
  double noise_spacing = 6.0;   // value-noise lattice spacing in pixels
  double min_contrast = 0.2;    // peak-to-peak over the checked window
  double contrast_step = 1.0;   // grid spacing of the contrast check in pixels
};

// Band-limited colour texture T(x, y, c): random-phase sinusoids plus a
// smoothed value-noise lattice. Values stay inside [0.05, 0.95]. A texture may
// instead wrap a discrete 1-D row sampled with nearest or linear lookup.
class Texture {
 public:
  struct Wave {
    double fx, fy, phase;
    std::vector<double> amplitude;  // per channel
  };

  static Texture random(Rng& rng, int channels, const TextureOptions& opt = {}) {
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    Texture t;
    t.channels_ = channels;
    const int n = opt.min_waves + static_cast<int>(uni(rng) * (opt.max_waves - opt.min_waves + 1));
    double budget = 0.45 - opt.noise_amplitude;
    for (int c = 0; c < channels; ++c) t.base_.push_back(0.5 + 0.05 * (2 * uni(rng) - 1));
    budget -= 0.05;
    std::vector<double> raw(n);
    double raw_sum = 0.0;
    for (auto& r : raw) raw_sum += (r = 0.3 + uni(rng));
    for (int k = 0; k < std::max(n, 1); ++k) {
      Wave w;
      const double f = opt.min_frequency + uni(rng) * (opt.max_frequency - opt.min_frequency);
      const double angle = 2.0 * std::numbers::pi * uni(rng);
      w.fx = f * std::cos(angle);
      w.fy = f * std::sin(angle);
      w.phase = 2.0 * std::numbers::pi * uni(rng);
      for (int c = 0; c < channels; ++c)
        w.amplitude.push_back(budget * raw[k] / raw_sum * (0.6 + 0.4 * uni(rng)));
      t.waves_.push_back(std::move(w));
    }
    t.noise_amplitude_ = opt.noise_amplitude;
    t.noise_spacing_ = opt.noise_spacing;
    t.noise_seed_ = rng();
    return t;
  }

  // Discrete row texture: value(x, ., c) = samples[round_or_lerp(x)].
  static Texture from_row(std::vector<float> samples, int channels, bool nearest) {
    Texture t;
    t.channels_ = channels;
    t.row_ = std::move(samples);
    t.row_nearest_ = nearest;
    return t;
  }

  // This texture restricted to the line y = y_fixed; evaluates through the
  // same arithmetic as the 2-D texture.
  Texture row(double y_fixed) const {
    Texture t = *this;
    t.fixed_y_ = y_fixed;
    return t;
  }

  int channels() const { return channels_; }

  float operator()(double x, double y, int c) const {
    if (fixed_y_) y = *fixed_y_;
    if (!row_.empty()) {
      const int n = static_cast<int>(row_.size()) / channels_;
      if (row_nearest_) {
        long i = std::clamp<long>(static_cast<long>(std::floor(x + 0.5)), 0, n - 1);
        return row_[i * channels_ + c];
      }
      const double fl = std::floor(x);
      const long i0 = std::clamp<long>(static_cast<long>(fl), 0, n - 1);
      const long i1 = std::clamp<long>(static_cast<long>(fl) + 1, 0, n - 1);
      const float f = static_cast<float>(x - fl);
      return row_[i0 * channels_ + c] + f * (row_[i1 * channels_ + c] - row_[i0 * channels_ + c]);
    }
    double val = base_[c];
    for (const auto& w : waves_)
      val += w.amplitude[c] * std::cos(2.0 * std::numbers::pi * (w.fx * x + w.fy * y) + w.phase);
    if (noise_amplitude_ > 0.0) val += noise_amplitude_ * value_noise(x, y, c);
    return static_cast<float>(val);
  }

  // All channels at (x, y); bitwise equal to calling operator() per channel
  // but shares the wave phases and lattice hashes between evaluations.
  void eval(double x, double y, float* out) const {
    if (fixed_y_) y = *fixed_y_;
    if (!row_.empty()) {
      for (int c = 0; c < channels_; ++c) out[c] = (*this)(x, y, c);
      return;
    }
    double val[8];
    std::vector<double> heap;
    double* acc = val;
    if (channels_ > 8) {
      heap.resize(channels_);
      acc = heap.data();
    }
    for (int c = 0; c < channels_; ++c) acc[c] = base_[c];
    for (const auto& w : waves_) {
      const double k = std::cos(2.0 * std::numbers::pi * (w.fx * x + w.fy * y) + w.phase);
      for (int c = 0; c < channels_; ++c) acc[c] += w.amplitude[c] * k;
    }
    if (noise_amplitude_ > 0.0)
      for (int c = 0; c < channels_; ++c) acc[c] += noise_amplitude_ * value_noise(x, y, c);
    for (int c = 0; c < channels_; ++c) out[c] = static_cast<float>(acc[c]);
  }

  // Peak-to-peak of channel-mean intensity over an axis-aligned window.
  double contrast(double x0, double x1, double y0, double y1, double step = 1.0) const {
    if (!(step > 0.0)) throw ArgumentError("contrast grid step must be positive");
    double lo = std::numeric_limits<double>::max(), hi = -lo;
    std::vector<float> px(static_cast<std::size_t>(channels_));
    for (double y = y0; y <= y1; y += step)
      for (double x = x0; x <= x1; x += step) {
        eval(x, y, px.data());
        double m = 0.0;
        for (int c = 0; c < channels_; ++c) m += px[static_cast<std::size_t>(c)];
        m /= channels_;
        lo = std::min(lo, m);
        hi = std::max(hi, m);
      }
    return hi - lo;
  }

 private:
  // Hash-based lattice value in [-1, 1], smoothed with a [1 2 1]/4 kernel in
  // each axis, then cosine-interpolated between lattice nodes.
  double lattice(long i, long j, int c) const {
    std::uint64_t h = noise_seed_ ^ (static_cast<std::uint64_t>(i) * 0x9E3779B97F4A7C15ull) ^
                      (static_cast<std::uint64_t>(j) * 0xC2B2AE3D27D4EB4Full) ^
                      (static_cast<std::uint64_t>(c) * 0x165667B19E3779F9ull);
    h ^= h >> 33;
    h *= 0xff51afd7ed558ccdull;
    h ^= h >> 33;
    h *= 0xc4ceb9fe1a85ec53ull;
    h ^= h >> 33;
    return static_cast<double>(h >> 11) / static_cast<double>(1ull << 53) * 2.0 - 1.0;
  }
  // g holds lattice(i - 1 .. i + 2, j - 1 .. j + 2) as g[a][b]; (di, dj) picks
  // the smoothed node (i + di, j + dj).
  static double smoothed(const double (&g)[4][4], int di, int dj) {
    static constexpr double k[3] = {0.25, 0.5, 0.25};
    double s = 0.0;
    for (int a = -1; a <= 1; ++a)
      for (int b = -1; b <= 1; ++b) s += k[a + 1] * k[b + 1] * g[di + a + 1][dj + b + 1];
    return s;
  }
  double value_noise(double x, double y, int c) const {
    const double gx = x / noise_spacing_, gy = y / noise_spacing_;
    const double fx = std::floor(gx), fy = std::floor(gy);
    const long i = static_cast<long>(fx), j = static_cast<long>(fy);
    const double tx = 0.5 - 0.5 * std::cos(std::numbers::pi * (gx - fx));
    const double ty = 0.5 - 0.5 * std::cos(std::numbers::pi * (gy - fy));
    double g[4][4];
    for (int a = 0; a < 4; ++a)
      for (int b = 0; b < 4; ++b) g[a][b] = lattice(i + a - 1, j + b - 1, c);
    const double s00 = smoothed(g, 0, 0), s10 = smoothed(g, 1, 0);
    const double s01 = smoothed(g, 0, 1), s11 = smoothed(g, 1, 1);
    const double a = s00 + tx * (s10 - s00);
    const double b = s01 + tx * (s11 - s01);
    return a + ty * (b - a);
  }

  int channels_ = 3;
  std::vector<double> base_;
  std::vector<Wave> waves_;
  double noise_amplitude_ = 0.0;
  double noise_spacing_ = 6.0;
  std::uint64_t noise_seed_ = 0;
  std::vector<float> row_;
  bool row_nearest_ = true;
  std::optional<double> fixed_y_;
};

// Random texture whose contrast over the window is at least opt.min_contrast.
inline Texture random_texture(Rng& rng, int channels, double x0, double x1, double y0, double y1,
                              const TextureOptions& opt = {}) {
  for (int attempt = 0;; ++attempt) {
    Texture t = Texture::random(rng, channels, opt);
    if (t.contrast(x0, x1, y0, y1, opt.contrast_step) >= opt.min_contrast || attempt >= 64) return t;
  }
}

// EPI whose row u is `texture` sampled at x - (u0 - u) d along the line y = 0.
inline EPI gen_epi(double d, const Texture& texture, int A, int S) {
  if (A < 1 || S < 1) throw ArgumentError("EPI extents must be positive");
  if (A > 1 && std::abs(d) > static_cast<double>(S - 1) / (A - 1))
    throw ArgumentError("disparity " + std::to_string(d) + " outside representable range");
  const int C = texture.channels();
  EPI epi(A, S, C);
  const int u0 = (A - 1) / 2;
  for (int u = 0; u < A; ++u) {
    const double offset = (u0 - u) * d;
    for (int x = 0; x < S; ++x)
      for (int c = 0; c < C; ++c) epi.at(u, x, c) = texture(x - offset, 0.0, c);
  }
  return epi;
}

inline std::pair<EPI, double> gen_epi(double d, int A, int S, int C, std::uint64_t seed,
                                      const TextureOptions& opt = {}) {
  Rng rng(seed);
  Texture t = random_texture(rng, C, 0, S - 1, 0, 0, opt);
  return {gen_epi(d, t, A, S), d};
}

struct Region {
  enum class Kind { everywhere, rectangle, disc } kind = Kind::everywhere;
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // rectangle corners, or disc centre (x0, y0) and radius x1

  bool contains(double x, double y) const {
    switch (kind) {
      case Kind::everywhere: return true;
      case Kind::rectangle: return x >= x0 && x < x1 && y >= y0 && y < y1;
      case Kind::disc: return (x - x0) * (x - x0) + (y - y0) * (y - y0) < x1 * x1;
    }
    return false;
  }
};

struct Layer {
  double disparity = 0.0;
  Texture texture;
  Region region;
};

// Layers are ordered front to back; the last one should cover everywhere.
// Larger disparity means nearer, so disparities are non-increasing.
struct SyntheticScene {
  std::vector<Layer> layers;
  int U = 9, V = 9, X = 64, Y = 64, C = 3;

  void validate() const {
    if (layers.empty()) throw ArgumentError("scene has no layers");
    for (std::size_t i = 1; i < layers.size(); ++i)
      if (layers[i].disparity > layers[i - 1].disparity)
        throw ArgumentError("scene layers must be sorted front to back (non-increasing disparity)");
    if (layers.back().region.kind != Region::Kind::everywhere)
      throw ArgumentError("last scene layer must be a full background");
    for (const auto& l : layers)
      if (l.texture.channels() != C) throw ArgumentError("layer texture channel count mismatch");
  }

  // Front-most layer visible at (x, y) in view (u, v).
  const Layer& visible(int u, int v, double x, double y) const {
    const int u0 = (U - 1) / 2, v0 = (V - 1) / 2;
    for (const auto& l : layers) {
      const double cx = x - (u0 - u) * l.disparity;
      const double cy = y - (v0 - v) * l.disparity;
      if (l.region.contains(cx, cy)) return l;
    }
    return layers.back();
  }

  float radiance(int u, int v, int x, int y, int c) const {
    const int u0 = (U - 1) / 2, v0 = (V - 1) / 2;
    const Layer& l = visible(u, v, x, y);
    return l.texture(x - (u0 - u) * l.disparity, y - (v0 - v) * l.disparity, c);
  }

  // All C channels of one ray into out[0 .. C).
  void radiance(int u, int v, int x, int y, float* out) const {
    const int u0 = (U - 1) / 2, v0 = (V - 1) / 2;
    const Layer& l = visible(u, v, x, y);
    l.texture.eval(x - (u0 - u) * l.disparity, y - (v0 - v) * l.disparity, out);
  }
};

inline std::pair<LightField4D, DisparityMap> gen_lightfield(const SyntheticScene& scene) {
  scene.validate();
  LightField4D lf(scene.U, scene.V, scene.X, scene.Y, scene.C);
  for (int v = 0; v < scene.V; ++v)
    for (int u = 0; u < scene.U; ++u)
      for (int y = 0; y < scene.Y; ++y)
        for (int x = 0; x < scene.X; ++x) {
          const int u0 = (scene.U - 1) / 2, v0 = (scene.V - 1) / 2;
          const Layer& l = scene.visible(u, v, x, y);
          const double tx = x - (u0 - u) * l.disparity, ty = y - (v0 - v) * l.disparity;
          l.texture.eval(tx, ty, &lf(u, v, x, y, 0));
        }
  DisparityMap gt(scene.X, scene.Y);
  for (int y = 0; y < scene.Y; ++y)
    for (int x = 0; x < scene.X; ++x)
      gt.at(x, y) = static_cast<float>(scene.visible(scene.U / 2, scene.V / 2, x, y).disparity);
  return {std::move(lf), std::move(gt)};
}

// Background plane plus a nearer rectangle covering the middle of the view.
inline SyntheticScene two_plane_scene(double d_front, double d_back, int X, int Y, std::uint64_t seed,
                                      int views = 9, int C = 3) {
  Rng rng(seed);
  SyntheticScene s;
  s.U = s.V = views;
  s.X = X;
  s.Y = Y;
  s.C = C;
  Layer front{d_front, random_texture(rng, C, 0, X, 0, Y), {}};
  front.region = {Region::Kind::rectangle, X * 0.3, Y * 0.25, X * 0.7, Y * 0.75};
  Layer back{d_back, random_texture(rng, C, 0, X, 0, Y), {}};
  s.layers = {front, back};
  return s;
}

// Background with up to `max_fg` random rectangles or discs in front of it;
// every layer disparity is drawn uniformly from [d_min, d_max].
inline SyntheticScene random_scene(Rng& rng, int X, int Y, double d_min, double d_max, int max_fg = 2,
                                   int views = 9, int C = 3) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  SyntheticScene s;
  s.U = s.V = views;
  s.X = X;
  s.Y = Y;
  s.C = C;
  const int n_fg = static_cast<int>(uni(rng) * (max_fg + 1));
  std::vector<double> disp(n_fg + 1);
  for (auto& d : disp) d = d_min + uni(rng) * (d_max - d_min);
  std::sort(disp.begin(), disp.end(), std::greater<>());
  // a coarse contrast grid keeps scene generation cheap at full image size
  TextureOptions opt;
  opt.contrast_step = 2.0;
  for (int i = 0; i <= n_fg; ++i) {
    Layer l{disp[i], random_texture(rng, C, 0, X, 0, Y, opt), {}};
    if (i < n_fg) {
      if (uni(rng) < 0.5) {
        const double w = X * (0.2 + 0.5 * uni(rng)), h = Y * (0.2 + 0.5 * uni(rng));
        const double x0 = uni(rng) * (X - w), y0 = uni(rng) * (Y - h);
        l.region = {Region::Kind::rectangle, x0, y0, x0 + w, y0 + h};
      } else {
        l.region = {Region::Kind::disc, X * uni(rng), Y * uni(rng), std::min(X, Y) * (0.15 + 0.3 * uni(rng)), 0};
      }
    }
    s.layers.push_back(std::move(l));
  }
  return s;
}

struct OracleEstimate {
  double disparity = 0.0;
  double residual = 0.0;
  double d_min = 0.0, d_max = 0.0, step = 0.0;
  bool low_confidence = false;
};

namespace detail {
inline std::vector<double> luminance_rows(const EPIPatch& p) {
  std::vector<double> lum(static_cast<std::size_t>(p.H) * p.W);
  for (int h = 0; h < p.H; ++h)
    for (int w = 0; w < p.W; ++w)
      lum[static_cast<std::size_t>(h) * p.W + w] =
          p.C == 3 ? 0.299 * p.at(h, w, 0) + 0.587 * p.at(h, w, 1) + 0.114 * p.at(h, w, 2) : p.at(h, w, 0);
  return lum;
}
}  // namespace detail

// Brute-force slope search: for every candidate d on the grid, shear the
// patch by -d, measure the angular variance (luminance) of the centre column
// averaged with `half_band` columns either side, keep the minimiser. A lone
// column is ill-conditioned where the texture has a local extremum. Ties go
// to the smallest |d|.
inline OracleEstimate shear_variance_oracle(const EPIPatch& patch, double d_min, double d_max, double step,
                                            int half_band = 2) {
  if (!(d_min < d_max)) throw ArgumentError("oracle grid needs d_min < d_max");
  if (!(step > 0.0)) throw ArgumentError("oracle grid step must be positive");
  const auto lum = detail::luminance_rows(patch);
  const int hc = (patch.H - 1) / 2, wc = (patch.W - 1) / 2;
  const int band = std::clamp(half_band, 0, wc);
  const long n = std::lround((d_max - d_min) / step);
  OracleEstimate best{0.0, std::numeric_limits<double>::infinity(), d_min, d_max, step, false};
  double worst = 0.0;
  for (long i = 0; i <= n; ++i) {
    const double cand = d_min + i * step;
    double var = 0.0;
    for (int col = wc - band; col <= wc + band; ++col) {
      double sum = 0.0, sum2 = 0.0;
      for (int h = 0; h < patch.H; ++h) {
        const double pos = col + (hc - h) * cand;
        const double fl = std::floor(pos);
        const long i0 = std::clamp<long>(static_cast<long>(fl), 0, patch.W - 1);
        const long i1 = std::clamp<long>(static_cast<long>(fl) + 1, 0, patch.W - 1);
        const double* row = &lum[static_cast<std::size_t>(h) * patch.W];
        const double val = row[i0] + (pos - fl) * (row[i1] - row[i0]);
        sum += val;
        sum2 += val * val;
      }
      const double mean = sum / patch.H;
      var += std::max(0.0, sum2 / patch.H - mean * mean);
    }
    var /= 2 * band + 1;
    worst = std::max(worst, var);
    if (var < best.residual || (var == best.residual && std::abs(cand) < std::abs(best.disparity))) {
      best.residual = var;
      best.disparity = cand;
    }
  }
  best.low_confidence = worst < 1e-8;
  return best;
}

}  // namespace epiorm
