#pragma once

// Per-view disparity shift, EPI / light-field refocusing and the
// refocusing-based augmentation of training samples.

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "epiorm/errors.hpp"
#include "epiorm/lightfield.hpp"

namespace epiorm {

enum class Interp { nearest, linear };

// Shift disparity in pixels per view step. Can be built from focal length,
// baseline and depth, in which case s = f * baseline / Z.
struct RefocusParams {
  double s = 0.0;

  static RefocusParams from_shift(double s) {
    if (!std::isfinite(s)) throw ArgumentError("refocus shift must be finite");
    return {s};
  }
  static RefocusParams from_geometry(double focal, double baseline, double depth) {
    if (!(depth > 0.0)) throw ArgumentError("depth must be positive");
    return from_shift(focal * baseline / depth);
  }
};

// Displacement of view `u` relative to the reference view `u0`.
constexpr double view_shift(int u, int u0, double s) { return (u0 - u) * s; }

constexpr double adjust_gt(double gt, double s) { return gt - s; }

namespace detail {

// Sample a strided 1-D signal at real position `pos` with edge replication.
inline float sample_line(const float* base, int n, std::ptrdiff_t stride, double pos, Interp interp) {
  if (interp == Interp::nearest) {
    long i = static_cast<long>(std::floor(pos + 0.5));
    i = std::clamp<long>(i, 0, n - 1);
    return base[i * stride];
  }
  const double fl = std::floor(pos);
  const float f = static_cast<float>(pos - fl);
  long i0 = static_cast<long>(fl);
  long i1 = i0 + 1;
  i0 = std::clamp<long>(i0, 0, n - 1);
  i1 = std::clamp<long>(i1, 0, n - 1);
  const float a = base[i0 * stride];
  const float b = base[i1 * stride];
  return a + f * (b - a);
}

}  // namespace detail

// Row u of the result is row u of `epi` resampled at x + (u0 - u) * s.
inline EPI refocus_epi(const EPI& epi, double s, Interp interp = Interp::linear) {
  if (!std::isfinite(s)) throw ArgumentError("refocus shift must be finite");
  EPI out = epi;
  const int u0 = epi.center_row();
  for (int a = 0; a < epi.A; ++a) {
    const double shift = view_shift(a, u0, s);
    if (shift == 0.0) continue;
    for (int c = 0; c < epi.C; ++c) {
      const float* base = &epi.data[static_cast<std::size_t>(a) * epi.S * epi.C + c];
      for (int x = 0; x < epi.S; ++x)
        out.at(a, x, c) = detail::sample_line(base, epi.S, epi.C, x + shift, interp);
    }
  }
  return out;
}

// Shifts view (u, v) by ((u0 - u) s, (v0 - v) s). The x interpolation is
// done first and with the same arithmetic as refocus_epi so that
// horizontal_epi(refocus_lightfield(lf, s), y) == refocus_epi(horizontal_epi(lf, y), s) bitwise.
inline LightField4D refocus_lightfield(const LightField4D& lf, double s, Interp interp = Interp::linear) {
  if (!std::isfinite(s)) throw ArgumentError("refocus shift must be finite");
  LightField4D out = lf;
  const int X = lf.X(), Y = lf.Y(), C = lf.C();
  std::vector<float> row(static_cast<std::size_t>(X) * C);
  std::vector<float> row_next(row.size());
  for (int v = 0; v < lf.V(); ++v) {
    const double dy = view_shift(v, lf.v0(), s);
    for (int u = 0; u < lf.U(); ++u) {
      const double dx = view_shift(u, lf.u0(), s);
      if (dx == 0.0 && dy == 0.0) continue;
      auto shifted_row = [&](long y, std::vector<float>& dst) {
        y = std::clamp<long>(y, 0, Y - 1);
        const float* base = &lf.samples()[lf.index(u, v, 0, static_cast<int>(y), 0)];
        for (int x = 0; x < X; ++x)
          for (int c = 0; c < C; ++c)
            dst[static_cast<std::size_t>(x) * C + c] =
                dx == 0.0 ? base[static_cast<std::size_t>(x) * C + c]
                          : detail::sample_line(base + c, X, C, x + dx, interp);
      };
      for (int y = 0; y < Y; ++y) {
        const double py = y + dy;
        if (interp == Interp::nearest || dy == 0.0) {
          const long yi = interp == Interp::nearest ? static_cast<long>(std::floor(py + 0.5)) : y;
          shifted_row(yi, row);
          std::copy(row.begin(), row.end(), &out(u, v, 0, y, 0));
          continue;
        }
        const double fl = std::floor(py);
        const float f = static_cast<float>(py - fl);
        shifted_row(static_cast<long>(fl), row);
        shifted_row(static_cast<long>(fl) + 1, row_next);
        float* dst = &out(u, v, 0, y, 0);
        for (std::size_t i = 0; i < row.size(); ++i) dst[i] = row[i] + f * (row_next[i] - row[i]);
      }
    }
  }
  return out;
}

// Full-width horizontal and vertical EPIs through one scene pixel. Keeping
// whole EPIs (rather than cropped patches) lets refocusing pull in content
// from outside the patch window.
struct AugmentSeed {
  EPI horizontal;
  EPI vertical;
  int center_x = 0;  // spatial column in the horizontal EPI
  int center_y = 0;  // spatial column in the vertical EPI
  double gt = 0.0;
};

struct AugmentedSample {
  EPIPatch horizontal;
  EPIPatch vertical;
  double gt = 0.0;     // adjusted ground truth
  double shift = 0.0;  // refocus shift applied, 0 for the original
  std::size_t seed_index = 0;
};

// Largest |disparity| whose line still stays inside a W-wide, A-tall patch.
constexpr double representable_slope(int A, int W, double safety = 0.9) {
  return A > 1 ? safety * (W - 1) / (2.0 * (A - 1)) : 0.0;
}

inline AugmentedSample make_sample(const AugmentSeed& seed, double s, int W, Interp interp,
                                   std::size_t index) {
  AugmentedSample out;
  const EPI h = s == 0.0 ? seed.horizontal : refocus_epi(seed.horizontal, s, interp);
  const EPI v = s == 0.0 ? seed.vertical : refocus_epi(seed.vertical, s, interp);
  out.horizontal = extract_patch(h, seed.center_x, W, BorderPolicy::replicate);
  out.vertical = extract_patch(v, seed.center_y, W, BorderPolicy::replicate);
  out.gt = adjust_gt(seed.gt, s);
  out.shift = s;
  out.seed_index = index;
  out.horizontal.gt_disparity = static_cast<float>(out.gt);
  out.vertical.gt_disparity = static_cast<float>(out.gt);
  return out;
}

inline void validate_shifts(const std::vector<double>& shifts) {
  std::set<double> seen;
  for (double s : shifts) {
    if (!std::isfinite(s)) throw ArgumentError("augmentation shifts must be finite");
    if (s == 0.0) throw ArgumentError("augmentation shifts must exclude 0 (the original is always kept)");
    if (!seen.insert(s).second) throw ArgumentError("duplicate augmentation shift " + std::to_string(s));
  }
}

// Each seed yields the original plus one refocused copy per shift, so the
// output holds seeds.size() * (shifts.size() + 1) samples, seed-major.
inline std::vector<AugmentedSample> augment(const std::vector<AugmentSeed>& seeds,
                                            const std::vector<double>& shifts, int W = 29,
                                            Interp interp = Interp::linear) {
  validate_shifts(shifts);
  std::vector<AugmentedSample> out;
  out.reserve(seeds.size() * (shifts.size() + 1));
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    out.push_back(make_sample(seeds[i], 0.0, W, interp, i));
    for (double s : shifts) out.push_back(make_sample(seeds[i], s, W, interp, i));
  }
  return out;
}

// Drops samples whose adjusted target left the patch; refocused copies only.
inline std::vector<AugmentedSample> drop_unrepresentable(std::vector<AugmentedSample> samples,
                                                         double safety = 0.9) {
  std::erase_if(samples, [&](const AugmentedSample& s) {
    return s.shift != 0.0 &&
           std::abs(s.gt) > representable_slope(s.horizontal.H, s.horizontal.W, safety);
  });
  return samples;
}

inline const std::vector<double>& default_shift_set() {
  static const std::vector<double> shifts{-1.5, -1.0, -0.5, 0.5, 1.0, 1.5, 2.0};
  return shifts;
}

}  // namespace epiorm
