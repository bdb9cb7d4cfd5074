#pragma once

// 4D light-field container, sub-aperture views, EPI slicing and EPI patches.

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "epiorm/errors.hpp"

namespace epiorm {

// Row-major (y, x, c) float image.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<float> data;

  Image() = default;
  Image(int w, int h, int c, float fill = 0.0f)
      : width(w), height(h), channels(c),
        data(static_cast<std::size_t>(w) * h * c, fill) {}

  float& at(int x, int y, int c = 0) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  float at(int x, int y, int c = 0) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool operator==(const Image&) const = default;
};

// Samples L(u, v, x, y, c), stored contiguously in (v, u, y, x, c) order so
// that a horizontal EPI row is one contiguous (x, c) run.
class LightField4D {
 public:
  LightField4D() = default;

  LightField4D(int U, int V, int X, int Y, int C, float fill = 0.0f)
      : U_(U), V_(V), X_(X), Y_(Y), C_(C) {
    if (U < 1 || V < 1 || X < 1 || Y < 1)
      throw ArgumentError("light field extents must be >= 1");
    if (C != 1 && C != 3)
      throw ArgumentError("light field channel count must be 1 or 3, got " + std::to_string(C));
    data_.assign(static_cast<std::size_t>(U) * V * X * Y * C, fill);
  }

  int U() const { return U_; }
  int V() const { return V_; }
  int X() const { return X_; }
  int Y() const { return Y_; }
  int C() const { return C_; }
  // Angular centers; integral when the extents are odd.
  int u0() const { return (U_ - 1) / 2; }
  int v0() const { return (V_ - 1) / 2; }

  std::size_t index(int u, int v, int x, int y, int c) const {
    return ((((static_cast<std::size_t>(v) * U_ + u) * Y_ + y) * X_ + x) * C_) + c;
  }
  float& operator()(int u, int v, int x, int y, int c = 0) { return data_[index(u, v, x, y, c)]; }
  float operator()(int u, int v, int x, int y, int c = 0) const { return data_[index(u, v, x, y, c)]; }

  std::span<float> samples() { return data_; }
  std::span<const float> samples() const { return data_; }

  // True when every sample is finite and inside [0, 1].
  bool valid_intensities() const {
    for (float s : data_)
      if (!std::isfinite(s) || s < 0.0f || s > 1.0f) return false;
    return true;
  }

  bool operator==(const LightField4D&) const = default;

 private:
  int U_ = 0, V_ = 0, X_ = 0, Y_ = 0, C_ = 0;
  std::vector<float> data_;
};

enum class Orientation { horizontal, vertical };

// A angular rows by S spatial columns by C channels. For a horizontal EPI
// `fixed_view` is v0 and `fixed_pixel` the image row y_i; for a vertical EPI
// they are u0 and the image column x_i.
struct EPI {
  int A = 0;
  int S = 0;
  int C = 0;
  Orientation orientation = Orientation::horizontal;
  int fixed_view = 0;
  int fixed_pixel = 0;
  std::vector<float> data;  // (a, s, c)

  EPI() = default;
  EPI(int a, int s, int c, Orientation o = Orientation::horizontal)
      : A(a), S(s), C(c), orientation(o), data(static_cast<std::size_t>(a) * s * c, 0.0f) {}

  int center_row() const { return (A - 1) / 2; }
  float& at(int a, int s, int c = 0) { return data[(static_cast<std::size_t>(a) * S + s) * C + c]; }
  float at(int a, int s, int c = 0) const { return data[(static_cast<std::size_t>(a) * S + s) * C + c]; }
  bool operator==(const EPI&) const = default;
};

struct EPIPatch {
  int H = 0;
  int W = 0;
  int C = 0;
  int center_x = 0;
  int center_y = 0;
  std::optional<float> gt_disparity;
  std::vector<float> data;  // (h, w, c)

  EPIPatch() = default;
  EPIPatch(int h, int w, int c) : H(h), W(w), C(c), data(static_cast<std::size_t>(h) * w * c, 0.0f) {}

  float& at(int h, int w, int c = 0) { return data[(static_cast<std::size_t>(h) * W + w) * C + c]; }
  float at(int h, int w, int c = 0) const { return data[(static_cast<std::size_t>(h) * W + w) * C + c]; }
};

// Per-pixel disparity in pixels per view step, plus the evaluation mask.
struct DisparityMap {
  int width = 0;
  int height = 0;
  std::vector<float> values;
  std::vector<unsigned char> mask;  // 1 = evaluated

  DisparityMap() = default;
  DisparityMap(int w, int h, float fill = 0.0f)
      : width(w), height(h),
        values(static_cast<std::size_t>(w) * h, fill),
        mask(static_cast<std::size_t>(w) * h, 1) {}

  float& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
  float at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
  bool in_mask(int x, int y) const { return mask[static_cast<std::size_t>(y) * width + x] != 0; }
  std::size_t mask_count() const {
    std::size_t n = 0;
    for (auto m : mask) n += m != 0;
    return n;
  }
};

enum class BorderPolicy { replicate, reject };

inline Image subaperture(const LightField4D& lf, int u, int v) {
  if (u < 0 || u >= lf.U() || v < 0 || v >= lf.V())
    throw RangeError("view index (" + std::to_string(u) + ", " + std::to_string(v) + ") out of range");
  Image img(lf.X(), lf.Y(), lf.C());
  const auto src = lf.samples().subspan(lf.index(u, v, 0, 0, 0), img.data.size());
  std::copy(src.begin(), src.end(), img.data.begin());
  return img;
}

namespace detail {
inline void require_odd_angular(int extent, const char* axis) {
  if (extent % 2 == 0)
    throw ArgumentError(std::string("EPI slicing needs an odd angular extent along ") + axis);
}
}  // namespace detail

// L(u, v0, x, y_i): U rows, X columns.
inline EPI horizontal_epi(const LightField4D& lf, int y_i) {
  if (y_i < 0 || y_i >= lf.Y()) throw RangeError("row " + std::to_string(y_i) + " out of range");
  detail::require_odd_angular(lf.U(), "u");
  detail::require_odd_angular(lf.V(), "v");
  EPI epi(lf.U(), lf.X(), lf.C(), Orientation::horizontal);
  epi.fixed_view = lf.v0();
  epi.fixed_pixel = y_i;
  const std::size_t row = static_cast<std::size_t>(lf.X()) * lf.C();
  for (int u = 0; u < lf.U(); ++u) {
    auto src = lf.samples().subspan(lf.index(u, lf.v0(), 0, y_i, 0), row);
    std::copy(src.begin(), src.end(), epi.data.begin() + u * row);
  }
  return epi;
}

// L(u0, v, x_i, y): V rows, Y columns.
inline EPI vertical_epi(const LightField4D& lf, int x_i) {
  if (x_i < 0 || x_i >= lf.X()) throw RangeError("column " + std::to_string(x_i) + " out of range");
  detail::require_odd_angular(lf.U(), "u");
  detail::require_odd_angular(lf.V(), "v");
  EPI epi(lf.V(), lf.Y(), lf.C(), Orientation::vertical);
  epi.fixed_view = lf.u0();
  epi.fixed_pixel = x_i;
  for (int v = 0; v < lf.V(); ++v)
    for (int y = 0; y < lf.Y(); ++y)
      for (int c = 0; c < lf.C(); ++c) epi.at(v, y, c) = lf(lf.u0(), v, x_i, y, c);
  return epi;
}

// Width-W window of `epi` centred on spatial column `center_s`.
inline EPIPatch extract_patch(const EPI& epi, int center_s, int W,
                              BorderPolicy border = BorderPolicy::replicate) {
  if (W < 1 || W % 2 == 0) throw ArgumentError("patch width must be odd and positive, got " + std::to_string(W));
  if (center_s < 0 || center_s >= epi.S)
    throw RangeError("patch center " + std::to_string(center_s) + " outside EPI");
  const int half = (W - 1) / 2;
  if (border == BorderPolicy::reject && (center_s - half < 0 || center_s + half >= epi.S))
    throw BorderError("patch window [" + std::to_string(center_s - half) + ", " +
                      std::to_string(center_s + half) + "] exceeds EPI width " + std::to_string(epi.S));
  EPIPatch p(epi.A, W, epi.C);
  for (int a = 0; a < epi.A; ++a) {
    for (int w = 0; w < W; ++w) {
      int s = center_s - half + w;
      s = s < 0 ? 0 : (s >= epi.S ? epi.S - 1 : s);
      for (int c = 0; c < epi.C; ++c) p.at(a, w, c) = epi.at(a, s, c);
    }
  }
  if (epi.orientation == Orientation::horizontal) {
    p.center_x = center_s;
    p.center_y = epi.fixed_pixel;
  } else {
    p.center_x = epi.fixed_pixel;
    p.center_y = center_s;
  }
  return p;
}

// Swap the roles of (u, x) and (v, y).
inline LightField4D transpose(const LightField4D& lf) {
  LightField4D t(lf.V(), lf.U(), lf.Y(), lf.X(), lf.C());
  for (int v = 0; v < lf.V(); ++v)
    for (int u = 0; u < lf.U(); ++u)
      for (int y = 0; y < lf.Y(); ++y)
        for (int x = 0; x < lf.X(); ++x)
          for (int c = 0; c < lf.C(); ++c) t(v, u, y, x, c) = lf(u, v, x, y, c);
  return t;
}

}  // namespace epiorm
