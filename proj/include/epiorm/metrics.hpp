#pragma once

// Benchmark metrics over an evaluation mask: bad-pixel ratio, MSE x 100, and
// the matching error map.

#include <cmath>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "epiorm/errors.hpp"
#include "epiorm/lightfield.hpp"

namespace epiorm {

using Mask = std::vector<unsigned char>;

namespace detail {
inline void check_metric_inputs(const DisparityMap& d, const DisparityMap& gt, const Mask& mask) {
  if (d.width != gt.width || d.height != gt.height)
    throw ShapeError("disparity maps differ in size: " + std::to_string(d.width) + "x" + std::to_string(d.height) +
                     " vs " + std::to_string(gt.width) + "x" + std::to_string(gt.height));
  if (mask.size() != d.values.size()) throw ShapeError("mask size does not match the disparity map");
}

inline std::size_t mask_size(const Mask& mask) {
  std::size_t n = 0;
  for (auto m : mask) n += m != 0;
  if (n == 0) throw ArgumentError("evaluation mask is empty");
  return n;
}

// |d - gt| > t, evaluated in single precision so that an error of exactly
// float(t) is not counted.
inline bool is_bad(float d, float gt, double t) { return std::abs(d - gt) > static_cast<float>(t); }
}  // namespace detail

// Binary map: on where the pixel is inside the mask and its error exceeds t.
inline Mask error_map(const DisparityMap& d, const DisparityMap& gt, const Mask& mask, double t = 0.07) {
  detail::check_metric_inputs(d, gt, mask);
  Mask out(mask.size(), 0);
  for (std::size_t i = 0; i < mask.size(); ++i)
    out[i] = mask[i] != 0 && detail::is_bad(d.values[i], gt.values[i], t) ? 1 : 0;
  return out;
}

inline Mask error_map(const DisparityMap& d, const DisparityMap& gt, double t = 0.07) {
  return error_map(d, gt, Mask(d.values.size(), 1), t);
}

// Percentage of masked pixels with |d - gt| > t.
inline double badpix(const DisparityMap& d, const DisparityMap& gt, const Mask& mask, double t = 0.07) {
  const Mask on = error_map(d, gt, mask, t);
  std::size_t bad = 0;
  for (auto m : on) bad += m;
  return 100.0 * static_cast<double>(bad) / static_cast<double>(detail::mask_size(mask));
}

// Mean over the mask of (d - gt)^2, times 100.
inline double mse100(const DisparityMap& d, const DisparityMap& gt, const Mask& mask) {
  detail::check_metric_inputs(d, gt, mask);
  const std::size_t n = detail::mask_size(mask);
  double sum = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) {
      const double e = static_cast<double>(d.values[i]) - static_cast<double>(gt.values[i]);
      sum += e * e;
    }
  return sum / static_cast<double>(n) * 100.0;
}

inline Mask intersect(const Mask& a, const Mask& b) {
  if (a.size() != b.size()) throw ShapeError("masks differ in size");
  Mask out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] && b[i] ? 1 : 0;
  return out;
}

struct EvalReport {
  std::string scene;
  std::string mask_kind;  // "interior" or "dataset"
  double badpix = 0.0;
  double mse100 = 0.0;
  double threshold = 0.07;
  double runtime_seconds = 0.0;
  std::string fingerprint;

  std::string to_text() const {
    std::ostringstream os;
    char buf[64];
    os << "scene: " << scene << '\n';
    os << "mask: " << mask_kind << '\n';
    std::snprintf(buf, sizeof buf, "%.2f", badpix);
    os << "badpix(" << threshold << "): " << buf << '\n';
    std::snprintf(buf, sizeof buf, "%.4f", mse100);
    os << "mse100: " << buf << '\n';
    std::snprintf(buf, sizeof buf, "%.3f", runtime_seconds);
    os << "runtime_seconds: " << buf << '\n';
    os << "fingerprint: " << fingerprint << '\n';
    return os.str();
  }

  static std::string table_header() { return "scene,mask,threshold,badpix,mse100,runtime_seconds,fingerprint"; }

  std::string table_row() const {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s,%s,%g,%.2f,%.4f,%.3f,%s", scene.c_str(), mask_kind.c_str(), threshold, badpix,
                  mse100, runtime_seconds, fingerprint.c_str());
    return buf;
  }
};

inline EvalReport evaluate(const std::string& scene, const DisparityMap& d, const DisparityMap& gt, const Mask& mask,
                           const std::string& mask_kind, double t = 0.07) {
  EvalReport r;
  r.scene = scene;
  r.mask_kind = mask_kind;
  r.threshold = t;
  r.badpix = badpix(d, gt, mask, t);
  r.mse100 = mse100(d, gt, mask);
  return r;
}

// Metric rows against named model variants, laid out as
//   | Metric | Baseline | w/ ORM | w/ EPIR | Full model |
struct AblationTable {
  std::vector<std::string> columns;
  std::vector<double> badpix;
  std::vector<double> mse100;
  std::string fingerprint;

  std::string render() const {
    std::ostringstream os;
    os << "| Metric |";
    for (const auto& c : columns) os << ' ' << c << " |";
    os << "\n|---|";
    for (std::size_t i = 0; i < columns.size(); ++i) os << "---|";
    char buf[32];
    os << "\n| BadPix |";
    for (double v : badpix) {
      std::snprintf(buf, sizeof buf, " %.2f |", v);
      os << buf;
    }
    os << "\n| MSE |";
    for (double v : mse100) {
      std::snprintf(buf, sizeof buf, " %.3f |", v);
      os << buf;
    }
    os << '\n';
    if (!fingerprint.empty()) os << "fingerprint: " << fingerprint << '\n';
    return os.str();
  }
};

}  // namespace epiorm
