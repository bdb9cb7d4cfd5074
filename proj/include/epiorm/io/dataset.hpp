#pragma once

// Benchmark-layout light-field directories: U*V view images named by a
// printf-style pattern with view index k = v * U + u, an INI parameters file,
// and an optional single-channel PFM ground-truth disparity map.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <regex>
#include <sstream>
#include <string>

#include <boost/lexical_cast.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "epiorm/io/files.hpp"
#include "epiorm/io/pfm.hpp"
#include "epiorm/io/png.hpp"
#include "epiorm/lightfield.hpp"

namespace epiorm::io {

// File names and INI keys; defaults follow the common 4D benchmark layout.
struct DatasetLayout {
  std::string view_pattern = "input_Cam%03d.png";
  std::string parameters_file = "parameters.cfg";
  std::string gt_file = "gt_disp_lowres.pfm";
  std::string key_views_x = "extrinsics.num_cams_x";
  std::string key_views_y = "extrinsics.num_cams_y";
  std::string key_width = "intrinsics.image_resolution_x_px";
  std::string key_height = "intrinsics.image_resolution_y_px";
  std::string key_focal_length = "intrinsics.focal_length_mm";
  std::string key_baseline = "extrinsics.baseline_mm";
  std::string key_disp_min = "meta.disp_min";
  std::string key_disp_max = "meta.disp_max";

  std::string view_name(int k) const {
    static const std::regex one_int(R"([^%]*%0?[0-9]*d[^%]*)");
    if (!std::regex_match(view_pattern, one_int))
      throw ArgumentError("view pattern '" + view_pattern + "' must contain exactly one integer conversion");
    char buf[512];
    std::snprintf(buf, sizeof buf, view_pattern.c_str(), k);
    return buf;
  }
};

struct DatasetMeta {
  int U = 9;
  int V = 9;
  int X = 0;
  int Y = 0;
  double focal_length_mm = 0.0;
  double baseline_mm = 0.0;
  double disp_min = -2.0;
  double disp_max = 2.0;

  void validate() const {
    if (U < 1 || V < 1 || X < 1 || Y < 1) throw LoadError("dataset extents must be positive");
    if (!std::isfinite(disp_min) || !std::isfinite(disp_max) || disp_min > disp_max)
      throw LoadError("dataset disparity range must be finite with min <= max");
  }
};

struct Dataset {
  std::string name;
  LightField4D lf;
  std::optional<DisparityMap> gt;
  DatasetMeta meta;
};

inline DatasetMeta read_parameters(const std::filesystem::path& path, const DatasetLayout& layout = {}) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream in(read_text(path));
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ParseError(path.string() + ": " + e.message() + " at line " + std::to_string(e.line()));
  }
  auto get = [&](const std::string& key, auto fallback, bool required) {
    using V = decltype(fallback);
    const auto node = tree.get_optional<std::string>(pt::ptree::path_type(key, '.'));
    if (!node) {
      if (required) throw LoadError(path.string() + ": missing key '" + key + "'");
      return fallback;
    }
    try {
      return boost::lexical_cast<V>(*node);
    } catch (const boost::bad_lexical_cast&) {
      throw ParseError(path.string() + ": key '" + key + "' has invalid value '" + *node + "'");
    }
  };
  DatasetMeta m;
  m.U = get(layout.key_views_x, 9, false);
  m.V = get(layout.key_views_y, 9, false);
  m.X = get(layout.key_width, 0, true);
  m.Y = get(layout.key_height, 0, true);
  m.focal_length_mm = get(layout.key_focal_length, 0.0, false);
  m.baseline_mm = get(layout.key_baseline, 0.0, false);
  m.disp_min = get(layout.key_disp_min, -2.0, false);
  m.disp_max = get(layout.key_disp_max, 2.0, false);
  m.validate();
  return m;
}

inline std::string format_parameters(const DatasetMeta& m, const DatasetLayout& layout = {}) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  auto put = [&](const std::string& key, const auto& v) { tree.put(pt::ptree::path_type(key, '.'), v); };
  auto put_real = [&](const std::string& key, double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    put(key, std::string(buf));
  };
  put(layout.key_views_x, m.U);
  put(layout.key_views_y, m.V);
  put(layout.key_width, m.X);
  put(layout.key_height, m.Y);
  put_real(layout.key_focal_length, m.focal_length_mm);
  put_real(layout.key_baseline, m.baseline_mm);
  put_real(layout.key_disp_min, m.disp_min);
  put_real(layout.key_disp_max, m.disp_max);
  std::ostringstream os;
  pt::write_ini(os, tree);
  return os.str();
}

// Views assembled in (v, u) order; ground truth attached when the file is
// present. `channels` is 3 for colour or 1 for luminance.
inline Dataset load_dataset(const std::filesystem::path& dir, const DatasetLayout& layout = {}, int channels = 3) {
  if (!std::filesystem::is_directory(dir)) throw LoadError("dataset directory '" + dir.string() + "' not found");
  Dataset ds;
  ds.name = dir.filename().empty() ? dir.parent_path().filename().string() : dir.filename().string();
  const auto params = dir / layout.parameters_file;
  if (!std::filesystem::exists(params)) throw LoadError("dataset '" + ds.name + "' has no " + layout.parameters_file);
  ds.meta = read_parameters(params, layout);
  const auto& m = ds.meta;
  ds.lf = LightField4D(m.U, m.V, m.X, m.Y, channels);
  for (int k = 0; k < m.U * m.V; ++k) {
    const auto path = dir / layout.view_name(k);
    if (!std::filesystem::exists(path))
      throw LoadError("dataset '" + ds.name + "' is missing view " + std::to_string(k) + " (" + path.string() + ")");
    const Image8 im = read_png(path, channels);
    if (im.width != m.X || im.height != m.Y)
      throw LoadError("view " + std::to_string(k) + " is " + std::to_string(im.width) + "x" +
                      std::to_string(im.height) + ", parameters say " + std::to_string(m.X) + "x" +
                      std::to_string(m.Y));
    const int u = k % m.U, v = k / m.U;
    float* dst = &ds.lf(u, v, 0, 0, 0);
    for (std::size_t i = 0; i < im.data.size(); ++i) dst[i] = from_byte(im.data[i]);
  }
  const auto gt = dir / layout.gt_file;
  if (std::filesystem::exists(gt)) {
    auto d = read_disparity(gt);
    if (d.width != m.X || d.height != m.Y)
      throw LoadError("ground truth is " + std::to_string(d.width) + "x" + std::to_string(d.height) +
                      ", parameters say " + std::to_string(m.X) + "x" + std::to_string(m.Y));
    ds.gt = std::move(d);
  }
  return ds;
}

// Writes views as 8-bit PNG, so loading returns quantize8(lf).
inline void write_dataset(const std::filesystem::path& dir, const LightField4D& lf, const DisparityMap* gt,
                          DatasetMeta meta, const DatasetLayout& layout = {}) {
  std::filesystem::create_directories(dir);
  meta.U = lf.U();
  meta.V = lf.V();
  meta.X = lf.X();
  meta.Y = lf.Y();
  meta.validate();
  for (int v = 0; v < lf.V(); ++v)
    for (int u = 0; u < lf.U(); ++u) write_png(to_image8(subaperture(lf, u, v)), dir / layout.view_name(v * lf.U() + u));
  write_text_atomic(dir / layout.parameters_file, format_parameters(meta, layout));
  if (gt) {
    if (gt->width != lf.X() || gt->height != lf.Y()) throw ShapeError("ground truth does not match the light field");
    write_disparity(*gt, dir / layout.gt_file);
  }
}

}  // namespace epiorm::io
