#pragma once

// 8-bit PNG through libpng's simplified API. Light-field samples map to bytes
// as round(255 v) and back as b / 255, so quantised fields round-trip exactly.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <png.h>

#include "epiorm/io/files.hpp"
#include "epiorm/lightfield.hpp"

namespace epiorm::io {

struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 3;                // 1 (gray) or 3 (RGB)
  std::vector<unsigned char> data;  // (y, x, c)
};

inline Image8 decode_png(const Bytes& bytes, int channels = 0) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()))
    throw ParseError(std::string("PNG: ") + img.message);
  // channels == 0 keeps gray as gray and converts everything else to RGB
  const bool gray = channels == 1 || (channels == 0 && !(img.format & PNG_FORMAT_FLAG_COLOR));
  img.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  Image8 out;
  out.width = static_cast<int>(img.width);
  out.height = static_cast<int>(img.height);
  out.channels = gray ? 1 : 3;
  out.data.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.data.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw ParseError("PNG: " + msg);
  }
  return out;
}

inline Bytes encode_png(const Image8& im) {
  if (im.channels != 1 && im.channels != 3) throw ArgumentError("PNG writer supports 1 or 3 channels");
  if (im.data.size() != static_cast<std::size_t>(im.width) * im.height * im.channels)
    throw ShapeError("PNG payload size does not match its extents");
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(im.width);
  img.height = static_cast<png_uint_32>(im.height);
  img.format = im.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, im.data.data(), 0, nullptr))
    throw Error(std::string("PNG encode: ") + img.message);
  Bytes out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, im.data.data(), 0, nullptr))
    throw Error(std::string("PNG encode: ") + img.message);
  out.resize(size);
  return out;
}

inline Image8 read_png(const std::filesystem::path& path, int channels = 0) {
  try {
    return decode_png(read_file(path), channels);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

inline void write_png(const Image8& im, const std::filesystem::path& path) { write_file_atomic(path, encode_png(im)); }

inline unsigned char to_byte(float v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

inline float from_byte(unsigned char b) { return static_cast<float>(b) / 255.0f; }

// Every sample replaced by its 8-bit representative.
inline LightField4D quantize8(LightField4D lf) {
  for (float& s : lf.samples()) s = from_byte(to_byte(s));
  return lf;
}

inline Image8 to_image8(const Image& im) {
  Image8 out;
  out.width = im.width;
  out.height = im.height;
  out.channels = im.channels;
  out.data.resize(im.data.size());
  std::transform(im.data.begin(), im.data.end(), out.data.begin(), to_byte);
  return out;
}

// Any EPI as a (A x S) image; values are clamped to [0, 1].
inline Image8 to_image8(const EPI& e) {
  Image8 out;
  out.width = e.S;
  out.height = e.A;
  out.channels = e.C;
  out.data.resize(e.data.size());
  std::transform(e.data.begin(), e.data.end(), out.data.begin(), to_byte);
  return out;
}

// Binary map as black/white.
inline Image8 mask_image(const std::vector<unsigned char>& m, int width, int height) {
  if (m.size() != static_cast<std::size_t>(width) * height) throw ShapeError("mask does not match the image size");
  Image8 out{width, height, 1, std::vector<unsigned char>(m.size())};
  for (std::size_t i = 0; i < m.size(); ++i) out.data[i] = m[i] ? 255 : 0;
  return out;
}

}  // namespace epiorm::io
