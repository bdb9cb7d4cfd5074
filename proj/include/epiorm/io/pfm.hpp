#pragma once

// Portable float map. Header: "Pf" (1 channel) or "PF" (3 channels), width
// and height, then a non-zero scale whose sign gives the byte order
// (negative = little-endian), each token separated by whitespace and the
// scale followed by exactly one whitespace byte. The payload is 32-bit
// floats, rows stored bottom-up. In memory rows run top-down.

#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "epiorm/io/files.hpp"
#include "epiorm/lightfield.hpp"

namespace epiorm::io {

struct PfmImage {
  int width = 0;
  int height = 0;
  int channels = 1;
  float scale = 1.0f;       // magnitude of the header scale
  std::vector<float> data;  // (y, x, c), y = 0 is the top row

  float at(int x, int y, int c = 0) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

namespace detail {

inline ParseError pfm_error(const std::string& what, std::size_t offset) {
  return ParseError("PFM: " + what + " at byte " + std::to_string(offset));
}

inline std::uint32_t byteswap32(std::uint32_t v) {
  return (v >> 24) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24);
}

// Next whitespace-delimited token starting at `pos`; leading whitespace is
// skipped and `pos` is left on the delimiter.
inline std::string_view pfm_token(const Bytes& b, std::size_t& pos, const char* name) {
  while (pos < b.size() && std::isspace(b[pos])) ++pos;
  const std::size_t start = pos;
  while (pos < b.size() && !std::isspace(b[pos])) ++pos;
  if (start == pos) throw pfm_error(std::string("missing ") + name, start);
  if (pos == b.size()) throw pfm_error(std::string("header ends inside ") + name, start);
  return {reinterpret_cast<const char*>(b.data()) + start, pos - start};
}

}  // namespace detail

inline PfmImage decode_pfm(const Bytes& b) {
  if (b.size() < 3) throw detail::pfm_error("file too short for a header", b.size());
  PfmImage img;
  if (b[0] != 'P' || (b[1] != 'f' && b[1] != 'F')) throw detail::pfm_error("bad magic, expected Pf or PF", 0);
  if (!std::isspace(b[2])) throw detail::pfm_error("magic not followed by whitespace", 2);
  img.channels = b[1] == 'F' ? 3 : 1;
  std::size_t pos = 2;
  auto parse_int = [&](const char* name) {
    const auto tok = detail::pfm_token(b, pos, name);
    const std::size_t at = static_cast<std::size_t>(reinterpret_cast<const unsigned char*>(tok.data()) - b.data());
    int v = 0;
    const auto [end, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || end != tok.data() + tok.size() || v <= 0)
      throw detail::pfm_error(std::string("invalid ") + name + " '" + std::string(tok) + "'", at);
    return v;
  };
  img.width = parse_int("width");
  img.height = parse_int("height");
  const auto tok = detail::pfm_token(b, pos, "scale");
  const std::size_t scale_at = static_cast<std::size_t>(reinterpret_cast<const unsigned char*>(tok.data()) - b.data());
  double scale = 0.0;
  const auto [end, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), scale);
  if (ec != std::errc() || end != tok.data() + tok.size() || scale == 0.0 || !std::isfinite(scale))
    throw detail::pfm_error("invalid scale '" + std::string(tok) + "'", scale_at);
  ++pos;  // the single whitespace byte ending the header
  img.scale = static_cast<float>(std::abs(scale));
  const bool little = scale < 0.0;

  const std::size_t count = static_cast<std::size_t>(img.width) * img.height * img.channels;
  if (b.size() - pos < count * 4)
    throw detail::pfm_error("truncated payload: need " + std::to_string(count * 4) + " bytes, have " +
                                std::to_string(b.size() - pos),
                            b.size());
  img.data.resize(count);
  const bool swap = little != (std::endian::native == std::endian::little);
  const std::size_t row = static_cast<std::size_t>(img.width) * img.channels;
  for (int r = 0; r < img.height; ++r) {
    const unsigned char* src = b.data() + pos + static_cast<std::size_t>(r) * row * 4;
    float* dst = img.data.data() + static_cast<std::size_t>(img.height - 1 - r) * row;
    for (std::size_t i = 0; i < row; ++i) {
      std::uint32_t bits;
      std::memcpy(&bits, src + 4 * i, 4);
      if (swap) bits = detail::byteswap32(bits);
      std::memcpy(dst + i, &bits, 4);
    }
  }
  return img;
}

// Little-endian payload, header scale -scale.
inline Bytes encode_pfm(const PfmImage& img) {
  if (img.channels != 1 && img.channels != 3) throw ArgumentError("PFM supports 1 or 3 channels");
  if (img.width <= 0 || img.height <= 0) throw ArgumentError("PFM extents must be positive");
  if (img.data.size() != static_cast<std::size_t>(img.width) * img.height * img.channels)
    throw ShapeError("PFM payload size does not match its extents");
  if (!(img.scale > 0.0f)) throw ArgumentError("PFM scale magnitude must be positive");
  char header[96];
  const int n = std::snprintf(header, sizeof header, "%s\n%d %d\n-%g\n", img.channels == 3 ? "PF" : "Pf", img.width,
                              img.height, static_cast<double>(img.scale));
  Bytes out(header, header + n);
  const std::size_t row = static_cast<std::size_t>(img.width) * img.channels;
  out.reserve(out.size() + img.data.size() * 4);
  for (int r = img.height - 1; r >= 0; --r)
    for (std::size_t i = 0; i < row; ++i) {
      std::uint32_t bits;
      std::memcpy(&bits, img.data.data() + static_cast<std::size_t>(r) * row + i, 4);
      if constexpr (std::endian::native == std::endian::big) bits = detail::byteswap32(bits);
      for (int k = 0; k < 4; ++k) out.push_back(static_cast<unsigned char>(bits >> (8 * k)));
    }
  return out;
}

inline PfmImage read_pfm(const std::filesystem::path& path) {
  try {
    return decode_pfm(read_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

inline void write_pfm(const PfmImage& img, const std::filesystem::path& path) {
  write_file_atomic(path, encode_pfm(img));
}

// Non-finite entries are left out of the mask.
inline DisparityMap to_disparity(const PfmImage& img) {
  if (img.channels != 1) throw ShapeError("disparity PFM must have one channel");
  DisparityMap d(img.width, img.height);
  d.values = img.data;
  for (std::size_t i = 0; i < d.values.size(); ++i) d.mask[i] = std::isfinite(d.values[i]) ? 1 : 0;
  return d;
}

inline PfmImage to_pfm(const DisparityMap& d) {
  PfmImage img;
  img.width = d.width;
  img.height = d.height;
  img.channels = 1;
  img.data = d.values;
  return img;
}

inline DisparityMap read_disparity(const std::filesystem::path& path) { return to_disparity(read_pfm(path)); }

inline void write_disparity(const DisparityMap& d, const std::filesystem::path& path) {
  write_pfm(to_pfm(d), path);
}

}  // namespace epiorm::io
