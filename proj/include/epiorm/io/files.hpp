#pragma once

// Whole-file byte I/O. Every write goes to a temporary sibling first and is
// renamed over the target, so readers never observe a partial file.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <unistd.h>

#include "epiorm/errors.hpp"

namespace epiorm::io {

using Bytes = std::vector<unsigned char>;

inline Bytes read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open '" + path.string() + "' for reading");
  Bytes data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw LoadError("read failed for '" + path.string() + "'");
  return data;
}

inline std::string read_text(const std::filesystem::path& path) {
  const Bytes b = read_file(path);
  return std::string(b.begin(), b.end());
}

// Writes `data` to `path` via a temporary file in the same directory and a
// rename; the target is either the old file or the complete new one.
inline void write_file_atomic(const std::filesystem::path& path, const void* data, std::size_t size) {
  const auto dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw Error("output directory '" + dir.string() + "' does not exist");
  const auto tmp = dir / ("." + path.filename().string() + ".tmp" + std::to_string(::getpid()));
  {
    std::FILE* f = std::fopen(tmp.c_str(), "wb");
    if (!f) throw Error("cannot create '" + tmp.string() + "'");
    const bool ok = std::fwrite(data, 1, size, f) == size && std::fflush(f) == 0 && ::fsync(::fileno(f)) == 0;
    if (std::fclose(f) != 0 || !ok) {
      std::filesystem::remove(tmp, ec);
      throw Error("write failed for '" + tmp.string() + "'");
    }
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw Error("cannot move temporary file onto '" + path.string() + "'");
  }
}

inline void write_file_atomic(const std::filesystem::path& path, const Bytes& data) {
  write_file_atomic(path, data.data(), data.size());
}

inline void write_text_atomic(const std::filesystem::path& path, std::string_view text) {
  write_file_atomic(path, text.data(), text.size());
}

// 64-bit FNV-1a as 16 hex digits. Stable across platforms and runs, which
// std::hash does not promise.
inline std::string fingerprint(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace epiorm::io
