#pragma once

// Checkpoint file:
//   8 bytes   magic "EPIORMCK"
//   u32 LE    format version
//   u64 LE    length of the JSON header
//   JSON      network config, architecture fingerprint, run metadata and the
//             ordered tensor table (name, shape, dtype)
//   payload   every tensor in table order, little-endian float32 or float64
//   u32 LE    CRC-32 of all preceding bytes
// Nothing time-dependent is stored, so identical runs give identical files.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>
#include <zlib.h>

#include "epiorm/io/files.hpp"
#include "epiorm/network.hpp"

namespace epiorm::io {

inline constexpr char kCheckpointMagic[8] = {'E', 'P', 'I', 'O', 'R', 'M', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Hash of the canonical architecture description; weights are not included.
inline std::string architecture_fingerprint(const NetworkConfig& cfg) { return fingerprint(to_json(cfg).dump()); }

struct CheckpointInfo {
  NetworkConfig network;
  std::string architecture;        // fingerprint of `network`
  std::string config_fingerprint;  // of the run configuration that produced it
  std::string precision;           // "float32" or "float64"
  nlohmann::json metadata = nlohmann::json::object();
};

namespace detail {

template <typename T>
constexpr const char* dtype_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

template <typename U>
void put_le(Bytes& out, U v) {
  for (std::size_t k = 0; k < sizeof(U); ++k) out.push_back(static_cast<unsigned char>(v >> (8 * k)));
}

template <typename U>
U get_le(const Bytes& in, std::size_t& pos) {
  if (in.size() - pos < sizeof(U)) throw ParseError("checkpoint truncated at byte " + std::to_string(pos));
  U v = 0;
  for (std::size_t k = 0; k < sizeof(U); ++k) v |= static_cast<U>(in[pos + k]) << (8 * k);
  pos += sizeof(U);
  return v;
}

template <typename T>
void put_tensor(Bytes& out, const Tensor<T>& t) {
  using Bits = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  for (T v : t.values()) put_le(out, std::bit_cast<Bits>(v));
}

// Every stored tensor with its name, in file order.
template <typename T, typename F>
void for_each_tensor(Network<T>& net, F&& f) {
  for (auto& p : net.parameters()) f(p.name, p.value);
  for (std::size_t i = 0; i < net.bn_states().size(); ++i) {
    f(net.bn_names()[i] + ".running_mean", net.bn_states()[i].running_mean);
    f(net.bn_names()[i] + ".running_var", net.bn_states()[i].running_var);
  }
}

inline std::uint32_t crc32_of(const unsigned char* data, std::size_t n) {
  uLong c = crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    c = crc32(c, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(c);
}

}  // namespace detail

template <typename T>
Bytes encode_checkpoint(Network<T>& net, const std::string& config_fingerprint,
                        const nlohmann::json& metadata = nlohmann::json::object()) {
  nlohmann::json header;
  header["network"] = to_json(net.config());
  header["architecture"] = architecture_fingerprint(net.config());
  header["config_fingerprint"] = config_fingerprint;
  header["precision"] = sizeof(T) == 4 ? "float32" : "float64";
  header["metadata"] = metadata;
  nlohmann::json table = nlohmann::json::array();
  detail::for_each_tensor(net, [&](const std::string& name, const Tensor<T>& t) {
    table.push_back({{"name", name}, {"shape", t.shape()}, {"dtype", detail::dtype_name<T>()}});
  });
  header["tensors"] = table;
  nlohmann::json updates = nlohmann::json::array();
  for (const auto& s : net.bn_states()) updates.push_back(s.updates);
  header["batchnorm_updates"] = updates;

  const std::string text = header.dump();
  Bytes out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  detail::put_le(out, kCheckpointVersion);
  detail::put_le(out, static_cast<std::uint64_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  detail::for_each_tensor(net, [&](const std::string&, const Tensor<T>& t) { detail::put_tensor(out, t); });
  detail::put_le(out, detail::crc32_of(out.data(), out.size()));
  return out;
}

template <typename T>
void save_checkpoint(Network<T>& net, const std::filesystem::path& path, const std::string& config_fingerprint,
                     const nlohmann::json& metadata = nlohmann::json::object()) {
  write_file_atomic(path, encode_checkpoint(net, config_fingerprint, metadata));
}

// Header only: magic, version, CRC and JSON are checked, tensors are not read.
inline CheckpointInfo decode_checkpoint_info(const Bytes& b, nlohmann::json* header_out = nullptr,
                                             std::size_t* payload_offset = nullptr) {
  if (b.size() < sizeof kCheckpointMagic + 16 || std::memcmp(b.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0)
    throw ParseError("not a checkpoint file (bad magic at byte 0)");
  std::size_t pos = sizeof kCheckpointMagic;
  const auto version = detail::get_le<std::uint32_t>(b, pos);
  if (version != kCheckpointVersion)
    throw ParseError("unsupported checkpoint version " + std::to_string(version) + " at byte 8");
  std::size_t crc_pos = b.size() - 4;
  const auto stored = detail::get_le<std::uint32_t>(b, crc_pos);
  if (stored != detail::crc32_of(b.data(), b.size() - 4))
    throw ParseError("checkpoint CRC mismatch at byte " + std::to_string(b.size() - 4));
  const auto len = detail::get_le<std::uint64_t>(b, pos);
  if (len > b.size() - 4 - pos) throw ParseError("checkpoint header length overruns the file at byte 12");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(b.begin() + static_cast<std::ptrdiff_t>(pos),
                                   b.begin() + static_cast<std::ptrdiff_t>(pos + len));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }
  CheckpointInfo info;
  try {
    info.network = network_config_from_json(header.at("network"));
    info.architecture = header.at("architecture").get<std::string>();
    info.config_fingerprint = header.at("config_fingerprint").get<std::string>();
    info.precision = header.at("precision").get<std::string>();
    info.metadata = header.value("metadata", nlohmann::json::object());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint header incomplete: ") + e.what());
  }
  if (info.architecture != architecture_fingerprint(info.network))
    throw ParseError("checkpoint architecture fingerprint does not match its network description");
  if (header_out) *header_out = std::move(header);
  if (payload_offset) *payload_offset = pos + len;
  return info;
}

inline CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
  return decode_checkpoint_info(read_file(path));
}

// Restores every tensor into `net`, which must have the checkpoint's
// architecture. Tensors stored in the other precision are converted.
template <typename T>
CheckpointInfo decode_checkpoint_into(const Bytes& b, Network<T>& net) {
  nlohmann::json header;
  std::size_t pos = 0;
  const CheckpointInfo info = decode_checkpoint_info(b, &header, &pos);
  if (info.architecture != architecture_fingerprint(net.config()))
    throw ArgumentError("checkpoint architecture " + info.architecture + " does not match the network (" +
                        architecture_fingerprint(net.config()) + ")");
  const auto& table = header.at("tensors");
  std::size_t k = 0;
  detail::for_each_tensor(net, [&](const std::string& name, Tensor<T>& t) {
    if (k >= table.size()) throw ParseError("checkpoint is missing tensor '" + name + "'");
    const auto& entry = table[k++];
    if (entry.at("name").get<std::string>() != name || entry.at("shape").get<Shape>() != t.shape())
      throw ParseError("checkpoint tensor '" + entry.at("name").get<std::string>() + "' does not match '" + name + "'");
    const bool f32 = entry.at("dtype").get<std::string>() == "f32";
    for (T& v : t.values()) {
      if (f32)
        v = static_cast<T>(std::bit_cast<float>(detail::get_le<std::uint32_t>(b, pos)));
      else
        v = static_cast<T>(std::bit_cast<double>(detail::get_le<std::uint64_t>(b, pos)));
    }
  });
  if (k != table.size()) throw ParseError("checkpoint holds tensors the network does not have");
  if (pos != b.size() - 4) throw ParseError("checkpoint payload size mismatch at byte " + std::to_string(pos));
  const auto& updates = header.at("batchnorm_updates");
  for (std::size_t i = 0; i < net.bn_states().size() && i < updates.size(); ++i)
    net.bn_states()[i].updates = updates[i].get<long>();
  return info;
}

template <typename T>
CheckpointInfo load_checkpoint(const std::filesystem::path& path, Network<T>& net) {
  try {
    return decode_checkpoint_into(read_file(path), net);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace epiorm::io
