#pragma once

// Run configuration as `key = value` lines; '#' starts a comment. Every key
// has a default, unknown or repeated keys are rejected, and the resolved
// configuration has a canonical text form whose hash is the run fingerprint.

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "epiorm/io/files.hpp"
#include "epiorm/network.hpp"
#include "epiorm/train.hpp"

namespace epiorm::io {

struct RunConfig {
  NetworkConfig network;
  TrainConfig train;
  ToyDataConfig toy;
  std::string data_source = "toy";           // "toy" or "dataset"
  std::vector<std::string> dataset_dirs;     // used when data_source == "dataset"
  std::size_t dataset_pairs = 20000;         // patch pairs sampled from datasets
  std::uint64_t init_seed = 0;

  RunConfig() {
    network.width = 16;
    train.batch_size = 32;
    train.iterations = 5000;
    train.lr = 2e-3;
    train.lr_decay_interval = 1500;
    toy.max_foreground = 4;
  }

  void validate() const {
    network.validate();
    train.validate();
    if (data_source != "toy" && data_source != "dataset")
      throw ArgumentError("data.source must be 'toy' or 'dataset', got '" + data_source + "'");
    if (data_source == "dataset" && dataset_dirs.empty()) throw ArgumentError("data.dirs is empty");
    if (toy.pairs == 0 || dataset_pairs == 0) throw RangeError("pair count must be positive");
    if (!(toy.d_min <= toy.d_max)) throw RangeError("data.d_min must not exceed data.d_max");
    if (toy.views != network.H || toy.channels != network.C)
      throw ArgumentError("toy data views/channels must match the network");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline std::string fmt_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename V>
V parse_number(const std::string& text) {
  V v{};
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size()) throw ArgumentError("not a number: '" + text + "'");
  return v;
}

inline bool parse_bool(const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ArgumentError("not a boolean: '" + text + "'");
}

inline std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline std::string join(const std::vector<std::string>& items) {
  std::string s;
  for (std::size_t i = 0; i < items.size(); ++i) s += (i ? "," : "") + items[i];
  return s;
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

// Key table in canonical order.
inline const std::vector<std::pair<std::string, Field>>& fields() {
  using C = RunConfig;
  auto int_field = [](auto getter) {
    return Field{[getter](C& c, const std::string& v) {
                   auto& ref = getter(c);
                   ref = parse_number<std::remove_reference_t<decltype(ref)>>(v);
                 },
                 [getter](const C& c) { return std::to_string(getter(const_cast<C&>(c))); }};
  };
  auto real_field = [](auto getter) {
    return Field{[getter](C& c, const std::string& v) { getter(c) = parse_number<double>(v); },
                 [getter](const C& c) { return fmt_real(getter(const_cast<C&>(c))); }};
  };
  auto bool_field = [](auto getter) {
    return Field{[getter](C& c, const std::string& v) { getter(c) = parse_bool(v); },
                 [getter](const C& c) { return std::string(getter(const_cast<C&>(c)) ? "true" : "false"); }};
  };
  static const std::vector<std::pair<std::string, Field>> table = {
      {"network.views", int_field([](C& c) -> int& { return c.network.H; })},
      {"network.patch_width", int_field([](C& c) -> int& { return c.network.W; })},
      {"network.channels", int_field([](C& c) -> int& { return c.network.C; })},
      {"network.width", int_field([](C& c) -> int& { return c.network.width; })},
      {"network.num_orms", int_field([](C& c) -> int& { return c.network.num_orms; })},
      {"network.orm_channels", int_field([](C& c) -> int& { return c.network.orm_channels; })},
      {"network.orm_bias", bool_field([](C& c) -> bool& { return c.network.orm_bias; })},
      {"train.iterations", int_field([](C& c) -> long& { return c.train.iterations; })},
      {"train.batch_size", int_field([](C& c) -> int& { return c.train.batch_size; })},
      {"train.lr", real_field([](C& c) -> double& { return c.train.lr; })},
      {"train.lr_decay_interval", int_field([](C& c) -> long& { return c.train.lr_decay_interval; })},
      {"train.weight_decay", real_field([](C& c) -> double& { return c.train.weight_decay; })},
      {"train.rho", real_field([](C& c) -> double& { return c.train.rho; })},
      {"train.augment", bool_field([](C& c) -> bool& { return c.train.augment; })},
      {"train.shifts",
       Field{[](C& c, const std::string& v) {
               c.train.shifts.clear();
               for (const auto& s : split_list(v)) c.train.shifts.push_back(parse_number<double>(s));
             },
             [](const C& c) {
               std::vector<std::string> s;
               for (double v : c.train.shifts) s.push_back(fmt_real(v));
               return join(s);
             }}},
      {"train.interp",
       Field{[](C& c, const std::string& v) {
               if (v == "linear") c.train.interp = Interp::linear;
               else if (v == "nearest") c.train.interp = Interp::nearest;
               else throw ArgumentError("interp must be 'linear' or 'nearest', got '" + v + "'");
             },
             [](const C& c) { return std::string(c.train.interp == Interp::linear ? "linear" : "nearest"); }}},
      {"train.seed", int_field([](C& c) -> std::uint64_t& { return c.train.seed; })},
      {"train.log_interval", int_field([](C& c) -> long& { return c.train.log_interval; })},
      {"train.checkpoint_interval", int_field([](C& c) -> long& { return c.train.checkpoint_interval; })},
      {"train.val_fraction", real_field([](C& c) -> double& { return c.train.val_fraction; })},
      {"train.precision",
       Field{[](C& c, const std::string& v) {
               if (v == "float32") c.train.precision = Precision::f32;
               else if (v == "float64") c.train.precision = Precision::f64;
               else throw ArgumentError("precision must be 'float32' or 'float64', got '" + v + "'");
             },
             [](const C& c) { return to_string(c.train.precision); }}},
      {"data.source", Field{[](C& c, const std::string& v) { c.data_source = v; },
                            [](const C& c) { return c.data_source; }}},
      {"data.dirs", Field{[](C& c, const std::string& v) { c.dataset_dirs = split_list(v); },
                          [](const C& c) { return join(c.dataset_dirs); }}},
      {"data.dataset_pairs", int_field([](C& c) -> std::size_t& { return c.dataset_pairs; })},
      {"data.pairs", int_field([](C& c) -> std::size_t& { return c.toy.pairs; })},
      {"data.d_min", real_field([](C& c) -> double& { return c.toy.d_min; })},
      {"data.d_max", real_field([](C& c) -> double& { return c.toy.d_max; })},
      {"data.scene_size", int_field([](C& c) -> int& { return c.toy.scene_size; })},
      {"data.max_foreground", int_field([](C& c) -> int& { return c.toy.max_foreground; })},
      {"data.seed", int_field([](C& c) -> std::uint64_t& { return c.toy.seed; })},
      {"init_seed", int_field([](C& c) -> std::uint64_t& { return c.init_seed; })},
  };
  return table;
}

inline const Field* find_field(const std::string& key) {
  for (const auto& [k, f] : fields())
    if (k == key) return &f;
  return nullptr;
}

}  // namespace detail

// Sets one key; the caller validates once all keys are in.
inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
  const auto* f = detail::find_field(key);
  if (!f) throw ParseError("unknown config key '" + key + "'");
  try {
    f->set(c, value);
  } catch (const ArgumentError& e) {
    throw ParseError("config key '" + key + "': " + e.what());
  }
  // toy scenes follow the network's angular and colour extents
  c.toy.views = c.network.H;
  c.toy.channels = c.network.C;
}

inline RunConfig parse_config(const std::string& text, const std::string& origin = "config") {
  RunConfig c;
  std::map<std::string, int> seen;
  std::istringstream in(text);
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(number) + ": ";
    if (eq == std::string::npos) throw ParseError(where + "expected 'key = value'");
    const std::string key = detail::trim(line.substr(0, eq)), value = detail::trim(line.substr(eq + 1));
    if (seen.count(key)) throw ParseError(where + "key '" + key + "' repeats line " + std::to_string(seen[key]));
    seen[key] = number;
    try {
      set_config_value(c, key, value);
    } catch (const ParseError& e) {
      throw ParseError(where + e.what());
    }
  }
  return c;
}

inline RunConfig read_config(const std::filesystem::path& path) {
  return parse_config(read_text(path), path.string());
}

// Every key with its resolved value, in table order.
inline std::string canonical_text(const RunConfig& c) {
  std::string out;
  for (const auto& [k, f] : detail::fields()) out += k + " = " + f.get(c) + "\n";
  return out;
}

inline std::string config_fingerprint(const RunConfig& c) { return fingerprint(canonical_text(c)); }

}  // namespace epiorm::io
