// Command-line front end. Exit codes: 0 success, 1 usage or validation
// error, 2 any other failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "epiorm/gradsuite.hpp"
#include "epiorm/io/checkpoint.hpp"
#include "epiorm/io/config.hpp"
#include "epiorm/io/dataset.hpp"
#include "epiorm/io/pfm.hpp"
#include "epiorm/io/png.hpp"
#include "epiorm/metrics.hpp"
#include "epiorm/refocus.hpp"
#include "epiorm/synth.hpp"
#include "epiorm/train.hpp"

using namespace epiorm;
namespace fs = std::filesystem;

namespace {

struct Globals {
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  std::optional<std::string> precision;
  bool verbose = false;
  bool quiet = false;
};

Precision parse_precision(const std::string& p) {
  if (p == "float32") return Precision::f32;
  if (p == "float64") return Precision::f64;
  throw ArgumentError("precision must be float32 or float64, got '" + p + "'");
}

Interp parse_interp(const std::string& s) {
  if (s == "linear") return Interp::linear;
  if (s == "nearest") return Interp::nearest;
  throw ArgumentError("interpolation must be linear or nearest, got '" + s + "'");
}

std::vector<double> parse_shift_list(const std::string& text) {
  std::vector<double> out;
  for (const auto& s : io::detail::split_list(text)) {
    try {
      out.push_back(io::detail::parse_number<double>(s));
    } catch (const ArgumentError&) {
      throw ArgumentError("bad shift '" + s + "' in list '" + text + "'");
    }
  }
  return out;
}

// Sidecar metadata for artifacts whose format has no room for it.
void write_sidecar(const fs::path& artifact, const nlohmann::json& meta) {
  io::write_text_atomic(fs::path(artifact.string() + ".json"), meta.dump(2) + "\n");
}

std::optional<nlohmann::json> read_sidecar(const fs::path& artifact) {
  const fs::path p(artifact.string() + ".json");
  if (!fs::exists(p)) return std::nullopt;
  try {
    return nlohmann::json::parse(io::read_text(p));
  } catch (const nlohmann::json::exception&) {
    return std::nullopt;
  }
}

Scene load_scene(const fs::path& dir, int channels, bool need_gt) {
  auto ds = io::load_dataset(dir, {}, channels);
  if (need_gt && !ds.gt) throw LoadError("dataset '" + ds.name + "' has no ground truth");
  Scene s{ds.name, std::move(ds.lf), ds.gt ? std::move(*ds.gt) : DisparityMap(ds.meta.X, ds.meta.Y)};
  return s;
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
  std::string out;
  std::string kind = "two-plane";
  int width = 64, height = 64, views = 9, channels = 3, max_foreground = 2;
  double d_front = 1.0, d_back = -0.5, d_min = -2.0, d_max = 2.0;
};

int cmd_synth(const Globals& g, const SynthArgs& a) {
  const std::uint64_t seed = g.seed.value_or(0);
  SyntheticScene scene;
  io::DatasetMeta meta;
  if (a.kind == "two-plane") {
    if (a.d_front < a.d_back) throw ArgumentError("--d-front must not be below --d-back");
    scene = two_plane_scene(a.d_front, a.d_back, a.width, a.height, seed, a.views, a.channels);
    meta.disp_min = a.d_back;
    meta.disp_max = a.d_front;
  } else if (a.kind == "random") {
    Rng rng(seed);
    scene = random_scene(rng, a.width, a.height, a.d_min, a.d_max, a.max_foreground, a.views, a.channels);
    meta.disp_min = a.d_min;
    meta.disp_max = a.d_max;
  } else {
    throw ArgumentError("--kind must be two-plane or random, got '" + a.kind + "'");
  }
  const auto [lf, gt] = gen_lightfield(scene);
  io::write_dataset(a.out, lf, &gt, meta);
  nlohmann::json side{{"kind", a.kind},     {"seed", seed},       {"width", a.width},
                      {"height", a.height}, {"views", a.views},   {"channels", a.channels},
                      {"d_front", a.d_front}, {"d_back", a.d_back}, {"d_min", a.d_min},
                      {"d_max", a.d_max},   {"max_foreground", a.max_foreground}};
  side["fingerprint"] = io::fingerprint(side.dump());
  io::write_text_atomic(fs::path(a.out) / "synth.json", side.dump(2) + "\n");
  spdlog::info("wrote {}x{} views of {}x{} to {} (fingerprint {})", a.views, a.views, a.width, a.height, a.out,
               side["fingerprint"].get<std::string>());
  return 0;
}

// ---------------------------------------------------------------- slice

struct SliceArgs {
  std::string dataset, out, orientation = "horizontal";
  int index = -1;
  int channels = 3;
};

int cmd_slice(const SliceArgs& a) {
  const auto ds = io::load_dataset(a.dataset, {}, a.channels);
  const bool horizontal = a.orientation == "horizontal";
  if (!horizontal && a.orientation != "vertical") throw ArgumentError("--orientation must be horizontal or vertical");
  const int extent = horizontal ? ds.lf.Y() : ds.lf.X();
  const int idx = a.index < 0 ? extent / 2 : a.index;
  if (idx >= extent) throw RangeError("--index " + std::to_string(idx) + " outside [0, " + std::to_string(extent) + ")");
  const EPI e = horizontal ? horizontal_epi(ds.lf, idx) : vertical_epi(ds.lf, idx);
  io::write_png(io::to_image8(e), a.out);
  spdlog::info("wrote {} EPI {} ({}x{}) to {}", a.orientation, idx, e.S, e.A, a.out);
  return 0;
}

// ---------------------------------------------------------------- refocus

struct RefocusArgs {
  std::string dataset, out, interp = "linear";
  double shift = 0.0;
  int channels = 3;
};

int cmd_refocus(const RefocusArgs& a) {
  const auto ds = io::load_dataset(a.dataset, {}, a.channels);
  const auto lf = refocus_lightfield(ds.lf, a.shift, parse_interp(a.interp));
  io::DatasetMeta meta = ds.meta;
  meta.disp_min = adjust_gt(ds.meta.disp_min, a.shift);
  meta.disp_max = adjust_gt(ds.meta.disp_max, a.shift);
  std::optional<DisparityMap> gt = ds.gt;
  if (gt)
    for (auto& v : gt->values) v = static_cast<float>(adjust_gt(v, a.shift));
  io::write_dataset(a.out, lf, gt ? &*gt : nullptr, meta);
  spdlog::info("refocused {} by {} into {}", a.dataset, a.shift, a.out);
  return 0;
}

// ---------------------------------------------------------------- augment

struct AugmentArgs {
  std::vector<std::string> datasets;
  std::string shifts, out, dump, interp = "linear";
  std::size_t samples = 100;
  int patch_width = 29;
  int channels = 3;
  bool drop = false;
};

int cmd_augment(const Globals& g, const AugmentArgs& a) {
  const auto shifts = a.shifts.empty() ? default_shift_set() : parse_shift_list(a.shifts);
  validate_shifts(shifts);
  std::vector<Scene> scenes;
  for (const auto& d : a.datasets) scenes.push_back(load_scene(d, a.channels, true));
  std::mt19937_64 rng(g.seed.value_or(0));
  const int half = seed_half_width(a.patch_width, scenes.front().lf.U(), max_abs_shift(shifts));
  const auto seeds = sample_seeds(scenes, a.samples, rng, half);
  auto samples = augment(seeds, shifts, a.patch_width, parse_interp(a.interp));
  const std::size_t before = samples.size();
  if (a.drop) samples = drop_unrepresentable(std::move(samples));
  std::ostringstream csv;
  nlohmann::json side{{"datasets", a.datasets}, {"shifts", shifts}, {"samples", a.samples},
                      {"seed", g.seed.value_or(0)}, {"patch_width", a.patch_width}, {"drop", a.drop}};
  const std::string fp = io::fingerprint(side.dump());
  csv << "# fingerprint " << fp << "\nindex,seed,shift,gt\n";
  for (std::size_t i = 0; i < samples.size(); ++i) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g,%.17g\n", i, samples[i].seed_index, samples[i].shift, samples[i].gt);
    csv << buf;
    if (!a.dump.empty()) {
      fs::create_directories(a.dump);
      const auto as_image = [](const EPIPatch& p) {
        EPI e(p.H, p.W, p.C);
        e.data = p.data;
        return io::to_image8(e);
      };
      io::write_png(as_image(samples[i].horizontal), fs::path(a.dump) / ("sample" + std::to_string(i) + "_h.png"));
      io::write_png(as_image(samples[i].vertical), fs::path(a.dump) / ("sample" + std::to_string(i) + "_v.png"));
    }
  }
  if (!a.out.empty()) io::write_text_atomic(a.out, csv.str());
  std::printf("seeds %zu, samples %zu (x%zu)%s\n", seeds.size(), before, shifts.size() + 1,
              a.drop ? (", kept " + std::to_string(samples.size())).c_str() : "");
  return 0;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string config, out, log;
  std::vector<std::string> set;
};

io::RunConfig resolve_config(const Globals& g, const std::string& path, const std::vector<std::string>& set) {
  io::RunConfig c = path.empty() ? io::RunConfig{} : io::read_config(path);
  for (const auto& kv : set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ArgumentError("--set expects key=value, got '" + kv + "'");
    io::set_config_value(c, io::detail::trim(kv.substr(0, eq)), io::detail::trim(kv.substr(eq + 1)));
  }
  if (g.seed) {
    c.train.seed = *g.seed;
    c.init_seed = *g.seed;
  }
  if (g.precision) c.train.precision = parse_precision(*g.precision);
  c.validate();
  return c;
}

PairPool build_pool(const io::RunConfig& c) {
  const int half = seed_half_width(c.network.W, c.network.H, c.train.augment ? max_abs_shift(c.train.shifts) : 0.0);
  PairPool pool;
  if (c.data_source == "toy") {
    pool = build_toy_pool(c.toy, half);
  } else {
    std::vector<Scene> scenes;
    for (const auto& d : c.dataset_dirs) scenes.push_back(load_scene(d, c.network.C, true));
    std::mt19937_64 rng(c.toy.seed);
    pool.seeds = sample_seeds(scenes, c.dataset_pairs, rng, half, &pool.scene_ids);
  }
  split_pool(pool, c.train.val_fraction, c.train.seed);
  return pool;
}

template <typename T>
int train_impl(const Globals& g, const io::RunConfig& c, const TrainArgs& a) {
  const std::string fp = io::config_fingerprint(c);
  spdlog::info("config fingerprint {}, architecture {}", fp, io::architecture_fingerprint(c.network));
  const auto t0 = std::chrono::steady_clock::now();
  const PairPool pool = build_pool(c);
  spdlog::info("pool: {} train / {} validation pairs ({:.1f} s)", pool.train.size(), pool.val.size(),
               std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  Network<T> net(c.network, c.init_seed);
  std::ostringstream log;
  log << "# fingerprint " << fp << "\n" << TrainLogEntry::header() << "\n";
  TrainHooks hooks;
  hooks.on_log = [&](const TrainLogEntry& e) {
    log << e.line() << "\n";
    spdlog::info("iter {} loss {:.5f} lr {:.3g}", e.iteration, e.loss, e.lr);
  };
  auto meta = [&](long iteration) {
    return nlohmann::json{{"iteration", iteration}, {"config", io::canonical_text(c)}, {"deterministic", g.deterministic}};
  };
  hooks.on_checkpoint = [&](long it) {
    io::save_checkpoint(net, a.out + ".iter" + std::to_string(it), fp, meta(it));
  };
  const auto r = train(net, pool, c.train, hooks);
  auto m = meta(c.train.iterations);
  m["val_mae"] = r.val_mae;
  io::save_checkpoint(net, a.out, fp, m);
  if (!a.log.empty()) io::write_text_atomic(a.log, log.str());
  std::printf("val MAE %.4f\n", r.val_mae);
  spdlog::info("trained {} iterations in {:.1f} s; wrote {}", c.train.iterations, r.seconds, a.out);
  return 0;
}

int cmd_train(const Globals& g, const TrainArgs& a) {
  const auto c = resolve_config(g, a.config, a.set);
  return c.train.precision == Precision::f64 ? train_impl<double>(g, c, a) : train_impl<float>(g, c, a);
}

// ---------------------------------------------------------------- infer

struct InferArgs {
  std::string model, dataset, out, config;
  std::vector<std::string> set;
  bool force = false;
  int batch = 512;
};

template <typename T>
int infer_impl(const InferArgs& a, const io::CheckpointInfo& info) {
  Network<T> net(info.network, 0);
  io::load_checkpoint(a.model, net);
  const auto ds = io::load_dataset(a.dataset, {}, info.network.C);
  const auto t0 = std::chrono::steady_clock::now();
  const auto map = infer_map(ds.lf, net, a.batch);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  io::write_disparity(map, a.out);
  write_sidecar(a.out, {{"model", a.model},
                        {"dataset", a.dataset},
                        {"architecture", info.architecture},
                        {"config_fingerprint", info.config_fingerprint},
                        {"patch_width", info.network.W},
                        {"runtime_seconds", secs}});
  spdlog::info("wrote {}x{} disparity map to {} ({:.2f} s)", map.width, map.height, a.out, secs);
  return 0;
}

int cmd_infer(const Globals& g, const InferArgs& a) {
  const auto info = io::read_checkpoint_info(a.model);
  if (!a.config.empty() || !a.set.empty()) {
    const auto requested = resolve_config(Globals{}, a.config, a.set);
    const auto want = io::architecture_fingerprint(requested.network);
    if (want != info.architecture) {
      if (!a.force)
        throw ArgumentError("checkpoint architecture " + info.architecture + " does not match the requested " + want +
                            " (use --force to run the checkpoint's own architecture)");
      spdlog::warn("architecture mismatch ({} vs requested {}); continuing because of --force", info.architecture,
                   want);
    }
  }
  const Precision p = g.precision ? parse_precision(*g.precision)
                                  : (info.precision == "float64" ? Precision::f64 : Precision::f32);
  return p == Precision::f64 ? infer_impl<double>(a, info) : infer_impl<float>(a, info);
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string pred, gt, dataset, mask = "interior", error_map, report, scene;
  double threshold = 0.07;
  int patch_width = 29;
};

int cmd_eval(const EvalArgs& a) {
  const auto pred = io::read_disparity(a.pred);
  DisparityMap gt;
  std::string scene = a.scene;
  if (!a.gt.empty()) {
    gt = io::read_disparity(a.gt);
  } else if (!a.dataset.empty()) {
    auto ds = io::load_dataset(a.dataset);
    if (!ds.gt) throw LoadError("dataset '" + ds.name + "' has no ground truth");
    gt = std::move(*ds.gt);
    if (scene.empty()) scene = ds.name;
  } else {
    throw ArgumentError("eval needs --gt or --dataset");
  }
  if (scene.empty()) scene = fs::path(a.pred).stem().string();
  if (pred.width != gt.width || pred.height != gt.height)
    throw ShapeError("prediction is " + std::to_string(pred.width) + "x" + std::to_string(pred.height) +
                     ", ground truth " + std::to_string(gt.width) + "x" + std::to_string(gt.height));
  Mask mask;
  if (a.mask == "interior") {
    int w = a.patch_width;
    if (const auto side = read_sidecar(a.pred); side && side->contains("patch_width")) w = side->at("patch_width");
    mask = intersect(interior_mask(gt.width, gt.height, w), gt.mask);
  } else if (a.mask == "gt") {
    mask = gt.mask;
  } else if (a.mask == "all") {
    mask = Mask(gt.values.size(), 1);
  } else {
    throw ArgumentError("--mask must be interior, gt or all");
  }
  auto r = evaluate(scene, pred, gt, mask, a.mask, a.threshold);
  const auto side = read_sidecar(a.pred);
  r.fingerprint = side && side->contains("config_fingerprint") ? side->at("config_fingerprint").get<std::string>()
                                                                : "none";
  if (side && side->contains("runtime_seconds")) r.runtime_seconds = side->at("runtime_seconds");
  std::printf("BadPix %.2f, MSE %.4f\n", r.badpix, r.mse100);
  std::fputs(r.to_text().c_str(), stdout);
  if (!a.report.empty())
    io::write_text_atomic(a.report, EvalReport::table_header() + "\n" + r.table_row() + "\n");
  if (!a.error_map.empty())
    io::write_png(io::mask_image(error_map(pred, gt, mask, a.threshold), gt.width, gt.height), a.error_map);
  return 0;
}

// ---------------------------------------------------------------- gradcheck

int cmd_gradcheck(int seeds) {
  bool ok = true;
  run_gradient_suite(seeds, [&](const GradSuiteEntry& e) {
    std::printf("%-20s max rel error %.3e (tol %.0e, %d seeds, %.2f s) %s\n", e.name.c_str(), e.max_error,
                e.tolerance, e.seeds, e.seconds, e.passed() ? "PASS" : "FAIL");
    std::fflush(stdout);
    ok = ok && e.passed();
  });
  return ok ? 0 : 2;
}

// ---------------------------------------------------------------- ablate

struct AblateArgs {
  std::string config, out, grid = "table1";
  std::vector<std::string> set;
  int eval_scenes = 2;
  int scene_size = 64;
};

std::vector<Scene> ablation_scenes(int n, int size, const io::RunConfig& c) {
  std::vector<Scene> out;
  for (int i = 0; i < n; ++i) {
    const std::uint64_t seed = c.toy.seed * 7919 + 104729 + static_cast<std::uint64_t>(i);
    SyntheticScene s;
    if (i == 0) {
      s = two_plane_scene(1.0, -0.5, size, size, seed, c.network.H, c.network.C);
    } else {
      Rng rng(seed);
      s = random_scene(rng, size, size, c.toy.d_min, c.toy.d_max, c.toy.max_foreground, c.network.H, c.network.C);
    }
    auto [lf, gt] = gen_lightfield(s);
    out.push_back({i == 0 ? "two-plane" : "random" + std::to_string(i), std::move(lf), std::move(gt)});
  }
  return out;
}

template <typename T>
int ablate_impl(const io::RunConfig& c, const AblateArgs& a) {
  if (a.eval_scenes < 1) throw RangeError("--eval-scenes must be at least 1");
  std::vector<AblationCell> cells;
  if (a.grid == "table1") cells = table1_cells(c.train.shifts);
  else if (a.grid == "table2") cells = table2_cells();
  else throw ArgumentError("--grid must be table1 or table2");
  const std::string fp = io::config_fingerprint(c);
  auto cfg = c;
  cfg.train.augment = true;  // cells choose their own shifts
  const PairPool pool = build_pool(cfg);
  const auto scenes = ablation_scenes(a.eval_scenes, a.scene_size, c);
  auto r = run_ablation<T>(cells, c.network, c.train, c.init_seed, pool, scenes,
                           [](const std::string& cell, const TrainLogEntry& e) {
                             spdlog::debug("{}: iter {} loss {:.5f}", cell, e.iteration, e.loss);
                           });
  r.table.fingerprint = fp;
  std::ostringstream report;
  report << r.table.render();
  for (std::size_t i = 0; i < cells.size(); ++i) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s: val MAE %.4f, train %.1f s\n", cells[i].name.c_str(), r.val_mae[i],
                  r.seconds[i]);
    report << buf;
  }
  const double first = r.table.badpix.front(), last = r.table.badpix.back();
  report << "direction: " << r.table.columns.back() << (last < first ? " improves on " : " does not improve on ")
         << r.table.columns.front() << " (" << last << " vs " << first << " BadPix)\n";
  std::fputs(report.str().c_str(), stdout);
  if (!a.out.empty()) io::write_text_atomic(a.out, report.str());
  return 0;
}

int cmd_ablate(const Globals& g, const AblateArgs& a) {
  const auto c = resolve_config(g, a.config, a.set);
  return c.train.precision == Precision::f64 ? ablate_impl<double>(c, a) : ablate_impl<float>(c, a);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Light-field disparity from EPI patch pairs with occlusion-aware relation modules"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand
  Globals g;
  app.add_option_function<std::uint64_t>("--seed", [&](const std::uint64_t& s) { g.seed = s; },
                                         "Seed for data generation, sampling and initialisation");
  app.add_flag("--deterministic", g.deterministic, "Single-threaded, bitwise-reproducible execution");
  app.add_option_function<std::string>("--precision", [&](const std::string& p) { g.precision = p; },
                                       "float32 or float64")
      ->check(CLI::IsMember({"float32", "float64"}));
  app.add_flag("-v,--verbose", g.verbose, "Debug logging");
  app.add_flag("-q,--quiet", g.quiet, "Warnings and errors only");

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Write a synthetic light field in benchmark layout");
  synth->add_option("--out", sa.out, "Output directory")->required();
  synth->add_option("--kind", sa.kind, "two-plane or random")->capture_default_str();
  synth->add_option("--width", sa.width)->capture_default_str();
  synth->add_option("--height", sa.height)->capture_default_str();
  synth->add_option("--views", sa.views, "Angular extent per axis")->capture_default_str();
  synth->add_option("--channels", sa.channels)->capture_default_str();
  synth->add_option("--d-front", sa.d_front)->capture_default_str();
  synth->add_option("--d-back", sa.d_back)->capture_default_str();
  synth->add_option("--d-min", sa.d_min)->capture_default_str();
  synth->add_option("--d-max", sa.d_max)->capture_default_str();
  synth->add_option("--max-foreground", sa.max_foreground)->capture_default_str();

  SliceArgs sl;
  auto* slice = app.add_subcommand("slice", "Dump one EPI of a dataset as PNG");
  slice->add_option("--dataset", sl.dataset)->required();
  slice->add_option("--out", sl.out)->required();
  slice->add_option("--orientation", sl.orientation, "horizontal or vertical")->capture_default_str();
  slice->add_option("--index", sl.index, "Image row (horizontal) or column (vertical); default centre");
  slice->add_option("--channels", sl.channels)->capture_default_str();

  RefocusArgs ra;
  auto* refocus = app.add_subcommand("refocus", "Shear a dataset by a disparity shift");
  refocus->add_option("--dataset", ra.dataset)->required();
  refocus->add_option("--out", ra.out)->required();
  refocus->add_option("--shift", ra.shift, "Disparity shift s; ground truth becomes gt - s")->required();
  refocus->add_option("--interp", ra.interp, "linear or nearest")->capture_default_str();
  refocus->add_option("--channels", ra.channels)->capture_default_str();

  AugmentArgs aa;
  auto* aug = app.add_subcommand("augment", "Sample patch pairs and expand them by refocusing");
  aug->add_option("--dataset", aa.datasets, "Dataset directories")->required();
  aug->add_option("--shifts", aa.shifts, "Comma-separated shifts (default: the 7-shift set)");
  aug->add_option("--samples", aa.samples, "Number of original pairs")->capture_default_str();
  aug->add_option("--patch-width", aa.patch_width)->capture_default_str();
  aug->add_option("--out", aa.out, "CSV manifest");
  aug->add_option("--dump", aa.dump, "Directory for per-sample PNGs");
  aug->add_option("--interp", aa.interp)->capture_default_str();
  aug->add_option("--channels", aa.channels)->capture_default_str();
  aug->add_flag("--drop", aa.drop, "Drop samples whose adjusted disparity leaves the patch");

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Train a network and write a checkpoint");
  tr->add_option("--config", ta.config, "key = value configuration file");
  tr->add_option("--set", ta.set, "Override one key (key=value); repeatable");
  tr->add_option("--out", ta.out, "Checkpoint path")->required();
  tr->add_option("--log", ta.log, "Training log CSV");

  InferArgs ia;
  auto* inf = app.add_subcommand("infer", "Predict a disparity map for a dataset");
  inf->add_option("--model", ia.model)->required();
  inf->add_option("--dataset", ia.dataset)->required();
  inf->add_option("--out", ia.out, "Output PFM")->required();
  inf->add_option("--config", ia.config, "Requested architecture; must match the checkpoint");
  inf->add_option("--set", ia.set, "Override one key of the requested config");
  inf->add_flag("--force", ia.force, "Run the checkpoint even if its architecture differs");
  inf->add_option("--batch", ia.batch)->capture_default_str();

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Score a disparity map");
  ev->add_option("--pred", ea.pred, "Predicted PFM")->required();
  ev->add_option("--gt", ea.gt, "Ground-truth PFM");
  ev->add_option("--dataset", ea.dataset, "Dataset providing the ground truth");
  ev->add_option("--threshold", ea.threshold)->capture_default_str();
  ev->add_option("--mask", ea.mask, "interior, gt or all")->capture_default_str();
  ev->add_option("--patch-width", ea.patch_width, "Interior band width when the map has no sidecar")
      ->capture_default_str();
  ev->add_option("--error-map", ea.error_map, "PNG of pixels over the threshold");
  ev->add_option("--report", ea.report, "CSV report row");
  ev->add_option("--scene", ea.scene, "Scene name for the report");

  int grad_seeds = 20;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every op and a small network");
  gc->add_option("--seeds", grad_seeds)->capture_default_str();

  AblateArgs ab;
  auto* abl = app.add_subcommand("ablate", "Train and score the ablation grid");
  abl->add_option("--config", ab.config);
  abl->add_option("--set", ab.set);
  abl->add_option("--grid", ab.grid, "table1 or table2")->capture_default_str();
  abl->add_option("--eval-scenes", ab.eval_scenes)->capture_default_str();
  abl->add_option("--scene-size", ab.scene_size)->capture_default_str();
  abl->add_option("--out", ab.out, "Markdown report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  spdlog::set_level(g.verbose ? spdlog::level::debug : g.quiet ? spdlog::level::warn : spdlog::level::info);
  if (g.deterministic) Eigen::setNbThreads(1);

  try {
    if (*synth) return cmd_synth(g, sa);
    if (*slice) return cmd_slice(sl);
    if (*refocus) return cmd_refocus(ra);
    if (*aug) return cmd_augment(g, aa);
    if (*tr) return cmd_train(g, ta);
    if (*inf) return cmd_infer(g, ia);
    if (*ev) return cmd_eval(ea);
    if (*gc) return cmd_gradcheck(grad_seeds);
    if (*abl) return cmd_ablate(g, ab);
  } catch (const ValidationError& e) {
    spdlog::error("{}", e.what());
    return 1;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 2;
  }
  return 1;
}
