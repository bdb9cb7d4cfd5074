#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>

#include "epiorm/train.hpp"

using namespace epiorm;

namespace {

NetworkConfig tiny_network() {
  NetworkConfig c;
  c.width = 4;
  c.orm_channels = 3;
  return c;
}

Scene scene_from(const SyntheticScene& s, const std::string& name) {
  auto [lf, gt] = gen_lightfield(s);
  return {name, std::move(lf), std::move(gt)};
}

PairPool tiny_pool(std::size_t pairs, int half, std::uint64_t seed = 3) {
  ToyDataConfig dc;
  dc.pairs = pairs;
  dc.scene_size = 32;
  dc.seed = seed;
  auto pool = build_toy_pool(dc, half);
  split_pool(pool, 0.25, seed);
  return pool;
}

TrainConfig short_run(long iterations) {
  TrainConfig tc;
  tc.iterations = iterations;
  tc.batch_size = 4;
  tc.lr = 1e-3;
  tc.log_interval = 1;
  tc.seed = 5;
  return tc;
}

int default_half() { return seed_half_width(29, 9, max_abs_shift(default_shift_set())); }

}  // namespace

TEST(CropEpi, ReplicatesEdges) {
  EPI e(2, 5, 1);
  for (int a = 0; a < 2; ++a)
    for (int s = 0; s < 5; ++s) e.at(a, s) = static_cast<float>(10 * a + s);
  const auto c = crop_epi(e, 0, 2);
  ASSERT_EQ(c.S, 5);
  EXPECT_EQ(c.at(1, 0), 10.0f);
  EXPECT_EQ(c.at(1, 1), 10.0f);
  EXPECT_EQ(c.at(1, 2), 10.0f);
  EXPECT_EQ(c.at(1, 4), 12.0f);
}

TEST(SeedHalfWidth, CoversTheLargestShift) {
  EXPECT_EQ(seed_half_width(29, 9, 0.0), 15);
  EXPECT_EQ(seed_half_width(29, 9, 2.0), 23);
  EXPECT_EQ(seed_half_width(29, 9, -1.5), 21);
}

TEST(SeedFromScene, MatchesSlicingTheRenderedLightField) {
  const auto s = two_plane_scene(1.0, -0.5, 48, 40, 9);
  const auto [lf, gt] = gen_lightfield(s);
  const int half = 14;
  for (auto [x, y] : {std::pair{20, 20}, std::pair{14, 25}, std::pair{33, 14}}) {
    const auto a = seed_from_scene(s, x, y, half);
    const auto b = seed_from_lightfield(lf, gt, x, y, half);
    EXPECT_EQ(a.horizontal.data, b.horizontal.data);
    EXPECT_EQ(a.vertical.data, b.vertical.data);
    EXPECT_EQ(a.gt, b.gt);
  }
}

TEST(SamplePatches, CountShapesAndGroundTruth) {
  std::vector<Scene> scenes{scene_from(two_plane_scene(1.0, -0.5, 40, 40, 1), "a"),
                            scene_from(two_plane_scene(0.5, -1.0, 40, 40, 2), "b")};
  std::mt19937_64 rng(8);
  const auto p = sample_patches(scenes, 60, rng);
  ASSERT_EQ(p.size(), 60u);
  for (const auto& s : p) {
    EXPECT_EQ(s.horizontal.H, 9);
    EXPECT_EQ(s.horizontal.W, 29);
    EXPECT_EQ(s.horizontal.C, 3);
    EXPECT_EQ(s.vertical.W, 29);
    EXPECT_EQ(s.shift, 0.0);
    EXPECT_TRUE(s.gt == 1.0 || s.gt == -0.5 || s.gt == 0.5 || s.gt == -1.0) << s.gt;
  }
}

TEST(SamplePatches, DeterministicForASeed) {
  std::vector<Scene> scenes{scene_from(two_plane_scene(1.0, -0.5, 40, 40, 1), "a")};
  std::mt19937_64 r1(4), r2(4);
  const auto a = sample_patches(scenes, 20, r1);
  const auto b = sample_patches(scenes, 20, r2);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].horizontal.data, b[i].horizontal.data);
    EXPECT_EQ(a[i].vertical.data, b[i].vertical.data);
    EXPECT_EQ(a[i].gt, b[i].gt);
  }
}

TEST(SamplePatches, RespectsTheGroundTruthMask) {
  auto sc = scene_from(two_plane_scene(1.0, -0.5, 40, 40, 1), "a");
  std::fill(sc.gt.mask.begin(), sc.gt.mask.end(), 0);
  sc.gt.mask[static_cast<std::size_t>(7) * 40 + 30] = 1;
  std::mt19937_64 rng(1);
  const auto seeds = sample_seeds({sc}, 5, rng, 14);
  for (const auto& s : seeds) {
    EXPECT_EQ(s.horizontal.fixed_pixel, 7);
    EXPECT_EQ(s.vertical.fixed_pixel, 30);
  }
  std::fill(sc.gt.mask.begin(), sc.gt.mask.end(), 0);
  EXPECT_THROW(sample_seeds({sc}, 1, rng, 14), ArgumentError);
  EXPECT_THROW(sample_seeds({}, 1, rng, 14), ArgumentError);
}

TEST(SplitPool, StratifiedAndComplete) {
  PairPool pool;
  for (int scene = 0; scene < 4; ++scene)
    for (int i = 0; i < 50; ++i) {
      pool.seeds.emplace_back();
      pool.scene_ids.push_back(scene);
    }
  split_pool(pool, 0.2, 11);
  EXPECT_EQ(pool.val.size(), 40u);
  EXPECT_EQ(pool.train.size(), 160u);
  std::map<int, int> per_scene;
  for (auto i : pool.val) ++per_scene[pool.scene_ids[i]];
  for (int scene = 0; scene < 4; ++scene) EXPECT_EQ(per_scene[scene], 10);
  std::vector<int> seen(200, 0);
  for (auto i : pool.train) ++seen[i];
  for (auto i : pool.val) ++seen[i];
  for (int c : seen) EXPECT_EQ(c, 1);
  EXPECT_THROW(split_pool(pool, 1.0, 1), RangeError);
}

TEST(TrainingSamples, DropsShiftsThatLeaveThePatch) {
  PairPool pool;
  AugmentSeed s;
  s.horizontal = EPI(9, 47, 3);
  s.gt = 1.0;
  pool.seeds = {s};
  pool.train = {0};
  TrainConfig tc;
  // limit 1.575: shifts -1.5 and -1 push the target to 2.5 and 2
  const auto kept = training_samples(pool, tc, 29);
  EXPECT_EQ(kept.size(), 6u);
  EXPECT_EQ(kept.front().second, -1);
  tc.augment = false;
  EXPECT_EQ(training_samples(pool, tc, 29).size(), 1u);
}

TEST(TrainConfig, RejectsBadValues) {
  TrainConfig tc;
  EXPECT_NO_THROW(tc.validate());
  tc.batch_size = 1;
  EXPECT_THROW(tc.validate(), RangeError);
  tc = {};
  tc.lr = 0.0;
  EXPECT_THROW(tc.validate(), RangeError);
  tc = {};
  tc.shifts = {0.5, 0.5};
  EXPECT_THROW(tc.validate(), ArgumentError);
}

TEST(Train, OneIterationMovesEveryTrainableTensorAndLogs) {
  auto pool = tiny_pool(16, default_half());
  Network<float> net(tiny_network(), 2);
  std::vector<Tensor<float>> before;
  for (const auto& p : net.parameters()) before.push_back(p.value);
  const auto r = train(net, pool, short_run(1));
  ASSERT_EQ(r.log.size(), 1u);
  EXPECT_TRUE(std::isfinite(r.log[0].loss));
  EXPECT_TRUE(std::isfinite(r.val_mae));
  int moved = 0;
  for (std::size_t i = 0; i < before.size(); ++i) moved += !std::ranges::equal(before[i].values(), net.parameters()[i].value.values());
  EXPECT_GT(moved, static_cast<int>(before.size()) / 2);
}

TEST(Train, NonFiniteLossAborts) {
  auto pool = tiny_pool(8, default_half());
  for (auto& s : pool.seeds) std::fill(s.horizontal.data.begin(), s.horizontal.data.end(), std::nanf(""));
  Network<float> net(tiny_network(), 2);
  auto tc = short_run(3);
  tc.augment = false;
  try {
    train(net, pool, tc);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("iteration 1"), std::string::npos);
  }
}

TEST(Train, BitwiseDeterministic) {
  auto pool = tiny_pool(16, default_half());
  Network<float> a(tiny_network(), 4), b(tiny_network(), 4);
  const auto ra = train(a, pool, short_run(3));
  const auto rb = train(b, pool, short_run(3));
  for (std::size_t i = 0; i < a.parameters().size(); ++i)
    EXPECT_TRUE(std::ranges::equal(a.parameters()[i].value.values(), b.parameters()[i].value.values()))
        << a.parameters()[i].name;
  EXPECT_EQ(ra.val_mae, rb.val_mae);
}

TEST(Train, RejectsMismatchedPool) {
  auto pool = tiny_pool(8, default_half());
  auto nc = tiny_network();
  nc.C = 1;
  Network<float> net(nc, 1);
  EXPECT_THROW(train(net, pool, short_run(1)), ArgumentError);
}

TEST(InferMap, InteriorBandAndFiniteOutput) {
  Network<float> net(tiny_network(), 6);
  const LightField4D lf(9, 9, 64, 64, 3, 0.5f);
  const auto d = infer_map(lf, net, 300);
  EXPECT_EQ(d.width, 64);
  EXPECT_EQ(d.height, 64);
  std::size_t on = 0;
  for (auto m : d.mask) on += m;
  EXPECT_EQ(on, 36u * 36u);
  EXPECT_EQ(d.mask[14 * 64 + 14], 1);
  EXPECT_EQ(d.mask[13 * 64 + 14], 0);
  EXPECT_EQ(d.mask[14 * 64 + 50], 0);
  for (float v : d.values) ASSERT_TRUE(std::isfinite(v));
  // a constant light field gives identical patches everywhere
  for (float v : d.values) EXPECT_EQ(v, d.values[0]);
}

TEST(InferMap, IdempotentAndBatchIndependent) {
  Network<float> net(tiny_network(), 6);
  const auto [lf, gt] = gen_lightfield(two_plane_scene(1.0, -0.5, 32, 32, 3));
  const auto a = infer_map(lf, net, 512);
  const auto b = infer_map(lf, net, 512);
  EXPECT_EQ(a.values, b.values);
  const auto c = infer_map(lf, net, 97);
  for (std::size_t i = 0; i < a.values.size(); ++i) EXPECT_NEAR(a.values[i], c.values[i], 1e-5);
}

TEST(InferMap, RejectsAngularMismatch) {
  Network<float> net(tiny_network(), 6);
  EXPECT_THROW(infer_map(LightField4D(7, 7, 32, 32, 3), net), ArgumentError);
  EXPECT_THROW(infer_map(LightField4D(9, 9, 32, 32, 1), net), ArgumentError);
}

TEST(Ablation, CellsAndTableLayout) {
  const auto t1 = table1_cells();
  ASSERT_EQ(t1.size(), 4u);
  EXPECT_FALSE(t1[0].use_orm);
  EXPECT_TRUE(t1[0].shifts.empty());
  EXPECT_TRUE(t1[3].use_orm);
  EXPECT_EQ(t1[3].shifts, default_shift_set());
  const auto t2 = table2_cells();
  ASSERT_EQ(t2.size(), 6u);
  for (std::size_t i = 1; i < t2.size(); ++i) EXPECT_EQ(t2[i].shifts.size() + 1, 2 * i);
  auto sorted = t2[4].shifts;
  std::sort(sorted.begin(), sorted.end());
  auto expected = default_shift_set();
  std::sort(expected.begin(), expected.end());
  EXPECT_EQ(sorted, expected);
}

TEST(Ablation, RunsEveryCell) {
  auto pool = tiny_pool(16, default_half());
  std::vector<Scene> eval{scene_from(two_plane_scene(1.0, -0.5, 32, 32, 3), "plane")};
  const auto r = run_ablation<float>(table1_cells(), tiny_network(), short_run(2), 1, pool, eval);
  EXPECT_EQ(r.table.columns, (std::vector<std::string>{"Baseline", "w/ ORM", "w/ EPIR", "Full model"}));
  ASSERT_EQ(r.table.badpix.size(), 4u);
  for (double v : r.table.badpix) EXPECT_TRUE(v >= 0.0 && v <= 100.0);
  EXPECT_EQ(r.table.render().rfind("| Metric | Baseline | w/ ORM | w/ EPIR | Full model |\n", 0), 0u);
}
