#include <gtest/gtest.h>

#include <algorithm>
#include <functional>
#include <random>
#include <set>
#include <tuple>

#include "epiorm/gradsuite.hpp"
#include "epiorm/network.hpp"

using namespace epiorm;
using namespace epiorm::nn;

namespace {

NetworkConfig mini_config(int width = 4) {
  NetworkConfig c;
  c.width = width;
  c.orm_channels = 3;
  return c;
}

Tensor<double> random_patches(int n, const NetworkConfig& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return random_tensor<double>({n, c.H, c.W, c.C}, rng);
}

}  // namespace

TEST(Network, DefaultScheduleShapes) {
  NetworkConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.feature_size(), std::make_pair(2, 3));
  Network<float> net(c, 1);
  Tape<float> tape;
  std::mt19937_64 rng(3);
  Var x = tape.constant(random_tensor<float>({2, 9, 29, 3}, rng));
  Var f = net.branch_forward(tape, 0, x, Mode::train);
  EXPECT_EQ(tape.value(f).shape(), (Shape{2, 2, 3, 32}));
  Var y = net.forward(tape, x, x, Mode::train);
  EXPECT_EQ(tape.value(y).shape(), (Shape{2, 1}));
  EXPECT_TRUE(tape.value(y).all_finite());
}

TEST(Network, ScheduleMustReachOneByOne) {
  NetworkConfig c;
  c.conv_blocks.pop_back();
  EXPECT_THROW(c.validate(), ShapeError);
  NetworkConfig d;
  d.H = 8;
  EXPECT_THROW(d.validate(), ArgumentError);
  NetworkConfig e;
  e.residual_blocks[0] = {{1, 2}, {1, 1}};
  EXPECT_THROW(e.validate(), ShapeError);
}

TEST(Network, WrongPatchShapeRejected) {
  Network<float> net(mini_config(), 0);
  Tape<float> tape;
  Var x = tape.constant(Tensor<float>({1, 9, 27, 3}));
  EXPECT_THROW(net.branch_forward(tape, 0, x, Mode::eval), ShapeError);
  Var a = tape.constant(Tensor<float>({1, 2, 3, 4}));
  Var b = tape.constant(Tensor<float>({1, 2, 4, 4}));
  EXPECT_THROW(net.merge_forward(tape, a, b, Mode::eval), ShapeError);
}

TEST(Orm, OutputShapesGrowByW) {
  for (auto [H, W, C] : {std::tuple{9, 29, 3}, std::tuple{5, 7, 1}, std::tuple{3, 11, 3}}) {
    NetworkConfig c;
    c.H = H;
    c.W = W;
    c.C = C;
    c.conv_blocks.clear();
    c.residual_blocks.clear();
    c.merge_block = {{H, W}, {1, 1}};
    Network<double> net(c, 5);
    Tape<double> tape;
    std::mt19937_64 rng(7);
    Var x = tape.constant(random_tensor<double>({1, H, W, C}, rng));
    Var o1 = net.orm_forward(tape, net.branches()[0].orms[0], x);
    EXPECT_EQ(tape.value(o1).shape(), (Shape{1, H, W, W + C}));
    Var o2 = net.orm_forward(tape, net.branches()[0].orms[1], o1);
    EXPECT_EQ(tape.value(o2).shape(), (Shape{1, H, W, 2 * W + C}));
  }
}

TEST(Orm, RelationMatrixSizeAndCentreRows) {
  Network<double> net(NetworkConfig{}, 11);
  std::mt19937_64 rng(2);
  const auto patch = random_tensor<double>({1, 9, 29, 3}, rng);
  const auto tr = trace_orm(net, 0, 0, patch);
  EXPECT_EQ(tr.F3.shape(), (Shape{261, 261}));
  EXPECT_EQ(tr.f3.shape(), (Shape{29, 261}));
  EXPECT_EQ(tr.F5.shape(), (Shape{9, 29, 32}));
  for (int w = 0; w < 29; ++w)
    for (int p = 0; p < 261; ++p) {
      EXPECT_EQ(tr.f3.at(w, p), tr.F3.at(4 * 29 + w, p));
      EXPECT_NEAR(tr.F5[static_cast<std::size_t>(p) * 32 + 3 + w], std::max(0.0, tr.f3.at(w, p)), 1e-9);
    }
  for (int p = 0; p < 261; ++p)
    for (int c = 0; c < 3; ++c) EXPECT_EQ(tr.F5[static_cast<std::size_t>(p) * 32 + c], patch[p * 3 + c]);
}

TEST(Orm, ZeroInputPropagatesZero) {
  NetworkConfig c;
  c.orm_bias = false;
  Network<double> net(c, 4);
  const auto tr = trace_orm(net, 0, 0, Tensor<double>({1, 9, 29, 3}));
  for (double v : tr.F3.values()) EXPECT_EQ(v, 0.0);
  for (double v : tr.F5.values()) EXPECT_EQ(v, 0.0);
}

TEST(Orm, PermutingNonCentreRowsKeepsCentreRowSelection) {
  Network<double> net(NetworkConfig{}, 8);
  std::mt19937_64 rng(9);
  auto patch = random_tensor<double>({1, 9, 29, 3}, rng);
  const auto before = trace_orm(net, 0, 0, patch);
  // swap angular rows 0 and 8
  auto swapped = patch;
  for (int x = 0; x < 29; ++x)
    for (int c = 0; c < 3; ++c) std::swap(swapped.at(0, 0, x, c), swapped.at(0, 8, x, c));
  const auto after = trace_orm(net, 0, 0, swapped);
  bool changed = false;
  for (int w = 0; w < 29; ++w)
    for (int x = 0; x < 29; ++x) {
      // relations to the swapped rows trade places, the centre row itself is untouched
      EXPECT_NEAR(after.f3.at(w, x), before.f3.at(w, 8 * 29 + x), 1e-12);
      EXPECT_NEAR(after.f3.at(w, 8 * 29 + x), before.f3.at(w, x), 1e-12);
      EXPECT_NEAR(after.f3.at(w, 4 * 29 + x), before.f3.at(w, 4 * 29 + x), 1e-12);
      changed = changed || after.F3.at(x, 0) != before.F3.at(x, 0);
    }
  EXPECT_TRUE(changed);
}

TEST(Orm, CentreRowRelationMatchesFullRelationMatrix) {
  Network<double> net(NetworkConfig{}, 21);
  std::mt19937_64 rng(4);
  const auto patch = random_tensor<double>({1, 9, 29, 3}, rng);
  const auto tr = trace_orm(net, 1, 0, patch);
  Tape<double> tape;
  Var out = net.orm_forward(tape, net.branches()[1].orms[0], tape.constant(patch));
  const auto& o = tape.value(out);
  for (int p = 0; p < 261; ++p)
    for (int w = 0; w < 29; ++w)
      EXPECT_NEAR(o[static_cast<std::size_t>(p) * 32 + 3 + w], tr.F4[static_cast<std::size_t>(p) * 29 + w], 1e-9);
}

TEST(ConvBlock, ShrinkArithmetic) {
  Network<double> net(mini_config(), 1);
  Tape<double> tape;
  std::mt19937_64 rng(1);
  // the first block consumes the ORM output (C + 2W channels)
  Var x = tape.constant(random_tensor<double>({2, 9, 29, 3 + 2 * 29}, rng));
  Var y = net.conv_block_forward(tape, net.branches()[0].blocks[0], x, Mode::train);
  EXPECT_EQ(tape.value(y).shape(), (Shape{2, 8, 27, 4}));
}

TEST(ConvBlock, IdentityKernelsWithoutNormalisation) {
  // Conv-ReLU-Conv-ReLU with identity 1x1 kernels is relu(relu(x)).
  Tape<double> tape;
  std::mt19937_64 rng(6);
  const auto xv = random_tensor<double>({2, 3, 5, 4}, rng);
  Tensor<double> eye({1, 1, 4, 4});
  for (int i = 0; i < 4; ++i) eye[i * 4 + i] = 1.0;
  Var x = tape.constant(xv);
  Var k = tape.constant(eye);
  Var y = relu(tape, conv2d_valid(tape, relu(tape, conv2d_valid(tape, x, k)), k));
  for (std::size_t i = 0; i < xv.size(); ++i) EXPECT_EQ(tape.value(y)[i], std::max(0.0, xv[i]));
}

TEST(ResidualBlock, ZeroConvPathIsCentreSlice) {
  Network<double> net(mini_config(), 3);
  const auto& block = net.branches()[0].residual[0];
  net.parameters()[block.first.kernel].value.fill(0.0);
  net.parameters()[block.second.kernel].value.fill(0.0);
  Tape<double> tape;
  std::mt19937_64 rng(12);
  const auto xv = random_tensor<double>({3, 2, 15, 4}, rng);
  Var y = net.residual_block_forward(tape, block, tape.constant(xv), Mode::train);
  const auto& out = tape.value(y);
  ASSERT_EQ(out.shape(), (Shape{3, 2, 13, 4}));
  for (int n = 0; n < 3; ++n)
    for (int h = 0; h < 2; ++h)
      for (int w = 0; w < 13; ++w)
        for (int c = 0; c < 4; ++c) EXPECT_EQ(out.at(n, h, w, c), xv.at(n, h, w + 1, c));
}

TEST(ResidualBlock, SixBlocksShrinkWidthByTwelve) {
  Network<double> net(mini_config(), 3);
  Tape<double> tape;
  std::mt19937_64 rng(12);
  Var x = tape.constant(random_tensor<double>({2, 2, 15, 4}, rng));
  for (const auto& b : net.branches()[0].residual) x = net.residual_block_forward(tape, b, x, Mode::train);
  EXPECT_EQ(tape.value(x).shape(), (Shape{2, 2, 3, 4}));
}

TEST(ResidualBlock, ChannelMismatchRejected) {
  Network<double> net(mini_config(), 3);
  Tape<double> tape;
  Var x = tape.constant(Tensor<double>({2, 2, 15, 5}));
  EXPECT_THROW(net.residual_block_forward(tape, net.branches()[0].residual[0], x, Mode::train), ShapeError);
}

TEST(GradCheck, ConvBlock) {
  Network<double> net(mini_config(), 31);
  std::mt19937_64 rng(5);
  const auto x = random_tensor<double>({3, 8, 27, 4}, rng);
  const auto& b = net.branches()[0].blocks[1];
  for (Mode mode : {Mode::train, Mode::eval}) {
    const NetworkGradReport r = check_network_gradients(
        net, x, [&](Tape<double>& t, Var v) { return net.conv_block_forward(t, b, v, mode); }, 1, mode == Mode::train, 4);
    EXPECT_LT(r.max_rel, 1e-4);
    EXPECT_LT(r.max_abs_zero, 1e-6);
  }
}

TEST(GradCheck, ResidualBlock) {
  Network<double> net(mini_config(), 32);
  std::mt19937_64 rng(6);
  const auto x = random_tensor<double>({3, 2, 15, 4}, rng);
  const auto& b = net.branches()[1].residual[2];
  const NetworkGradReport r = check_network_gradients(
      net, x, [&](Tape<double>& t, Var v) { return net.residual_block_forward(t, b, v, Mode::train); }, 2, true, 4);
  EXPECT_LT(r.max_rel, 1e-4);
  EXPECT_LT(r.max_abs_zero, 1e-6);
}

TEST(GradCheck, OrmModule) {
  Network<double> net(mini_config(), 33);
  std::mt19937_64 rng(7);
  const auto x = random_tensor<double>({2, 9, 29, 3}, rng);
  const auto& orm = net.branches()[0].orms[0];
  const NetworkGradReport r =
      check_network_gradients(net, x, [&](Tape<double>& t, Var v) { return net.orm_forward(t, orm, v); }, 3, true, 4);
  EXPECT_LT(r.max_rel, 1e-4);
}

TEST(GradCheck, MergeBlock) {
  Network<double> net(mini_config(), 34);
  std::mt19937_64 rng(8);
  const auto fv = random_tensor<double>({4, 2, 3, 4}, rng);
  const auto x = random_tensor<double>({4, 2, 3, 4}, rng);
  const NetworkGradReport r = check_network_gradients(
      net, x, [&](Tape<double>& t, Var v) { return net.merge_forward(t, v, t.constant(fv), Mode::train); }, 4, true, 4);
  EXPECT_LT(r.max_rel, 1e-4);
  EXPECT_LT(r.max_abs_zero, 1e-6);
}

TEST(GradCheck, EndToEndMiniatureNetwork) {
  for (std::uint64_t seed : {35u, 36u, 37u}) {
    Network<double> net(mini_config(4), seed);
    const auto cfg = net.config();
    const auto pv = random_patches(4, cfg, seed + 64);
    const auto ph = random_patches(4, cfg, seed + 65);
    const NetworkGradReport r = check_network_gradients(
        net, ph, [&](Tape<double>& t, Var v) { return net.forward(t, v, t.constant(pv), Mode::train); }, seed, true, 1);
    EXPECT_LT(r.max_rel, 1e-3) << "seed " << seed;
    EXPECT_LT(r.max_abs_zero, 1e-6) << "seed " << seed;
  }
}

TEST(Network, EveryParameterReceivesGradient) {
  Network<double> net(mini_config(4), 36);
  const auto cfg = net.config();
  const auto ph = random_patches(4, cfg, 1), pv = random_patches(4, cfg, 2);
  Tape<double> tape;
  Var y = net.forward(tape, tape.constant(ph), tape.constant(pv), Mode::train);
  std::mt19937_64 rng(3);
  Var loss = weighted_sum(tape, y, random_tensor<double>({4, 1}, rng));
  net.zero_grad();
  tape.backward(loss);
  for (const auto& p : net.parameters()) {
    double mag = 0.0;
    for (double g : p.grad.values()) mag = std::max(mag, std::abs(g));
    // a bias feeding straight into batch normalisation is cancelled by the
    // mean subtraction, so its gradient is zero up to round-off
    const bool pre_bn_bias = p.name.ends_with(".conv2.bias");
    if (pre_bn_bias)
      EXPECT_LT(mag, 1e-9) << p.name;
    else
      EXPECT_GT(mag, 0.0) << p.name;
  }
}

TEST(Network, BranchesDoNotShareWeights) {
  Network<double> net(mini_config(4), 37);
  std::set<std::string> h, v;
  for (const auto& p : net.parameters()) {
    if (p.name.starts_with("h.")) h.insert(p.name.substr(2));
    if (p.name.starts_with("v.")) v.insert(p.name.substr(2));
  }
  EXPECT_EQ(h, v);
  EXPECT_FALSE(h.empty());
  const auto x = random_patches(1, net.config(), 5);
  Tape<double> tape;
  Var a = net.branch_forward(tape, 0, tape.constant(x), Mode::eval);
  Var b = net.branch_forward(tape, 1, tape.constant(x), Mode::eval);
  EXPECT_FALSE(tape.value(a) == tape.value(b));
}

TEST(Network, MergeIsNotSymmetric) {
  Network<double> net(mini_config(4), 38);
  std::mt19937_64 rng(1);
  const auto a = random_tensor<double>({1, 2, 3, 4}, rng), b = random_tensor<double>({1, 2, 3, 4}, rng);
  Tape<double> tape;
  Var ab = net.merge_forward(tape, tape.constant(a), tape.constant(b), Mode::eval);
  Var ba = net.merge_forward(tape, tape.constant(b), tape.constant(a), Mode::eval);
  EXPECT_NE(tape.value(ab)[0], tape.value(ba)[0]);
}

TEST(Network, EvalBatchMatchesPerSample) {
  Network<double> net(mini_config(4), 39);
  const auto cfg = net.config();
  // give batch normalisation non-trivial running statistics first
  {
    Tape<double> tape;
    net.forward(tape, tape.constant(random_patches(6, cfg, 1)), tape.constant(random_patches(6, cfg, 2)), Mode::train);
  }
  const auto ph = random_patches(5, cfg, 3), pv = random_patches(5, cfg, 4);
  const auto batched = net.predict(ph, pv);
  ASSERT_EQ(batched.size(), 5u);
  const std::size_t each = static_cast<std::size_t>(cfg.H) * cfg.W * cfg.C;
  for (int i = 0; i < 5; ++i) {
    Tensor<double> h({1, cfg.H, cfg.W, cfg.C}), v({1, cfg.H, cfg.W, cfg.C});
    std::copy_n(ph.data() + i * each, each, h.data());
    std::copy_n(pv.data() + i * each, each, v.data());
    EXPECT_NEAR(net.predict(h, v)[0], batched[static_cast<std::size_t>(i)], 1e-6);
  }
}

TEST(Network, EvalForwardIsPure) {
  Network<float> net(mini_config(8), 40);
  const auto cfg = net.config();
  std::mt19937_64 rng(2);
  const auto ph = random_tensor<float>({3, cfg.H, cfg.W, cfg.C}, rng);
  const auto pv = random_tensor<float>({3, cfg.H, cfg.W, cfg.C}, rng);
  const auto a = net.predict(ph, pv);
  const auto b = net.predict(ph, pv);
  EXPECT_EQ(a, b);
  for (float v : a) EXPECT_TRUE(std::isfinite(v));
}

TEST(Network, ParameterCountBelowFourBranchVariant) {
  NetworkConfig two;
  NetworkConfig four = two;
  four.branches = 4;
  const auto n2 = Network<float>(two, 0).parameter_count();
  const auto n4 = Network<float>(four, 0).parameter_count();
  EXPECT_LT(n2, n4);
  EXPECT_GT(n2, 0u);
}

TEST(Network, ConfigJsonRoundTrip) {
  NetworkConfig c = mini_config(8);
  c.num_orms = 1;
  const auto back = network_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(back.conv_blocks, c.conv_blocks);
}
