#include <gtest/gtest.h>

#include "epiorm/lightfield.hpp"
#include "epiorm/synth.hpp"

using namespace epiorm;

namespace {

EPIPatch full_patch(const EPI& e) { return extract_patch(e, (e.S - 1) / 2, e.S); }

}  // namespace

TEST(GenEpi, ZeroDisparityRowsIdentical) {
  auto [e, gt] = gen_epi(0.0, 9, 29, 3, 1);
  EXPECT_EQ(gt, 0.0);
  for (int u = 1; u < 9; ++u)
    for (int x = 0; x < 29; ++x)
      for (int c = 0; c < 3; ++c) EXPECT_EQ(e.at(u, x, c), e.at(0, x, c));
}

TEST(GenEpi, BrightColumnFollowsTheLine) {
  std::vector<float> row(29, 0.1f);
  const int xc = 14;
  row[xc] = 0.9f;
  Texture t = Texture::from_row(row, 1, true);
  EPI e = gen_epi(1.0, t, 9, 29);
  for (int u = 0; u < 9; ++u) {
    const int expected = xc + (4 - u);
    for (int x = 0; x < 29; ++x) EXPECT_EQ(e.at(u, x), x == expected ? 0.9f : 0.1f) << "u=" << u << " x=" << x;
  }
}

TEST(GenEpi, RejectsUnrepresentableSlope) {
  EXPECT_THROW(gen_epi(3.6, 9, 29, 3, 1), ArgumentError);
  EXPECT_NO_THROW(gen_epi(3.5, 9, 29, 3, 1));
}

TEST(Oracle, VerticalLinesGiveZero) {
  auto [e, gt] = gen_epi(0.0, 9, 29, 3, 4);
  auto est = shear_variance_oracle(full_patch(e), -2.0, 2.0, 0.01);
  EXPECT_NEAR(est.disparity, 0.0, 1e-12);
  EXPECT_FALSE(est.low_confidence);
  EXPECT_GE(est.residual, 0.0);
}

TEST(Oracle, RecoversKnownSlopes) {
  auto [e1, d1] = gen_epi(0.75, 9, 29, 3, 12);
  EXPECT_NEAR(shear_variance_oracle(full_patch(e1), -2.0, 2.0, 0.01).disparity, 0.75, 0.005 + 1e-9);
  auto [e2, d2] = gen_epi(-1.3, 9, 29, 3, 13);
  EXPECT_NEAR(shear_variance_oracle(full_patch(e2), -2.0, 2.0, 0.01).disparity, -1.3, 0.005 + 1e-9);
}

TEST(Oracle, EstimateLiesOnGrid) {
  auto [e, d] = gen_epi(0.333, 9, 29, 3, 21);
  auto est = shear_variance_oracle(full_patch(e), -1.0, 1.0, 0.05);
  const double k = (est.disparity + 1.0) / 0.05;
  EXPECT_NEAR(k, std::round(k), 1e-9);
}

TEST(Oracle, FlatPatchIsLowConfidence) {
  EPIPatch p(9, 29, 3);
  std::fill(p.data.begin(), p.data.end(), 0.4f);
  auto est = shear_variance_oracle(p, -2.0, 2.0, 0.1);
  EXPECT_TRUE(est.low_confidence);
  EXPECT_NEAR(est.disparity, 0.0, 1e-12);  // ties break toward zero
}

TEST(Oracle, BadGridThrows) {
  EPIPatch p(9, 29, 1);
  EXPECT_THROW(shear_variance_oracle(p, 1.0, 1.0, 0.1), ArgumentError);
  EXPECT_THROW(shear_variance_oracle(p, -1.0, 1.0, 0.0), ArgumentError);
}

// Oracle consistency over random single-layer EPIs.
TEST(Oracle, ConsistentOverRandomDraws) {
  Rng rng(2024);
  std::uniform_real_distribution<double> ud(-2.0, 2.0);
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    const double d = ud(rng);
    auto [e, gt] = gen_epi(d, 9, 29, 3, rng());
    auto est = shear_variance_oracle(full_patch(e), -2.5, 2.5, 0.01);
    worst = std::max(worst, std::abs(est.disparity - d));
  }
  EXPECT_LE(worst, 0.02);
}

TEST(Texture, ContrastAndRange) {
  Rng rng(5);
  for (int i = 0; i < 50; ++i) {
    Texture t = random_texture(rng, 3, 0, 28, 0, 0);
    EXPECT_GE(t.contrast(0, 28, 0, 0), 0.2);
    for (double x = -30; x < 60; x += 0.37)
      for (int c = 0; c < 3; ++c) {
        const float v = t(x, 3.0 * x, c);
        ASSERT_GE(v, 0.0f);
        ASSERT_LE(v, 1.0f);
      }
  }
}

TEST(GenLightField, SingleFlatLayerGivesIdenticalViews) {
  Rng rng(1);
  SyntheticScene s;
  s.X = s.Y = 16;
  s.layers = {Layer{0.0, random_texture(rng, 3, 0, 16, 0, 16), {}}};
  auto [lf, gt] = gen_lightfield(s);
  Image c = subaperture(lf, 4, 4);
  for (int v = 0; v < 9; ++v)
    for (int u = 0; u < 9; ++u) EXPECT_EQ(subaperture(lf, u, v), c);
  for (float g : gt.values) EXPECT_EQ(g, 0.0f);
}

TEST(GenLightField, HorizontalEpiMatchesGenEpiBitwise) {
  Rng rng(17);
  SyntheticScene s;
  s.X = 40;
  s.Y = 12;
  Texture tex = random_texture(rng, 3, 0, 40, 0, 12);
  s.layers = {Layer{0.85, tex, {}}};
  auto [lf, gt] = gen_lightfield(s);
  for (int y = 0; y < s.Y; ++y) {
    EPI a = horizontal_epi(lf, y);
    EPI b = gen_epi(0.85, tex.row(y), 9, 40);
    EXPECT_EQ(a.data, b.data);
  }
  // same for a discrete nearest-sampled texture
  std::vector<float> row(40);
  for (int i = 0; i < 40; ++i) row[i] = static_cast<float>(i % 7) / 7.0f;
  Texture discrete = Texture::from_row(row, 1, true);
  SyntheticScene s1;
  s1.X = 40;
  s1.Y = 3;
  s1.C = 1;
  s1.layers = {Layer{1.0, discrete, {}}};
  auto [lf1, gt1] = gen_lightfield(s1);
  EXPECT_EQ(horizontal_epi(lf1, 1).data, gen_epi(1.0, discrete.row(1), 9, 40).data);
}

TEST(GenLightField, TwoPlaneOcclusion) {
  SyntheticScene s = two_plane_scene(1.0, 0.0, 40, 40, 9);
  auto [lf, gt] = gen_lightfield(s);
  const auto& r = s.layers[0].region;
  // piecewise constant centre-view GT matching the front rectangle
  for (int y = 0; y < 40; ++y)
    for (int x = 0; x < 40; ++x) {
      const bool inside = x >= r.x0 && x < r.x1 && y >= r.y0 && y < r.y1;
      EXPECT_EQ(gt.at(x, y), inside ? 1.0f : 0.0f);
    }
  // per-view analytic visibility: in view (u, v0) the front rectangle covers
  // [x0 + (u0 - u), x1 + (u0 - u)), so pixels just outside it show the background
  const int y = 20;
  for (int u = 0; u < 9; ++u) {
    const double off = 4 - u;
    for (int x = 0; x < 40; ++x) {
      const bool front = x - off >= r.x0 && x - off < r.x1;
      const Layer& l = s.layers[front ? 0 : 1];
      const float expect = l.texture(x - off * l.disparity, y, 0);
      ASSERT_EQ(lf(u, 4, x, y, 0), expect) << "u=" << u << " x=" << x;
    }
  }
}

TEST(GenLightField, ValidatesLayerOrder) {
  Rng rng(1);
  SyntheticScene s;
  s.layers = {Layer{0.0, random_texture(rng, 3, 0, 8, 0, 8), {Region::Kind::disc, 4, 4, 2, 0}},
              Layer{1.0, random_texture(rng, 3, 0, 8, 0, 8), {}}};
  EXPECT_THROW(gen_lightfield(s), ArgumentError);
}

TEST(Texture, AllChannelEvaluationMatchesPerChannel) {
  Rng rng(21);
  for (int i = 0; i < 20; ++i) {
    Texture t = Texture::random(rng, 3);
    float out[3];
    for (double x = -20; x < 80; x += 1.37) {
      t.eval(x, 0.6 * x - 4.0, out);
      for (int c = 0; c < 3; ++c) ASSERT_EQ(out[c], t(x, 0.6 * x - 4.0, c));
    }
  }
}
