#include <gtest/gtest.h>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>

#include <unistd.h>

#include "epiorm/io/checkpoint.hpp"
#include "epiorm/io/config.hpp"
#include "epiorm/io/dataset.hpp"
#include "epiorm/io/pfm.hpp"
#include "epiorm/io/png.hpp"
#include "epiorm/synth.hpp"

using namespace epiorm;
using namespace epiorm::io;
namespace fs = std::filesystem;

namespace {

// Fresh directory per test, removed afterwards.
struct TempDir {
  fs::path path;
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    path = fs::temp_directory_path() /
           ("epiorm_" + std::string(info->test_suite_name()) + "_" + info->name() + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

std::uint32_t bits(float f) { return std::bit_cast<std::uint32_t>(f); }

std::string header_of(const Bytes& b, std::size_t n) { return std::string(b.begin(), b.begin() + n); }

Bytes bytes_of(const std::string& s) { return Bytes(s.begin(), s.end()); }

void append_float(Bytes& b, float f, bool little) {
  const std::uint32_t v = bits(f);
  for (int k = 0; k < 4; ++k) b.push_back(static_cast<unsigned char>(v >> (8 * (little ? k : 3 - k))));
}

template <typename F>
std::string parse_message(F&& f) {
  try {
    f();
  } catch (const ParseError& e) {
    return e.what();
  }
  return "no error";
}

}  // namespace

TEST(Pfm, RoundTripIsBitwise) {
  PfmImage img{2, 2, 1, 1.0f, {1.5f, -0.0f, std::numeric_limits<float>::denorm_min(), 3.4e38f}};
  const auto back = decode_pfm(encode_pfm(img));
  ASSERT_EQ(back.width, 2);
  ASSERT_EQ(back.height, 2);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(bits(back.data[i]), bits(img.data[i]));
}

TEST(Pfm, ColourRoundTripAndFile) {
  TempDir dir;
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<float> u(-100.f, 100.f);
  PfmImage img{7, 5, 3, 1.0f, {}};
  for (int i = 0; i < 7 * 5 * 3; ++i) img.data.push_back(u(rng));
  write_pfm(img, dir.path / "c.pfm");
  const auto back = read_pfm(dir.path / "c.pfm");
  EXPECT_EQ(back.channels, 3);
  EXPECT_EQ(back.data, img.data);
}

TEST(Pfm, NegativeScaleMeansLittleEndianAndRowsAreBottomUp) {
  PfmImage img{1, 2, 1, 1.0f, {1.0f, 2.0f}};  // top row 1, bottom row 2
  const auto b = encode_pfm(img);
  const std::string header = "Pf\n1 2\n-1\n";
  ASSERT_EQ(header_of(b, header.size()), header);
  Bytes expected = bytes_of(header);
  append_float(expected, 2.0f, true);
  append_float(expected, 1.0f, true);
  EXPECT_EQ(b, expected);
}

TEST(Pfm, PositiveScaleReadsBigEndian) {
  Bytes b = bytes_of("PF\n1 1\n1.0\n");
  for (float f : {0.25f, -8.0f, 1e-3f}) append_float(b, f, false);
  const auto img = decode_pfm(b);
  EXPECT_EQ(img.channels, 3);
  EXPECT_EQ(img.data, (std::vector<float>{0.25f, -8.0f, 1e-3f}));
}

TEST(Pfm, MalformedInputsReportByteOffsets) {
  EXPECT_NE(parse_message([] { decode_pfm(bytes_of("P6\n1 1\n-1\n0000")); }).find("at byte 0"), std::string::npos);
  EXPECT_NE(parse_message([] { decode_pfm(bytes_of("Pf\nx 1\n-1\n0000")); }).find("at byte 3"), std::string::npos);
  EXPECT_NE(parse_message([] { decode_pfm(bytes_of("Pf\n1 1\n0\n0000")); }).find("scale"), std::string::npos);
  const auto truncated = parse_message([] { decode_pfm(bytes_of("Pf\n2 1\n-1\n0000")); });
  EXPECT_NE(truncated.find("truncated"), std::string::npos);
  EXPECT_NE(truncated.find("at byte 14"), std::string::npos);
  EXPECT_THROW(decode_pfm(bytes_of("Pf")), ParseError);
}

TEST(Pfm, DisparityMaskSkipsNonFinite) {
  PfmImage img{3, 1, 1, 1.0f, {0.5f, std::numeric_limits<float>::infinity(), std::nanf("")}};
  const auto d = to_disparity(img);
  EXPECT_EQ(d.mask, (std::vector<unsigned char>{1, 0, 0}));
  img.channels = 3;
  img.data.resize(9);
  EXPECT_THROW(to_disparity(img), ShapeError);
}

TEST(Png, GrayAndColourRoundTrip) {
  for (int c : {1, 3}) {
    Image8 im{13, 6, c, {}};
    for (int i = 0; i < 13 * 6 * c; ++i) im.data.push_back(static_cast<unsigned char>((i * 37) % 256));
    const auto back = decode_png(encode_png(im));
    EXPECT_EQ(back.channels, c);
    EXPECT_EQ(back.data, im.data);
  }
  EXPECT_THROW(decode_png(bytes_of("not a png")), ParseError);
}

TEST(Png, ByteMappingIsExactOnQuantisedValues) {
  for (int b = 0; b < 256; ++b) EXPECT_EQ(to_byte(from_byte(static_cast<unsigned char>(b))), b);
  EXPECT_EQ(to_byte(-0.5f), 0);
  EXPECT_EQ(to_byte(2.0f), 255);
  LightField4D lf(3, 3, 4, 4, 1);
  float v = 0.0f;
  for (float& s : lf.samples()) s = (v += 0.0071f);
  const auto q = quantize8(lf);
  EXPECT_EQ(quantize8(q), q);
}

TEST(Dataset, SyntheticRoundTripIsExact) {
  TempDir dir;
  const auto [lf, gt] = gen_lightfield(two_plane_scene(1.0, -0.5, 32, 24, 5));
  DatasetMeta meta;
  meta.disp_min = -0.5;
  meta.disp_max = 1.0;
  write_dataset(dir.path / "scene", lf, &gt, meta);
  EXPECT_TRUE(fs::exists(dir.path / "scene" / "input_Cam000.png"));
  EXPECT_TRUE(fs::exists(dir.path / "scene" / "input_Cam080.png"));
  const auto ds = load_dataset(dir.path / "scene");
  EXPECT_EQ(ds.name, "scene");
  EXPECT_EQ(ds.lf, quantize8(lf));
  ASSERT_TRUE(ds.gt.has_value());
  EXPECT_EQ(ds.gt->values, gt.values);
  EXPECT_EQ(ds.meta.U, 9);
  EXPECT_EQ(ds.meta.X, 32);
  EXPECT_EQ(ds.meta.Y, 24);
  EXPECT_EQ(ds.meta.disp_min, -0.5);
  EXPECT_EQ(ds.meta.disp_max, 1.0);
}

TEST(Dataset, ViewIndexIsRowMajorOverU) {
  TempDir dir;
  LightField4D lf(3, 3, 2, 2, 1);
  for (int v = 0; v < 3; ++v)
    for (int u = 0; u < 3; ++u)
      for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 2; ++x) lf(u, v, x, y) = from_byte(static_cast<unsigned char>(10 * (v * 3 + u)));
  write_dataset(dir.path, lf, nullptr, {});
  const auto im = read_png(dir.path / "input_Cam005.png");
  EXPECT_EQ(im.data[0], 50);  // k = 5 is (u = 2, v = 1)
  const auto ds = load_dataset(dir.path, {}, 1);
  EXPECT_EQ(ds.lf, lf);
  EXPECT_FALSE(ds.gt.has_value());
}

TEST(Dataset, LoadsQuickly) {
  TempDir dir;
  const auto [lf, gt] = gen_lightfield(two_plane_scene(1.0, -0.5, 64, 64, 6));
  write_dataset(dir.path, lf, &gt, {});
  const auto t0 = std::chrono::steady_clock::now();
  const auto ds = load_dataset(dir.path);
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_LT(s, 1.0);
  EXPECT_EQ(ds.lf.X(), 64);
}

TEST(Dataset, MissingViewIsNamed) {
  TempDir dir;
  const auto [lf, gt] = gen_lightfield(two_plane_scene(1.0, -0.5, 16, 16, 7));
  write_dataset(dir.path, lf, &gt, {});
  fs::remove(dir.path / "input_Cam017.png");
  try {
    load_dataset(dir.path);
    FAIL() << "expected LoadError";
  } catch (const LoadError& e) {
    EXPECT_NE(std::string(e.what()).find("missing view 17"), std::string::npos) << e.what();
  }
}

TEST(Dataset, InconsistentDimensionsRejected) {
  TempDir dir;
  const auto [lf, gt] = gen_lightfield(two_plane_scene(1.0, -0.5, 16, 16, 7));
  write_dataset(dir.path, lf, &gt, {});
  write_png(Image8{15, 16, 3, std::vector<unsigned char>(15 * 16 * 3, 0)}, dir.path / "input_Cam040.png");
  EXPECT_THROW(load_dataset(dir.path), LoadError);
  write_png(Image8{16, 16, 3, std::vector<unsigned char>(16 * 16 * 3, 0)}, dir.path / "input_Cam040.png");
  write_pfm(PfmImage{4, 4, 1, 1.0f, std::vector<float>(16, 0.0f)}, dir.path / "gt_disp_lowres.pfm");
  EXPECT_THROW(load_dataset(dir.path), LoadError);
}

TEST(Dataset, ParametersAreValidated) {
  TempDir dir;
  write_text_atomic(dir.path / "parameters.cfg", "[intrinsics]\nimage_resolution_x_px = 8\n");
  EXPECT_THROW(read_parameters(dir.path / "parameters.cfg"), LoadError);
  write_text_atomic(dir.path / "parameters.cfg",
                    "[intrinsics]\nimage_resolution_x_px = 8\nimage_resolution_y_px = eight\n");
  EXPECT_THROW(read_parameters(dir.path / "parameters.cfg"), ParseError);
  write_text_atomic(dir.path / "parameters.cfg",
                    "[intrinsics]\nimage_resolution_x_px = 8\nimage_resolution_y_px = 8\n[meta]\ndisp_min = 2\n"
                    "disp_max = -2\n");
  EXPECT_THROW(read_parameters(dir.path / "parameters.cfg"), LoadError);
  EXPECT_THROW(load_dataset(dir.path / "nope"), LoadError);
  DatasetLayout bad;
  bad.view_pattern = "view_%s.png";
  EXPECT_THROW(bad.view_name(1), ArgumentError);
}

TEST(Files, AtomicWriteLeavesNoTemporary) {
  TempDir dir;
  write_text_atomic(dir.path / "a.txt", "first");
  write_text_atomic(dir.path / "a.txt", "second");
  EXPECT_EQ(read_text(dir.path / "a.txt"), "second");
  int entries = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir.path)) ++entries;
  EXPECT_EQ(entries, 1);
  EXPECT_THROW(write_text_atomic(dir.path / "missing" / "a.txt", "x"), Error);
}

TEST(Files, FingerprintIsStable) {
  // FNV-1a 64 reference values
  EXPECT_EQ(fingerprint(""), "cbf29ce484222325");
  EXPECT_EQ(fingerprint("a"), "af63dc4c8601ec8c");
  EXPECT_NE(fingerprint("ab"), fingerprint("ba"));
}

namespace {
NetworkConfig small_net() {
  NetworkConfig c;
  c.width = 4;
  c.orm_channels = 3;
  return c;
}
}  // namespace

TEST(Checkpoint, RoundTripRestoresEveryTensor) {
  TempDir dir;
  Network<float> a(small_net(), 1);
  a.bn_states()[0].running_mean[0] = 0.25f;
  a.bn_states()[1].updates = 7;
  save_checkpoint(a, dir.path / "m.ckpt", "cfg123", {{"iteration", 42}});
  Network<float> b(small_net(), 2);
  const auto info = load_checkpoint(dir.path / "m.ckpt", b);
  EXPECT_EQ(info.config_fingerprint, "cfg123");
  EXPECT_EQ(info.metadata.at("iteration"), 42);
  EXPECT_EQ(info.precision, "float32");
  for (std::size_t i = 0; i < a.parameters().size(); ++i)
    EXPECT_TRUE(std::ranges::equal(a.parameters()[i].value.values(), b.parameters()[i].value.values()));
  EXPECT_EQ(b.bn_states()[0].running_mean[0], 0.25f);
  EXPECT_EQ(b.bn_states()[1].updates, 7);
  EXPECT_EQ(encode_checkpoint(a, "cfg123", {{"iteration", 42}}), encode_checkpoint(b, "cfg123", {{"iteration", 42}}));
}

TEST(Checkpoint, PrecisionConversion) {
  Network<float> a(small_net(), 1);
  Network<double> b(small_net(), 2);
  decode_checkpoint_into(encode_checkpoint(a, "x"), b);
  EXPECT_EQ(b.parameters()[3].value[0], static_cast<double>(a.parameters()[3].value[0]));
}

TEST(Checkpoint, CorruptionAndMismatchRejected) {
  Network<float> a(small_net(), 1);
  auto bytes = encode_checkpoint(a, "x");
  Network<float> b(small_net(), 1);
  auto flipped = bytes;
  flipped[flipped.size() / 2] ^= 0x10;
  EXPECT_NE(parse_message([&] { decode_checkpoint_into(flipped, b); }).find("CRC"), std::string::npos);
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint_into(magic, b), ParseError);
  EXPECT_THROW(decode_checkpoint_into(Bytes(bytes.begin(), bytes.begin() + 20), b), ParseError);
  auto other = small_net();
  other.width = 8;
  Network<float> c(other, 1);
  EXPECT_THROW(decode_checkpoint_into(bytes, c), ArgumentError);
  EXPECT_NE(architecture_fingerprint(other), architecture_fingerprint(small_net()));
}

TEST(Config, DefaultsRoundTripThroughCanonicalText) {
  const RunConfig c;
  const auto text = canonical_text(c);
  EXPECT_NE(text.find("network.width = 16\n"), std::string::npos);
  EXPECT_NE(text.find("train.batch_size = 32\n"), std::string::npos);
  const auto back = parse_config(text);
  EXPECT_EQ(canonical_text(back), text);
  EXPECT_EQ(config_fingerprint(back), config_fingerprint(c));
  EXPECT_NO_THROW(back.validate());
}

TEST(Config, ParsesValuesAndComments) {
  const auto c = parse_config(
      "# toy run\n"
      "train.lr = 0.002   # faster\n"
      "train.shifts = -1, 1\n"
      "train.augment = false\n"
      "network.num_orms = 0\n"
      "train.precision = float64\n"
      "\n");
  EXPECT_EQ(c.train.lr, 0.002);
  EXPECT_EQ(c.train.shifts, (std::vector<double>{-1.0, 1.0}));
  EXPECT_FALSE(c.train.augment);
  EXPECT_EQ(c.network.num_orms, 0);
  EXPECT_EQ(c.train.precision, Precision::f64);
  EXPECT_NE(config_fingerprint(c), config_fingerprint(RunConfig{}));
}

TEST(Config, RejectsUnknownRepeatedAndMalformed) {
  EXPECT_NE(parse_message([] { parse_config("train.lr = 1e-3\ntrain.lrr = 1\n"); }).find(":2: unknown config key"),
            std::string::npos);
  EXPECT_THROW(parse_config("train.lr = 1\ntrain.lr = 2\n"), ParseError);
  EXPECT_THROW(parse_config("train.lr\n"), ParseError);
  EXPECT_THROW(parse_config("train.iterations = ten\n"), ParseError);
  EXPECT_THROW(parse_config("train.augment = maybe\n"), ParseError);
  EXPECT_THROW(parse_config("train.interp = cubic\n"), ParseError);
  auto c = parse_config("data.source = disk\n");
  EXPECT_THROW(c.validate(), ArgumentError);
}
