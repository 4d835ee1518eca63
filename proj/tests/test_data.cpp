#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

#include <gtest/gtest.h>

#include "stereodepth/data.hpp"
#include "stereodepth/image_io.hpp"
#include "stereodepth/loss.hpp"
#include "stereodepth/warp.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using namespace stereodepth;
using stereodepth::testing::max_abs_diff;
using stereodepth::testing::random_tensor;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::path(TEST_SCRATCH_DIR) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

bool covers(const LayerSpec& l, std::size_t i, long col) {
  return i >= l.y && i < l.y + l.height && col >= static_cast<long>(l.x) &&
         col < static_cast<long>(l.x + l.width);
}

// Visibility by ray test: the left pixel's surface point lands at right column
// j - d; it is hidden if that column is off-image or any nearer layer covers it there.
std::vector<double> visibility_oracle(const SceneSpec& spec) {
  std::vector<double> out(spec.width * spec.height);
  for (std::size_t i = 0; i < spec.height; ++i)
    for (std::size_t j = 0; j < spec.width; ++j) {
      int top = -1;
      for (std::size_t k = 0; k < spec.layers.size(); ++k)
        if (covers(spec.layers[k], i, static_cast<long>(j))) top = static_cast<int>(k);
      const int d = top < 0 ? spec.background_disparity : spec.layers[top].disparity;
      const long jr = static_cast<long>(j) - d;
      bool visible = jr >= 0;
      for (std::size_t k = top + 1; visible && k < spec.layers.size(); ++k) {
        const auto& l = spec.layers[k];
        if (l.disparity > d && covers(l, i, jr + l.disparity)) visible = false;
      }
      out[i * spec.width + j] = visible ? 1.0 : 0.0;
    }
  return out;
}

SceneSpec single_layer(int disparity) {
  SceneSpec spec;
  spec.seed = 3;
  spec.width = 64;
  spec.height = 32;
  spec.background_texture_seed = 99;
  spec.layers = {{20, 6, 24, 16, disparity, 5}};
  return spec;
}

std::vector<unsigned char> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out << bytes;
}

}  // namespace

TEST(Generator, BackgroundOnlyIsIdenticalViews) {
  SceneSpec spec;
  spec.background_texture_seed = 4;
  const auto s = generate_scene(spec);
  EXPECT_EQ(max_abs_diff(s.left, s.right), 0.0);
  for (double v : s.gt_disparity_left->data()) EXPECT_EQ(v, 0.0);
  for (double v : s.visible_left->data()) EXPECT_EQ(v, 1.0);
}

TEST(Generator, SingleLayerReconstructsAndLeavesOccludedStrip) {
  const auto spec = single_layer(4);
  const auto s = generate_scene(spec);
  const auto mask = occlusion_mask(spec);
  const auto rec = reconstruct_left(s.right, *s.gt_disparity_left);
  double worst = 0;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t p = 0; p < 64 * 32; ++p)
      if (mask[p] > 0.5) worst = std::max(worst, std::abs(rec[c * 64 * 32 + p] - s.left[c * 64 * 32 + p]));
  EXPECT_LE(worst, 1e-6);

  // Exactly the 4 columns left of the layer, on the layer's rows.
  for (std::size_t i = 0; i < 32; ++i)
    for (std::size_t j = 0; j < 64; ++j) {
      const bool strip = i >= 6 && i < 22 && j >= 16 && j < 20;
      EXPECT_EQ(mask[i * 64 + j], strip ? 0.0 : 1.0) << i << "," << j;
    }
}

TEST(Generator, GroundTruthIsPiecewiseConstant) {
  const auto spec = random_scene_spec(12, 64, 32);
  const auto s = generate_scene(spec);
  for (std::size_t i = 0; i < 32; ++i)
    for (std::size_t j = 0; j < 64; ++j) {
      int d = spec.background_disparity;
      for (const auto& l : spec.layers)
        if (covers(l, i, static_cast<long>(j))) d = l.disparity;
      EXPECT_EQ((*s.gt_disparity_left)[i * 64 + j], d);
    }
}

TEST(Generator, MaskMatchesBruteForceVisibility) {
  for (std::uint64_t seed = 1; seed <= 40; ++seed) {
    const auto spec = random_scene_spec(seed, 64, 32);
    EXPECT_EQ(max_abs_diff(occlusion_mask(spec), visibility_oracle(spec)), 0.0) << "seed " << seed;
  }
}

TEST(Generator, OracleReconstructionOnRandomScenes) {
  for (std::uint64_t seed = 100; seed < 125; ++seed) {
    const auto spec = random_scene_spec(seed, 64, 32);
    const auto s = generate_scene(spec);
    const double ap =
        appearance_loss_masked(s.left, reconstruct_left(s.right, *s.gt_disparity_left), *s.visible_left, {});
    EXPECT_LE(ap, 1e-6) << "seed " << seed;
  }
}

TEST(Generator, RandomScenesRespectBounds) {
  for (std::uint64_t seed = 1; seed <= 200; ++seed) {
    const auto spec = random_scene_spec(seed, 64, 32);
    EXPECT_NO_THROW(spec.validate());
    EXPECT_GE(spec.layers.size(), 1u);
    EXPECT_LE(spec.layers.size(), 3u);
    for (const auto& l : spec.layers) EXPECT_LT(l.disparity, 0.3 * 64);
    const auto s = generate_scene(spec);
    for (double v : s.left.data()) EXPECT_TRUE(v >= 0.0 && v <= 1.0);
  }
}

TEST(Generator, DeterministicUnderSeed) {
  const auto a = generate_scene(random_scene_spec(77, 64, 32));
  const auto b = generate_scene(random_scene_spec(77, 64, 32));
  const auto c = generate_scene(random_scene_spec(78, 64, 32));
  EXPECT_EQ(max_abs_diff(a.left, b.left), 0.0);
  EXPECT_EQ(max_abs_diff(a.right, b.right), 0.0);
  EXPECT_GT(max_abs_diff(a.left, c.left), 0.0);
}

TEST(Generator, ValidationRejectsBadSpecs) {
  auto spec = single_layer(4);
  spec.layers[0].x = 50;  // 50 + 24 > 64
  EXPECT_THROW(generate_scene(spec), Error);
  spec = single_layer(20);  // 20 >= 0.3 * 64
  EXPECT_THROW(spec.validate(), Error);
  spec = single_layer(6);
  spec.layers.push_back({0, 0, 4, 4, 3, 1});
  EXPECT_THROW(spec.validate(), Error);
}

TEST(ImageIo, PpmRoundTripWithinQuantization) {
  const auto dir = scratch("ppm");
  Rng rng(5);
  const auto img = random_tensor(rng, {3, 7, 5}, 0, 1);
  write_ppm(dir / "a.ppm", img);
  const auto back = read_ppm(dir / "a.ppm");
  ASSERT_EQ(back.shape(), img.shape());
  EXPECT_LE(max_abs_diff(back, img), 0.5 / 255 + 1e-12);
  write_ppm(dir / "b.ppm", back);
  EXPECT_EQ(max_abs_diff(read_ppm(dir / "b.ppm"), back), 0.0);
}

TEST(ImageIo, PfmRoundTripIsBitExactAndBottomUp) {
  const auto dir = scratch("pfm");
  Rng rng(6);
  std::vector<double> v(6);
  for (auto& x : v) x = static_cast<double>(static_cast<float>(rng.uniform(-5, 20)));
  const auto map = Tensor::from({2, 3}, v);
  write_pfm(dir / "m.pfm", map);
  const auto back = read_pfm(dir / "m.pfm");
  EXPECT_EQ(max_abs_diff(back, map), 0.0);

  const auto bytes = slurp(dir / "m.pfm");
  const std::string header = "Pf\n3 2\n-1.0\n";
  ASSERT_EQ(bytes.size(), header.size() + 24);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + header.size()), header);
  float first = 0;
  std::memcpy(&first, bytes.data() + header.size(), 4);  // host is little-endian
  EXPECT_EQ(static_cast<double>(first), v[3]);            // bottom row comes first
}

TEST(ImageIo, DistinctErrorsForDistinctFaults) {
  const auto dir = scratch("faults");
  spit(dir / "p3.ppm", "P3\n2 2\n255\n");
  EXPECT_THROW(read_ppm(dir / "p3.ppm"), MalformedHeaderError);
  spit(dir / "short.ppm", "P6\n2 2\n255\nabc");
  EXPECT_THROW(read_ppm(dir / "short.ppm"), TruncatedPayloadError);
  spit(dir / "bad.pfm", "PF\n2 2\n-1.0\n");
  EXPECT_THROW(read_pfm(dir / "bad.pfm"), MalformedHeaderError);
  spit(dir / "short.pfm", "Pf\n2 2\n-1.0\n1234");
  EXPECT_THROW(read_pfm(dir / "short.pfm"), TruncatedPayloadError);
  spit(dir / "scale.pfm", "Pf\n2 2\nabc\n");
  EXPECT_THROW(read_pfm(dir / "scale.pfm"), MalformedHeaderError);
}

TEST(Manifest, RoundTripAndLoad) {
  const auto dir = scratch("manifest");
  const auto s = generate_scene(single_layer(4));
  write_ppm(dir / "l.ppm", s.left);
  write_ppm(dir / "r.ppm", s.right);
  write_pfm(dir / "d.pfm", *s.gt_disparity_left);
  write_pfm(dir / "m.pfm", *s.visible_left);
  ManifestEntry e;
  e.left = "l.ppm";
  e.right = "r.ppm";
  e.gt_disparity = "d.pfm";
  e.visible_mask = "m.pfm";
  e.baseline = 0.3;
  write_manifest(dir / "manifest.jsonl", {e, e});
  const auto entries = read_manifest(dir / "manifest.jsonl");
  ASSERT_EQ(entries.size(), 2u);
  EXPECT_EQ(entries[1].line, 2u);
  EXPECT_EQ(entries[0].left, dir / "l.ppm");
  const auto data = load_dataset(dir / "manifest.jsonl");
  ASSERT_EQ(data.size(), 2u);
  EXPECT_EQ(data[0].camera.baseline, 0.3);
  EXPECT_EQ(data[0].camera.focal, CameraModel{}.focal);
  EXPECT_EQ(max_abs_diff(*data[0].gt_disparity_left, *s.gt_disparity_left), 0.0);
}

TEST(Manifest, ErrorsNameTheLine) {
  const auto dir = scratch("manifest_errors");
  const auto s = generate_scene(single_layer(4));
  write_ppm(dir / "l.ppm", s.left);
  write_ppm(dir / "r.ppm", s.right);
  write_ppm(dir / "small.ppm", Tensor::zeros({3, 4, 4}));

  auto expect_line = [&](const std::string& body, int line, auto tag) {
    spit(dir / "m.jsonl", body);
    using E = decltype(tag);
    try {
      load_dataset(dir / "m.jsonl");
      ADD_FAILURE() << "no error for: " << body;
    } catch (const E& e) {
      EXPECT_EQ(std::string(e.what()).rfind("line " + std::to_string(line) + ":", 0), 0u) << e.what();
    }
  };
  const std::string ok = R"({"left": "l.ppm", "right": "r.ppm"})";
  expect_line(ok + "\n" + R"({"left": "l.ppm", "right": "gone.ppm"})" + "\n", 2, ManifestError{""});
  expect_line(ok + "\n\n" + "{not json\n", 3, ManifestError{""});
  expect_line(R"({"left": "l.ppm"})", 1, ManifestError{""});
  expect_line(R"({"left": "l.ppm", "right": "small.ppm"})", 1, DimensionMismatchError{""});
  expect_line(ok + "\n" + R"({"left": "l.ppm", "right": "r.ppm", "gt_disparity": "nope.pfm"})", 2,
              ManifestError{""});
  EXPECT_THROW(read_manifest(dir / "absent.jsonl"), ManifestError);
}
