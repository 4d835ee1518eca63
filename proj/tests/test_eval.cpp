#include <cmath>
#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "stereodepth/eval.hpp"
#include "stereodepth/ops.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using namespace stereodepth;
using stereodepth::testing::max_abs_diff;
using stereodepth::testing::random_tensor;

namespace {

struct Oracle {
  double abs_rel = 0, sq_rel = 0, rmse = 0, rmse_log = 0, d1 = 0, t1 = 0, t2 = 0, t3 = 0;
};

// Textbook loops over a list of valid pixels.
Oracle metric_oracle(const Tensor& pred, const Tensor& gt, const Tensor& mask) {
  std::vector<std::pair<double, double>> px;
  for (std::size_t i = 0; i < pred.numel(); ++i)
    if (mask[i] == 1.0) px.emplace_back(pred[i], gt[i]);
  Oracle o;
  const double n = static_cast<double>(px.size());
  for (auto [p, g] : px) {
    o.abs_rel += std::abs(p - g) / g / n;
    o.sq_rel += (p - g) * (p - g) / g / n;
    o.rmse += (p - g) * (p - g) / n;
    o.rmse_log += (std::log(p) - std::log(g)) * (std::log(p) - std::log(g)) / n;
    const double r = p > g ? p / g : g / p;
    o.t1 += (r < 1.25) / n;
    o.t2 += (r < 1.5625) / n;
    o.t3 += (r < 1.953125) / n;
    o.d1 += (std::abs(p - g) > 3 && std::abs(p - g) > 0.05 * g) * 100.0 / n;
  }
  o.rmse = std::sqrt(o.rmse);
  o.rmse_log = std::sqrt(o.rmse_log);
  return o;
}

Tensor ones(std::size_t h, std::size_t w) { return Tensor::full({h, w}, 1.0); }

std::pair<std::size_t, std::size_t> observed_bands(std::size_t w) {
  // d_left = 1, mirrored run = 3 everywhere: left band reads 3, right band 1, middle 2.
  const auto out = postprocess(Tensor::full({1, w}, 1.0), Tensor::full({1, w}, 3.0));
  std::size_t left = 0, right = w;
  while (left < w && out[left] == 3.0) ++left;
  while (right > 0 && out[right - 1] == 1.0) --right;
  for (std::size_t j = left; j < right; ++j) EXPECT_EQ(out[j], 2.0) << "W=" << w << " j=" << j;
  return {left, right};
}

}  // namespace

TEST(Depth, ConversionExamples) {
  CameraModel kitti{0.54, 721.0};
  EXPECT_NEAR(disparity_to_depth(Tensor::scalar(38.934), kitti, 80).item(), 10.0, 1e-4);
  const auto capped = disparity_to_depth(Tensor::from({3}, {0.0, -1.0, 1e-9}), kitti, 80);
  for (double v : capped.data()) EXPECT_EQ(v, 80.0);
  Rng rng(1);
  const auto d = random_tensor(rng, {4, 4}, 5.0, 60.0);
  const auto z = disparity_to_depth(d, kitti, 80);
  EXPECT_LE(max_abs_diff(depth_to_disparity(z, kitti), d), 1e-9);
  EXPECT_LE(max_abs_diff(disparity_to_depth(depth_to_disparity(z, kitti), kitti, 80), z), 1e-9);
}

TEST(Metrics, PerfectAndScaledPredictions) {
  Rng rng(2);
  const auto gt = random_tensor(rng, {5, 6}, 1.0, 50.0);
  const auto same = depth_metrics(gt, gt, ones(5, 6));
  EXPECT_EQ(same.abs_rel, 0.0);
  EXPECT_EQ(same.rmse, 0.0);
  EXPECT_EQ(same.delta1, 1.0);
  EXPECT_EQ(same.delta3, 1.0);
  EXPECT_EQ(same.pixels, 30u);
  const auto scaled = depth_metrics(ops::scale(gt, 1.3), gt, ones(5, 6));
  EXPECT_NEAR(scaled.abs_rel, 0.3, 1e-12);
  EXPECT_EQ(scaled.delta1, 0.0);
  EXPECT_EQ(scaled.delta2, 1.0);
}

TEST(Metrics, MatchLoopOracleOnRandomInstances) {
  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    const std::size_t h = 1 + rng.below(6), w = 1 + rng.below(6);
    const auto gt = random_tensor(rng, {h, w}, 0.5, 80.0);
    const auto pred = random_tensor(rng, {h, w}, 0.5, 80.0);
    std::vector<double> m(h * w);
    for (auto& v : m) v = rng.bernoulli(0.7) ? 1.0 : 0.0;
    m[rng.below(h * w)] = 1.0;
    const auto mask = Tensor::from({h, w}, m);
    const auto r = depth_metrics(pred, gt, mask);
    const auto o = metric_oracle(pred, gt, mask);
    EXPECT_NEAR(r.abs_rel, o.abs_rel, 1e-12);
    EXPECT_NEAR(r.sq_rel, o.sq_rel, 1e-12 * std::max(1.0, o.sq_rel));
    EXPECT_NEAR(r.rmse, o.rmse, 1e-12 * std::max(1.0, o.rmse));
    EXPECT_NEAR(r.rmse_log, o.rmse_log, 1e-12);
    EXPECT_NEAR(r.delta1, o.t1, 1e-12);
    EXPECT_NEAR(r.delta2, o.t2, 1e-12);
    EXPECT_NEAR(r.delta3, o.t3, 1e-12);
    EXPECT_NEAR(d1_all(pred, gt, mask), o.d1, 1e-12);
    EXPECT_LE(r.delta1, r.delta2);
    EXPECT_LE(r.delta2, r.delta3);
  }
}

TEST(Metrics, ScaleInvarianceAndAsymmetry) {
  Rng rng(4);
  const auto gt = random_tensor(rng, {6, 6}, 1.0, 30.0), pred = random_tensor(rng, {6, 6}, 1.0, 30.0);
  const auto a = depth_metrics(pred, gt, ones(6, 6));
  const auto b = depth_metrics(ops::scale(pred, 7.5), ops::scale(gt, 7.5), ones(6, 6));
  EXPECT_EQ(a.delta1, b.delta1);
  EXPECT_EQ(a.delta3, b.delta3);
  const auto swapped = depth_metrics(gt, pred, ones(6, 6));
  EXPECT_NEAR(a.rmse, swapped.rmse, 1e-12);
  EXPECT_GT(std::abs(a.abs_rel - swapped.abs_rel), 1e-6);
}

TEST(Metrics, ErrorsOnEmptyMaskAndBadDepth) {
  EXPECT_THROW(depth_metrics(ones(2, 2), ones(2, 2), Tensor::zeros({2, 2})), Error);
  EXPECT_THROW(depth_metrics(Tensor::zeros({2, 2}), ones(2, 2), ones(2, 2)), Error);
  EXPECT_THROW(d1_all(ones(2, 2), ones(2, 2), Tensor::zeros({2, 2})), Error);
}

TEST(D1, ThresholdExamples) {
  const auto gt = Tensor::full({3, 3}, 50.0);
  EXPECT_EQ(d1_all(gt, gt, ones(3, 3)), 0.0);
  EXPECT_EQ(d1_all(Tensor::full({3, 3}, 54.0), gt, ones(3, 3)), 100.0);
  EXPECT_EQ(d1_all(Tensor::full({3, 3}, 52.0), gt, ones(3, 3)), 0.0);
  // 3.5 px on gt 80: above 3 px but below 5%.
  EXPECT_EQ(d1_all(Tensor::full({1, 1}, 83.5), Tensor::full({1, 1}, 80.0), ones(1, 1)), 0.0);
}

TEST(PostProcess, BandsFollowCeilAndFloor) {
  EXPECT_EQ(observed_bands(20), (std::pair<std::size_t, std::size_t>{1, 19}));
  EXPECT_EQ(observed_bands(64), (std::pair<std::size_t, std::size_t>{4, 60}));
  EXPECT_EQ(observed_bands(100), (std::pair<std::size_t, std::size_t>{5, 95}));
  // From W = 2; at W = 1 the two bands overlap.
  for (std::size_t w = 2; w <= 128; ++w) {
    const auto [l, r] = observed_bands(w);
    EXPECT_EQ(l, static_cast<std::size_t>(std::ceil(0.05 * static_cast<double>(w) - 1e-12))) << w;
    EXPECT_EQ(r, static_cast<std::size_t>(std::floor(0.95 * static_cast<double>(w) + 1e-12))) << w;
  }
}

TEST(PostProcess, AgreementBoundsAndSymmetry) {
  Rng rng(5);
  const auto x = random_tensor(rng, {4, 20}, 0, 9);
  EXPECT_EQ(max_abs_diff(postprocess(x, ops::flip_horizontal(x)), x), 0.0);
  const auto a = random_tensor(rng, {4, 20}, 0, 9), b = random_tensor(rng, {4, 20}, 0, 9);
  const auto out = postprocess(a, b);
  const auto mb = ops::flip_horizontal(b);
  for (std::size_t i = 0; i < out.numel(); ++i) {
    EXPECT_GE(out[i], std::min(a[i], mb[i]));
    EXPECT_LE(out[i], std::max(a[i], mb[i]));
  }
  // A prediction for a mirror-symmetric image: the mirrored run equals the direct run.
  const auto d = random_tensor(rng, {3, 64}, 0, 9);
  const auto pp = postprocess(d, d);
  EXPECT_EQ(max_abs_diff(pp, ops::flip_horizontal(pp)), 0.0);
}

TEST(Resize, AlignCornersBilinear) {
  const auto m = Tensor::from({2, 2}, {0, 1, 2, 3});
  const auto r = resize_bilinear(m, 3, 3);
  EXPECT_EQ(max_abs_diff(r, std::vector<double>{0, 0.5, 1, 1, 1.5, 2, 2, 2.5, 3}), 0.0);
  EXPECT_EQ(max_abs_diff(resize_bilinear(m, 2, 2), m), 0.0);
}

TEST(Evaluate, OracleAndConstantBaseline) {
  std::vector<StereoSample> data;
  for (std::uint64_t s = 0; s < 6; ++s) data.push_back(generate_scene(random_scene_spec(500 + s, 64, 32)));
  auto oracle = [](const StereoSample& s) { return *s.gt_disparity_left; };
  const auto perfect = evaluate(data, oracle, {});
  EXPECT_EQ(perfect.summary.abs_rel, 0.0);
  EXPECT_EQ(perfect.summary.d1_all, 0.0);
  EXPECT_EQ(perfect.summary.delta1, 1.0);
  ASSERT_EQ(perfect.per_image.size(), 6u);
  std::size_t visible = 0;
  for (const auto& s : data)
    for (double v : s.visible_left->data()) visible += v > 0.5;
  EXPECT_EQ(perfect.summary.pixels, visible);

  const double mean = mean_gt_disparity(data);
  const auto base = evaluate(data, constant_predictor(mean), {});
  EXPECT_GT(base.summary.abs_rel, 0.0);
  EXPECT_LT(base.summary.delta1, 1.0);

  EvalOptions crop;
  crop.crop = CropRect{8, 4, 16, 8};
  EXPECT_LE(evaluate(data, oracle, crop).summary.pixels, 6u * 16 * 8);
  EvalOptions threaded;
  threaded.threads = 3;
  EXPECT_EQ(evaluate(data, constant_predictor(mean), threaded).summary.abs_rel, base.summary.abs_rel);
  EXPECT_THROW(evaluate({}, oracle, {}), Error);
}

TEST(Evaluate, CsvAndJson) {
  const fs::path dir(TEST_SCRATCH_DIR);
  fs::create_directories(dir);
  std::vector<StereoSample> data{generate_scene(random_scene_spec(9, 64, 32))};
  data[0].id = "scene9";
  const auto r = evaluate(data, constant_predictor(5.0), {});
  write_metrics_csv(dir / "m.csv", r.per_image);
  std::ifstream in(dir / "m.csv");
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  EXPECT_EQ(header, "image_id,abs_rel,sq_rel,rmse,rmse_log,d1_all,delta1,delta2,delta3");
  EXPECT_EQ(row.rfind("scene9,", 0), 0u);
  const auto j = to_json(r.summary);
  EXPECT_DOUBLE_EQ(j["abs_rel"].get<double>(), r.summary.abs_rel);
  EXPECT_FALSE(format_metrics_table(r.summary).empty());
}
