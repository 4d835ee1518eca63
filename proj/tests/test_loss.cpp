#include <algorithm>
#include <cmath>
#include <iomanip>

#include <gtest/gtest.h>

#include "stereodepth/data.hpp"
#include "stereodepth/loss.hpp"
#include "stereodepth/ops.hpp"
#include "stereodepth/warp.hpp"
#include "test_support.hpp"

using namespace stereodepth;
using stereodepth::testing::max_abs_diff;
using stereodepth::testing::random_tensor;

namespace {

constexpr double kC1 = 1e-4, kC2 = 9e-4;
constexpr double kGoldenTotalLoss = 0.51651988860446996;

// SSIM straight from the window definition, one window at a time.
std::vector<double> ssim_oracle(const Tensor& x, const Tensor& y) {
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  std::vector<double> out;
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 1; i + 1 < h; ++i)
      for (std::size_t j = 1; j + 1 < w; ++j) {
        std::vector<double> a, b;
        for (int di = -1; di <= 1; ++di)
          for (int dj = -1; dj <= 1; ++dj) {
            a.push_back(x[(ch * h + i + di) * w + j + dj]);
            b.push_back(y[(ch * h + i + di) * w + j + dj]);
          }
        double ma = 0, mb = 0;
        for (int k = 0; k < 9; ++k) ma += a[k] / 9, mb += b[k] / 9;
        double va = 0, vb = 0, cov = 0;
        for (int k = 0; k < 9; ++k) {
          va += (a[k] - ma) * (a[k] - ma) / 9;
          vb += (b[k] - mb) * (b[k] - mb) / 9;
          cov += (a[k] - ma) * (b[k] - mb) / 9;
        }
        out.push_back((2 * ma * mb + kC1) * (2 * cov + kC2) / ((ma * ma + mb * mb + kC1) * (va + vb + kC2)));
      }
  return out;
}

double appearance_oracle(const Tensor& x, const Tensor& y, double alpha) {
  const auto ssim = ssim_oracle(x, y);
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  double acc = 0;
  std::size_t k = 0;
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 1; i + 1 < h; ++i)
      for (std::size_t j = 1; j + 1 < w; ++j, ++k) {
        const std::size_t p = (ch * h + i) * w + j;
        acc += alpha * (1 - ssim[k]) / 2 + (1 - alpha) * std::abs(x[p] - y[p]);
      }
  return acc / static_cast<double>(k);
}

double lr_left_oracle(const Tensor& dl, const Tensor& dr) {
  const std::size_t h = dl.dim(0), w = dl.dim(1);
  double acc = 0;
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const double x = std::clamp(static_cast<double>(j) - dl[i * w + j], 0.0, static_cast<double>(w - 1));
      const auto x0 = static_cast<std::size_t>(std::floor(x));
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double a = x - static_cast<double>(x0);
      acc += std::abs(dl[i * w + j] - ((1 - a) * dr[i * w + x0] + a * dr[i * w + x1]));
    }
  return acc / static_cast<double>(h * w);
}

Tensor flip(const Tensor& t) { return ops::flip_horizontal(t); }

}  // namespace

TEST(Ssim, IdenticalImagesGiveOne) {
  Rng rng(1);
  const auto x = random_tensor(rng, {3, 6, 7}, 0, 1);
  const auto s = ssim_map(x, x);
  ASSERT_EQ(s.shape(), (Shape{3, 4, 5}));
  for (double v : s.data()) EXPECT_NEAR(v, 1.0, 1e-12);
}

TEST(Ssim, BlackAgainstWhite) {
  const auto s = ssim_map(Tensor::zeros({1, 4, 4}), Tensor::full({1, 4, 4}, 1.0));
  for (double v : s.data()) EXPECT_NEAR(v, kC1 / (1 + kC1), 1e-15);
  EXPECT_NEAR(s[0], 9.999e-5, 1e-8);
}

TEST(Ssim, MatchesWindowOracle) {
  Rng rng(3);
  for (int t = 0; t < 20; ++t) {
    const std::size_t c = 1 + rng.below(3), h = 3 + rng.below(6), w = 3 + rng.below(6);
    const auto x = random_tensor(rng, {c, h, w}, 0, 1), y = random_tensor(rng, {c, h, w}, 0, 1);
    EXPECT_LE(max_abs_diff(ssim_map(x, y), ssim_oracle(x, y)), 1e-9);
  }
  EXPECT_THROW(ssim_map(Tensor::zeros({1, 2, 5}), Tensor::zeros({1, 2, 5})), ShapeError);
}

TEST(Appearance, ExamplesAndOracle) {
  const LossWeights w;
  Rng rng(4);
  const auto x = random_tensor(rng, {3, 8, 8}, 0, 1), y = random_tensor(rng, {3, 8, 8}, 0, 1);
  EXPECT_EQ(appearance_loss(x, x, w).item(), 0.0);
  const double black_white = appearance_loss(Tensor::zeros({3, 5, 5}), Tensor::full({3, 5, 5}, 1.0), w).item();
  EXPECT_NEAR(black_white, 0.85 * (1 - kC1 / (1 + kC1)) / 2 + 0.15, 1e-12);
  EXPECT_NEAR(black_white, 0.57496, 1e-5);
  EXPECT_LE(std::abs(appearance_loss(x, y, w).item() - appearance_oracle(x, y, 0.85)), 1e-9);
  // Both parts are symmetric in their arguments.
  EXPECT_NEAR(appearance_loss(x, y, w).item(), appearance_loss(y, x, w).item(), 1e-13);
  EXPECT_THROW(appearance_loss(x, Tensor::zeros({3, 8, 7}), w), ShapeError);
}

TEST(Appearance, MaskedVariantSkipsOccludedWindows) {
  const LossWeights w;
  Rng rng(6);
  auto x = random_tensor(rng, {3, 6, 6}, 0, 1);
  std::vector<double> yv(x.data().begin(), x.data().end());
  yv[2 * 6 + 5] = 1.0 - yv[2 * 6 + 5];  // channel 0, row 2, col 5
  const auto y = Tensor::from({3, 6, 6}, yv);
  std::vector<double> m(36, 1.0);
  EXPECT_GT(appearance_loss_masked(x, y, Tensor::from({6, 6}, m), w), 0.0);
  m[2 * 6 + 5] = 0.0;
  EXPECT_EQ(appearance_loss_masked(x, y, Tensor::from({6, 6}, m), w), 0.0);
}

TEST(Smoothness, ConstantAndStep) {
  const std::size_t h = 5, w = 8;
  EXPECT_EQ(smoothness_loss(Tensor::full({h, w}, 3.0), Tensor::zeros({3, h, w})).item(), 0.0);
  std::vector<double> d(h * w, 0.0);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 4; j < w; ++j) d[i * w + j] = 1.0;
  const auto step = Tensor::from({h, w}, d);
  const double flat = smoothness_loss(step, Tensor::full({3, h, w}, 0.5)).item();
  EXPECT_DOUBLE_EQ(flat, static_cast<double>(h) / static_cast<double>(h * w));

  // Image edge at the same column, 0.7 in every channel.
  std::vector<double> img(3 * h * w, 0.1);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 4; j < w; ++j) img[(c * h + i) * w + j] = 0.8;
  const double edged = smoothness_loss(step, Tensor::from({3, h, w}, img)).item();
  EXPECT_NEAR(edged, flat * std::exp(-0.7), 1e-15);
}

TEST(Smoothness, NoGradientIntoImage) {
  Rng rng(7);
  const auto d = random_tensor(rng, {4, 4}, 0, 2, true);
  const auto img = random_tensor(rng, {3, 4, 4}, 0, 1, true);
  smoothness_loss(d, img).backward();
  EXPECT_TRUE(d.has_grad());
  EXPECT_FALSE(img.has_grad());
}

TEST(LrConsistency, ExamplesAndOracle) {
  EXPECT_EQ(lr_consistency_left(Tensor::full({3, 6}, 2.0), Tensor::full({3, 6}, 2.0)).item(), 0.0);
  EXPECT_DOUBLE_EQ(lr_consistency_left(Tensor::zeros({3, 6}), Tensor::full({3, 6}, 1.75)).item(), 1.75);
  EXPECT_DOUBLE_EQ(lr_consistency_right(Tensor::full({3, 6}, 1.75), Tensor::zeros({3, 6})).item(), 1.75);
  Rng rng(8);
  for (int t = 0; t < 20; ++t) {
    const auto dl = random_tensor(rng, {5, 12}, 0, 4), dr = random_tensor(rng, {5, 12}, 0, 4);
    EXPECT_LE(std::abs(lr_consistency_left(dl, dr).item() - lr_left_oracle(dl, dr)), 1e-9);
    // The right variant is the left variant of the mirrored, role-swapped pair.
    EXPECT_NEAR(lr_consistency_right(dl, dr).item(), lr_left_oracle(flip(dr), flip(dl)), 1e-9);
  }
}

TEST(ScaleLoss, ZeroOnPerfectTrivialInput) {
  Rng rng(9);
  const auto img = random_tensor(rng, {3, 8, 16}, 0, 1);
  const auto s = scale_loss(img, img, Tensor::zeros({8, 16}), Tensor::zeros({8, 16}), 1.0, LossWeights{});
  const auto b = breakdown_of(s);
  EXPECT_EQ(b.c_total, 0.0);
  EXPECT_EQ(b.c_ap(), 0.0);
  EXPECT_EQ(b.c_ds(), 0.0);
  EXPECT_EQ(b.c_lr(), 0.0);
}

TEST(ScaleLoss, CompositionAndHalvingWithScale) {
  Rng rng(10);
  const auto l = random_tensor(rng, {3, 8, 16}, 0, 1), r = random_tensor(rng, {3, 8, 16}, 0, 1);
  const auto dl = random_tensor(rng, {8, 16}, 0, 4), dr = random_tensor(rng, {8, 16}, 0, 4);
  LossWeights w;
  w.alpha_ap = 0.7;
  w.alpha_lr = 1.3;
  const auto b1 = breakdown_of(scale_loss(l, r, dl, dr, 1.0, w));
  const auto b2 = breakdown_of(scale_loss(l, r, dl, dr, 2.0, w));
  for (const auto& b : {b1, b2}) {
    EXPECT_GT(b.c_ap(), 0.0);
    EXPECT_GT(b.c_ds(), 0.0);
    EXPECT_GT(b.c_lr(), 0.0);
  }
  EXPECT_NEAR(b1.c_total, 0.7 * b1.c_ap() + 0.1 * b1.c_ds() + 1.3 * b1.c_lr(), 1e-14);
  const double ds1 = b1.c_total - 0.7 * b1.c_ap() - 1.3 * b1.c_lr();
  const double ds2 = b2.c_total - 0.7 * b2.c_ap() - 1.3 * b2.c_lr();
  EXPECT_NEAR(ds2, ds1 / 2, 1e-14);
}

TEST(ScaleLoss, WidthNormalizationDividesRegularizers) {
  Rng rng(11);
  const auto l = random_tensor(rng, {3, 8, 16}, 0, 1), r = random_tensor(rng, {3, 8, 16}, 0, 1);
  const auto dl = random_tensor(rng, {8, 16}, 0, 4), dr = random_tensor(rng, {8, 16}, 0, 4);
  LossWeights px;
  px.width_normalized = false;
  const auto a = breakdown_of(scale_loss(l, r, dl, dr, 1.0, LossWeights{}));
  const auto b = breakdown_of(scale_loss(l, r, dl, dr, 1.0, px));
  EXPECT_NEAR(a.c_ds_l * 16, b.c_ds_l, 1e-13);
  EXPECT_NEAR(a.c_lr_r * 16, b.c_lr_r, 1e-13);
  EXPECT_EQ(a.c_ap_l, b.c_ap_l);
  EXPECT_NEAR(b.c_lr_l, lr_left_oracle(dl, dr), 1e-12);
}

TEST(ScaleLoss, InvariantUnderMirrorWithRoleSwap) {
  Rng rng(12);
  for (int t = 0; t < 5; ++t) {
    const auto l = random_tensor(rng, {3, 8, 16}, 0, 1), r = random_tensor(rng, {3, 8, 16}, 0, 1);
    const auto dl = random_tensor(rng, {8, 16}, 0, 5), dr = random_tensor(rng, {8, 16}, 0, 5);
    const auto a = breakdown_of(scale_loss(l, r, dl, dr, 1.0, LossWeights{}));
    const auto b = breakdown_of(scale_loss(flip(r), flip(l), flip(dr), flip(dl), 1.0, LossWeights{}));
    EXPECT_NEAR(a.c_total, b.c_total, 1e-12);
    EXPECT_NEAR(a.c_ap_l, b.c_ap_r, 1e-12);
    EXPECT_NEAR(a.c_lr_l, b.c_lr_r, 1e-12);
    EXPECT_NEAR(a.c_ds_r, b.c_ds_l, 1e-12);
  }
}

TEST(ScaleLoss, GroundTruthReconstructsSyntheticScene) {
  SceneSpec spec;
  spec.seed = 5;
  spec.width = 64;
  spec.height = 32;
  spec.background_disparity = 0;
  spec.background_texture_seed = 11;
  spec.layers = {{20, 6, 20, 18, 4, 12}};
  const auto s = generate_scene(spec);
  const auto mask = occlusion_mask(spec);
  const double ap = appearance_loss_masked(s.left, reconstruct_left(s.right, *s.gt_disparity_left), mask, {});
  EXPECT_LE(ap, 1e-6);
}

TEST(TotalLoss, SumOfIndependentScales) {
  Rng rng(13);
  const auto l = random_tensor(rng, {3, 32, 64}, 0, 1), r = random_tensor(rng, {3, 32, 64}, 0, 1);
  const auto lp = build_image_pyramid(l, 4), rp = build_image_pyramid(r, 4);
  DisparityPyramid d;
  for (std::size_t s = 0; s < 4; ++s) {
    const std::size_t h = 32 >> s, w = 64 >> s;
    d.push_back({random_tensor(rng, {h, w}, 0, 0.3 * w), random_tensor(rng, {h, w}, 0, 0.3 * w)});
  }
  const auto total = total_loss(lp, rp, d, LossWeights{});
  double acc = 0;
  for (std::size_t s = 0; s < 4; ++s) {
    acc += scale_loss(lp[s], rp[s], d[s].left, d[s].right, std::pow(2.0, s), LossWeights{}).total.item();
  }
  EXPECT_NEAR(total.total.item(), acc, 1e-13);
  const DisparityPyramid one{d[0]};
  EXPECT_EQ(total_loss(lp, rp, one, LossWeights{}).total.item(),
            scale_loss(lp[0], rp[0], d[0].left, d[0].right, 1.0, LossWeights{}).total.item());
}

TEST(TotalLoss, GoldenValueOnSeededBatch) {
  // Fixed synthetic pair with ground truth on every level (nearest-downsampled / 2^s).
  const auto s = generate_scene(random_scene_spec(2024, 64, 32));
  const auto lp = build_image_pyramid(s.left, 4), rp = build_image_pyramid(s.right, 4);
  DisparityPyramid d;
  auto gl = *s.gt_disparity_left, gr = *s.gt_disparity_right;
  for (std::size_t k = 0; k < 4; ++k) {
    d.push_back({gl, gr});
    gl = ops::scale(ops::avgpool2x(gl), 0.5);
    gr = ops::scale(ops::avgpool2x(gr), 0.5);
  }
  const double value = total_loss(lp, rp, d, LossWeights{}).total.item();
  EXPECT_NEAR(value, kGoldenTotalLoss, 1e-10) << std::setprecision(17) << value;
}
