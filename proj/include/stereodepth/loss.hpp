#pragma once

#include <cstddef>
#include <vector>

#include "stereodepth/pyramid.hpp"
#include "stereodepth/tensor.hpp"

namespace stereodepth {

struct LossWeights {
  double alpha_ap = 1.0;
  double alpha_lr = 1.0;
  // Smoothness weight at full resolution; level with downscale factor r uses base / r.
  double alpha_ds_base = 0.1;
  // Mix between the SSIM and L1 parts of the appearance term.
  double ssim_alpha = 0.85;
  double ssim_c1 = 0.01 * 0.01;
  double ssim_c2 = 0.03 * 0.03;
  // Evaluate the smoothness and consistency terms on d / W_s (disparity as a
  // fraction of the level width) instead of pixels. The weights above were
  // tuned for that unit; in pixels both terms grow by W_s.
  bool width_normalized = true;

  double alpha_ds(double downscale) const { return alpha_ds_base / downscale; }
  // Throws Error on negative weights or ssim_alpha outside [0, 1].
  void validate() const;
};

// Per-scale loss terms. Tensors carry the graph; the doubles mirror their values.
struct ScaleLoss {
  Tensor total;
  Tensor ap_left, ap_right, ds_left, ds_right, lr_left, lr_right;
  double downscale = 1.0;
};

struct ScaleLossBreakdown {
  double c_ap_l = 0, c_ap_r = 0, c_ds_l = 0, c_ds_r = 0, c_lr_l = 0, c_lr_r = 0, c_total = 0;
  double c_ap() const { return c_ap_l + c_ap_r; }
  double c_ds() const { return c_ds_l + c_ds_r; }
  double c_lr() const { return c_lr_l + c_lr_r; }
};

ScaleLossBreakdown breakdown_of(const ScaleLoss& loss);

// Simplified SSIM over 3x3 box windows that lie fully inside the image.
// x, y: C x H x W with H, W >= 3. Result: C x (H-2) x (W-2).
Tensor ssim_map(const Tensor& x, const Tensor& y, double c1 = 0.01 * 0.01, double c2 = 0.03 * 0.03);

// Mean over the valid (H-2) x (W-2) x C interior of
//   ssim_alpha * (1 - SSIM) / 2 + (1 - ssim_alpha) * |I - I_recon|.
Tensor appearance_loss(const Tensor& image, const Tensor& reconstruction, const LossWeights& weights);

// As appearance_loss, restricted to interior pixels whose whole 3x3 window is
// marked visible (mask value > 0.5). mask is H x W. Returns a plain value.
double appearance_loss_masked(const Tensor& image, const Tensor& reconstruction, const Tensor& mask,
                              const LossWeights& weights);

// Edge-aware first-order smoothness of an H x W disparity against a C x H x W image:
//   ( sum |d(i,j+1) - d(i,j)| * exp(-mean_c |I(c,i,j+1) - I(c,i,j)|)
//   + sum |d(i+1,j) - d(i,j)| * exp(-mean_c |I(c,i+1,j) - I(c,i,j)|) ) / (H * W)
// The image only supplies constant weights; no gradient flows into it.
Tensor smoothness_loss(const Tensor& disparity, const Tensor& image);

// Left variant: mean |d_l(i,j) - d_r(i, j - d_l(i,j))|.
Tensor lr_consistency_left(const Tensor& d_left, const Tensor& d_right);
// Right variant: mean |d_r(i,j) - d_l(i, j + d_r(i,j))|.
Tensor lr_consistency_right(const Tensor& d_left, const Tensor& d_right);

ScaleLoss scale_loss(const Tensor& left, const Tensor& right, const Tensor& d_left,
                     const Tensor& d_right, double downscale, const LossWeights& weights);

struct TotalLoss {
  Tensor total;
  std::vector<ScaleLoss> scales;
  std::vector<ScaleLossBreakdown> breakdown() const;
};

// Sum of scale losses over every level of `disparities`; level s uses downscale 2^s
// and the s-th entries of the image pyramids.
TotalLoss total_loss(const std::vector<Tensor>& left_pyramid, const std::vector<Tensor>& right_pyramid,
                     const DisparityPyramid& disparities, const LossWeights& weights);

}  // namespace stereodepth
