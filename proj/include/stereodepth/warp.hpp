#pragma once

#include "stereodepth/tensor.hpp"

namespace stereodepth {

// Which way along a scanline the source is read: column j samples j + sign * d.
// A left pixel (i, j) corresponds to right pixel (i, j - d) in rectified geometry,
// so reconstructing the left view reads the right image with sign -1.
enum class SampleDirection : int { kTowardLeft = -1, kTowardRight = +1 };

constexpr double sign_of(SampleDirection dir) { return static_cast<int>(dir) < 0 ? -1.0 : 1.0; }
constexpr SampleDirection opposite(SampleDirection dir) {
  return dir == SampleDirection::kTowardLeft ? SampleDirection::kTowardRight : SampleDirection::kTowardLeft;
}

// Linear interpolation along rows. For every plane of `source` (H x W or C x H x W):
//   x  = clamp(j + sign * d(i, j), 0, W - 1)
//   x0 = floor(x), x1 = min(x0 + 1, W - 1), w = x - x0
//   out(c, i, j) = (1 - w) * source(c, i, x0) + w * source(c, i, x1)
// Differentiable in both arguments; the disparity gradient is zero where the
// coordinate is clamped.
Tensor bilinear_sample(const Tensor& source, const Tensor& disparity, SampleDirection direction);

// Left view rebuilt from the right image: right sampled at j - d_left.
Tensor reconstruct_left(const Tensor& right_image, const Tensor& d_left);
// Right view rebuilt from the left image: left sampled at j + d_right.
Tensor reconstruct_right(const Tensor& left_image, const Tensor& d_right);

// d_other resampled onto the base view's grid using d_base.
Tensor project_disparity(const Tensor& d_other, const Tensor& d_base, SampleDirection direction);

}  // namespace stereodepth
