#pragma once

#include <cstddef>
#include <vector>

#include "stereodepth/tensor.hpp"

// Differentiable operations. Shapes must match exactly; there is no broadcasting.
// Spatial operations act on the last two dimensions (H x W) and treat every
// leading index as an independent plane.
namespace stereodepth::ops {

// Cross-correlation with zero padding. input is C x H x W or N x C x H x W,
// weight is out_channels x in_channels x k x k, bias has out_channels entries.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              std::size_t stride = 1, std::size_t padding = 0);

Tensor elu(const Tensor& x);
// d_max / (1 + exp(-x)); strictly inside (0, d_max).
Tensor sigmoid_scaled(const Tensor& x, double d_max);
Tensor upsample_nearest2x(const Tensor& x);
// Non-overlapping 2x2 mean. Height and width must be even.
Tensor avgpool2x(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
Tensor add_scalar(const Tensor& x, double value);
// Subgradient at 0 is 0.
Tensor abs(const Tensor& x);
Tensor exp(const Tensor& x);
// Strictly positive input required.
Tensor log(const Tensor& x);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Concatenates along the channel axis. Rank-2 (H x W) parts count as one channel;
// rank-3 parts contribute their leading dimension. Result is rank 3.
Tensor concat_channels(const std::vector<Tensor>& parts);
// Channel c of a C x H x W tensor, as H x W.
Tensor select_channel(const Tensor& x, std::size_t channel);
Tensor reshape(const Tensor& x, Shape shape);
// Spatial window [top, top + height) x [left, left + width) of every plane.
Tensor crop(const Tensor& x, std::size_t top, std::size_t left, std::size_t height,
            std::size_t width);
// Mirrors the last axis.
Tensor flip_horizontal(const Tensor& x);

}  // namespace stereodepth::ops
