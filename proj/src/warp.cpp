#include "stereodepth/warp.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace stereodepth {

Tensor bilinear_sample(const Tensor& source, const Tensor& disparity, SampleDirection direction) {
  if (source.rank() != 2 && source.rank() != 3) {
    throw ShapeError("bilinear_sample: source must be H x W or C x H x W, got " +
                     shape_string(source.shape()));
  }
  const std::size_t h = source.shape()[source.rank() - 2];
  const std::size_t w = source.shape()[source.rank() - 1];
  const std::size_t channels = source.rank() == 3 ? source.dim(0) : 1;
  if (disparity.rank() != 2 || disparity.dim(0) != h || disparity.dim(1) != w) {
    throw ShapeError("bilinear_sample: disparity " + shape_string(disparity.shape()) +
                     " does not match source height/width " + std::to_string(h) + "x" + std::to_string(w));
  }
  const double sign = sign_of(direction);
  const double max_x = static_cast<double>(w - 1);
  auto d = disparity.data();

  // Sampling geometry is shared by every channel.
  std::vector<std::size_t> lo(h * w), hi(h * w);
  std::vector<double> frac(h * w);
  std::vector<bool> clamped(h * w);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const std::size_t p = i * w + j;
      if (std::isnan(d[p])) throw NonFiniteError("bilinear_sample: NaN disparity at " + std::to_string(p));
      const double raw = static_cast<double>(j) + sign * d[p];
      const double x = std::clamp(raw, 0.0, max_x);
      clamped[p] = raw < 0.0 || raw > max_x;
      const double x0 = std::floor(x);
      lo[p] = static_cast<std::size_t>(x0);
      hi[p] = std::min(lo[p] + 1, w - 1);
      frac[p] = x - x0;
    }
  }

  auto src = source.data();
  std::vector<double> out(channels * h * w);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t i = 0; i < h; ++i) {
      const double* row = src.data() + (c * h + i) * w;
      for (std::size_t j = 0; j < w; ++j) {
        const std::size_t p = i * w + j;
        out[c * h * w + p] = (1.0 - frac[p]) * row[lo[p]] + frac[p] * row[hi[p]];
      }
    }
  }
  return make_op_result(
      "bilinear_sample", source.shape(), std::move(out), {source, disparity},
      [=, lo = std::move(lo), hi = std::move(hi), frac = std::move(frac),
       clamped = std::move(clamped)](std::span<const double> g) {
        if (source.requires_grad()) {
          auto gs = source.grad_accumulator();
          for (std::size_t c = 0; c < channels; ++c) {
            for (std::size_t i = 0; i < h; ++i) {
              double* grow = gs.data() + (c * h + i) * w;
              for (std::size_t j = 0; j < w; ++j) {
                const std::size_t p = i * w + j;
                const double go = g[c * h * w + p];
                grow[lo[p]] += (1.0 - frac[p]) * go;
                grow[hi[p]] += frac[p] * go;
              }
            }
          }
        }
        if (disparity.requires_grad()) {
          auto gd = disparity.grad_accumulator();
          auto src = source.data();
          for (std::size_t c = 0; c < channels; ++c) {
            for (std::size_t i = 0; i < h; ++i) {
              const double* row = src.data() + (c * h + i) * w;
              for (std::size_t j = 0; j < w; ++j) {
                const std::size_t p = i * w + j;
                if (clamped[p]) continue;
                gd[p] += sign * (row[hi[p]] - row[lo[p]]) * g[c * h * w + p];
              }
            }
          }
        }
      });
}

Tensor reconstruct_left(const Tensor& right_image, const Tensor& d_left) {
  return bilinear_sample(right_image, d_left, SampleDirection::kTowardLeft);
}

Tensor reconstruct_right(const Tensor& left_image, const Tensor& d_right) {
  return bilinear_sample(left_image, d_right, SampleDirection::kTowardRight);
}

Tensor project_disparity(const Tensor& d_other, const Tensor& d_base, SampleDirection direction) {
  if (d_other.rank() != 2) {
    throw ShapeError("project_disparity: expected H x W disparity, got " + shape_string(d_other.shape()));
  }
  return bilinear_sample(d_other, d_base, direction);
}

}  // namespace stereodepth
