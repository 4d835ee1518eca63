#include "stereodepth/loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "stereodepth/ops.hpp"
#include "stereodepth/warp.hpp"

namespace stereodepth {

void LossWeights::validate() const {
  if (alpha_ap < 0 || alpha_lr < 0 || alpha_ds_base < 0 || ssim_c1 < 0 || ssim_c2 < 0) {
    throw Error("loss weights must be non-negative");
  }
  if (ssim_alpha < 0 || ssim_alpha > 1) throw Error("ssim_alpha must lie in [0, 1]");
}

ScaleLossBreakdown breakdown_of(const ScaleLoss& loss) {
  return {loss.ap_left.item(),  loss.ap_right.item(), loss.ds_left.item(), loss.ds_right.item(),
          loss.lr_left.item(),  loss.lr_right.item(), loss.total.item()};
}

namespace {

struct WindowStats {
  double mx, my, exx, eyy, exy;
};

WindowStats window_stats(const double* x, const double* y, std::size_t w) {
  WindowStats s{0, 0, 0, 0, 0};
  for (std::size_t di = 0; di < 3; ++di) {
    for (std::size_t dj = 0; dj < 3; ++dj) {
      const double a = x[di * w + dj], b = y[di * w + dj];
      s.mx += a;
      s.my += b;
      s.exx += a * a;
      s.eyy += b * b;
      s.exy += a * b;
    }
  }
  constexpr double inv = 1.0 / 9.0;
  s.mx *= inv;
  s.my *= inv;
  s.exx *= inv;
  s.eyy *= inv;
  s.exy *= inv;
  return s;
}

}  // namespace

Tensor ssim_map(const Tensor& x, const Tensor& y, double c1, double c2) {
  if (x.shape() != y.shape()) {
    throw ShapeError("ssim_map: shape mismatch " + shape_string(x.shape()) + " vs " + shape_string(y.shape()));
  }
  if (x.rank() != 3) throw ShapeError("ssim_map: expected C x H x W, got " + shape_string(x.shape()));
  const std::size_t ch = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h < 3 || w < 3) throw ShapeError("ssim_map: image " + shape_string(x.shape()) + " smaller than 3x3");
  const std::size_t oh = h - 2, ow = w - 2;
  auto xv = x.data(), yv = y.data();
  std::vector<double> out(ch * oh * ow);
  for (std::size_t c = 0; c < ch; ++c) {
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        const std::size_t base = (c * h + i) * w + j;
        const auto s = window_stats(xv.data() + base, yv.data() + base, w);
        const double vx = std::max(s.exx - s.mx * s.mx, 0.0);
        const double vy = std::max(s.eyy - s.my * s.my, 0.0);
        const double cov = s.exy - s.mx * s.my;
        const double num = (2 * s.mx * s.my + c1) * (2 * cov + c2);
        const double den = (s.mx * s.mx + s.my * s.my + c1) * (vx + vy + c2);
        out[(c * oh + i) * ow + j] = num / den;
      }
    }
  }
  return make_op_result(
      "ssim_map", {ch, oh, ow}, std::move(out), {x, y}, [=](std::span<const double> g) {
        auto xv = x.data(), yv = y.data();
        std::span<double> gx, gy;
        if (x.requires_grad()) gx = x.grad_accumulator();
        if (y.requires_grad()) gy = y.grad_accumulator();
        constexpr double inv = 1.0 / 9.0;
        for (std::size_t c = 0; c < ch; ++c) {
          for (std::size_t i = 0; i < oh; ++i) {
            for (std::size_t j = 0; j < ow; ++j) {
              const double go = g[(c * oh + i) * ow + j];
              if (go == 0.0) continue;
              const std::size_t base = (c * h + i) * w + j;
              const auto s = window_stats(xv.data() + base, yv.data() + base, w);
              const double rx = s.exx - s.mx * s.mx, ry = s.eyy - s.my * s.my;
              const bool live_x = rx > 0.0, live_y = ry > 0.0;
              const double vx = live_x ? rx : 0.0, vy = live_y ? ry : 0.0;
              const double a = 2 * s.mx * s.my + c1;
              const double b = 2 * (s.exy - s.mx * s.my) + c2;
              const double cc = s.mx * s.mx + s.my * s.my + c1;
              const double d = vx + vy + c2;
              const double ssim = a * b / (cc * d);
              const double d_a = b / (cc * d), d_b = a / (cc * d);
              const double d_c = -ssim / cc, d_d = -ssim / d;
              const double d_mx = d_a * 2 * s.my - d_b * 2 * s.my + d_c * 2 * s.mx -
                                  (live_x ? d_d * 2 * s.mx : 0.0);
              const double d_my = d_a * 2 * s.mx - d_b * 2 * s.mx + d_c * 2 * s.my -
                                  (live_y ? d_d * 2 * s.my : 0.0);
              const double d_exx = live_x ? d_d : 0.0;
              const double d_eyy = live_y ? d_d : 0.0;
              const double d_exy = 2 * d_b;
              for (std::size_t di = 0; di < 3; ++di) {
                for (std::size_t dj = 0; dj < 3; ++dj) {
                  const std::size_t q = base + di * w + dj;
                  if (!gx.empty()) gx[q] += go * inv * (d_mx + 2 * d_exx * xv[q] + d_exy * yv[q]);
                  if (!gy.empty()) gy[q] += go * inv * (d_my + 2 * d_eyy * yv[q] + d_exy * xv[q]);
                }
              }
            }
          }
        }
      });
}

Tensor appearance_loss(const Tensor& image, const Tensor& reconstruction, const LossWeights& weights) {
  if (image.shape() != reconstruction.shape()) {
    throw ShapeError("appearance_loss: shape mismatch " + shape_string(image.shape()) + " vs " +
                     shape_string(reconstruction.shape()));
  }
  const double alpha = weights.ssim_alpha;
  const Tensor ssim = ssim_map(image, reconstruction, weights.ssim_c1, weights.ssim_c2);
  const Tensor dssim = ops::mean(ops::add_scalar(ops::scale(ssim, -0.5), 0.5));
  const std::size_t h = image.dim(1), w = image.dim(2);
  const Tensor l1 = ops::mean(ops::abs(ops::crop(ops::sub(image, reconstruction), 1, 1, h - 2, w - 2)));
  return ops::add(ops::scale(dssim, alpha), ops::scale(l1, 1.0 - alpha));
}

double appearance_loss_masked(const Tensor& image, const Tensor& reconstruction, const Tensor& mask,
                              const LossWeights& weights) {
  if (image.shape() != reconstruction.shape()) {
    throw ShapeError("appearance_loss_masked: shape mismatch " + shape_string(image.shape()) + " vs " +
                     shape_string(reconstruction.shape()));
  }
  const std::size_t ch = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (mask.rank() != 2 || mask.dim(0) != h || mask.dim(1) != w) {
    throw ShapeError("appearance_loss_masked: mask " + shape_string(mask.shape()) + " does not match image");
  }
  NoGradGuard no_grad;
  const Tensor ssim = ssim_map(image, reconstruction, weights.ssim_c1, weights.ssim_c2);
  auto m = mask.data();
  auto iv = image.data(), rv = reconstruction.data();
  auto sv = ssim.data();
  const double alpha = weights.ssim_alpha;
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 1; i + 1 < h; ++i) {
    for (std::size_t j = 1; j + 1 < w; ++j) {
      bool visible = true;
      for (std::size_t di = 0; di < 3 && visible; ++di) {
        for (std::size_t dj = 0; dj < 3; ++dj) visible = visible && m[(i + di - 1) * w + j + dj - 1] > 0.5;
      }
      if (!visible) continue;
      for (std::size_t c = 0; c < ch; ++c) {
        const std::size_t p = (c * h + i) * w + j;
        const double s = sv[(c * (h - 2) + i - 1) * (w - 2) + j - 1];
        acc += alpha * (1.0 - s) / 2.0 + (1.0 - alpha) * std::fabs(iv[p] - rv[p]);
        ++count;
      }
    }
  }
  if (count == 0) throw Error("appearance_loss_masked: no fully visible 3x3 window");
  return acc / static_cast<double>(count);
}

Tensor smoothness_loss(const Tensor& disparity, const Tensor& image) {
  if (disparity.rank() != 2 || image.rank() != 3 || image.dim(1) != disparity.dim(0) ||
      image.dim(2) != disparity.dim(1)) {
    throw ShapeError("smoothness_loss: disparity " + shape_string(disparity.shape()) +
                     " does not match image " + shape_string(image.shape()));
  }
  const std::size_t ch = image.dim(0), h = disparity.dim(0), w = disparity.dim(1);
  auto iv = image.data();
  // Edge weights depend only on the image.
  std::vector<double> wx(h * w, 0.0), wy(h * w, 0.0);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      double gxs = 0.0, gys = 0.0;
      for (std::size_t c = 0; c < ch; ++c) {
        const std::size_t p = (c * h + i) * w + j;
        if (j + 1 < w) gxs += std::fabs(iv[p + 1] - iv[p]);
        if (i + 1 < h) gys += std::fabs(iv[p + w] - iv[p]);
      }
      if (j + 1 < w) wx[i * w + j] = std::exp(-gxs / static_cast<double>(ch));
      if (i + 1 < h) wy[i * w + j] = std::exp(-gys / static_cast<double>(ch));
    }
  }
  const double inv_n = 1.0 / static_cast<double>(h * w);
  auto d = disparity.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const std::size_t p = i * w + j;
      if (j + 1 < w) acc += std::fabs(d[p + 1] - d[p]) * wx[p];
      if (i + 1 < h) acc += std::fabs(d[p + w] - d[p]) * wy[p];
    }
  }
  return make_op_result(
      "smoothness_loss", {}, {acc * inv_n}, {disparity},
      [disparity, wx = std::move(wx), wy = std::move(wy), h, w, inv_n](std::span<const double> g) {
        auto gd = disparity.grad_accumulator();
        auto d = disparity.data();
        auto sgn = [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); };
        for (std::size_t i = 0; i < h; ++i) {
          for (std::size_t j = 0; j < w; ++j) {
            const std::size_t p = i * w + j;
            if (j + 1 < w) {
              const double v = g[0] * inv_n * wx[p] * sgn(d[p + 1] - d[p]);
              gd[p + 1] += v;
              gd[p] -= v;
            }
            if (i + 1 < h) {
              const double v = g[0] * inv_n * wy[p] * sgn(d[p + w] - d[p]);
              gd[p + w] += v;
              gd[p] -= v;
            }
          }
        }
      });
}

Tensor lr_consistency_left(const Tensor& d_left, const Tensor& d_right) {
  if (d_left.shape() != d_right.shape()) {
    throw ShapeError("lr_consistency: shape mismatch " + shape_string(d_left.shape()) + " vs " +
                     shape_string(d_right.shape()));
  }
  const Tensor projected = project_disparity(d_right, d_left, SampleDirection::kTowardLeft);
  return ops::mean(ops::abs(ops::sub(d_left, projected)));
}

Tensor lr_consistency_right(const Tensor& d_left, const Tensor& d_right) {
  if (d_left.shape() != d_right.shape()) {
    throw ShapeError("lr_consistency: shape mismatch " + shape_string(d_left.shape()) + " vs " +
                     shape_string(d_right.shape()));
  }
  const Tensor projected = project_disparity(d_left, d_right, SampleDirection::kTowardRight);
  return ops::mean(ops::abs(ops::sub(d_right, projected)));
}

ScaleLoss scale_loss(const Tensor& left, const Tensor& right, const Tensor& d_left, const Tensor& d_right,
                     double downscale, const LossWeights& weights) {
  ScaleLoss s;
  s.downscale = downscale;
  s.ap_left = appearance_loss(left, reconstruct_left(right, d_left), weights);
  s.ap_right = appearance_loss(right, reconstruct_right(left, d_right), weights);
  // Both terms are linear in the disparity values, so scaling afterwards equals
  // evaluating them on d / W_s with sampling coordinates still in pixels.
  const double unit = weights.width_normalized ? 1.0 / static_cast<double>(d_left.dim(1)) : 1.0;
  s.ds_left = ops::scale(smoothness_loss(d_left, left), unit);
  s.ds_right = ops::scale(smoothness_loss(d_right, right), unit);
  s.lr_left = ops::scale(lr_consistency_left(d_left, d_right), unit);
  s.lr_right = ops::scale(lr_consistency_right(d_left, d_right), unit);
  s.total = ops::add(ops::add(ops::scale(ops::add(s.ap_left, s.ap_right), weights.alpha_ap),
                              ops::scale(ops::add(s.ds_left, s.ds_right), weights.alpha_ds(downscale))),
                     ops::scale(ops::add(s.lr_left, s.lr_right), weights.alpha_lr));
  return s;
}

std::vector<ScaleLossBreakdown> TotalLoss::breakdown() const {
  std::vector<ScaleLossBreakdown> out;
  out.reserve(scales.size());
  for (const auto& s : scales) out.push_back(breakdown_of(s));
  return out;
}

TotalLoss total_loss(const std::vector<Tensor>& left_pyramid, const std::vector<Tensor>& right_pyramid,
                     const DisparityPyramid& disparities, const LossWeights& weights) {
  if (disparities.empty()) throw ShapeError("total_loss: empty disparity pyramid");
  if (left_pyramid.size() < disparities.size() || right_pyramid.size() < disparities.size()) {
    throw ShapeError("total_loss: image pyramids have fewer levels than the disparity pyramid");
  }
  TotalLoss result;
  double downscale = 1.0;
  for (std::size_t s = 0; s < disparities.size(); ++s) {
    result.scales.push_back(scale_loss(left_pyramid[s], right_pyramid[s], disparities[s].left,
                                       disparities[s].right, downscale, weights));
    result.total = s == 0 ? result.scales.back().total : ops::add(result.total, result.scales.back().total);
    downscale *= 2.0;
  }
  return result;
}

std::vector<Tensor> build_image_pyramid(const Tensor& image, std::size_t levels) {
  std::vector<Tensor> pyramid{image};
  for (std::size_t s = 1; s < levels; ++s) pyramid.push_back(ops::avgpool2x(pyramid.back()));
  return pyramid;
}

}  // namespace stereodepth
