#include "stereodepth/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace stereodepth::ops {

namespace {

struct Planes {
  std::size_t count;
  std::size_t height;
  std::size_t width;
};

Planes planes_of(const Tensor& x, const char* op) {
  if (x.rank() < 2) {
    throw ShapeError(std::string(op) + ": expected at least 2 dimensions, got " +
                     shape_string(x.shape()));
  }
  const std::size_t h = x.shape()[x.rank() - 2];
  const std::size_t w = x.shape()[x.rank() - 1];
  return {h * w == 0 ? 0 : x.numel() / (h * w), h, w};
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

template <typename Fwd, typename Deriv>
Tensor unary(const char* op, const Tensor& x, Fwd fwd, Deriv deriv) {
  auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  return make_op_result(op, x.shape(), std::move(out), {x}, [x, deriv](std::span<const double> g) {
    auto gx = x.grad_accumulator();
    auto xv = x.data();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * deriv(xv[i]);
  });
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding) {
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  if (input.rank() != 3 && input.rank() != 4) {
    throw ShapeError("conv2d: input must be C x H x W or N x C x H x W, got " +
                     shape_string(input.shape()));
  }
  if (weight.rank() != 4) {
    throw ShapeError("conv2d: weight must be out x in x k x k, got " + shape_string(weight.shape()));
  }
  const bool batched = input.rank() == 4;
  const std::size_t n = batched ? input.dim(0) : 1;
  const std::size_t cin = input.dim(batched ? 1 : 0);
  const std::size_t h = input.dim(batched ? 2 : 1);
  const std::size_t w = input.dim(batched ? 3 : 2);
  const std::size_t cout = weight.dim(0);
  const std::size_t k = weight.dim(2);
  if (weight.dim(1) != cin) {
    throw ShapeError("conv2d: weight in_channels (dim 1) is " + std::to_string(weight.dim(1)) +
                     " but input has " + std::to_string(cin) + " channels");
  }
  if (weight.dim(3) != k) {
    throw ShapeError("conv2d: kernel must be square, got " + shape_string(weight.shape()));
  }
  if (bias.numel() != cout) {
    throw ShapeError("conv2d: bias has " + std::to_string(bias.numel()) + " entries, expected " +
                     std::to_string(cout) + " (out_channels)");
  }
  if (h + 2 * padding < k || w + 2 * padding < k) {
    throw ShapeError("conv2d: kernel " + std::to_string(k) + " larger than padded input " +
                     shape_string(input.shape()));
  }
  const std::size_t oh = (h + 2 * padding - k) / stride + 1;
  const std::size_t ow = (w + 2 * padding - k) / stride + 1;

  // Valid output column range for kernel column kx: 0 <= ox*stride - pad + kx < w.
  auto out_range = [stride, padding](std::size_t kx, std::size_t extent, std::size_t out_extent) {
    const long long p = static_cast<long long>(padding), kk = static_cast<long long>(kx);
    const long long s = static_cast<long long>(stride);
    long long lo = p - kk > 0 ? (p - kk + s - 1) / s : 0;
    long long hi = (static_cast<long long>(extent) - 1 + p - kk);
    hi = hi < 0 ? -1 : hi / s;
    hi = std::min<long long>(hi, static_cast<long long>(out_extent) - 1);
    return std::pair<long long, long long>{lo, hi};
  };

  auto in = input.data();
  auto wt = weight.data();
  auto bs = bias.data();
  std::vector<double> out(n * cout * oh * ow);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t oc = 0; oc < cout; ++oc) {
      double* o = out.data() + (b * cout + oc) * oh * ow;
      std::fill(o, o + oh * ow, bs[oc]);
      for (std::size_t ic = 0; ic < cin; ++ic) {
        const double* src = in.data() + (b * cin + ic) * h * w;
        for (std::size_t ky = 0; ky < k; ++ky) {
          auto [ylo, yhi] = out_range(ky, h, oh);
          for (std::size_t kx = 0; kx < k; ++kx) {
            auto [xlo, xhi] = out_range(kx, w, ow);
            const double wv = wt[((oc * cin + ic) * k + ky) * k + kx];
            for (long long oy = ylo; oy <= yhi; ++oy) {
              const std::size_t iy = oy * stride + ky - padding;
              const double* row = src + iy * w;
              double* orow = o + oy * ow;
              for (long long ox = xlo; ox <= xhi; ++ox) {
                orow[ox] += wv * row[ox * stride + kx - padding];
              }
            }
          }
        }
      }
    }
  }
  Shape out_shape = batched ? Shape{n, cout, oh, ow} : Shape{cout, oh, ow};
  return make_op_result(
      "conv2d", out_shape, std::move(out), {input, weight, bias},
      [=](std::span<const double> g) {
        const bool need_in = input.requires_grad();
        const bool need_w = weight.requires_grad();
        const bool need_b = bias.requires_grad();
        std::span<double> gin, gw, gb;
        if (need_in) gin = input.grad_accumulator();
        if (need_w) gw = weight.grad_accumulator();
        if (need_b) gb = bias.grad_accumulator();
        auto in = input.data();
        auto wt = weight.data();
        for (std::size_t b = 0; b < n; ++b) {
          for (std::size_t oc = 0; oc < cout; ++oc) {
            const double* go = g.data() + (b * cout + oc) * oh * ow;
            if (need_b) {
              double acc = 0.0;
              for (std::size_t i = 0; i < oh * ow; ++i) acc += go[i];
              gb[oc] += acc;
            }
            for (std::size_t ic = 0; ic < cin; ++ic) {
              const std::size_t plane = (b * cin + ic) * h * w;
              for (std::size_t ky = 0; ky < k; ++ky) {
                auto [ylo, yhi] = out_range(ky, h, oh);
                for (std::size_t kx = 0; kx < k; ++kx) {
                  auto [xlo, xhi] = out_range(kx, w, ow);
                  const std::size_t widx = ((oc * cin + ic) * k + ky) * k + kx;
                  const double wv = wt[widx];
                  double wacc = 0.0;
                  for (long long oy = ylo; oy <= yhi; ++oy) {
                    const std::size_t iy = oy * stride + ky - padding;
                    const double* grow = go + oy * ow;
                    const std::size_t rbase = plane + iy * w + kx - padding;
                    for (long long ox = xlo; ox <= xhi; ++ox) {
                      const std::size_t idx = rbase + ox * stride;
                      if (need_in) gin[idx] += wv * grow[ox];
                      wacc += in[idx] * grow[ox];
                    }
                  }
                  if (need_w) gw[widx] += wacc;
                }
              }
            }
          }
        }
      });
}

Tensor elu(const Tensor& x) {
  return unary(
      "elu", x, [](double v) { return v > 0.0 ? v : std::expm1(v); },
      [](double v) { return v > 0.0 ? 1.0 : std::exp(v); });
}

Tensor sigmoid_scaled(const Tensor& x, double d_max) {
  if (!(d_max > 0.0)) throw Error("sigmoid_scaled: d_max must be positive");
  auto sig = [](double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
  };
  return unary(
      "sigmoid_scaled", x, [=](double v) { return d_max * sig(v); },
      [=](double v) {
        const double s = sig(v);
        return d_max * s * (1.0 - s);
      });
}

Tensor upsample_nearest2x(const Tensor& x) {
  const auto [planes, h, w] = planes_of(x, "upsample_nearest2x");
  Shape shape = x.shape();
  shape[shape.size() - 2] = 2 * h;
  shape[shape.size() - 1] = 2 * w;
  auto in = x.data();
  std::vector<double> out(planes * 4 * h * w);
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = 0; y < 2 * h; ++y) {
      for (std::size_t xx = 0; xx < 2 * w; ++xx) {
        out[(p * 2 * h + y) * 2 * w + xx] = in[(p * h + y / 2) * w + xx / 2];
      }
    }
  }
  return make_op_result("upsample_nearest2x", shape, std::move(out), {x},
                        [x, planes, h, w](std::span<const double> g) {
                          auto gx = x.grad_accumulator();
                          for (std::size_t p = 0; p < planes; ++p) {
                            for (std::size_t y = 0; y < 2 * h; ++y) {
                              for (std::size_t xx = 0; xx < 2 * w; ++xx) {
                                gx[(p * h + y / 2) * w + xx / 2] += g[(p * 2 * h + y) * 2 * w + xx];
                              }
                            }
                          }
                        });
}

Tensor avgpool2x(const Tensor& x) {
  const auto [planes, h, w] = planes_of(x, "avgpool2x");
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("avgpool2x: height and width must be even, got " + shape_string(x.shape()));
  }
  const std::size_t oh = h / 2, ow = w / 2;
  Shape shape = x.shape();
  shape[shape.size() - 2] = oh;
  shape[shape.size() - 1] = ow;
  auto in = x.data();
  std::vector<double> out(planes * oh * ow);
  for (std::size_t p = 0; p < planes; ++p) {
    const double* src = in.data() + p * h * w;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) {
        const double* a = src + 2 * y * w + 2 * xx;
        out[(p * oh + y) * ow + xx] = 0.25 * (a[0] + a[1] + a[w] + a[w + 1]);
      }
    }
  }
  return make_op_result("avgpool2x", shape, std::move(out), {x},
                        [x, planes, h, w, oh, ow](std::span<const double> g) {
                          auto gx = x.grad_accumulator();
                          for (std::size_t p = 0; p < planes; ++p) {
                            for (std::size_t y = 0; y < h; ++y) {
                              for (std::size_t xx = 0; xx < w; ++xx) {
                                gx[(p * h + y) * w + xx] += 0.25 * g[(p * oh + y / 2) * ow + xx / 2];
                              }
                            }
                          }
                        });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  auto av = a.data(), bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_op_result("add", a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g) {
    for (const Tensor* t : {&a, &b}) {
      if (!t->requires_grad()) continue;
      auto gt = t->grad_accumulator();
      for (std::size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  auto av = a.data(), bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_op_result("sub", a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g) {
    if (a.requires_grad()) {
      auto ga = a.grad_accumulator();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad_accumulator();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  auto av = a.data(), bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_op_result("mul", a.shape(), std::move(out), {a, b}, [a, b](std::span<const double> g) {
    auto av = a.data(), bv = b.data();
    if (a.requires_grad()) {
      auto ga = a.grad_accumulator();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (b.requires_grad()) {
      auto gb = b.grad_accumulator();
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      "scale", x, [=](double v) { return factor * v; }, [=](double) { return factor; });
}

Tensor add_scalar(const Tensor& x, double value) {
  return unary(
      "add_scalar", x, [=](double v) { return v + value; }, [](double) { return 1.0; });
}

Tensor abs(const Tensor& x) {
  return unary(
      "abs", x, [](double v) { return std::fabs(v); },
      [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Tensor exp(const Tensor& x) {
  return unary(
      "exp", x, [](double v) { return std::exp(v); }, [](double v) { return std::exp(v); });
}

Tensor log(const Tensor& x) {
  for (double v : x.data()) {
    if (!(v > 0.0)) throw Error("log: non-positive input " + std::to_string(v));
  }
  return unary(
      "log", x, [](double v) { return std::log(v); }, [](double v) { return 1.0 / v; });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return make_op_result("sum", {}, {acc}, {x}, [x](std::span<const double> g) {
    auto gx = x.grad_accumulator();
    for (auto& v : gx) v += g[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean: empty tensor");
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  const double inv = 1.0 / static_cast<double>(x.numel());
  return make_op_result("mean", {}, {acc * inv}, {x}, [x, inv](std::span<const double> g) {
    auto gx = x.grad_accumulator();
    for (auto& v : gx) v += g[0] * inv;
  });
}

Tensor concat_channels(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  std::size_t h = 0, w = 0, channels = 0;
  std::vector<std::size_t> offsets;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    const Tensor& p = parts[i];
    if (p.rank() != 2 && p.rank() != 3) {
      throw ShapeError("concat_channels: part " + std::to_string(i) + " has shape " +
                       shape_string(p.shape()) + ", expected H x W or C x H x W");
    }
    const std::size_t ph = p.shape()[p.rank() - 2], pw = p.shape()[p.rank() - 1];
    if (i == 0) {
      h = ph;
      w = pw;
    } else if (ph != h || pw != w) {
      throw ShapeError("concat_channels: part " + std::to_string(i) + " spatial size " +
                       shape_string(p.shape()) + " differs from " + std::to_string(h) + "x" +
                       std::to_string(w));
    }
    offsets.push_back(channels * h * w);
    channels += p.rank() == 3 ? p.dim(0) : 1;
  }
  std::vector<double> out;
  out.reserve(channels * h * w);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return make_op_result("concat_channels", {channels, h, w}, std::move(out),
                        parts, [parts, offsets](std::span<const double> g) {
                          for (std::size_t i = 0; i < parts.size(); ++i) {
                            if (!parts[i].requires_grad()) continue;
                            auto gp = parts[i].grad_accumulator();
                            for (std::size_t j = 0; j < gp.size(); ++j) gp[j] += g[offsets[i] + j];
                          }
                        });
}

Tensor select_channel(const Tensor& x, std::size_t channel) {
  if (x.rank() != 3) throw ShapeError("select_channel: expected C x H x W, got " + shape_string(x.shape()));
  if (channel >= x.dim(0)) {
    throw ShapeError("select_channel: channel " + std::to_string(channel) + " out of range for " +
                     shape_string(x.shape()));
  }
  const std::size_t plane = x.dim(1) * x.dim(2);
  auto in = x.data().subspan(channel * plane, plane);
  return make_op_result("select_channel", {x.dim(1), x.dim(2)}, {in.begin(), in.end()}, {x},
                        [x, channel, plane](std::span<const double> g) {
                          auto gx = x.grad_accumulator().subspan(channel * plane, plane);
                          for (std::size_t i = 0; i < plane; ++i) gx[i] += g[i];
                        });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_string(x.shape()) + " as " + shape_string(shape));
  }
  return make_op_result("reshape", std::move(shape), {x.data().begin(), x.data().end()}, {x},
                        [x](std::span<const double> g) {
                          auto gx = x.grad_accumulator();
                          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
                        });
}

Tensor crop(const Tensor& x, std::size_t top, std::size_t left, std::size_t height, std::size_t width) {
  const auto [planes, h, w] = planes_of(x, "crop");
  if (top + height > h || left + width > w) {
    throw ShapeError("crop: window exceeds input " + shape_string(x.shape()));
  }
  Shape shape = x.shape();
  shape[shape.size() - 2] = height;
  shape[shape.size() - 1] = width;
  auto in = x.data();
  std::vector<double> out;
  out.reserve(planes * height * width);
  for (std::size_t p = 0; p < planes; ++p) {
    for (std::size_t y = 0; y < height; ++y) {
      const auto row = in.begin() + static_cast<std::ptrdiff_t>((p * h + top + y) * w + left);
      out.insert(out.end(), row, row + static_cast<std::ptrdiff_t>(width));
    }
  }
  return make_op_result("crop", shape, std::move(out), {x},
                        [=, planes = planes, h = h, w = w](std::span<const double> g) {
                          auto gx = x.grad_accumulator();
                          for (std::size_t p = 0; p < planes; ++p) {
                            for (std::size_t y = 0; y < height; ++y) {
                              for (std::size_t xx = 0; xx < width; ++xx) {
                                gx[(p * h + top + y) * w + left + xx] += g[(p * height + y) * width + xx];
                              }
                            }
                          }
                        });
}

Tensor flip_horizontal(const Tensor& x) {
  const auto [planes, h, w] = planes_of(x, "flip_horizontal");
  auto in = x.data();
  std::vector<double> out(in.size());
  const std::size_t rows = planes * h;
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < w; ++c) out[r * w + c] = in[r * w + (w - 1 - c)];
  }
  return make_op_result("flip_horizontal", x.shape(), std::move(out), {x},
                        [x, rows, w = w](std::span<const double> g) {
                          auto gx = x.grad_accumulator();
                          for (std::size_t r = 0; r < rows; ++r) {
                            for (std::size_t c = 0; c < w; ++c) gx[r * w + (w - 1 - c)] += g[r * w + c];
                          }
                        });
}

}  // namespace stereodepth::ops
