#include "stereodepth/gradcheck_suite.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>

#include "stereodepth/gradcheck.hpp"
#include "stereodepth/loss.hpp"
#include "stereodepth/model.hpp"
#include "stereodepth/ops.hpp"
#include "stereodepth/rng.hpp"
#include "stereodepth/warp.hpp"

namespace stereodepth {

namespace {

constexpr double kStep = 1e-5;
constexpr double kOpTolerance = 1e-4;
constexpr double kModelTolerance = 1e-3;

Tensor random_tensor(Rng& rng, Shape shape, double lo, double hi, bool requires_grad = true) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

// Values in [-2, 2] at least `margin` away from zero.
Tensor away_from_zero(Rng& rng, Shape shape, double margin = 0.05) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) {
    const double mag = rng.uniform(margin, 2.0);
    x = rng.bernoulli(0.5) ? mag : -mag;
  }
  return Tensor::from(std::move(shape), std::move(v), true);
}

// Disparity whose sampling coordinate j + sign * d stays inside the row with a
// fractional part in [0.1, 0.9].
Tensor safe_disparity(Rng& rng, std::size_t h, std::size_t w, SampleDirection dir, double max_shift) {
  const double sign = sign_of(dir);
  std::vector<double> v(h * w);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const double lo = std::max(0.0, static_cast<double>(j) - max_shift);
      const double hi = std::min(static_cast<double>(w - 1) - 1.0, static_cast<double>(j) + max_shift);
      const double base = std::floor(rng.uniform(lo, std::max(lo, hi)));
      const double x = std::min(base, static_cast<double>(w) - 2.0) + rng.uniform(0.1, 0.9);
      v[i * w + j] = sign * (x - static_cast<double>(j));
    }
  }
  return Tensor::from({h, w}, std::move(v), true);
}

// Smooth image: a few random low-frequency sinusoids per channel, in (0, 1).
Tensor smooth_image(Rng& rng, std::size_t c, std::size_t h, std::size_t w, bool requires_grad = false) {
  std::vector<double> v(c * h * w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double fx = rng.uniform(0.2, 0.7), fy = rng.uniform(0.2, 0.7);
    const double px = rng.uniform(0, 6.28), py = rng.uniform(0, 6.28);
    const double amp = rng.uniform(0.15, 0.35), off = rng.uniform(0.4, 0.6);
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        v[(ch * h + i) * w + j] = off + amp * std::sin(fx * static_cast<double>(j) + px) * std::cos(fy * static_cast<double>(i) + py);
      }
    }
  }
  return Tensor::from({c, h, w}, std::move(v), requires_grad);
}

// sum(op(x) * r) with a fixed random r gives every output element a distinct weight.
Tensor weighted_sum(const Tensor& y, std::uint64_t seed) {
  Rng rng(seed);
  return ops::sum(ops::mul(y, random_tensor(rng, y.shape(), -1.0, 1.0, false)));
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

struct Runner {
  std::size_t instances;
  std::uint64_t seed;
  std::vector<GradCheckCase>* out;

  // `make` builds the inputs and closure for instance i from its own rng.
  void run(const std::string& module, const std::string& op, double tolerance,
           const std::function<std::pair<std::vector<Tensor>, ScalarClosure>(Rng&)>& make) const {
    GradCheckCase result{module, op, instances, 0.0, tolerance, true};
    for (std::size_t i = 0; i < instances; ++i) {
      Rng rng(derive_seed(derive_seed(seed, fnv1a(op)), i));
      auto [inputs, closure] = make(rng);
      const auto r = grad_check(closure, inputs, kStep, tolerance);
      result.max_relative_error = std::max(result.max_relative_error, r.max_relative_error);
    }
    result.passed = result.max_relative_error <= tolerance;
    out->push_back(result);
  }
};

void diffcore_cases(const Runner& run) {
  run.run("diffcore", "conv2d", kOpTolerance, [](Rng& rng) {
    const std::size_t stride = 1 + rng.below(2), pad = rng.below(2);
    std::vector<Tensor> in{random_tensor(rng, {2, 3, 6, 7}, -2, 2), random_tensor(rng, {4, 3, 3, 3}, -2, 2),
                           random_tensor(rng, {4}, -2, 2)};
    const std::uint64_t rs = rng.next();
    return std::pair{in, ScalarClosure([=](const std::vector<Tensor>& x) {
                       return weighted_sum(ops::conv2d(x[0], x[1], x[2], stride, pad), rs);
                     })};
  });
  run.run("diffcore", "elu", kOpTolerance, [](Rng& rng) {
    const std::uint64_t rs = rng.next();
    return std::pair{std::vector<Tensor>{away_from_zero(rng, {3, 4, 5})},
                     ScalarClosure([=](const std::vector<Tensor>& x) { return weighted_sum(ops::elu(x[0]), rs); })};
  });
  run.run("diffcore", "sigmoid_scaled", kOpTolerance, [](Rng& rng) {
    const std::uint64_t rs = rng.next();
    const double d_max = rng.uniform(1.0, 20.0);
    return std::pair{std::vector<Tensor>{random_tensor(rng, {3, 4, 5}, -2, 2)},
                     ScalarClosure([=](const std::vector<Tensor>& x) {
                       return weighted_sum(ops::sigmoid_scaled(x[0], d_max), rs);
                     })};
  });
  run.run("diffcore", "upsample_nearest2x", kOpTolerance, [](Rng& rng) {
    const std::uint64_t rs = rng.next();
    return std::pair{std::vector<Tensor>{random_tensor(rng, {2, 3, 4}, -2, 2)},
                     ScalarClosure([=](const std::vector<Tensor>& x) {
                       return weighted_sum(ops::upsample_nearest2x(x[0]), rs);
                     })};
  });
  run.run("diffcore", "avgpool2x", kOpTolerance, [](Rng& rng) {
    const std::uint64_t rs = rng.next();
    return std::pair{std::vector<Tensor>{random_tensor(rng, {2, 4, 6}, -2, 2)},
                     ScalarClosure([=](const std::vector<Tensor>& x) { return weighted_sum(ops::avgpool2x(x[0]), rs); })};
  });
  run.run("diffcore", "elementwise", kOpTolerance, [](Rng& rng) {
    const std::uint64_t rs = rng.next();
    std::vector<Tensor> in{away_from_zero(rng, {2, 3, 4}), random_tensor(rng, {2, 3, 4}, -2, 2),
                           random_tensor(rng, {2, 3, 4}, 0.2, 2)};
    return std::pair{in, ScalarClosure([=](const std::vector<Tensor>& x) {
                       const Tensor a = ops::add(ops::mul(ops::abs(x[0]), ops::exp(x[1])), ops::log(x[2]));
                       const Tensor b = ops::sub(ops::scale(a, 0.7), ops::add_scalar(x[1], 0.3));
                       return ops::add(weighted_sum(b, rs), ops::mean(ops::mul(x[1], x[2])));
                     })};
  });
  run.run("diffcore", "layout", kOpTolerance, [](Rng& rng) {
    const std::uint64_t rs = rng.next();
    std::vector<Tensor> in{random_tensor(rng, {2, 4, 6}, -2, 2), random_tensor(rng, {4, 6}, -2, 2)};
    return std::pair{in, ScalarClosure([=](const std::vector<Tensor>& x) {
                       const Tensor c = ops::concat_channels({x[0], x[1]});
                       const Tensor picked = ops::select_channel(ops::flip_horizontal(c), 2);
                       const Tensor cropped = ops::crop(ops::reshape(c, {3, 4, 6}), 1, 2, 2, 3);
                       return ops::add(weighted_sum(picked, rs), weighted_sum(cropped, rs + 1));
                     })};
  });
}

void warp_cases(const Runner& run) {
  for (auto dir : {SampleDirection::kTowardLeft, SampleDirection::kTowardRight}) {
    const std::string name = dir == SampleDirection::kTowardLeft ? "bilinear_sample(s=-1)" : "bilinear_sample(s=+1)";
    run.run("warp", name, kOpTolerance, [dir](Rng& rng) {
      const std::uint64_t rs = rng.next();
      std::vector<Tensor> in{random_tensor(rng, {3, 5, 12}, 0, 1), safe_disparity(rng, 5, 12, dir, 6.0)};
      return std::pair{in, ScalarClosure([=](const std::vector<Tensor>& x) {
                         return weighted_sum(bilinear_sample(x[0], x[1], dir), rs);
                       })};
    });
  }
  run.run("warp", "project_disparity", kOpTolerance, [](Rng& rng) {
    const std::uint64_t rs = rng.next();
    std::vector<Tensor> in{random_tensor(rng, {5, 12}, 0, 8),
                           safe_disparity(rng, 5, 12, SampleDirection::kTowardLeft, 6.0)};
    return std::pair{in, ScalarClosure([=](const std::vector<Tensor>& x) {
                       return weighted_sum(project_disparity(x[0], x[1], SampleDirection::kTowardLeft), rs);
                     })};
  });
}

void loss_cases(const Runner& run) {
  run.run("loss", "ssim_map", kOpTolerance, [](Rng& rng) {
    const std::uint64_t rs = rng.next();
    std::vector<Tensor> in{random_tensor(rng, {2, 5, 6}, 0, 1), random_tensor(rng, {2, 5, 6}, 0, 1)};
    return std::pair{in, ScalarClosure([=](const std::vector<Tensor>& x) { return weighted_sum(ssim_map(x[0], x[1]), rs); })};
  });
  run.run("loss", "appearance_loss", kOpTolerance, [](Rng& rng) {
    std::vector<Tensor> in{random_tensor(rng, {3, 6, 7}, 0, 1), random_tensor(rng, {3, 6, 7}, 0, 1)};
    return std::pair{in, ScalarClosure([](const std::vector<Tensor>& x) {
                       return appearance_loss(x[0], x[1], LossWeights{});
                     })};
  });
  run.run("loss", "smoothness_loss", kOpTolerance, [](Rng& rng) {
    std::vector<Tensor> in{random_tensor(rng, {6, 7}, 0, 10), random_tensor(rng, {3, 6, 7}, 0, 1, false)};
    return std::pair{in, ScalarClosure([](const std::vector<Tensor>& x) { return smoothness_loss(x[0], x[1]); })};
  });
  run.run("loss", "lr_consistency", kOpTolerance, [](Rng& rng) {
    std::vector<Tensor> in{safe_disparity(rng, 5, 12, SampleDirection::kTowardLeft, 6.0),
                           safe_disparity(rng, 5, 12, SampleDirection::kTowardRight, 6.0)};
    return std::pair{in, ScalarClosure([](const std::vector<Tensor>& x) {
                       return ops::add(lr_consistency_left(x[0], x[1]), ops::scale(lr_consistency_right(x[0], x[1]), 0.5));
                     })};
  });
  run.run("loss", "scale_loss", kOpTolerance, [](Rng& rng) {
    const Tensor left = smooth_image(rng, 3, 5, 12), right = smooth_image(rng, 3, 5, 12);
    std::vector<Tensor> in{safe_disparity(rng, 5, 12, SampleDirection::kTowardLeft, 4.0),
                           safe_disparity(rng, 5, 12, SampleDirection::kTowardRight, 4.0)};
    return std::pair{in, ScalarClosure([=](const std::vector<Tensor>& x) {
                       return scale_loss(left, right, x[0], x[1], 2.0, LossWeights{}).total;
                     })};
  });
}

void model_cases(const Runner& run) {
  run.run("model", "end_to_end(2-scale)", kModelTolerance, [](Rng& rng) {
    NetConfig config;
    config.encoder_channels = {2, 3};
    config.output_scales = 2;
    config.seed = rng.next();
    auto net = std::make_shared<DisparityNet>(config);
    const Tensor left = smooth_image(rng, 3, 8, 16), right = smooth_image(rng, 3, 8, 16);
    std::vector<Tensor> params;
    for (const auto& p : net->parameters()) params.push_back(p.value);
    return std::pair{params, ScalarClosure([=](const std::vector<Tensor>&) {
                       const auto disp = net->forward(left);
                       return total_loss(build_image_pyramid(left, 2), build_image_pyramid(right, 2), disp,
                                         LossWeights{})
                           .total;
                     })};
  });
}

}  // namespace

std::vector<GradCheckCase> run_gradcheck_suite(const std::string& module, std::size_t instances, std::uint64_t seed) {
  static const std::vector<std::string> kModules{"diffcore", "warp", "loss", "model"};
  if (module != "all" && std::find(kModules.begin(), kModules.end(), module) == kModules.end()) {
    throw Error("gradcheck: unknown module '" + module + "'");
  }
  std::vector<GradCheckCase> cases;
  const Runner runner{instances, seed, &cases};
  if (module == "all" || module == "diffcore") diffcore_cases(runner);
  if (module == "all" || module == "warp") warp_cases(runner);
  if (module == "all" || module == "loss") loss_cases(runner);
  if (module == "all" || module == "model") model_cases(runner);
  return cases;
}

std::string format_gradcheck_table(const std::vector<GradCheckCase>& cases) {
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-10s %-24s %9s %14s %10s %6s\n", "module", "operation", "instances",
                "max_rel_error", "tolerance", "result");
  out += buf;
  for (const auto& c : cases) {
    std::snprintf(buf, sizeof(buf), "%-10s %-24s %9zu %14.3e %10.1e %6s\n", c.module.c_str(), c.op.c_str(),
                  c.instances, c.max_relative_error, c.tolerance, c.passed ? "PASS" : "FAIL");
    out += buf;
  }
  return out;
}

}  // namespace stereodepth
