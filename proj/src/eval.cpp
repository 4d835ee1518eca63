#include "stereodepth/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <thread>

#include "stereodepth/ops.hpp"

namespace stereodepth {

namespace {

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

std::string fmt(double v, const char* spec = "%.6f") {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

}  // namespace

Tensor disparity_to_depth(const Tensor& disparity, const CameraModel& camera, double cap) {
  if (!(cap > 0.0)) throw Error("disparity_to_depth: cap must be positive");
  camera.validate();
  const double bf = camera.baseline * camera.focal;
  const double min_disparity = bf / cap;
  std::vector<double> out(disparity.numel());
  auto d = disparity.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = d[i] <= min_disparity ? cap : std::min(bf / d[i], cap);
  return Tensor::from(disparity.shape(), std::move(out));
}

Tensor depth_to_disparity(const Tensor& depth, const CameraModel& camera) {
  camera.validate();
  const double bf = camera.baseline * camera.focal;
  std::vector<double> out(depth.numel());
  auto z = depth.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(z[i] > 0.0)) throw Error("depth_to_disparity: non-positive depth");
    out[i] = bf / z[i];
  }
  return Tensor::from(depth.shape(), std::move(out));
}

MetricsReport depth_metrics(const Tensor& pred_depth, const Tensor& gt_depth, const Tensor& mask) {
  require_same(pred_depth, gt_depth, "depth_metrics");
  require_same(pred_depth, mask, "depth_metrics");
  auto p = pred_depth.data(), g = gt_depth.data(), m = mask.data();
  MetricsReport r;
  double sq = 0.0, sq_log = 0.0;
  std::size_t n1 = 0, n2 = 0, n3 = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!(m[i] > 0.5)) continue;
    if (!(p[i] > 0.0) || !(g[i] > 0.0)) throw Error("depth_metrics: non-positive depth under mask");
    const double diff = p[i] - g[i];
    r.abs_rel += std::fabs(diff) / g[i];
    r.sq_rel += diff * diff / g[i];
    sq += diff * diff;
    const double ld = std::log(p[i]) - std::log(g[i]);
    sq_log += ld * ld;
    const double ratio = std::max(p[i] / g[i], g[i] / p[i]);
    n1 += ratio < 1.25;
    n2 += ratio < 1.25 * 1.25;
    n3 += ratio < 1.25 * 1.25 * 1.25;
    ++r.pixels;
  }
  if (r.pixels == 0) throw Error("depth_metrics: empty mask");
  const double n = static_cast<double>(r.pixels);
  r.abs_rel /= n;
  r.sq_rel /= n;
  r.rmse = std::sqrt(sq / n);
  r.rmse_log = std::sqrt(sq_log / n);
  r.delta1 = static_cast<double>(n1) / n;
  r.delta2 = static_cast<double>(n2) / n;
  r.delta3 = static_cast<double>(n3) / n;
  return r;
}

double d1_all(const Tensor& pred_disparity, const Tensor& gt_disparity, const Tensor& mask) {
  require_same(pred_disparity, gt_disparity, "d1_all");
  require_same(pred_disparity, mask, "d1_all");
  auto p = pred_disparity.data(), g = gt_disparity.data(), m = mask.data();
  std::size_t bad = 0, count = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!(m[i] > 0.5)) continue;
    const double err = std::fabs(p[i] - g[i]);
    bad += err > 3.0 && err > 0.05 * g[i];
    ++count;
  }
  if (count == 0) throw Error("d1_all: empty mask");
  return 100.0 * static_cast<double>(bad) / static_cast<double>(count);
}

Tensor postprocess(const Tensor& d_left, const Tensor& flipped_run) {
  require_same(d_left, flipped_run, "postprocess");
  if (d_left.rank() != 2) throw ShapeError("postprocess: expected H x W, got " + shape_string(d_left.shape()));
  const std::size_t h = d_left.dim(0), w = d_left.dim(1);
  const std::size_t left_band = (w + 19) / 20;   // ceil(0.05 W)
  const std::size_t right_band = (19 * w) / 20;  // floor(0.95 W)
  auto d = d_left.data(), f = flipped_run.data();
  std::vector<double> out(h * w);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const double a = d[i * w + j];
      const double m = f[i * w + (w - 1 - j)];
      out[i * w + j] = j < left_band ? m : (j >= right_band ? a : 0.5 * (a + m));
    }
  }
  return Tensor::from({h, w}, std::move(out));
}

Tensor resize_bilinear(const Tensor& map, std::size_t height, std::size_t width) {
  if (map.rank() != 2) throw ShapeError("resize_bilinear: expected H x W, got " + shape_string(map.shape()));
  if (height == 0 || width == 0) throw ShapeError("resize_bilinear: empty target size");
  const std::size_t h = map.dim(0), w = map.dim(1);
  auto src = map.data();
  auto coord = [](std::size_t i, std::size_t n_out, std::size_t n_in) {
    return n_out == 1 ? 0.0 : static_cast<double>(i) * static_cast<double>(n_in - 1) / static_cast<double>(n_out - 1);
  };
  std::vector<double> out(height * width);
  for (std::size_t i = 0; i < height; ++i) {
    const double y = coord(i, height, h);
    const std::size_t y0 = static_cast<std::size_t>(y), y1 = std::min(y0 + 1, h - 1);
    const double ty = y - static_cast<double>(y0);
    for (std::size_t j = 0; j < width; ++j) {
      const double x = coord(j, width, w);
      const std::size_t x0 = static_cast<std::size_t>(x), x1 = std::min(x0 + 1, w - 1);
      const double tx = x - static_cast<double>(x0);
      const double top = (1 - tx) * src[y0 * w + x0] + tx * src[y0 * w + x1];
      const double bottom = (1 - tx) * src[y1 * w + x0] + tx * src[y1 * w + x1];
      out[i * width + j] = (1 - ty) * top + ty * bottom;
    }
  }
  return Tensor::from({height, width}, std::move(out));
}

Tensor predict_disparity(const DisparityNet& net, const StereoSample& sample, bool use_postprocess) {
  NoGradGuard no_grad;
  const bool stereo = net.config().input_mode == InputMode::kStereo;
  if (use_postprocess && stereo) throw Error("post-processing is only defined for mono networks");
  auto run = [&](const Tensor& left) {
    const auto pyramid = stereo ? net.forward(left, sample.right) : net.forward(left);
    return pyramid.front().left.detach();
  };
  const Tensor d = run(sample.left);
  if (!use_postprocess) return d;
  return postprocess(d, run(ops::flip_horizontal(sample.left)));
}

DisparityPredictor network_predictor(const DisparityNet& net, bool use_postprocess) {
  return [&net, use_postprocess](const StereoSample& s) { return predict_disparity(net, s, use_postprocess); };
}

namespace {

Tensor valid_mask(const StereoSample& s, const std::optional<CropRect>& crop) {
  const std::size_t h = s.height(), w = s.width();
  auto gt = s.gt_disparity_left->data();
  std::vector<double> m(h * w, 0.0);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const std::size_t p = i * w + j;
      bool ok = gt[p] > 0.0;
      if (s.visible_left) ok = ok && s.visible_left->data()[p] > 0.5;
      if (crop) ok = ok && i >= crop->y && i < crop->y + crop->height && j >= crop->x && j < crop->x + crop->width;
      m[p] = ok ? 1.0 : 0.0;
    }
  }
  return Tensor::from({h, w}, std::move(m));
}

}  // namespace

EvaluationResult evaluate(const std::vector<StereoSample>& samples, const DisparityPredictor& predictor,
                          const EvalOptions& options) {
  if (samples.empty()) throw Error("evaluate: no samples");
  for (const auto& s : samples) {
    if (!s.gt_disparity_left) throw Error("evaluate: sample '" + s.id + "' has no ground-truth disparity");
  }
  EvaluationResult result;
  result.per_image.resize(samples.size());
  auto work = [&](std::size_t i) {
    const StereoSample& s = samples[i];
    Tensor pred = predictor(s);
    if (pred.shape() != s.gt_disparity_left->shape()) {
      pred = resize_bilinear(pred, s.height(), s.width());
    }
    const Tensor mask = valid_mask(s, options.crop);
    const Tensor gt_depth = disparity_to_depth(*s.gt_disparity_left, s.camera, 1e300);
    MetricsReport r = depth_metrics(disparity_to_depth(pred, s.camera, options.cap), gt_depth, mask);
    r.d1_all = d1_all(pred, *s.gt_disparity_left, mask);
    result.per_image[i] = {s.id, r};
  };

  const std::size_t threads = std::clamp<std::size_t>(options.threads, 1, samples.size());
  if (threads == 1) {
    for (std::size_t i = 0; i < samples.size(); ++i) work(i);
  } else {
    std::vector<std::exception_ptr> errors(threads);
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          for (std::size_t i = t; i < samples.size(); i += threads) work(i);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }

  auto& sum = result.summary;
  for (const auto& row : result.per_image) {
    const auto& r = row.metrics;
    sum.abs_rel += r.abs_rel;
    sum.sq_rel += r.sq_rel;
    sum.rmse += r.rmse;
    sum.rmse_log += r.rmse_log;
    sum.d1_all += r.d1_all;
    sum.delta1 += r.delta1;
    sum.delta2 += r.delta2;
    sum.delta3 += r.delta3;
    sum.pixels += r.pixels;
  }
  const double n = static_cast<double>(samples.size());
  for (double* v : {&sum.abs_rel, &sum.sq_rel, &sum.rmse, &sum.rmse_log, &sum.d1_all, &sum.delta1, &sum.delta2,
                    &sum.delta3}) {
    *v /= n;
  }
  return result;
}

double mean_gt_disparity(const std::vector<StereoSample>& samples) {
  double acc = 0.0;
  std::size_t count = 0;
  for (const auto& s : samples) {
    if (!s.gt_disparity_left) continue;
    const auto mask = valid_mask(s, std::nullopt);
    auto g = s.gt_disparity_left->data();
    auto m = mask.data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (m[i] > 0.5) {
        acc += g[i];
        ++count;
      }
    }
  }
  if (count == 0) throw Error("mean_gt_disparity: no valid ground truth");
  return acc / static_cast<double>(count);
}

DisparityPredictor constant_predictor(double disparity) {
  return [disparity](const StereoSample& s) { return Tensor::full({s.height(), s.width()}, disparity); };
}

nlohmann::ordered_json to_json(const MetricsReport& r) {
  return {{"abs_rel", r.abs_rel}, {"sq_rel", r.sq_rel}, {"rmse", r.rmse},     {"rmse_log", r.rmse_log},
          {"d1_all", r.d1_all},   {"delta1", r.delta1}, {"delta2", r.delta2}, {"delta3", r.delta3},
          {"pixels", r.pixels}};
}

std::string format_metrics_table(const MetricsReport& r) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "%10s %10s %10s %10s %10s %10s %10s %10s\n"
                "%10.4f %10.4f %10.4f %10.4f %10.3f %10.4f %10.4f %10.4f\n",
                "abs_rel", "sq_rel", "rmse", "rmse_log", "d1_all", "a1", "a2", "a3", r.abs_rel, r.sq_rel, r.rmse,
                r.rmse_log, r.d1_all, r.delta1, r.delta2, r.delta3);
  return buf;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<ImageMetrics>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << "image_id,abs_rel,sq_rel,rmse,rmse_log,d1_all,delta1,delta2,delta3\n";
  for (const auto& row : rows) {
    const auto& r = row.metrics;
    out << row.id;
    for (double v : {r.abs_rel, r.sq_rel, r.rmse, r.rmse_log, r.d1_all, r.delta1, r.delta2, r.delta3}) {
      out << ',' << fmt(v, "%.10g");
    }
    out << '\n';
  }
}

}  // namespace stereodepth
