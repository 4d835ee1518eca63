#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "stereodepth/data.hpp"
#include "stereodepth/model.hpp"
#include "stereodepth/tensor.hpp"

namespace stereodepth {

struct MetricsReport {
  double abs_rel = 0.0;
  double sq_rel = 0.0;
  double rmse = 0.0;
  double rmse_log = 0.0;
  double d1_all = 0.0;  // percent
  double delta1 = 0.0;
  double delta2 = 0.0;
  double delta3 = 0.0;
  std::size_t pixels = 0;
};

// min(b * f / d, cap); any d <= b * f / cap (including d <= 0) maps to cap.
Tensor disparity_to_depth(const Tensor& disparity, const CameraModel& camera, double cap);
Tensor depth_to_disparity(const Tensor& depth, const CameraModel& camera);

// Error and threshold metrics over pixels where mask > 0.5. d1_all is left at 0.
// Throws Error on an empty mask or non-positive depth inside it.
MetricsReport depth_metrics(const Tensor& pred_depth, const Tensor& gt_depth, const Tensor& mask);

// Percentage of masked pixels with |pred - gt| > 3 and |pred - gt| > 0.05 * gt.
double d1_all(const Tensor& pred_disparity, const Tensor& gt_disparity, const Tensor& mask);

// Flip post-processing. `flipped_run` is the disparity predicted for the mirrored
// image (still in mirrored coordinates). With m = mirror(flipped_run):
// columns j < ceil(0.05 W) take m, columns j >= floor(0.95 W) take d_left, the rest (d_left + m) / 2.
Tensor postprocess(const Tensor& d_left, const Tensor& flipped_run);

// Bilinear resize of an H x W map (align-corners sampling).
Tensor resize_bilinear(const Tensor& map, std::size_t height, std::size_t width);

struct CropRect {
  std::size_t x = 0, y = 0, width = 0, height = 0;
};

struct EvalOptions {
  double cap = 80.0;
  std::optional<CropRect> crop;
  bool postprocess = false;
  std::size_t threads = 1;
};

// Full-resolution left-view disparity for a sample.
using DisparityPredictor = std::function<Tensor(const StereoSample&)>;

// Left disparity from the finest scale; with `use_postprocess` the mirrored image
// is run too and the two are merged by postprocess(). Mono networks only.
Tensor predict_disparity(const DisparityNet& net, const StereoSample& sample, bool use_postprocess);
DisparityPredictor network_predictor(const DisparityNet& net, bool use_postprocess);

struct ImageMetrics {
  std::string id;
  MetricsReport metrics;
};

struct EvaluationResult {
  // Mean of the per-image metrics; pixels is the total count.
  MetricsReport summary;
  std::vector<ImageMetrics> per_image;
};

// Valid pixels: gt disparity > 0, visible in both views when a mask is present,
// and inside the crop rectangle when one is given.
EvaluationResult evaluate(const std::vector<StereoSample>& samples, const DisparityPredictor& predictor,
                          const EvalOptions& options);

// Mean over valid pixels of the training set's ground-truth disparity.
double mean_gt_disparity(const std::vector<StereoSample>& samples);
DisparityPredictor constant_predictor(double disparity);

nlohmann::ordered_json to_json(const MetricsReport& report);
std::string format_metrics_table(const MetricsReport& report);
// image_id,abs_rel,sq_rel,rmse,rmse_log,d1_all,delta1,delta2,delta3
void write_metrics_csv(const std::filesystem::path& path, const std::vector<ImageMetrics>& rows);

}  // namespace stereodepth
