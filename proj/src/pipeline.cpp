#include "stereodepth/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "stereodepth/rng.hpp"

namespace stereodepth {

namespace fs = std::filesystem;

SceneSpec dataset_scene_spec(const GenerateOptions& options, std::size_t index) {
  return random_scene_spec(derive_seed(derive_seed(options.seed, streams::kScenes), index), options.width,
                           options.height);
}

fs::path generate_dataset(const fs::path& out_dir, const GenerateOptions& options) {
  if (options.count == 0) throw Error("generate: count must be positive");
  options.camera.validate();
  fs::create_directories(out_dir);
  std::vector<ManifestEntry> entries;
  for (std::size_t i = 0; i < options.count; ++i) {
    const StereoSample s = generate_scene(dataset_scene_spec(options, i));
    char stem[32];
    std::snprintf(stem, sizeof(stem), "%04zu", i);
    ManifestEntry e;
    e.line = i + 1;
    e.left = std::string("left_") + stem + ".ppm";
    e.right = std::string("right_") + stem + ".ppm";
    e.gt_disparity = std::string("disp_") + stem + ".pfm";
    e.visible_mask = std::string("mask_") + stem + ".pfm";
    e.baseline = options.camera.baseline;
    e.focal = options.camera.focal;
    write_ppm(out_dir / e.left, s.left);
    write_ppm(out_dir / e.right, s.right);
    write_pfm(out_dir / *e.gt_disparity, *s.gt_disparity_left);
    write_pfm(out_dir / *e.visible_mask, *s.visible_left);
    entries.push_back(std::move(e));
  }
  const fs::path manifest = out_dir / "manifest.jsonl";
  write_manifest(manifest, entries);
  return manifest;
}

TrainResult run_training(const RunConfig& config, const fs::path& manifest, const fs::path& out_dir,
                         const std::function<void(const StepLog&)>& on_step) {
  const auto dataset = load_dataset(manifest);
  if (dataset.empty()) throw Error("train: manifest " + manifest.string() + " lists no samples");
  fs::create_directories(out_dir);
  save_run_config(out_dir / "config.json", config);
  TrainResult result = train(dataset, config.net, config.loss, config.augment, config.trainer, on_step);
  result.net.save(out_dir / "model.ckpt");
  write_loss_csv(out_dir / "loss.csv", result.log);
  return result;
}

Tensor visualize_disparity(const Tensor& disparity) {
  const auto d = disparity.data();
  const auto [lo, hi] = std::minmax_element(d.begin(), d.end());
  const double range = *hi - *lo;
  const std::size_t n = d.size();
  std::vector<double> rgb(3 * n);
  for (std::size_t i = 0; i < n; ++i) {
    const double v = range > 0.0 ? (d[i] - *lo) / range : 0.0;
    rgb[i] = rgb[n + i] = rgb[2 * n + i] = v;
  }
  return Tensor::from({3, disparity.dim(0), disparity.dim(1)}, std::move(rgb));
}

Tensor run_inference(const InferOptions& options) {
  const DisparityNet net = DisparityNet::load(options.checkpoint);
  StereoSample sample;
  sample.id = options.image.stem().string();
  sample.left = read_ppm(options.image);
  if (net.config().input_mode == InputMode::kStereo) {
    if (!options.right_image) throw Error("infer: stereo checkpoint needs --stereo <right image>");
    sample.right = read_ppm(*options.right_image);
    if (sample.right.shape() != sample.left.shape()) {
      throw DimensionMismatchError("infer: left " + shape_string(sample.left.shape()) + " vs right " +
                                   shape_string(sample.right.shape()));
    }
  } else if (options.right_image) {
    throw Error("infer: mono checkpoint does not take a right image");
  }
  const Tensor disparity = predict_disparity(net, sample, options.postprocess);
  if (options.out.has_parent_path()) fs::create_directories(options.out.parent_path());
  write_pfm(options.out, disparity);
  if (options.visualization) write_ppm(*options.visualization, visualize_disparity(disparity));
  return disparity;
}

void write_evaluation(const EvaluationResult& result, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  std::ofstream json(out_dir / "metrics.json", std::ios::trunc);
  if (!json) throw Error("cannot write " + (out_dir / "metrics.json").string());
  json << to_json(result.summary).dump(2) << '\n';
  write_metrics_csv(out_dir / "per_image.csv", result.per_image);
}

EvaluationResult run_evaluation(const fs::path& checkpoint, const fs::path& manifest, const EvalOptions& options,
                                const fs::path& out_dir) {
  const DisparityNet net = DisparityNet::load(checkpoint);
  const auto samples = load_dataset(manifest);
  if (samples.empty()) throw Error("eval: manifest " + manifest.string() + " lists no samples");
  EvaluationResult result = evaluate(samples, network_predictor(net, options.postprocess), options);
  write_evaluation(result, out_dir);
  return result;
}

}  // namespace stereodepth
