#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "stereodepth/config.hpp"
#include "stereodepth/data.hpp"
#include "stereodepth/eval.hpp"
#include "stereodepth/image_io.hpp"
#include "stereodepth/train.hpp"

// File-level workflows behind the command-line tool.
namespace stereodepth {

struct GenerateOptions {
  std::uint64_t seed = 1;
  std::size_t count = 200;
  std::size_t width = 64;
  std::size_t height = 32;
  CameraModel camera;
};

// Scene i uses random_scene_spec(derive_seed(derive_seed(seed, streams::kScenes), i), ...).
SceneSpec dataset_scene_spec(const GenerateOptions& options, std::size_t index);

// Writes left_NNNN.ppm, right_NNNN.ppm, disp_NNNN.pfm, mask_NNNN.pfm and
// manifest.jsonl into `out_dir`. Returns the manifest path.
std::filesystem::path generate_dataset(const std::filesystem::path& out_dir, const GenerateOptions& options);

// Writes model.ckpt, loss.csv and config.json into `out_dir`.
TrainResult run_training(const RunConfig& config, const std::filesystem::path& manifest,
                         const std::filesystem::path& out_dir,
                         const std::function<void(const StepLog&)>& on_step = {});

struct InferOptions {
  std::filesystem::path checkpoint;
  std::filesystem::path image;
  std::optional<std::filesystem::path> right_image;
  bool postprocess = false;
  std::filesystem::path out;
  std::optional<std::filesystem::path> visualization;
};

// Writes the full-resolution left disparity as PFM, plus an optional grayscale
// PPM with (d - min) / (max - min) normalization (all zeros for a constant map).
Tensor run_inference(const InferOptions& options);
Tensor visualize_disparity(const Tensor& disparity);

// Writes metrics.json and per_image.csv into `out_dir`.
EvaluationResult run_evaluation(const std::filesystem::path& checkpoint, const std::filesystem::path& manifest,
                                const EvalOptions& options, const std::filesystem::path& out_dir);
void write_evaluation(const EvaluationResult& result, const std::filesystem::path& out_dir);

}  // namespace stereodepth
