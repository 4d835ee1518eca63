#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "stereodepth/tensor.hpp"

namespace stereodepth {

struct CameraModel {
  double baseline = 0.54;  // meters
  double focal = 100.0;    // pixels
  void validate() const;
};

// Rectified stereo pair. Images are 3 x H x W in [0, 1]; disparities and the
// visibility mask are H x W.
struct StereoSample {
  std::string id;
  Tensor left;
  Tensor right;
  std::optional<Tensor> gt_disparity_left;
  std::optional<Tensor> gt_disparity_right;
  // 1 where the left pixel is visible in both views.
  std::optional<Tensor> visible_left;
  CameraModel camera;

  std::size_t height() const { return left.dim(1); }
  std::size_t width() const { return left.dim(2); }
};

// Fronto-parallel textured rectangle at a constant integer disparity.
// The rectangle is given in left-view coordinates.
struct LayerSpec {
  std::size_t x = 0, y = 0, width = 1, height = 1;
  int disparity = 0;
  std::uint64_t texture_seed = 0;
};

struct SceneSpec {
  std::uint64_t seed = 0;
  std::size_t width = 64;
  std::size_t height = 32;
  int background_disparity = 0;
  std::uint64_t background_texture_seed = 0;
  // Aerial-perspective strength: a surface at disparity d is blended toward a
  // fixed haze color by clamp(haze * (1 - d / (0.2 * width)), 0, 1).
  double haze = 0.9;
  // Sorted by ascending disparity; later layers are nearer and drawn on top.
  std::vector<LayerSpec> layers;

  // Throws Error when a rectangle leaves the image, disparities are unsorted,
  // negative, or not below 0.3 * width.
  void validate() const;
};

// Random scene: a background at disparity round(0.05 W) and 1 to 3 layers at
// disparities in [bg + 2, floor(0.16 W)]. Layer size and ground-contact row grow
// with disparity, as they would for objects of one physical size on a floor.
SceneSpec random_scene_spec(std::uint64_t seed, std::size_t width, std::size_t height);

// Painter's-algorithm rendering of both views. Each layer's texture lives in
// layer-local coordinates, so in the right view a layer is the same pixels
// shifted by -disparity columns: for every left pixel visible in both views,
// right(i, j - d) == left(i, j) exactly.
StereoSample generate_scene(const SceneSpec& spec);

// H x W, 1 where a left pixel is visible in both views (z-buffer check), else 0.
Tensor occlusion_mask(const SceneSpec& spec);

}  // namespace stereodepth
