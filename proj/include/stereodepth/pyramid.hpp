#pragma once

#include <vector>

#include "stereodepth/tensor.hpp"

namespace stereodepth {

// Left-view and right-view disparity maps (H x W, pixels at that level's resolution).
struct DisparityLevel {
  Tensor left;
  Tensor right;
};

// Ordered fine to coarse; level s has resolution input / 2^s.
using DisparityPyramid = std::vector<DisparityLevel>;

// Image pyramid, fine to coarse, built by repeated 2x2 averaging.
std::vector<Tensor> build_image_pyramid(const Tensor& image, std::size_t levels);

}  // namespace stereodepth
