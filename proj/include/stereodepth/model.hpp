#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "stereodepth/pyramid.hpp"
#include "stereodepth/tensor.hpp"

namespace stereodepth {

enum class InputMode { kMono, kStereo };

struct NetConfig {
  InputMode input_mode = InputMode::kMono;
  // One entry per encoder level; each level halves the resolution.
  std::vector<std::size_t> encoder_channels{8, 16, 32, 64};
  std::size_t kernel_size = 3;
  std::size_t head_kernel_size = 3;
  // Number of disparity output scales (the finest `output_scales` decoder levels).
  std::size_t output_scales = 4;
  // Disparity upper bound as a fraction of the width at each output scale.
  double d_max_ratio = 0.3;
  // Head biases start at logit(r), so an untrained net predicts r * d_max everywhere.
  double initial_disparity_ratio = 0.3;
  std::uint64_t seed = 1;

  std::size_t input_channels() const { return input_mode == InputMode::kStereo ? 6 : 3; }
  std::size_t depth() const { return encoder_channels.size(); }
  // Channels produced by decoder level l (1-based, l = 1 is full resolution).
  std::size_t decoder_channels(std::size_t level) const;
  void validate() const;
};

struct NamedParameter {
  std::string name;
  Tensor value;
};

// Closed-form parameter count for a configuration, by layer:
//   encoder level l:  k^2 * E[l-1] * E[l] + E[l]   (stride-2 conv, E[0] = input channels)
//                   + k^2 * E[l] * E[l] + E[l]     (stride-1 conv)
//   decoder level l:  k^2 * U_in * D[l] + D[l]     (upsample + conv; U_in = E[L] at l = L, else D[l+1])
//                   + k^2 * (D[l] + S[l] + P[l]) * D[l] + D[l]
//                     (S[l] = E[l-1] skip channels for l >= 2, S[1] = input channels,
//                      P[l] = 2 if a coarser head exists)
//   head l <= scales: kh^2 * D[l] * 2 + 2
// with D[l] = max(E[l] / 2, 1).
std::size_t expected_parameter_count(const NetConfig& config);

// Encoder-decoder disparity network with skip connections. Every output scale
// has a two-channel head (left-view and right-view disparity) passed through a
// scaled sigmoid bounded by d_max_ratio * width at that scale.
class DisparityNet {
 public:
  // Deterministic fan-in scaled uniform initialization from config.seed.
  explicit DisparityNet(NetConfig config);

  const NetConfig& config() const { return config_; }
  std::vector<NamedParameter>& parameters() { return params_; }
  const std::vector<NamedParameter>& parameters() const { return params_; }
  std::size_t parameter_count() const;

  // Mono mode. Image is 3 x H x W with H and W divisible by 2^depth.
  DisparityPyramid forward(const Tensor& left) const;
  // Stereo mode: left and right views are concatenated on the channel axis.
  DisparityPyramid forward(const Tensor& left, const Tensor& right) const;

  // Versioned little-endian binary checkpoint:
  //   "SDNETCK1" | u32 version | u32 n | n bytes config JSON
  //   | u32 value bits (64) | u32 tensor count
  //   | per tensor: u32 rank, u32 dims[rank], f64 values
  void save(const std::filesystem::path& path) const;
  static DisparityNet load(const std::filesystem::path& path);

 private:
  DisparityPyramid run(const Tensor& input) const;
  const Tensor& param(std::size_t index) const { return params_[index].value; }

  NetConfig config_;
  std::vector<NamedParameter> params_;
};

}  // namespace stereodepth
