#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "stereodepth/data.hpp"
#include "stereodepth/loss.hpp"
#include "stereodepth/model.hpp"
#include "stereodepth/rng.hpp"

namespace stereodepth {

// Sub-stream indices for derive_seed(run_seed, stream).
namespace streams {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kDataOrder = 2;
inline constexpr std::uint64_t kAugment = 3;
inline constexpr std::uint64_t kScenes = 4;
}  // namespace streams

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Bias-corrected Adam over a fixed parameter list.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig config = {});

  // Applies one update from the gradients currently stored on the parameters.
  // Parameters without a gradient are treated as having a zero gradient.
  void step(double learning_rate);
  void zero_grad();

  std::size_t steps() const { return step_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

 private:
  std::vector<Tensor> params_;
  AdamConfig config_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t step_ = 0;
};

// Constant for the first 60% of epochs, then halved at the start of every
// following 20% bucket: 50 epochs -> halve at 30, 40; 10 epochs -> at 6, 8.
double learning_rate_at(std::size_t epoch, double base_rate, std::size_t total_epochs);

struct AugmentConfig {
  double flip_prob = 0.5;
  double color_prob = 0.0;
  std::array<double, 2> gamma{0.8, 1.2};
  std::array<double, 2> brightness{0.5, 2.0};
  std::array<double, 2> channel{0.8, 1.2};
  void validate() const;
};

// One realization of the augmentation random variables.
struct AugmentDraw {
  bool flip = false;
  bool color = false;
  double gamma = 1.0;
  double brightness = 1.0;
  std::array<double, 3> channel{1.0, 1.0, 1.0};
};

AugmentDraw draw_augmentation(Rng& rng, const AugmentConfig& config);
StereoSample apply_augmentation(const StereoSample& sample, const AugmentDraw& draw);
StereoSample augment(const StereoSample& sample, const AugmentConfig& config, Rng& rng);

// Mirrors both views and exchanges their roles (the mirrored right view becomes
// the new left view). Ground-truth disparities follow; the visibility mask is dropped.
StereoSample flip_pair(const StereoSample& sample);
// v -> clamp((v^gamma) * brightness * channel[c], 0, 1), identical for both views.
StereoSample color_shift(const StereoSample& sample, double gamma, double brightness,
                         const std::array<double, 3>& channel);

struct TrainerConfig {
  std::size_t steps = 500;
  std::size_t batch_size = 8;
  double learning_rate = 3e-3;
  bool augment = true;
  std::uint64_t seed = 1;
};

struct StepLog {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double learning_rate = 0.0;
  double c_total = 0.0;
  // Batch-mean per-scale terms, fine to coarse.
  std::vector<ScaleLossBreakdown> scales;
};

// Thrown when a loss or gradient goes non-finite; names the step.
class TrainingDivergedError : public Error {
 public:
  using Error::Error;
};

struct TrainResult {
  DisparityNet net;
  std::vector<StepLog> log;
};

// Scale pyramids of a pair, the number of levels the network emits.
struct PairPyramids {
  std::vector<Tensor> left;
  std::vector<Tensor> right;
};
PairPyramids build_pair_pyramids(const StereoSample& sample, std::size_t levels);

// Mean total loss of a batch under the current parameters, with graph.
TotalLoss batch_loss(const DisparityNet& net, const std::vector<StereoSample>& batch, const LossWeights& weights);

// Deterministic training loop. The network seed is derive_seed(trainer.seed, streams::kInit),
// overriding net_config.seed. Per step: epoch-shuffled batch -> augment -> pyramids ->
// forward -> total loss -> backward -> Adam.
TrainResult train(const std::vector<StereoSample>& dataset, NetConfig net_config, const LossWeights& weights,
                  const AugmentConfig& augment_config, const TrainerConfig& trainer,
                  const std::function<void(const StepLog&)>& on_step = {});

// Header: step,epoch,lr,c_total,c_ap,c_ds,c_lr then c_total_sK,c_ap_sK,c_ds_sK,c_lr_sK per scale K.
// c_ap, c_ds and c_lr are unweighted sums of the left and right terms over scales.
void write_loss_csv(const std::filesystem::path& path, const std::vector<StepLog>& log);

}  // namespace stereodepth
