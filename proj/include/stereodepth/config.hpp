#pragma once

#include <cstddef>
#include <filesystem>

#include <json.hpp>

#include "stereodepth/loss.hpp"
#include "stereodepth/model.hpp"
#include "stereodepth/train.hpp"

namespace stereodepth {

// Everything a training run needs. Serialized into every output directory.
struct RunConfig {
  NetConfig net;
  LossWeights loss;
  AugmentConfig augment;
  TrainerConfig trainer;
  std::size_t threads = 1;
};

void to_json(nlohmann::ordered_json& j, const NetConfig& c);
void from_json(const nlohmann::ordered_json& j, NetConfig& c);
void to_json(nlohmann::ordered_json& j, const LossWeights& c);
void from_json(const nlohmann::ordered_json& j, LossWeights& c);
void to_json(nlohmann::ordered_json& j, const AugmentConfig& c);
void from_json(const nlohmann::ordered_json& j, AugmentConfig& c);
void to_json(nlohmann::ordered_json& j, const TrainerConfig& c);
void from_json(const nlohmann::ordered_json& j, TrainerConfig& c);
void to_json(nlohmann::ordered_json& j, const RunConfig& c);
void from_json(const nlohmann::ordered_json& j, RunConfig& c);

// Missing keys keep their defaults; unknown keys are rejected.
RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const std::filesystem::path& path, const RunConfig& config);

}  // namespace stereodepth
