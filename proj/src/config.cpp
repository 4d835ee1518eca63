#include "stereodepth/config.hpp"

#include <fstream>
#include <set>
#include <string>

namespace stereodepth {

using nlohmann::ordered_json;

namespace {

void reject_unknown(const ordered_json& j, std::initializer_list<const char*> known, const char* section) {
  if (!j.is_object()) throw Error(std::string("config: '") + section + "' must be an object");
  std::set<std::string> names(known.begin(), known.end());
  for (const auto& [key, _] : j.items()) {
    if (!names.count(key)) throw Error(std::string("config: unknown key '") + key + "' in " + section);
  }
}

template <typename T>
void read_if(const ordered_json& j, const char* key, T& out) {
  if (j.contains(key)) j.at(key).get_to(out);
}

}  // namespace

void to_json(ordered_json& j, const NetConfig& c) {
  j = ordered_json{{"input_mode", c.input_mode == InputMode::kStereo ? "stereo" : "mono"},
                   {"encoder_channels", c.encoder_channels},
                   {"kernel_size", c.kernel_size},
                   {"head_kernel_size", c.head_kernel_size},
                   {"output_scales", c.output_scales},
                   {"d_max_ratio", c.d_max_ratio},
                   {"initial_disparity_ratio", c.initial_disparity_ratio},
                   {"seed", c.seed}};
}

void from_json(const ordered_json& j, NetConfig& c) {
  reject_unknown(j, {"input_mode", "encoder_channels", "kernel_size", "head_kernel_size", "output_scales",
                     "d_max_ratio", "initial_disparity_ratio", "seed"},
                 "net");
  if (j.contains("input_mode")) {
    const auto mode = j.at("input_mode").get<std::string>();
    if (mode == "mono") {
      c.input_mode = InputMode::kMono;
    } else if (mode == "stereo") {
      c.input_mode = InputMode::kStereo;
    } else {
      throw Error("config: input_mode must be 'mono' or 'stereo', got '" + mode + "'");
    }
  }
  read_if(j, "encoder_channels", c.encoder_channels);
  read_if(j, "kernel_size", c.kernel_size);
  read_if(j, "head_kernel_size", c.head_kernel_size);
  read_if(j, "output_scales", c.output_scales);
  read_if(j, "d_max_ratio", c.d_max_ratio);
  read_if(j, "initial_disparity_ratio", c.initial_disparity_ratio);
  read_if(j, "seed", c.seed);
}

void to_json(ordered_json& j, const LossWeights& c) {
  j = ordered_json{{"alpha_ap", c.alpha_ap},       {"alpha_lr", c.alpha_lr}, {"alpha_ds_base", c.alpha_ds_base},
                   {"ssim_alpha", c.ssim_alpha},   {"ssim_c1", c.ssim_c1},   {"ssim_c2", c.ssim_c2},
                   {"width_normalized", c.width_normalized}};
}

void from_json(const ordered_json& j, LossWeights& c) {
  reject_unknown(j, {"alpha_ap", "alpha_lr", "alpha_ds_base", "ssim_alpha", "ssim_c1", "ssim_c2", "width_normalized"},
                 "loss");
  read_if(j, "alpha_ap", c.alpha_ap);
  read_if(j, "alpha_lr", c.alpha_lr);
  read_if(j, "alpha_ds_base", c.alpha_ds_base);
  read_if(j, "ssim_alpha", c.ssim_alpha);
  read_if(j, "ssim_c1", c.ssim_c1);
  read_if(j, "ssim_c2", c.ssim_c2);
  read_if(j, "width_normalized", c.width_normalized);
}

void to_json(ordered_json& j, const AugmentConfig& c) {
  j = ordered_json{{"flip_prob", c.flip_prob},   {"color_prob", c.color_prob}, {"gamma", c.gamma},
                   {"brightness", c.brightness}, {"channel", c.channel}};
}

void from_json(const ordered_json& j, AugmentConfig& c) {
  reject_unknown(j, {"flip_prob", "color_prob", "gamma", "brightness", "channel"}, "augment");
  read_if(j, "flip_prob", c.flip_prob);
  read_if(j, "color_prob", c.color_prob);
  read_if(j, "gamma", c.gamma);
  read_if(j, "brightness", c.brightness);
  read_if(j, "channel", c.channel);
}

void to_json(ordered_json& j, const TrainerConfig& c) {
  j = ordered_json{{"steps", c.steps},
                   {"batch_size", c.batch_size},
                   {"learning_rate", c.learning_rate},
                   {"augment", c.augment},
                   {"seed", c.seed}};
}

void from_json(const ordered_json& j, TrainerConfig& c) {
  reject_unknown(j, {"steps", "batch_size", "learning_rate", "augment", "seed"}, "trainer");
  read_if(j, "steps", c.steps);
  read_if(j, "batch_size", c.batch_size);
  read_if(j, "learning_rate", c.learning_rate);
  read_if(j, "augment", c.augment);
  read_if(j, "seed", c.seed);
}

void to_json(ordered_json& j, const RunConfig& c) {
  j = ordered_json{{"net", c.net}, {"loss", c.loss}, {"augment", c.augment}, {"trainer", c.trainer},
                   {"threads", c.threads}};
}

void from_json(const ordered_json& j, RunConfig& c) {
  reject_unknown(j, {"net", "loss", "augment", "trainer", "threads"}, "run config");
  read_if(j, "net", c.net);
  read_if(j, "loss", c.loss);
  read_if(j, "augment", c.augment);
  read_if(j, "trainer", c.trainer);
  read_if(j, "threads", c.threads);
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  RunConfig config;
  try {
    ordered_json::parse(in).get_to(config);
  } catch (const nlohmann::json::exception& e) {
    throw Error("config " + path.string() + ": " + e.what());
  }
  config.net.validate();
  config.loss.validate();
  config.augment.validate();
  return config;
}

void save_run_config(const std::filesystem::path& path, const RunConfig& config) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << ordered_json(config).dump(2) << '\n';
}

}  // namespace stereodepth
