#include "stereodepth/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "stereodepth/ops.hpp"

namespace stereodepth {

Adam::Adam(std::vector<Tensor> params, AdamConfig config) : params_(std::move(params)), config_(config) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step(double learning_rate) {
  ++step_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  for (std::size_t t = 0; t < params_.size(); ++t) {
    auto values = params_[t].mutable_data();
    const auto grad = params_[t].grad();
    auto& m = m_[t];
    auto& v = v_[t];
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad.empty() ? 0.0 : grad[i];
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
      values[i] -= learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.epsilon);
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

double learning_rate_at(std::size_t epoch, double base_rate, std::size_t total_epochs) {
  if (total_epochs == 0) return base_rate;
  // Integer arithmetic in tenths of epochs keeps the bucket edges exact.
  const std::size_t constant_until = (6 * total_epochs + 9) / 10;
  if (epoch < constant_until) return base_rate;
  const double bucket = std::max(0.2 * static_cast<double>(total_epochs), 1.0);
  const auto halvings = 1 + static_cast<std::size_t>(std::floor(static_cast<double>(epoch - constant_until) / bucket));
  return base_rate / std::pow(2.0, static_cast<double>(halvings));
}

void AugmentConfig::validate() const {
  for (double p : {flip_prob, color_prob}) {
    if (p < 0.0 || p > 1.0) throw Error("augment config: probabilities must lie in [0, 1]");
  }
  for (const auto& r : {gamma, brightness, channel}) {
    if (r[0] > r[1] || r[0] <= 0.0) throw Error("augment config: ranges must be ordered and positive");
  }
}

AugmentDraw draw_augmentation(Rng& rng, const AugmentConfig& config) {
  // Every variable is drawn unconditionally so the stream position does not
  // depend on earlier outcomes.
  AugmentDraw d;
  d.flip = rng.bernoulli(config.flip_prob);
  d.color = rng.bernoulli(config.color_prob);
  const double gamma = rng.uniform(config.gamma[0], config.gamma[1]);
  const double brightness = rng.uniform(config.brightness[0], config.brightness[1]);
  std::array<double, 3> channel{};
  for (auto& c : channel) c = rng.uniform(config.channel[0], config.channel[1]);
  if (d.color) {
    d.gamma = gamma;
    d.brightness = brightness;
    d.channel = channel;
  }
  return d;
}

namespace {

Tensor mirror(const Tensor& t) {
  NoGradGuard no_grad;
  return ops::flip_horizontal(t).detach();
}

}  // namespace

StereoSample flip_pair(const StereoSample& s) {
  StereoSample out;
  out.id = s.id;
  out.camera = s.camera;
  out.left = mirror(s.right);
  out.right = mirror(s.left);
  if (s.gt_disparity_right) out.gt_disparity_left = mirror(*s.gt_disparity_right);
  if (s.gt_disparity_left) out.gt_disparity_right = mirror(*s.gt_disparity_left);
  return out;
}

StereoSample color_shift(const StereoSample& s, double gamma, double brightness, const std::array<double, 3>& channel) {
  auto shift = [&](const Tensor& image) {
    const std::size_t plane = image.dim(1) * image.dim(2);
    std::vector<double> v(image.data().begin(), image.data().end());
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t i = 0; i < plane; ++i) {
        double& x = v[c * plane + i];
        x = std::clamp(std::pow(x, gamma) * brightness * channel[c], 0.0, 1.0);
      }
    }
    return Tensor::from(image.shape(), std::move(v));
  };
  StereoSample out = s;
  out.left = shift(s.left);
  out.right = shift(s.right);
  return out;
}

StereoSample apply_augmentation(const StereoSample& sample, const AugmentDraw& draw) {
  StereoSample out = draw.flip ? flip_pair(sample) : sample;
  if (draw.color) out = color_shift(out, draw.gamma, draw.brightness, draw.channel);
  return out;
}

StereoSample augment(const StereoSample& sample, const AugmentConfig& config, Rng& rng) {
  return apply_augmentation(sample, draw_augmentation(rng, config));
}

PairPyramids build_pair_pyramids(const StereoSample& sample, std::size_t levels) {
  NoGradGuard no_grad;
  return {build_image_pyramid(sample.left, levels), build_image_pyramid(sample.right, levels)};
}

TotalLoss batch_loss(const DisparityNet& net, const std::vector<StereoSample>& batch, const LossWeights& weights) {
  if (batch.empty()) throw Error("batch_loss: empty batch");
  const std::size_t levels = net.config().output_scales;
  const double inv = 1.0 / static_cast<double>(batch.size());
  TotalLoss result;
  std::vector<std::vector<ScaleLoss>> per_sample;
  for (const auto& sample : batch) {
    const auto pyr = build_pair_pyramids(sample, levels);
    const DisparityPyramid disp = net.config().input_mode == InputMode::kStereo
                                      ? net.forward(sample.left, sample.right)
                                      : net.forward(sample.left);
    TotalLoss t = total_loss(pyr.left, pyr.right, disp, weights);
    result.total = result.total.defined() ? ops::add(result.total, t.total) : t.total;
    per_sample.push_back(std::move(t.scales));
  }
  result.total = ops::scale(result.total, inv);
  // Batch-mean of each scale term, keeping the graph for inspection.
  for (std::size_t s = 0; s < levels; ++s) {
    ScaleLoss mean_scale;
    mean_scale.downscale = per_sample[0][s].downscale;
    auto avg = [&](Tensor ScaleLoss::*member) {
      Tensor acc = per_sample[0][s].*member;
      for (std::size_t b = 1; b < per_sample.size(); ++b) acc = ops::add(acc, per_sample[b][s].*member);
      return ops::scale(acc, inv);
    };
    mean_scale.total = avg(&ScaleLoss::total);
    mean_scale.ap_left = avg(&ScaleLoss::ap_left);
    mean_scale.ap_right = avg(&ScaleLoss::ap_right);
    mean_scale.ds_left = avg(&ScaleLoss::ds_left);
    mean_scale.ds_right = avg(&ScaleLoss::ds_right);
    mean_scale.lr_left = avg(&ScaleLoss::lr_left);
    mean_scale.lr_right = avg(&ScaleLoss::lr_right);
    result.scales.push_back(std::move(mean_scale));
  }
  return result;
}

TrainResult train(const std::vector<StereoSample>& dataset, NetConfig net_config, const LossWeights& weights,
                  const AugmentConfig& augment_config, const TrainerConfig& trainer,
                  const std::function<void(const StepLog&)>& on_step) {
  if (dataset.empty()) throw Error("train: dataset is empty");
  if (trainer.batch_size == 0) throw Error("train: batch_size must be positive");
  weights.validate();
  augment_config.validate();
  net_config.seed = derive_seed(trainer.seed, streams::kInit);
  DisparityNet net(net_config);

  std::vector<Tensor> params;
  for (const auto& p : net.parameters()) params.push_back(p.value);
  Adam adam(params);

  Rng order_rng(derive_seed(trainer.seed, streams::kDataOrder));
  Rng augment_rng(derive_seed(trainer.seed, streams::kAugment));
  const std::size_t steps_per_epoch = std::max<std::size_t>(1, dataset.size() / trainer.batch_size);
  const std::size_t total_epochs = (trainer.steps + steps_per_epoch - 1) / steps_per_epoch;

  std::vector<std::size_t> order(dataset.size());
  std::size_t cursor = order.size();
  std::vector<StepLog> log;
  for (std::size_t step = 0; step < trainer.steps; ++step) {
    const std::size_t epoch = step / steps_per_epoch;
    if (step % steps_per_epoch == 0) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      order_rng.shuffle(order);
      cursor = 0;
    }
    std::vector<StereoSample> batch;
    for (std::size_t b = 0; b < trainer.batch_size; ++b) {
      if (cursor >= order.size()) cursor = 0;
      const StereoSample& s = dataset[order[cursor++]];
      batch.push_back(trainer.augment ? augment(s, augment_config, augment_rng) : s);
    }

    StepLog entry;
    entry.step = step;
    entry.epoch = epoch;
    entry.learning_rate = learning_rate_at(epoch, trainer.learning_rate, total_epochs);
    try {
      TotalLoss loss = batch_loss(net, batch, weights);
      entry.c_total = loss.total.item();
      entry.scales = loss.breakdown();
      adam.zero_grad();
      loss.total.backward();
    } catch (const NonFiniteError& e) {
      throw TrainingDivergedError("step " + std::to_string(step) + ": " + e.what());
    }
    adam.step(entry.learning_rate);
    if (on_step) on_step(entry);
    log.push_back(std::move(entry));
  }
  return {std::move(net), std::move(log)};
}

void write_loss_csv(const std::filesystem::path& path, const std::vector<StepLog>& log) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  const std::size_t scales = log.empty() ? 0 : log.front().scales.size();
  out << "step,epoch,lr,c_total,c_ap,c_ds,c_lr";
  for (std::size_t s = 1; s <= scales; ++s) {
    out << ",c_total_s" << s << ",c_ap_s" << s << ",c_ds_s" << s << ",c_lr_s" << s;
  }
  out << '\n';
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return std::string(buf);
  };
  for (const auto& e : log) {
    double ap = 0, ds = 0, lr = 0;
    for (const auto& s : e.scales) {
      ap += s.c_ap();
      ds += s.c_ds();
      lr += s.c_lr();
    }
    out << e.step << ',' << e.epoch << ',' << num(e.learning_rate) << ',' << num(e.c_total) << ',' << num(ap) << ','
        << num(ds) << ',' << num(lr);
    for (const auto& s : e.scales) {
      out << ',' << num(s.c_total) << ',' << num(s.c_ap()) << ',' << num(s.c_ds()) << ',' << num(s.c_lr());
    }
    out << '\n';
  }
}

}  // namespace stereodepth
