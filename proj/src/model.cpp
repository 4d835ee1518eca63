#include "stereodepth/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "stereodepth/config.hpp"
#include "stereodepth/ops.hpp"
#include "stereodepth/rng.hpp"

namespace stereodepth {

namespace {

constexpr char kMagic[8] = {'S', 'D', 'N', 'E', 'T', 'C', 'K', '1'};
constexpr std::uint32_t kCheckpointVersion = 1;

struct ConvSpec {
  std::string name;
  std::size_t in, out, kernel;
};

// Layer table in declaration order; the checkpoint and the forward pass both follow it.
std::vector<ConvSpec> layer_table(const NetConfig& c) {
  std::vector<ConvSpec> layers;
  const std::size_t depth = c.depth(), k = c.kernel_size;
  std::size_t prev = c.input_channels();
  for (std::size_t l = 1; l <= depth; ++l) {
    const std::size_t e = c.encoder_channels[l - 1];
    layers.push_back({"enc" + std::to_string(l) + ".down", prev, e, k});
    layers.push_back({"enc" + std::to_string(l) + ".conv", e, e, k});
    prev = e;
  }
  for (std::size_t l = depth; l >= 1; --l) {
    const std::size_t d = c.decoder_channels(l);
    const std::size_t up_in = l == depth ? c.encoder_channels[depth - 1] : c.decoder_channels(l + 1);
    const std::size_t skip = l >= 2 ? c.encoder_channels[l - 2] : c.input_channels();
    const std::size_t coarser_head = l < c.output_scales ? 2 : 0;
    layers.push_back({"dec" + std::to_string(l) + ".up", up_in, d, k});
    layers.push_back({"dec" + std::to_string(l) + ".iconv", d + skip + coarser_head, d, k});
    if (l <= c.output_scales) layers.push_back({"disp" + std::to_string(l), d, 2, c.head_kernel_size});
  }
  return layers;
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
}

void put_f64(std::string& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFF));
}

class ByteReader {
 public:
  ByteReader(std::string bytes, std::string path) : bytes_(std::move(bytes)), path_(std::move(path)) {}
  std::uint64_t get(int width) {
    if (pos_ + static_cast<std::size_t>(width) > bytes_.size()) throw Error(path_ + ": truncated checkpoint");
    std::uint64_t v = 0;
    for (int b = 0; b < width; ++b) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_++])) << (8 * b);
    return v;
  }
  std::string take(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw Error(path_ + ": truncated checkpoint");
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

std::size_t NetConfig::decoder_channels(std::size_t level) const {
  return std::max<std::size_t>(encoder_channels.at(level - 1) / 2, 1);
}

void NetConfig::validate() const {
  if (encoder_channels.empty()) throw Error("net config: encoder_channels is empty");
  for (auto c : encoder_channels) {
    if (c == 0) throw Error("net config: channel counts must be positive");
  }
  if (output_scales < 1 || output_scales > encoder_channels.size()) {
    throw Error("net config: output_scales must be in [1, encoder depth]");
  }
  if (kernel_size % 2 == 0 || head_kernel_size % 2 == 0) throw Error("net config: kernel sizes must be odd");
  if (!(d_max_ratio > 0.0)) throw Error("net config: d_max_ratio must be positive");
  if (!(initial_disparity_ratio > 0.0 && initial_disparity_ratio < 1.0)) {
    throw Error("net config: initial_disparity_ratio must lie in (0, 1)");
  }
}

std::size_t expected_parameter_count(const NetConfig& config) {
  const std::size_t k2 = config.kernel_size * config.kernel_size;
  const std::size_t kh2 = config.head_kernel_size * config.head_kernel_size;
  const auto& e = config.encoder_channels;
  const std::size_t depth = e.size();
  std::size_t total = 0;
  for (std::size_t l = 1; l <= depth; ++l) {
    const std::size_t in = l == 1 ? config.input_channels() : e[l - 2];
    total += k2 * in * e[l - 1] + e[l - 1];
    total += k2 * e[l - 1] * e[l - 1] + e[l - 1];
  }
  for (std::size_t l = 1; l <= depth; ++l) {
    const std::size_t d = std::max<std::size_t>(e[l - 1] / 2, 1);
    const std::size_t up_in = l == depth ? e[depth - 1] : std::max<std::size_t>(e[l] / 2, 1);
    const std::size_t skip = l >= 2 ? e[l - 2] : config.input_channels();
    const std::size_t prior = l < config.output_scales ? 2 : 0;
    total += k2 * up_in * d + d;
    total += k2 * (d + skip + prior) * d + d;
    if (l <= config.output_scales) total += kh2 * d * 2 + 2;
  }
  return total;
}

DisparityNet::DisparityNet(NetConfig config) : config_(std::move(config)) {
  config_.validate();
  Rng rng(config_.seed);
  for (const auto& layer : layer_table(config_)) {
    const std::size_t fan_in = layer.in * layer.kernel * layer.kernel;
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::vector<double> w(layer.out * fan_in);
    for (auto& v : w) v = rng.uniform(-bound, bound);
    params_.push_back({layer.name + ".weight",
                       Tensor::from({layer.out, layer.in, layer.kernel, layer.kernel}, std::move(w), true)});
    const bool head = layer.name == "disp" + std::to_string(config_.output_scales);
    const double r = config_.initial_disparity_ratio;
    params_.push_back({layer.name + ".bias", Tensor::full({layer.out}, head ? std::log(r / (1.0 - r)) : 0.0, true)});
  }
}

std::size_t DisparityNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

DisparityPyramid DisparityNet::forward(const Tensor& left) const {
  if (config_.input_mode != InputMode::kMono) throw Error("forward: stereo network needs both views");
  return run(left);
}

DisparityPyramid DisparityNet::forward(const Tensor& left, const Tensor& right) const {
  if (config_.input_mode != InputMode::kStereo) throw Error("forward: mono network takes only the left view");
  if (left.shape() != right.shape()) {
    throw ShapeError("forward: left " + shape_string(left.shape()) + " vs right " + shape_string(right.shape()));
  }
  return run(ops::concat_channels({left, right}));
}

DisparityPyramid DisparityNet::run(const Tensor& input) const {
  const std::size_t depth = config_.depth();
  if (input.rank() != 3 || input.dim(0) != config_.input_channels()) {
    throw ShapeError("forward: expected " + std::to_string(config_.input_channels()) + " x H x W input, got " +
                     shape_string(input.shape()));
  }
  const std::size_t multiple = std::size_t{1} << depth;
  if (input.dim(1) % multiple != 0 || input.dim(2) % multiple != 0) {
    throw ShapeError("forward: input " + shape_string(input.shape()) + " height and width must be divisible by " +
                     std::to_string(multiple));
  }
  const std::size_t pad = config_.kernel_size / 2, head_pad = config_.head_kernel_size / 2;
  std::size_t next = 0;
  auto conv = [&](const Tensor& x, std::size_t stride, std::size_t padding) {
    const Tensor& w = param(next);
    const Tensor& b = param(next + 1);
    next += 2;
    return ops::conv2d(x, w, b, stride, padding);
  };

  std::vector<Tensor> skips;
  const Tensor centered = ops::add_scalar(input, -0.5);
  Tensor x = centered;
  for (std::size_t l = 1; l <= depth; ++l) {
    x = ops::elu(conv(x, 2, pad));
    x = ops::elu(conv(x, 1, pad));
    skips.push_back(x);
  }

  DisparityPyramid pyramid(config_.output_scales);
  Tensor coarser;  // normalized disparities of the previous head, 2 x h x w
  Tensor coarser_logits;
  for (std::size_t l = depth; l >= 1; --l) {
    Tensor up = ops::elu(conv(ops::upsample_nearest2x(x), 1, pad));
    std::vector<Tensor> parts{up};
    parts.push_back(l >= 2 ? skips[l - 2] : centered);
    if (coarser.defined()) parts.push_back(ops::upsample_nearest2x(coarser));
    x = ops::elu(conv(ops::concat_channels(parts), 1, pad));
    if (l <= config_.output_scales) {
      const double d_max = config_.d_max_ratio * static_cast<double>(x.dim(2));
      // Heads refine the upsampled logits of the coarser head. d_max scales with
      // the level width, so a logit means the same width fraction at every level.
      Tensor logits = conv(x, 1, head_pad);
      if (coarser_logits.defined()) logits = ops::add(logits, ops::upsample_nearest2x(coarser_logits));
      const Tensor disp = ops::sigmoid_scaled(logits, d_max);
      pyramid[l - 1] = {ops::select_channel(disp, 0), ops::select_channel(disp, 1)};
      coarser = ops::scale(disp, 1.0 / d_max);
      coarser_logits = logits;
    }
  }
  return pyramid;
}

void DisparityNet::save(const std::filesystem::path& path) const {
  std::string out(kMagic, sizeof(kMagic));
  put_u32(out, kCheckpointVersion);
  const std::string cfg = nlohmann::ordered_json(config_).dump();
  put_u32(out, static_cast<std::uint32_t>(cfg.size()));
  out += cfg;
  put_u32(out, 64);
  put_u32(out, static_cast<std::uint32_t>(params_.size()));
  for (const auto& p : params_) {
    put_u32(out, static_cast<std::uint32_t>(p.value.rank()));
    for (auto d : p.value.shape()) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : p.value.data()) put_f64(out, v);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write checkpoint " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw Error("write failed for " + path.string());
}

DisparityNet DisparityNet::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open checkpoint " + path.string());
  ByteReader in(std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()), path.string());
  if (in.take(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
    throw Error(path.string() + ": not a disparity network checkpoint");
  }
  if (const auto version = in.get(4); version != kCheckpointVersion) {
    throw Error(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  }
  const std::string cfg = in.take(static_cast<std::size_t>(in.get(4)));
  NetConfig config;
  try {
    nlohmann::ordered_json::parse(cfg).get_to(config);
  } catch (const nlohmann::json::exception& e) {
    throw Error(path.string() + ": bad config block (" + e.what() + ")");
  }
  if (in.get(4) != 64) throw Error(path.string() + ": only 64-bit parameter storage is supported");
  DisparityNet net(config);
  if (in.get(4) != net.params_.size()) throw Error(path.string() + ": parameter tensor count mismatch");
  for (auto& p : net.params_) {
    const std::size_t rank = static_cast<std::size_t>(in.get(4));
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(in.get(4));
    if (shape != p.value.shape()) {
      throw Error(path.string() + ": " + p.name + " has shape " + shape_string(shape) + ", expected " +
                  shape_string(p.value.shape()));
    }
    auto values = p.value.mutable_data();
    for (auto& v : values) v = std::bit_cast<double>(in.get(8));
  }
  if (!in.done()) throw Error(path.string() + ": trailing bytes after parameters");
  return net;
}

}  // namespace stereodepth
