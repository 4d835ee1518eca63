#include "stereodepth/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "stereodepth/rng.hpp"

namespace stereodepth {

void CameraModel::validate() const {
  if (!(baseline > 0.0) || !(focal > 0.0)) throw Error("camera: baseline and focal must be positive");
}

namespace {

constexpr std::array<double, 3> kHazeColor{0.75, 0.8, 0.85};

double max_disparity_bound(std::size_t width) { return 0.3 * static_cast<double>(width); }

double lattice_value(std::uint64_t seed, std::int64_t gx, std::int64_t gy, std::size_t channel) {
  const std::uint64_t h = derive_seed(derive_seed(derive_seed(seed, static_cast<std::uint64_t>(gx)),
                                                  static_cast<std::uint64_t>(gy)),
                                      channel);
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double value_noise(std::uint64_t seed, double u, double v, double cell, std::size_t channel) {
  const double fu = u / cell, fv = v / cell;
  const double gu = std::floor(fu), gv = std::floor(fv);
  auto smooth = [](double t) { return t * t * (3.0 - 2.0 * t); };
  const double tu = smooth(fu - gu), tv = smooth(fv - gv);
  const auto ix = static_cast<std::int64_t>(gu), iy = static_cast<std::int64_t>(gv);
  const double v00 = lattice_value(seed, ix, iy, channel), v10 = lattice_value(seed, ix + 1, iy, channel);
  const double v01 = lattice_value(seed, ix, iy + 1, channel), v11 = lattice_value(seed, ix + 1, iy + 1, channel);
  const double top = v00 + (v10 - v00) * tu, bottom = v01 + (v11 - v01) * tu;
  return top + (bottom - top) * tv;
}

struct Surface {
  std::uint64_t texture_seed;
  int disparity;
};

// Color of a surface at layer-local integer coordinates (u, v).
double shade(const Surface& s, double haze_strength, std::size_t width, std::int64_t u, std::int64_t v,
             std::size_t channel) {
  const double base = 0.2 + 0.6 * lattice_value(derive_seed(s.texture_seed, 977), 0, 0, channel);
  // Texture features have a fixed physical size, so they grow with disparity.
  const double m = 0.6 + 1.5 * std::max(s.disparity, 0) / max_disparity_bound(width);
  const auto fu = static_cast<double>(u), fv = static_cast<double>(v);
  const double n = 0.5 * value_noise(derive_seed(s.texture_seed, 17), fu, fv, 12.0 * m, channel) +
                   0.3 * value_noise(s.texture_seed, fu, fv, 5.0 * m, channel) +
                   0.2 * value_noise(derive_seed(s.texture_seed, 31), fu, fv, 2.5 * m, channel);
  const double tex = std::clamp(base + 1.5 * (n - 0.5), 0.0, 1.0);
  const double haze =
      std::clamp(haze_strength * (1.0 - s.disparity / (0.2 * static_cast<double>(width))), 0.0, 1.0);
  return (1.0 - haze) * tex + haze * kHazeColor[channel];
}

// Index of the visible surface per pixel: 0 is the background, k >= 1 is layers[k-1].
// The right view shifts every surface by -disparity columns.
std::vector<std::size_t> label_map(const SceneSpec& spec, bool right_view) {
  const auto w = static_cast<std::int64_t>(spec.width);
  std::vector<std::size_t> labels(spec.width * spec.height, 0);
  for (std::size_t k = 0; k < spec.layers.size(); ++k) {
    const auto& l = spec.layers[k];
    const std::int64_t shift = right_view ? -l.disparity : 0;
    const std::int64_t x0 = std::max<std::int64_t>(static_cast<std::int64_t>(l.x) + shift, 0);
    const std::int64_t x1 = std::min<std::int64_t>(static_cast<std::int64_t>(l.x + l.width) + shift, w);
    for (std::size_t i = l.y; i < l.y + l.height; ++i) {
      for (std::int64_t j = x0; j < x1; ++j) labels[i * spec.width + static_cast<std::size_t>(j)] = k + 1;
    }
  }
  return labels;
}

}  // namespace

void SceneSpec::validate() const {
  if (width == 0 || height == 0) throw Error("scene: empty image size");
  const double bound = max_disparity_bound(width);
  if (background_disparity < 0 || background_disparity >= bound) {
    throw Error("scene: background disparity " + std::to_string(background_disparity) +
                " outside [0, 0.3 * width)");
  }
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const auto& l = layers[k];
    if (l.width == 0 || l.height == 0 || l.x + l.width > width || l.y + l.height > height) {
      throw Error("scene: layer " + std::to_string(k) + " rectangle lies outside the image");
    }
    if (l.disparity < 0 || l.disparity >= bound) {
      throw Error("scene: layer " + std::to_string(k) + " disparity " + std::to_string(l.disparity) +
                  " outside [0, 0.3 * width)");
    }
    if (k > 0 && l.disparity < layers[k - 1].disparity) {
      throw Error("scene: layers must be sorted by ascending disparity (layer " + std::to_string(k) + ")");
    }
  }
}

SceneSpec random_scene_spec(std::uint64_t seed, std::size_t width, std::size_t height) {
  Rng rng(seed);
  SceneSpec spec;
  spec.seed = seed;
  spec.width = width;
  spec.height = height;
  const double bound = max_disparity_bound(width);
  const int max_d = static_cast<int>(std::ceil(bound)) - 1;
  spec.background_disparity = std::clamp(static_cast<int>(std::lround(0.05 * static_cast<double>(width))), 0, std::max(max_d, 0));
  spec.background_texture_seed = rng.next();
  const std::size_t count = 1 + rng.below(3);
  const int lo = std::min(spec.background_disparity + 2, max_d);
  const int hi = std::clamp(static_cast<int>(0.16 * static_cast<double>(width)), lo, max_d);
  const auto fh = static_cast<double>(height);
  for (std::size_t k = 0; k < count; ++k) {
    LayerSpec l;
    l.disparity = lo + static_cast<int>(rng.below(static_cast<std::size_t>(hi - lo + 1)));
    // Nearer objects look bigger and stand lower in the frame.
    const double t = (l.disparity - lo + 1.0) / (hi - lo + 1.0);
    l.height = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(fh * (0.15 + 0.6 * t))), 2, height);
    l.width = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::lround(static_cast<double>(l.height) * (1.0 + rng.uniform()))), 2, width);
    const auto bottom = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(fh * (0.35 + 0.65 * t))),
                                                l.height, height);
    l.y = bottom - l.height;
    l.x = rng.below(width - l.width + 1);
    l.texture_seed = rng.next();
    spec.layers.push_back(l);
  }
  std::stable_sort(spec.layers.begin(), spec.layers.end(),
                   [](const LayerSpec& a, const LayerSpec& b) { return a.disparity < b.disparity; });
  return spec;
}

StereoSample generate_scene(const SceneSpec& spec) {
  spec.validate();
  const std::size_t h = spec.height, w = spec.width;
  std::vector<Surface> surfaces{{spec.background_texture_seed, spec.background_disparity}};
  for (const auto& l : spec.layers) surfaces.push_back({l.texture_seed, l.disparity});

  auto render = [&](bool right_view, std::vector<double>& image, std::vector<double>& disparity) {
    const auto labels = label_map(spec, right_view);
    image.assign(3 * h * w, 0.0);
    disparity.assign(h * w, 0.0);
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        const std::size_t k = labels[i * w + j];
        const Surface& s = surfaces[k];
        // Layer-local coordinates; identical for a scene point in both views.
        std::int64_t u = static_cast<std::int64_t>(j) + (right_view ? s.disparity : 0);
        std::int64_t v = static_cast<std::int64_t>(i);
        if (k > 0) {
          u -= static_cast<std::int64_t>(spec.layers[k - 1].x);
          v -= static_cast<std::int64_t>(spec.layers[k - 1].y);
        }
        for (std::size_t c = 0; c < 3; ++c) image[(c * h + i) * w + j] = shade(s, spec.haze, w, u, v, c);
        disparity[i * w + j] = static_cast<double>(s.disparity);
      }
    }
  };

  std::vector<double> left, right, disp_left, disp_right;
  render(false, left, disp_left);
  render(true, right, disp_right);
  StereoSample sample;
  sample.id = "scene_" + std::to_string(spec.seed);
  sample.left = Tensor::from({3, h, w}, std::move(left));
  sample.right = Tensor::from({3, h, w}, std::move(right));
  sample.gt_disparity_left = Tensor::from({h, w}, std::move(disp_left));
  sample.gt_disparity_right = Tensor::from({h, w}, std::move(disp_right));
  sample.visible_left = occlusion_mask(spec);
  return sample;
}

Tensor occlusion_mask(const SceneSpec& spec) {
  spec.validate();
  const std::size_t h = spec.height, w = spec.width;
  const auto left = label_map(spec, false);
  const auto right = label_map(spec, true);
  std::vector<double> mask(h * w, 0.0);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const std::size_t k = left[i * w + j];
      const int d = k == 0 ? spec.background_disparity : spec.layers[k - 1].disparity;
      const std::int64_t jr = static_cast<std::int64_t>(j) - d;
      if (jr < 0) continue;
      if (right[i * w + static_cast<std::size_t>(jr)] == k) mask[i * w + j] = 1.0;
    }
  }
  return Tensor::from({h, w}, std::move(mask));
}

}  // namespace stereodepth
