#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "stereodepth/data.hpp"
#include "stereodepth/tensor.hpp"

namespace stereodepth {

// Header could not be parsed or declares an unsupported variant.
class MalformedHeaderError : public Error {
 public:
  using Error::Error;
};

// Payload shorter than the header promises.
class TruncatedPayloadError : public Error {
 public:
  using Error::Error;
};

// Files that belong together (left/right/disparity/mask) disagree in size.
class DimensionMismatchError : public Error {
 public:
  using Error::Error;
};

// Manifest content problem; the message starts with "line N:".
class ManifestError : public Error {
 public:
  using Error::Error;
};

// Binary P6, maxval 255. Values in [0, 1] are clamped and rounded to nearest.
void write_ppm(const std::filesystem::path& path, const Tensor& image);
Tensor read_ppm(const std::filesystem::path& path);

// Single-channel "Pf", little-endian (scale -1.0), rows stored bottom to top, float32.
void write_pfm(const std::filesystem::path& path, const Tensor& map);
Tensor read_pfm(const std::filesystem::path& path);

// One JSON object per line:
//   {"left": ..., "right": ..., "gt_disparity": ..., "visible_mask": ..., "baseline": ..., "focal": ...}
// Only left and right are required. Relative paths resolve against the manifest's directory.
struct ManifestEntry {
  std::size_t line = 0;
  std::filesystem::path left;
  std::filesystem::path right;
  std::optional<std::filesystem::path> gt_disparity;
  std::optional<std::filesystem::path> visible_mask;
  std::optional<double> baseline;
  std::optional<double> focal;
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
// Paths are written as given.
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

// Reads every file named by the entry and checks that their sizes agree.
StereoSample load_sample(const ManifestEntry& entry);
std::vector<StereoSample> load_dataset(const std::filesystem::path& manifest);

}  // namespace stereodepth
