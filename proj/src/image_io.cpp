#include "stereodepth/image_io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <json.hpp>

namespace stereodepth {

namespace fs = std::filesystem;

namespace {

std::vector<unsigned char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& path, const std::string& header, const std::vector<unsigned char>& payload) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (!out) throw Error("write failed for " + path.string());
}

// Whitespace-separated header tokens; '#' starts a comment running to end of line.
class HeaderReader {
 public:
  HeaderReader(const std::vector<unsigned char>& bytes, const fs::path& path) : bytes_(bytes), path_(path) {}

  std::string token() {
    skip_space_and_comments();
    std::string out;
    while (pos_ < bytes_.size() && !std::isspace(bytes_[pos_])) out.push_back(static_cast<char>(bytes_[pos_++]));
    if (out.empty()) throw MalformedHeaderError(path_.string() + ": unexpected end of header");
    return out;
  }

  std::size_t number() {
    const std::string t = token();
    if (!std::all_of(t.begin(), t.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
      throw MalformedHeaderError(path_.string() + ": expected a number, got '" + t + "'");
    }
    return std::stoul(t);
  }

  // Exactly one whitespace byte separates the header from the payload.
  std::size_t payload_offset() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) {
      throw MalformedHeaderError(path_.string() + ": missing separator before payload");
    }
    return pos_ + 1;
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  const std::vector<unsigned char>& bytes_;
  const fs::path& path_;
  std::size_t pos_ = 0;
};

}  // namespace

void write_ppm(const fs::path& path, const Tensor& image) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("write_ppm: expected 3 x H x W image, got " + shape_string(image.shape()));
  }
  const std::size_t h = image.dim(1), w = image.dim(2);
  auto v = image.data();
  std::vector<unsigned char> payload(3 * h * w);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double x = std::clamp(v[(c * h + i) * w + j], 0.0, 1.0);
        payload[(i * w + j) * 3 + c] = static_cast<unsigned char>(std::lround(x * 255.0));
      }
    }
  }
  write_bytes(path, "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n", payload);
}

Tensor read_ppm(const fs::path& path) {
  const auto bytes = read_bytes(path);
  HeaderReader header(bytes, path);
  if (header.token() != "P6") throw MalformedHeaderError(path.string() + ": not a binary PPM (P6)");
  const std::size_t w = header.number(), h = header.number(), maxval = header.number();
  if (w == 0 || h == 0) throw MalformedHeaderError(path.string() + ": zero image dimension");
  if (maxval != 255) throw MalformedHeaderError(path.string() + ": unsupported maxval " + std::to_string(maxval));
  const std::size_t offset = header.payload_offset();
  if (bytes.size() < offset + 3 * h * w) {
    throw TruncatedPayloadError(path.string() + ": payload has " + std::to_string(bytes.size() - offset) +
                                " bytes, expected " + std::to_string(3 * h * w));
  }
  std::vector<double> values(3 * h * w);
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      for (std::size_t c = 0; c < 3; ++c) {
        values[(c * h + i) * w + j] = bytes[offset + (i * w + j) * 3 + c] / 255.0;
      }
    }
  }
  return Tensor::from({3, h, w}, std::move(values));
}

void write_pfm(const fs::path& path, const Tensor& map) {
  if (map.rank() != 2) throw ShapeError("write_pfm: expected H x W map, got " + shape_string(map.shape()));
  const std::size_t h = map.dim(0), w = map.dim(1);
  auto v = map.data();
  std::vector<unsigned char> payload(4 * h * w);
  std::size_t out = 0;
  for (std::size_t r = h; r-- > 0;) {
    for (std::size_t j = 0; j < w; ++j) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v[r * w + j]));
      for (int b = 0; b < 4; ++b) payload[out++] = static_cast<unsigned char>((bits >> (8 * b)) & 0xFF);
    }
  }
  write_bytes(path, "Pf\n" + std::to_string(w) + " " + std::to_string(h) + "\n-1.0\n", payload);
}

Tensor read_pfm(const fs::path& path) {
  const auto bytes = read_bytes(path);
  HeaderReader header(bytes, path);
  const std::string magic = header.token();
  if (magic != "Pf") {
    throw MalformedHeaderError(path.string() + ": expected single-channel PFM 'Pf', got '" + magic + "'");
  }
  const std::size_t w = header.number(), h = header.number();
  if (w == 0 || h == 0) throw MalformedHeaderError(path.string() + ": zero image dimension");
  const std::string scale_token = header.token();
  double scale = 0.0;
  try {
    std::size_t used = 0;
    scale = std::stod(scale_token, &used);
    if (used != scale_token.size()) throw std::invalid_argument(scale_token);
  } catch (const std::exception&) {
    throw MalformedHeaderError(path.string() + ": bad scale '" + scale_token + "'");
  }
  if (scale == 0.0) throw MalformedHeaderError(path.string() + ": scale must be non-zero");
  const bool little = scale < 0.0;
  const std::size_t offset = header.payload_offset();
  if (bytes.size() < offset + 4 * h * w) {
    throw TruncatedPayloadError(path.string() + ": payload has " + std::to_string(bytes.size() - offset) +
                                " bytes, expected " + std::to_string(4 * h * w));
  }
  std::vector<double> values(h * w);
  std::size_t in = offset;
  for (std::size_t r = h; r-- > 0;) {
    for (std::size_t j = 0; j < w; ++j) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) {
        const std::uint32_t byte = bytes[in + static_cast<std::size_t>(b)];
        bits |= little ? byte << (8 * b) : byte << (8 * (3 - b));
      }
      in += 4;
      values[r * w + j] = static_cast<double>(std::bit_cast<float>(bits));
    }
  }
  return Tensor::from({h, w}, std::move(values));
}

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError("cannot open manifest " + path.string());
  const fs::path base = path.parent_path();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
  std::vector<ManifestEntry> entries;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (std::all_of(text.begin(), text.end(), [](char c) { return std::isspace(static_cast<unsigned char>(c)); })) {
      continue;
    }
    const std::string where = "line " + std::to_string(line) + ": ";
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ManifestError(where + "invalid JSON (" + e.what() + ")");
    }
    if (!j.is_object()) throw ManifestError(where + "expected a JSON object");
    ManifestEntry e;
    e.line = line;
    for (const char* key : {"left", "right"}) {
      if (!j.contains(key) || !j[key].is_string() || j[key].get<std::string>().empty()) {
        throw ManifestError(where + "missing file path '" + key + "'");
      }
    }
    e.left = resolve(j["left"].get<std::string>());
    e.right = resolve(j["right"].get<std::string>());
    try {
      if (j.contains("gt_disparity")) e.gt_disparity = resolve(j["gt_disparity"].get<std::string>());
      if (j.contains("visible_mask")) e.visible_mask = resolve(j["visible_mask"].get<std::string>());
      if (j.contains("baseline")) e.baseline = j["baseline"].get<double>();
      if (j.contains("focal")) e.focal = j["focal"].get<double>();
    } catch (const nlohmann::json::exception& ex) {
      throw ManifestError(where + "bad field type (" + ex.what() + ")");
    }
    entries.push_back(std::move(e));
  }
  return entries;
}

void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& e : entries) {
    nlohmann::ordered_json j;
    j["left"] = e.left.generic_string();
    j["right"] = e.right.generic_string();
    if (e.gt_disparity) j["gt_disparity"] = e.gt_disparity->generic_string();
    if (e.visible_mask) j["visible_mask"] = e.visible_mask->generic_string();
    if (e.baseline) j["baseline"] = *e.baseline;
    if (e.focal) j["focal"] = *e.focal;
    out << j.dump() << '\n';
  }
}

namespace {

template <typename Fn>
auto with_line(std::size_t line, Fn&& fn) {
  const std::string where = "line " + std::to_string(line) + ": ";
  try {
    return fn();
  } catch (const MalformedHeaderError& e) {
    throw MalformedHeaderError(where + e.what());
  } catch (const TruncatedPayloadError& e) {
    throw TruncatedPayloadError(where + e.what());
  } catch (const DimensionMismatchError& e) {
    throw DimensionMismatchError(where + e.what());
  } catch (const ManifestError&) {
    throw;
  } catch (const Error& e) {
    throw ManifestError(where + e.what());
  }
}

}  // namespace

StereoSample load_sample(const ManifestEntry& entry) {
  return with_line(entry.line, [&] {
    for (const auto& p : {entry.left, entry.right}) {
      if (!fs::exists(p)) throw ManifestError("line " + std::to_string(entry.line) + ": missing file " + p.string());
    }
    StereoSample s;
    s.id = entry.left.stem().string();
    s.left = read_ppm(entry.left);
    s.right = read_ppm(entry.right);
    if (s.left.shape() != s.right.shape()) {
      throw DimensionMismatchError("left " + shape_string(s.left.shape()) + " vs right " +
                                   shape_string(s.right.shape()));
    }
    auto read_map = [&](const fs::path& p, const char* what) {
      if (!fs::exists(p)) throw ManifestError("line " + std::to_string(entry.line) + ": missing file " + p.string());
      Tensor m = read_pfm(p);
      if (m.dim(0) != s.height() || m.dim(1) != s.width()) {
        throw DimensionMismatchError(std::string(what) + " " + shape_string(m.shape()) + " vs image " +
                                     shape_string(s.left.shape()));
      }
      return m;
    };
    if (entry.gt_disparity) s.gt_disparity_left = read_map(*entry.gt_disparity, "gt_disparity");
    if (entry.visible_mask) s.visible_left = read_map(*entry.visible_mask, "visible_mask");
    if (entry.baseline) s.camera.baseline = *entry.baseline;
    if (entry.focal) s.camera.focal = *entry.focal;
    s.camera.validate();
    return s;
  });
}

std::vector<StereoSample> load_dataset(const fs::path& manifest) {
  const auto entries = read_manifest(manifest);
  std::vector<StereoSample> samples;
  samples.reserve(entries.size());
  for (const auto& e : entries) samples.push_back(load_sample(e));
  return samples;
}

}  // namespace stereodepth
