#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

namespace stereodepth {

// SplitMix64 finalizer. Used to expand seeds and to derive independent streams.
constexpr std::uint64_t splitmix64_mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Seed for sub-stream `stream` of `seed`:
//   splitmix64_mix(seed + 0x9E3779B97F4A7C15 * (stream + 1))
// Every subsystem (init, data order, augmentation, scene generation) takes its
// seed through this function so a single top-level seed determines a run.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64_mix(seed + 0x9E3779B97F4A7C15ULL * (stream + 1));
}

// xoshiro256** seeded by four successive SplitMix64 outputs.
//
// uniform() = (next() >> 11) * 2^-53, in [0, 1).
// uniform(a, b) = a + (b - a) * uniform().
// below(n) = floor(uniform() * n).
// shuffle() is Fisher-Yates from the last element down, swapping i with below(i + 1).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) {
    std::uint64_t s = seed;
    for (auto& word : state_) {
      s += 0x9E3779B97F4A7C15ULL;
      word = splitmix64_mix(s);
    }
  }

  std::uint64_t next() {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(uniform() * static_cast<double>(n)); }
  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

 private:
  static constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::uint64_t state_[4];
};

}  // namespace stereodepth
