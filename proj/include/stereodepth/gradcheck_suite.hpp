#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace stereodepth {

struct GradCheckCase {
  std::string module;
  std::string op;
  std::size_t instances = 0;
  double max_relative_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

// Seeded random instances for every differentiable operation, grouped by module
// ("diffcore", "warp", "loss", "model"). `module` selects one group or "all".
// Generators keep sampling positions and absolute-value arguments away from kinks.
std::vector<GradCheckCase> run_gradcheck_suite(const std::string& module, std::size_t instances = 20,
                                               std::uint64_t seed = 7);

std::string format_gradcheck_table(const std::vector<GradCheckCase>& cases);

}  // namespace stereodepth
