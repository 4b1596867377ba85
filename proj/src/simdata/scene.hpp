#pragma once

#include <cstdint>
#include <vector>

#include "simdata/cube.hpp"

namespace frn::simdata {

struct SceneSpec {
  std::size_t endmembers = 4;
  std::uint64_t seed = 0;
  /// Seed of the endmember library. Scenes sharing it mix the same materials.
  std::uint64_t library_seed = 1;
};

/// E smooth reflectance signatures sampled at the given band count, values
/// in [0.02, 0.98]. Row-major [E, L].
std::vector<double> endmember_library(std::size_t endmembers, std::size_t bands, std::uint64_t library_seed);

/// Per-pixel abundances: E nonnegative maps summing to one, band-major [E, H*W].
std::vector<double> abundance_maps(std::size_t endmembers, std::size_t height, std::size_t width,
                                   std::uint64_t seed);

/// cube(l, y, x) = sum_e abundance_e(y, x) * signature_e(l). Convex mixtures
/// of signatures in [0.02, 0.98] already lie in [0, 1].
SpectralCube synth_scene(const SceneSpec& spec, std::size_t bands, std::size_t height, std::size_t width);

}  // namespace frn::simdata
