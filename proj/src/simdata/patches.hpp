#pragma once

#include <cstdint>
#include <vector>

#include "simdata/cube.hpp"

namespace frn::simdata {

struct Patch {
  SpectralCube cube;
  SpectralCube rgb;
  std::size_t y = 0, x = 0;
  bool flip_h = false, flip_v = false;
};

/// Copies the size x size window at (y, x), optionally mirrored.
SpectralCube crop(const SpectralCube& src, std::size_t y, std::size_t x, std::size_t size, bool flip_h = false,
                  bool flip_v = false);

/// Uniformly placed aligned crops of a cube and its RGB image, with flips
/// applied identically to both when `flips` is on.
std::vector<Patch> crop_patches(const SpectralCube& cube, const SpectralCube& rgb, std::size_t size,
                                std::size_t count, std::uint64_t seed, bool flips = true);

}  // namespace frn::simdata
