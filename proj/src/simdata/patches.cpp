#include "simdata/patches.hpp"

#include <random>

namespace frn::simdata {

SpectralCube crop(const SpectralCube& src, std::size_t y0, std::size_t x0, std::size_t size, bool flip_h,
                  bool flip_v) {
  require(y0 + size <= src.height && x0 + size <= src.width, ErrorKind::contract, "crop: window outside image");
  SpectralCube out(src.bands, size, size);
  out.wavelengths = src.wavelengths;
  for (std::size_t l = 0; l < src.bands; ++l)
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) {
        const std::size_t sy = y0 + (flip_v ? size - 1 - y : y);
        const std::size_t sx = x0 + (flip_h ? size - 1 - x : x);
        out.at(l, y, x) = src.at(l, sy, sx);
      }
  return out;
}

std::vector<Patch> crop_patches(const SpectralCube& cube, const SpectralCube& rgb, std::size_t size,
                                std::size_t count, std::uint64_t seed, bool flips) {
  require(cube.height == rgb.height && cube.width == rgb.width, ErrorKind::dimension,
          "crop_patches: cube and rgb sizes differ");
  require(size >= 1 && size <= std::min(cube.height, cube.width), ErrorKind::contract,
          "crop_patches: patch size " + std::to_string(size) + " exceeds image " + std::to_string(cube.height) +
              "x" + std::to_string(cube.width));
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> uy(0, cube.height - size), ux(0, cube.width - size);
  std::bernoulli_distribution coin(0.5);
  std::vector<Patch> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Patch p;
    p.y = uy(rng);
    p.x = ux(rng);
    if (flips) {
      p.flip_h = coin(rng);
      p.flip_v = coin(rng);
    }
    p.cube = crop(cube, p.y, p.x, size, p.flip_h, p.flip_v);
    p.rgb = crop(rgb, p.y, p.x, size, p.flip_h, p.flip_v);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace frn::simdata
