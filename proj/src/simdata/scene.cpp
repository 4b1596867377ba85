#include "simdata/scene.hpp"

#include <algorithm>
#include <cmath>
#include <array>
#include <numbers>
#include <random>

namespace frn::simdata {

std::vector<double> endmember_library(std::size_t endmembers, std::size_t bands, std::uint64_t library_seed) {
  require(endmembers >= 1 && bands >= 1, ErrorKind::contract, "endmember_library: empty library");
  std::mt19937_64 rng(library_seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto wl = linear_wavelengths(bands);
  std::vector<double> lib(endmembers * bands);
  for (std::size_t e = 0; e < endmembers; ++e) {
    // Baseline plus a few Gaussian bumps, then squashed into [0.02, 0.98].
    const double base = 0.1 + 0.3 * u(rng);
    const double slope = (u(rng) - 0.5) * 0.6;
    const int bumps = 2 + static_cast<int>(u(rng) * 3);
    std::vector<std::array<double, 3>> g;
    for (int b = 0; b < bumps; ++b) g.push_back({380.0 + 340.0 * u(rng), 15.0 + 50.0 * u(rng), (u(rng) - 0.3) * 0.9});
    std::vector<double> s(bands);
    for (std::size_t l = 0; l < bands; ++l) {
      const double t = (wl[l] - 400.0) / 300.0;
      double v = base + slope * t;
      for (const auto& [mu, sig, amp] : g) v += amp * std::exp(-0.5 * std::pow((wl[l] - mu) / sig, 2));
      s[l] = v;
    }
    for (std::size_t l = 0; l < bands; ++l)
      lib[e * bands + l] = 0.02 + 0.96 / (1.0 + std::exp(-4.0 * (s[l] - 0.4)));
  }
  return lib;
}

std::vector<double> abundance_maps(std::size_t endmembers, std::size_t height, std::size_t width,
                                   std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t p = height * width;
  std::vector<double> logits(endmembers * p, 0.0);
  const double pi = std::numbers::pi;
  for (std::size_t e = 0; e < endmembers; ++e) {
    double* f = logits.data() + e * p;
    // Low-frequency waves for smooth shading.
    for (int k = 0; k < 3; ++k) {
      const double fy = (u(rng) - 0.5) * 4.0 * pi / static_cast<double>(height);
      const double fx = (u(rng) - 0.5) * 4.0 * pi / static_cast<double>(width);
      const double ph = 2.0 * pi * u(rng), amp = 0.5 + u(rng);
      for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x)
          f[y * width + x] += amp * std::sin(fy * static_cast<double>(y) + fx * static_cast<double>(x) + ph);
    }
    // Soft-edged disks and rectangles give object boundaries.
    for (int k = 0; k < 3; ++k) {
      const double cy = u(rng) * static_cast<double>(height), cx = u(rng) * static_cast<double>(width);
      const double r = (0.1 + 0.25 * u(rng)) * static_cast<double>(std::min(height, width));
      const bool disk = u(rng) < 0.5;
      const double amp = 2.0 + 2.0 * u(rng);
      for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x) {
          const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
          const double d = disk ? std::sqrt(dy * dy + dx * dx) : std::max(std::abs(dy), std::abs(dx));
          f[y * width + x] += amp / (1.0 + std::exp((d - r) / 1.5));
        }
    }
  }
  std::vector<double> a(endmembers * p);
  for (std::size_t i = 0; i < p; ++i) {
    double mx = -1e300, s = 0;
    for (std::size_t e = 0; e < endmembers; ++e) mx = std::max(mx, logits[e * p + i]);
    for (std::size_t e = 0; e < endmembers; ++e) s += (a[e * p + i] = std::exp(logits[e * p + i] - mx));
    for (std::size_t e = 0; e < endmembers; ++e) a[e * p + i] /= s;
  }
  return a;
}

SpectralCube synth_scene(const SceneSpec& spec, std::size_t bands, std::size_t height, std::size_t width) {
  require(spec.endmembers >= 1, ErrorKind::contract, "synth_scene: need at least one endmember");
  require(bands >= 1 && height >= 1 && width >= 1, ErrorKind::contract, "synth_scene: empty cube");
  auto lib = endmember_library(spec.endmembers, bands, spec.library_seed);
  auto ab = abundance_maps(spec.endmembers, height, width, spec.seed);
  SpectralCube cube(bands, height, width);
  const std::size_t p = height * width;
  for (std::size_t l = 0; l < bands; ++l)
    for (std::size_t i = 0; i < p; ++i) {
      double v = 0;
      for (std::size_t e = 0; e < spec.endmembers; ++e) v += ab[e * p + i] * lib[e * bands + l];
      cube.data[l * p + i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  auto wl = linear_wavelengths(bands);
  cube.wavelengths.assign(wl.begin(), wl.end());
  return cube;
}

}  // namespace frn::simdata
