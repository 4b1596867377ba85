#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "numerics/tensor.hpp"

namespace frn::simdata {

/// Band-major L x H x W radiance volume.
struct SpectralCube {
  std::size_t bands = 0, height = 0, width = 0;
  std::vector<float> data;
  /// Empty, or one strictly increasing wavelength (nm) per band.
  std::vector<float> wavelengths;

  SpectralCube() = default;
  SpectralCube(std::size_t l, std::size_t h, std::size_t w, float fill = 0.0f)
      : bands(l), height(h), width(w), data(l * h * w, fill) {}

  std::size_t plane() const { return height * width; }
  float& at(std::size_t l, std::size_t y, std::size_t x) { return data[(l * height + y) * width + x]; }
  float at(std::size_t l, std::size_t y, std::size_t x) const { return data[(l * height + y) * width + x]; }

  /// Throws when sizes or wavelengths are inconsistent.
  void validate() const;
  Tensor to_tensor(DType dtype = DType::f32) const;
  static SpectralCube from_tensor(const Tensor& t);
};

/// L x 3 nonnegative spectral response, each column summing to one.
struct CRF {
  std::size_t bands = 0;
  std::vector<double> phi;  // row-major [L,3]
  std::vector<double> wavelengths;

  double at(std::size_t band, std::size_t channel) const { return phi[band * 3 + channel]; }
  void validate() const;
  /// [L,3] tensor of phi.
  Tensor to_tensor(DType dtype = DType::f32) const;
};

/// L wavelengths spread evenly over [lo_nm, hi_nm].
std::vector<double> linear_wavelengths(std::size_t bands, double lo_nm = 400.0, double hi_nm = 700.0);

CRF gaussian_crf(std::size_t bands, std::array<double, 3> centers_nm = {600.0, 540.0, 460.0},
                 double sigma_nm = 40.0, double lo_nm = 400.0, double hi_nm = 700.0);

/// X = Y Phi as one matrix product, accumulated in double.
SpectralCube crf_project(const SpectralCube& cube, const CRF& crf);
/// Same projection written as the per-pixel band sum.
SpectralCube crf_project_loop(const SpectralCube& cube, const CRF& crf);
/// Double-precision projection of a band-major [L, P] buffer into [3, P].
std::vector<double> crf_project(const std::vector<double>& cube, std::size_t bands, const CRF& crf);

/// Per-pixel linear interpolation onto target_bands evenly spaced positions
/// spanning the same range.
SpectralCube resample_bands(const SpectralCube& cube, std::size_t target_bands);

/// Least-squares inverse of the projection: Y = X pinv(Phi).
SpectralCube pinv_upsample(const SpectralCube& rgb, const CRF& crf);

}  // namespace frn::simdata
