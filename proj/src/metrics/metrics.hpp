#pragma once

#include <limits>
#include <vector>

#include "simdata/cube.hpp"

namespace frn::metrics {

using simdata::SpectralCube;

/// Returned by psnr when the cubes are identical.
inline constexpr double kPsnrInfinity = std::numeric_limits<double>::infinity();

/// Predictions are clamped to [0, 1] before every metric.
double mse(const SpectralCube& pred, const SpectralCube& gt);
double psnr(const SpectralCube& pred, const SpectralCube& gt);
/// sqrt(MSE) on the 0..255 scale.
double rmse(const SpectralCube& pred, const SpectralCube& gt);

struct SsimOptions {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01, k2 = 0.03;
  double dynamic_range = 1.0;
};

/// Gaussian-windowed SSIM over valid windows of one plane.
double ssim_plane(const float* x, const float* y, std::size_t height, std::size_t width,
                  const SsimOptions& opt = {});
/// Per-band SSIM averaged over bands.
double ssim(const SpectralCube& pred, const SpectralCube& gt, std::vector<double>* per_band = nullptr);

/// Universal image quality index with a stride-1 square window; windows with
/// a zero denominator are skipped. NaN if every window is skipped.
double uiqi_plane(const float* x, const float* y, std::size_t height, std::size_t width, std::size_t window = 8);
double uiqi(const SpectralCube& pred, const SpectralCube& gt, std::vector<double>* per_band = nullptr);

struct MetricReport {
  double psnr_db = 0, rmse_255 = 0, ssim = 0, uiqi = 0;
  std::vector<double> per_band_psnr, per_band_ssim, per_band_uiqi;
};

MetricReport evaluate_metrics(const SpectralCube& pred, const SpectralCube& gt, bool per_band = false);

}  // namespace frn::metrics
