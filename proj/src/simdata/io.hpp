#pragma once

#include <filesystem>
#include <string>

#include "simdata/cube.hpp"

namespace frn::simdata {

/// FRNC v1: "FRNC", u32 version, u32 L/H/W, u8 has_wavelengths, optional
/// L f32 wavelengths, then L*H*W f32 values. Everything little-endian.
void save_cube(const std::filesystem::path& path, const SpectralCube& cube);
SpectralCube load_cube(const std::filesystem::path& path);

/// "wavelength_nm,r,g,b" header followed by one row per band.
void save_crf_csv(const std::filesystem::path& path, const CRF& crf);
CRF load_crf_csv(const std::filesystem::path& path);

/// Directory of equally sized 8- or 16-bit grayscale PNGs, one per band in
/// lexicographic file order.
SpectralCube load_png_band_dir(const std::filesystem::path& dir);

/// 16-bit grayscale exports of a [0,1] plane; values are clamped.
void save_pgm16(const std::filesystem::path& path, const float* plane, std::size_t height, std::size_t width);
void save_png16(const std::filesystem::path& path, const float* plane, std::size_t height, std::size_t width);

}  // namespace frn::simdata
