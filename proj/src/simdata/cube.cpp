#include "simdata/cube.hpp"

#include <cmath>

namespace frn::simdata {

void SpectralCube::validate() const {
  require(data.size() == bands * height * width, ErrorKind::dimension,
          "cube: " + std::to_string(data.size()) + " values for " + std::to_string(bands) + "x" +
              std::to_string(height) + "x" + std::to_string(width));
  if (!wavelengths.empty()) {
    require(wavelengths.size() == bands, ErrorKind::dimension, "cube: wavelength count differs from band count");
    for (std::size_t i = 1; i < wavelengths.size(); ++i)
      require(wavelengths[i] > wavelengths[i - 1], ErrorKind::data, "cube: wavelengths must increase");
  }
}

Tensor SpectralCube::to_tensor(DType dtype) const {
  validate();
  if (dtype == DType::f32) return Tensor::from_vector(data, {bands, height, width});
  return Tensor::from_vector(std::vector<double>(data.begin(), data.end()), {bands, height, width});
}

SpectralCube SpectralCube::from_tensor(const Tensor& t) {
  require(t.rank() == 3, ErrorKind::dimension, "cube: expected [L,H,W] tensor, got " + to_string(t.shape()));
  SpectralCube c(t.dim(0), t.dim(1), t.dim(2));
  auto v = t.to_vector();
  for (std::size_t i = 0; i < v.size(); ++i) c.data[i] = static_cast<float>(v[i]);
  return c;
}

void CRF::validate() const {
  require(bands >= 1 && phi.size() == bands * 3, ErrorKind::dimension, "crf: phi must be [L,3]");
  for (double v : phi) require(v >= 0.0 && std::isfinite(v), ErrorKind::data, "crf: responses must be nonnegative");
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0;
    for (std::size_t l = 0; l < bands; ++l) s += at(l, c);
    require(std::abs(s - 1.0) < 1e-6, ErrorKind::data, "crf: column " + std::to_string(c) + " sums to " +
                                                           std::to_string(s) + ", expected 1");
  }
}

Tensor CRF::to_tensor(DType dtype) const { return Tensor::from_span(phi, {bands, 3}, dtype); }

std::vector<double> linear_wavelengths(std::size_t bands, double lo_nm, double hi_nm) {
  std::vector<double> w(bands);
  for (std::size_t i = 0; i < bands; ++i)
    w[i] = bands == 1 ? lo_nm : lo_nm + (hi_nm - lo_nm) * static_cast<double>(i) / static_cast<double>(bands - 1);
  return w;
}

CRF gaussian_crf(std::size_t bands, std::array<double, 3> centers_nm, double sigma_nm, double lo_nm, double hi_nm) {
  require(bands >= 3, ErrorKind::contract, "gaussian_crf: need at least 3 bands");
  require(sigma_nm > 0.0, ErrorKind::contract, "gaussian_crf: sigma must be positive");
  CRF crf;
  crf.bands = bands;
  crf.wavelengths = linear_wavelengths(bands, lo_nm, hi_nm);
  crf.phi.assign(bands * 3, 0.0);
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0;
    for (std::size_t l = 0; l < bands; ++l) {
      const double d = (crf.wavelengths[l] - centers_nm[c]) / sigma_nm;
      crf.phi[l * 3 + c] = std::exp(-0.5 * d * d);
      s += crf.phi[l * 3 + c];
    }
    for (std::size_t l = 0; l < bands; ++l) crf.phi[l * 3 + c] /= s;
  }
  return crf;
}

std::vector<double> crf_project(const std::vector<double>& cube, std::size_t bands, const CRF& crf) {
  require(bands == crf.bands, ErrorKind::dimension,
          "crf_project: cube has " + std::to_string(bands) + " bands, CRF has " + std::to_string(crf.bands));
  const std::size_t p = cube.size() / bands;
  // [3,P] = Phi^T [L,P]
  std::vector<double> out(3 * p, 0.0);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t l = 0; l < bands; ++l) {
      const double w = crf.at(l, c);
      const double* src = cube.data() + l * p;
      double* dst = out.data() + c * p;
      for (std::size_t i = 0; i < p; ++i) dst[i] += w * src[i];
    }
  return out;
}

SpectralCube crf_project(const SpectralCube& cube, const CRF& crf) {
  cube.validate();
  auto v = crf_project(std::vector<double>(cube.data.begin(), cube.data.end()), cube.bands, crf);
  SpectralCube rgb(3, cube.height, cube.width);
  for (std::size_t i = 0; i < v.size(); ++i) rgb.data[i] = static_cast<float>(v[i]);
  return rgb;
}

SpectralCube crf_project_loop(const SpectralCube& cube, const CRF& crf) {
  cube.validate();
  require(cube.bands == crf.bands, ErrorKind::dimension, "crf_project: band-count mismatch");
  SpectralCube rgb(3, cube.height, cube.width);
  for (std::size_t y = 0; y < cube.height; ++y)
    for (std::size_t x = 0; x < cube.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        double s = 0;
        for (std::size_t l = 0; l < cube.bands; ++l) s += crf.at(l, c) * cube.at(l, y, x);
        rgb.at(c, y, x) = static_cast<float>(s);
      }
  return rgb;
}

SpectralCube resample_bands(const SpectralCube& cube, std::size_t target) {
  cube.validate();
  require(target >= 2, ErrorKind::contract, "resample_bands: target must be at least 2 bands");
  require(cube.bands >= 2 || target == cube.bands, ErrorKind::contract, "resample_bands: need at least 2 bands");
  if (target == cube.bands) return cube;
  SpectralCube out(target, cube.height, cube.width);
  const std::size_t p = cube.plane();
  for (std::size_t j = 0; j < target; ++j) {
    // Position of target band j on the source band axis.
    const double pos = static_cast<double>(j) * static_cast<double>(cube.bands - 1) / static_cast<double>(target - 1);
    std::size_t i0 = static_cast<std::size_t>(std::floor(pos));
    if (i0 >= cube.bands - 1) i0 = cube.bands - 2;
    const double f = pos - static_cast<double>(i0);
    const float* a = cube.data.data() + i0 * p;
    const float* b = a + p;
    float* o = out.data.data() + j * p;
    for (std::size_t i = 0; i < p; ++i) o[i] = static_cast<float>((1.0 - f) * a[i] + f * b[i]);
  }
  if (!cube.wavelengths.empty()) {
    auto w = linear_wavelengths(target, cube.wavelengths.front(), cube.wavelengths.back());
    out.wavelengths.assign(w.begin(), w.end());
  }
  return out;
}

SpectralCube pinv_upsample(const SpectralCube& rgb, const CRF& crf) {
  require(rgb.bands == 3, ErrorKind::dimension, "pinv_upsample: expected a 3-channel image");
  crf.validate();
  const std::size_t l = crf.bands;
  // pinv(Phi^T) = Phi (Phi^T Phi)^-1, Phi^T Phi is 3x3.
  double g[3][3] = {};
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t b = 0; b < l; ++b) g[i][j] += crf.at(b, i) * crf.at(b, j);
  const double det = g[0][0] * (g[1][1] * g[2][2] - g[1][2] * g[2][1]) -
                     g[0][1] * (g[1][0] * g[2][2] - g[1][2] * g[2][0]) +
                     g[0][2] * (g[1][0] * g[2][1] - g[1][1] * g[2][0]);
  require(std::abs(det) > 1e-300, ErrorKind::numeric, "pinv_upsample: CRF columns are linearly dependent");
  double inv[3][3];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      const int r0 = (j + 1) % 3, r1 = (j + 2) % 3, c0 = (i + 1) % 3, c1 = (i + 2) % 3;
      inv[i][j] = (g[r0][c0] * g[r1][c1] - g[r0][c1] * g[r1][c0]) / det;
    }
  std::vector<double> m(l * 3, 0.0);  // [L,3] = Phi inv
  for (std::size_t b = 0; b < l; ++b)
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 3; ++k) m[b * 3 + j] += crf.at(b, k) * inv[k][j];
  SpectralCube out(l, rgb.height, rgb.width);
  const std::size_t p = rgb.plane();
  for (std::size_t b = 0; b < l; ++b)
    for (std::size_t i = 0; i < p; ++i) {
      double s = 0;
      for (std::size_t c = 0; c < 3; ++c) s += m[b * 3 + c] * rgb.data[c * p + i];
      out.data[b * p + i] = static_cast<float>(s);
    }
  out.wavelengths.assign(crf.wavelengths.begin(), crf.wavelengths.end());
  return out;
}

}  // namespace frn::simdata
