#include "metrics/metrics.hpp"

#include <algorithm>
#include <cmath>

namespace frn::metrics {

namespace {

void check_pair(const SpectralCube& pred, const SpectralCube& gt, const char* what) {
  pred.validate();
  gt.validate();
  require(pred.bands == gt.bands && pred.height == gt.height && pred.width == gt.width, ErrorKind::dimension,
          std::string(what) + ": shape " + std::to_string(pred.bands) + "x" + std::to_string(pred.height) + "x" +
              std::to_string(pred.width) + " vs " + std::to_string(gt.bands) + "x" + std::to_string(gt.height) +
              "x" + std::to_string(gt.width));
}

std::vector<float> clamped(const SpectralCube& c) {
  std::vector<float> v(c.data);
  for (auto& x : v) x = std::clamp(x, 0.0f, 1.0f);
  return v;
}

double plane_mse(const float* a, const float* b, std::size_t n) {
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    s += d * d;
  }
  return s / static_cast<double>(n);
}

double psnr_of(double m) { return m == 0.0 ? kPsnrInfinity : 10.0 * std::log10(1.0 / m); }

std::vector<double> gaussian_window(std::size_t n, double sigma) {
  std::vector<double> g(n);
  const double c = (static_cast<double>(n) - 1.0) / 2.0;
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) s += (g[i] = std::exp(-0.5 * std::pow((i - c) / sigma, 2)));
  for (auto& v : g) v /= s;
  return g;
}

// Valid-mode separable filter of a plane with a 1-D kernel along both axes.
std::vector<double> filter_valid(const std::vector<double>& img, std::size_t h, std::size_t w,
                                 const std::vector<double>& k) {
  const std::size_t n = k.size(), oh = h - n + 1, ow = w - n + 1;
  std::vector<double> tmp(h * ow, 0.0), out(oh * ow, 0.0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0;
      for (std::size_t i = 0; i < n; ++i) s += k[i] * img[y * w + x + i];
      tmp[y * ow + x] = s;
    }
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0;
      for (std::size_t i = 0; i < n; ++i) s += k[i] * tmp[(y + i) * ow + x];
      out[y * ow + x] = s;
    }
  return out;
}

template <class F>
double per_band_mean(const SpectralCube& pred, const SpectralCube& gt, std::vector<double>* per_band, F&& f) {
  auto p = clamped(pred);
  const std::size_t n = pred.plane();
  double s = 0;
  if (per_band) per_band->clear();
  for (std::size_t l = 0; l < pred.bands; ++l) {
    const double v = f(p.data() + l * n, gt.data.data() + l * n);
    if (per_band) per_band->push_back(v);
    s += v;
  }
  return s / static_cast<double>(pred.bands);
}

}  // namespace

double mse(const SpectralCube& pred, const SpectralCube& gt) {
  check_pair(pred, gt, "mse");
  auto p = clamped(pred);
  return plane_mse(p.data(), gt.data.data(), p.size());
}

double psnr(const SpectralCube& pred, const SpectralCube& gt) { return psnr_of(mse(pred, gt)); }

double rmse(const SpectralCube& pred, const SpectralCube& gt) { return 255.0 * std::sqrt(mse(pred, gt)); }

double ssim_plane(const float* x, const float* y, std::size_t h, std::size_t w, const SsimOptions& opt) {
  require(h >= opt.window && w >= opt.window, ErrorKind::dimension,
          "ssim: image " + std::to_string(h) + "x" + std::to_string(w) + " smaller than the " +
              std::to_string(opt.window) + "x" + std::to_string(opt.window) + " window");
  const auto k = gaussian_window(opt.window, opt.sigma);
  const std::size_t n = h * w;
  std::vector<double> a(x, x + n), b(y, y + n), aa(n), bb(n), ab(n);
  for (std::size_t i = 0; i < n; ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  auto mu_a = filter_valid(a, h, w, k), mu_b = filter_valid(b, h, w, k);
  auto s_aa = filter_valid(aa, h, w, k), s_bb = filter_valid(bb, h, w, k), s_ab = filter_valid(ab, h, w, k);
  const double c1 = std::pow(opt.k1 * opt.dynamic_range, 2), c2 = std::pow(opt.k2 * opt.dynamic_range, 2);
  double total = 0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a[i], mb = mu_b[i];
    const double va = s_aa[i] - ma * ma, vb = s_bb[i] - mb * mb, cov = s_ab[i] - ma * mb;
    total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
  }
  return total / static_cast<double>(mu_a.size());
}

double ssim(const SpectralCube& pred, const SpectralCube& gt, std::vector<double>* per_band) {
  check_pair(pred, gt, "ssim");
  return per_band_mean(pred, gt, per_band,
                       [&](const float* p, const float* g) { return ssim_plane(p, g, gt.height, gt.width); });
}

double uiqi_plane(const float* x, const float* y, std::size_t h, std::size_t w, std::size_t win) {
  require(h >= win && w >= win, ErrorKind::dimension,
          "uiqi: image " + std::to_string(h) + "x" + std::to_string(w) + " smaller than the " + std::to_string(win) +
              "x" + std::to_string(win) + " window");
  const double n = static_cast<double>(win * win);
  double total = 0;
  std::size_t used = 0;
  // Two-pass moments per window so constant windows give exactly zero variance.
  for (std::size_t i = 0; i + win <= h; ++i)
    for (std::size_t j = 0; j + win <= w; ++j) {
      double mx = 0, my = 0;
      for (std::size_t u = 0; u < win; ++u)
        for (std::size_t v = 0; v < win; ++v) {
          mx += x[(i + u) * w + j + v];
          my += y[(i + u) * w + j + v];
        }
      mx /= n;
      my /= n;
      double vx = 0, vy = 0, cxy = 0;
      for (std::size_t u = 0; u < win; ++u)
        for (std::size_t v = 0; v < win; ++v) {
          const double dx = x[(i + u) * w + j + v] - mx, dy = y[(i + u) * w + j + v] - my;
          vx += dx * dx;
          vy += dy * dy;
          cxy += dx * dy;
        }
      // Unbiased (n-1) moments as in the original index definition.
      vx /= n - 1;
      vy /= n - 1;
      cxy /= n - 1;
      const double den = (vx + vy) * (mx * mx + my * my);
      if (den == 0.0) continue;
      total += 4.0 * cxy * mx * my / den;
      ++used;
    }
  return used ? total / static_cast<double>(used) : std::numeric_limits<double>::quiet_NaN();
}

double uiqi(const SpectralCube& pred, const SpectralCube& gt, std::vector<double>* per_band) {
  check_pair(pred, gt, "uiqi");
  return per_band_mean(pred, gt, per_band,
                       [&](const float* p, const float* g) { return uiqi_plane(p, g, gt.height, gt.width); });
}

MetricReport evaluate_metrics(const SpectralCube& pred, const SpectralCube& gt, bool per_band) {
  MetricReport r;
  const double m = mse(pred, gt);
  r.psnr_db = psnr_of(m);
  r.rmse_255 = 255.0 * std::sqrt(m);
  r.ssim = ssim(pred, gt, per_band ? &r.per_band_ssim : nullptr);
  r.uiqi = uiqi(pred, gt, per_band ? &r.per_band_uiqi : nullptr);
  if (per_band) {
    auto p = clamped(pred);
    const std::size_t n = pred.plane();
    for (std::size_t l = 0; l < pred.bands; ++l)
      r.per_band_psnr.push_back(psnr_of(plane_mse(p.data() + l * n, gt.data.data() + l * n, n)));
  }
  return r;
}

}  // namespace frn::metrics
