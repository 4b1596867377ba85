#include <png.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "simdata/io.hpp"
#include "simdata/patches.hpp"
#include "simdata/scene.hpp"

using namespace frn;
using namespace frn::simdata;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("frn_test_simdata_" + std::to_string(::getpid()) + "_" + name);
  fs::remove_all(p);
  return p;
}

SpectralCube random_cube(std::size_t l, std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  SpectralCube c(l, h, w);
  for (auto& v : c.data) v = u(rng);
  return c;
}

// Top singular values of the L x P unfolding via power iteration on the Gram
// matrix with deflation.
std::vector<double> singular_values(const SpectralCube& c, std::size_t count) {
  const std::size_t l = c.bands, p = c.plane();
  std::vector<double> g(l * l, 0.0);
  for (std::size_t i = 0; i < l; ++i)
    for (std::size_t j = 0; j < l; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < p; ++k) s += double(c.data[i * p + k]) * double(c.data[j * p + k]);
      g[i * l + j] = s;
    }
  std::vector<double> out;
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n01;
  for (std::size_t r = 0; r < count; ++r) {
    std::vector<double> v(l), nv(l);
    for (auto& x : v) x = n01(rng);
    double lambda = 0;
    for (int it = 0; it < 3000; ++it) {
      for (std::size_t i = 0; i < l; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < l; ++j) s += g[i * l + j] * v[j];
        nv[i] = s;
      }
      double norm = 0;
      for (double x : nv) norm += x * x;
      norm = std::sqrt(norm);
      if (norm == 0) break;
      for (std::size_t i = 0; i < l; ++i) v[i] = nv[i] / norm;
      lambda = norm;
    }
    out.push_back(std::sqrt(std::max(lambda, 0.0)));
    for (std::size_t i = 0; i < l; ++i)
      for (std::size_t j = 0; j < l; ++j) g[i * l + j] -= lambda * v[i] * v[j];
  }
  return out;
}

void write_png(const fs::path& path, const std::vector<std::uint16_t>& px, std::size_t h, std::size_t w, int depth) {
  FILE* fp = std::fopen(path.c_str(), "wb");
  REQUIRE(fp);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), depth, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<unsigned char> row(w * (depth / 8));
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      std::uint16_t v = px[y * w + x];
      if (depth == 16) {
        row[2 * x] = static_cast<unsigned char>(v >> 8);
        row[2 * x + 1] = static_cast<unsigned char>(v & 0xff);
      } else {
        row[x] = static_cast<unsigned char>(v);
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

std::vector<char> read_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

void write_bytes(const fs::path& p, const std::vector<char>& b) {
  std::ofstream os(p, std::ios::binary);
  os.write(b.data(), static_cast<std::streamsize>(b.size()));
}

ErrorKind load_error(const fs::path& p) {
  try {
    load_cube(p);
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("load_cube accepted a corrupt file");
  return ErrorKind::io;
}

}  // namespace

TEST_CASE("gaussian CRF") {
  CRF crf = gaussian_crf(32);
  crf.validate();
  auto wl = linear_wavelengths(32);
  const double centers[3] = {600, 540, 460};
  for (std::size_t c = 0; c < 3; ++c) {
    double s = 0;
    std::size_t best = 0;
    for (std::size_t l = 0; l < 32; ++l) {
      s += crf.at(l, c);
      CHECK(crf.at(l, c) >= 0.0);
      if (crf.at(l, c) > crf.at(best, c)) best = l;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
    std::size_t nearest = 0;
    for (std::size_t l = 0; l < 32; ++l)
      if (std::abs(wl[l] - centers[c]) < std::abs(wl[nearest] - centers[c])) nearest = l;
    CHECK(best == nearest);
  }
  CRF flat = gaussian_crf(31, {600, 540, 460}, 1e6);
  for (double v : flat.phi) CHECK(std::abs(v - 1.0 / 31) < 1e-6);
  CHECK_THROWS_AS(gaussian_crf(2), Error);
}

TEST_CASE("projection: loop and matrix forms agree in double") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0, 1);
  std::uniform_int_distribution<std::size_t> dim(1, 12);
  double worst = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t l = 3 + dim(rng), p = dim(rng) * dim(rng);
    CRF crf = gaussian_crf(l, {600, 540, 460}, 20.0 + 10.0 * double(trial % 7));
    std::vector<double> cube(l * p);
    for (auto& v : cube) v = u(rng);
    auto matrix = crf_project(cube, l, crf);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t k = 0; k < p; ++k) {
        double x = 0;
        for (std::size_t i = 0; i < l; ++i) x += crf.at(i, c) * cube[i * p + k];
        worst = std::max(worst, std::abs(x - matrix[c * p + k]));
      }
  }
  CHECK(worst < 1e-12);

  SpectralCube c = random_cube(16, 5, 7, 3);
  CRF crf = gaussian_crf(16);
  SpectralCube a = crf_project(c, crf), b = crf_project_loop(c, crf);
  CHECK(a.bands == 3);
  for (std::size_t i = 0; i < a.data.size(); ++i) CHECK(a.data[i] == doctest::Approx(b.data[i]).epsilon(1e-6));

  SpectralCube konst(16, 4, 4, 0.375f);
  for (float v : crf_project(konst, crf).data) CHECK(v == doctest::Approx(0.375).epsilon(1e-6));

  CRF delta;
  delta.bands = 16;
  delta.phi.assign(48, 0.0);
  delta.phi[5 * 3 + 0] = delta.phi[9 * 3 + 1] = delta.phi[2 * 3 + 2] = 1.0;
  SpectralCube sel = crf_project(c, delta);
  for (std::size_t k = 0; k < c.plane(); ++k) {
    CHECK(sel.data[k] == c.data[5 * c.plane() + k]);
    CHECK(sel.data[c.plane() + k] == c.data[9 * c.plane() + k]);
    CHECK(sel.data[2 * c.plane() + k] == c.data[2 * c.plane() + k]);
  }
  CHECK_THROWS_AS(crf_project(random_cube(8, 2, 2, 0), crf), Error);
}

TEST_CASE("synthetic scenes") {
  SceneSpec one;
  one.endmembers = 1;
  SpectralCube c1 = synth_scene(one, 32, 24, 24);
  auto s1 = singular_values(c1, 2);
  CHECK(s1[1] < 1e-6 * s1[0]);

  SceneSpec three;
  three.endmembers = 3;
  three.seed = 4;
  SpectralCube c3 = synth_scene(three, 32, 24, 24);
  auto s3 = singular_values(c3, 4);
  CHECK(s3[2] > 1e-3 * s3[0]);
  CHECK(s3[3] < 1e-6 * s3[0]);

  SceneSpec def;
  def.seed = 9;
  SpectralCube a = synth_scene(def, 32, 20, 20), b = synth_scene(def, 32, 20, 20);
  CHECK(a.data == b.data);
  CHECK(a.wavelengths.size() == 32);
  for (float v : a.data) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  def.seed = 10;
  CHECK(synth_scene(def, 32, 20, 20).data != a.data);

  auto ab = abundance_maps(4, 10, 10, 2);
  for (std::size_t p = 0; p < 100; ++p) {
    double s = 0;
    for (std::size_t e = 0; e < 4; ++e) {
      CHECK(ab[e * 100 + p] >= 0.0);
      s += ab[e * 100 + p];
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("FRNC roundtrip and corruption") {
  fs::path dir = scratch("frnc");
  fs::create_directories(dir);
  SpectralCube c = random_cube(5, 7, 3, 8);
  c.data[0] = -0.0f;
  c.data[1] = 1e-30f;
  fs::path p = dir / "c.frnc";
  save_cube(p, c);
  SpectralCube r = load_cube(p);
  CHECK(r.bands == 5);
  CHECK(r.height == 7);
  CHECK(r.width == 3);
  CHECK(std::memcmp(r.data.data(), c.data.data(), c.data.size() * 4) == 0);
  CHECK(r.wavelengths.empty());

  c.wavelengths = {400, 450, 500, 550, 600};
  save_cube(p, c);
  CHECK(load_cube(p).wavelengths == c.wavelengths);
  auto bytes = read_bytes(p);
  CHECK(bytes.size() == 4 + 4 + 12 + 1 + 5 * 4 + 5 * 7 * 3 * 4);
  CHECK(std::string(bytes.data(), 4) == "FRNC");

  auto bad = bytes;
  bad[0] = 'X';
  write_bytes(dir / "magic.frnc", bad);
  CHECK(load_error(dir / "magic.frnc") == ErrorKind::format);

  bad = bytes;
  bad.resize(bytes.size() - 3);
  write_bytes(dir / "short.frnc", bad);
  CHECK(load_error(dir / "short.frnc") == ErrorKind::truncated);

  bad = bytes;
  bad.resize(10);
  write_bytes(dir / "header.frnc", bad);
  CHECK(load_error(dir / "header.frnc") == ErrorKind::truncated);

  bad = bytes;
  for (int i = 8; i < 20; ++i) bad[i] = static_cast<char>(0xff);
  write_bytes(dir / "huge.frnc", bad);
  CHECK(load_error(dir / "huge.frnc") == ErrorKind::overflow);

  bad = bytes;
  bad[4] = 2;
  write_bytes(dir / "version.frnc", bad);
  CHECK(load_error(dir / "version.frnc") == ErrorKind::format);

  CHECK(load_error(dir / "missing.frnc") == ErrorKind::io);
  fs::remove_all(dir);
}

TEST_CASE("CRF CSV roundtrip") {
  fs::path dir = scratch("crf");
  fs::create_directories(dir);
  CRF crf = gaussian_crf(12);
  save_crf_csv(dir / "crf.csv", crf);
  CRF back = load_crf_csv(dir / "crf.csv");
  REQUIRE(back.bands == 12);
  for (std::size_t i = 0; i < crf.phi.size(); ++i) CHECK(back.phi[i] == crf.phi[i]);
  std::ofstream(dir / "bad.csv") << "l,r,g,b\n1,2,3,4\n";
  CHECK_THROWS_AS(load_crf_csv(dir / "bad.csv"), Error);
  fs::remove_all(dir);
}

TEST_CASE("PNG band directories") {
  fs::path dir = scratch("png");
  fs::create_directories(dir);
  const std::size_t h = 64, w = 64;
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> u16(0, 65535);
  std::vector<std::vector<std::uint16_t>> bands;
  for (int b = 0; b < 31; ++b) {
    std::vector<std::uint16_t> px(h * w);
    for (auto& v : px) v = static_cast<std::uint16_t>(u16(rng));
    px[0] = 0xFFFF;
    px[1] = 0x8000;
    char name[32];
    std::snprintf(name, sizeof name, "band_%02d.png", b);
    write_png(dir / name, px, h, w, 16);
    bands.push_back(px);
  }
  SpectralCube c = load_png_band_dir(dir);
  CHECK(c.bands == 31);
  CHECK(c.height == 64);
  CHECK(c.width == 64);
  CHECK(*std::max_element(c.data.begin(), c.data.end()) <= 1.0f);
  CHECK(c.at(3, 0, 0) == 1.0f);
  CHECK(c.at(3, 0, 1) == static_cast<float>(32768.0 / 65535.0));
  CHECK(c.at(17, 5, 9) == static_cast<float>(bands[17][5 * w + 9] / 65535.0));

  fs::path single = scratch("png1");
  fs::create_directories(single);
  write_png(single / "only.png", std::vector<std::uint16_t>(6, 51), 2, 3, 8);
  SpectralCube s = load_png_band_dir(single);
  CHECK(s.bands == 1);
  CHECK(s.at(0, 1, 2) == static_cast<float>(51.0 / 255.0));

  write_png(single / "other.png", std::vector<std::uint16_t>(4, 1), 2, 2, 8);
  try {
    load_png_band_dir(single);
    FAIL("expected a data error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::data);
  }
  fs::remove(single / "other.png");
  write_png(single / "other.png", std::vector<std::uint16_t>(6, 1), 2, 3, 16);
  CHECK_THROWS_AS(load_png_band_dir(single), Error);

  std::vector<float> plane{0.0f, 1.0f, static_cast<float>(32768.0 / 65535.0), 2.0f, -1.0f, 0.25f};
  fs::path out = scratch("png2");
  fs::create_directories(out);
  save_png16(out / "p.png", plane.data(), 2, 3);
  SpectralCube back = load_png_band_dir(out);
  CHECK(back.data[1] == 1.0f);
  CHECK(back.data[2] == plane[2]);
  CHECK(back.data[3] == 1.0f);
  CHECK(back.data[4] == 0.0f);
  save_pgm16(out / "p.pgm", plane.data(), 2, 3);
  auto pgm = read_bytes(out / "p.pgm");
  CHECK(std::string(pgm.data(), 2) == "P5");
  fs::remove_all(dir);
  fs::remove_all(single);
  fs::remove_all(out);
}

TEST_CASE("band resampling") {
  SpectralCube c = random_cube(7, 3, 4, 2);
  CHECK(resample_bands(c, 7).data == c.data);

  SpectralCube lin(31, 2, 2);
  for (std::size_t l = 0; l < 31; ++l)
    for (std::size_t k = 0; k < 4; ++k) lin.data[l * 4 + k] = 0.1f + 0.02f * float(l) + 0.01f * float(k);
  SpectralCube up = resample_bands(lin, 32);
  for (std::size_t l = 0; l < 32; ++l) {
    const double pos = double(l) * 30.0 / 31.0;
    for (std::size_t k = 0; k < 4; ++k) CHECK(up.data[l * 4 + k] == doctest::Approx(0.1 + 0.02 * pos + 0.01 * k).epsilon(1e-5));
  }

  // Gaussian-mixture spectra over 400..700 nm.
  SpectralCube smooth(31, 8, 8);
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> centre(400, 700), width(30, 80), amp(0.1, 0.4);
  for (std::size_t k = 0; k < smooth.plane(); ++k) {
    double mu[3], sd[3], a[3];
    for (int g = 0; g < 3; ++g) mu[g] = centre(rng), sd[g] = width(rng), a[g] = amp(rng);
    for (std::size_t l = 0; l < 31; ++l) {
      const double wl = 400.0 + 10.0 * double(l);
      double v = 0;
      for (int g = 0; g < 3; ++g) v += a[g] * std::exp(-0.5 * std::pow((wl - mu[g]) / sd[g], 2));
      smooth.data[l * smooth.plane() + k] = static_cast<float>(v);
    }
  }
  SpectralCube round = resample_bands(resample_bands(smooth, 32), 31);
  double worst = 0;
  for (std::size_t i = 0; i < smooth.data.size(); ++i) worst = std::max(worst, double(std::abs(round.data[i] - smooth.data[i])));
  CHECK(worst < 0.01);
}

TEST_CASE("patch extraction") {
  SpectralCube cube = random_cube(8, 20, 24, 1);
  SpectralCube rgb = crf_project(cube, gaussian_crf(8));
  auto patches = crop_patches(cube, rgb, 16, 10, 3);
  auto again = crop_patches(cube, rgb, 16, 10, 3);
  REQUIRE(patches.size() == 10);
  bool any_flip = false;
  for (std::size_t i = 0; i < patches.size(); ++i) {
    const Patch& p = patches[i];
    CHECK(p.cube.bands == 8);
    CHECK(p.cube.height == 16);
    CHECK(p.rgb.bands == 3);
    CHECK(p.rgb.width == 16);
    CHECK(p.cube.data == again[i].cube.data);
    any_flip = any_flip || p.flip_h || p.flip_v;
    for (std::size_t l = 0; l < 8; ++l)
      for (std::size_t y = 0; y < 16; ++y)
        for (std::size_t x = 0; x < 16; ++x) {
          std::size_t sy = p.flip_v ? 15 - y : y, sx = p.flip_h ? 15 - x : x;
          CHECK(p.cube.at(l, y, x) == cube.at(l, p.y + sy, p.x + sx));
          if (l < 3) CHECK(p.rgb.at(l, y, x) == rgb.at(l, p.y + sy, p.x + sx));
        }
  }
  CHECK(any_flip);
  CHECK_THROWS_AS(crop_patches(cube, rgb, 21, 1, 0), Error);
}

TEST_CASE("pseudo-inverse upsampling recovers the row space") {
  SpectralCube c = random_cube(16, 4, 4, 6);
  CRF crf = gaussian_crf(16);
  SpectralCube rgb = crf_project(c, crf);
  SpectralCube up = pinv_upsample(rgb, crf);
  SpectralCube again = crf_project(up, crf);
  for (std::size_t i = 0; i < rgb.data.size(); ++i) CHECK(again.data[i] == doctest::Approx(rgb.data[i]).epsilon(1e-4));
}
