#include "simdata/io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <memory>
#include <sstream>

namespace frn::simdata {

namespace {

constexpr char kCubeMagic[4] = {'F', 'R', 'N', 'C'};
constexpr std::uint32_t kCubeVersion = 1;
// Refuse headers describing more than 2^31 values.
constexpr std::uint64_t kMaxValues = std::uint64_t{1} << 31;

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is, const std::string& what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (is.gcount() != static_cast<std::streamsize>(sizeof(T))) fail(ErrorKind::truncated, what + ": truncated header");
  return v;
}

std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) fail(ErrorKind::io, "cannot write " + path.string());
  return os;
}

}  // namespace

void save_cube(const std::filesystem::path& path, const SpectralCube& cube) {
  cube.validate();
  auto os = open_out(path);
  os.write(kCubeMagic, 4);
  put<std::uint32_t>(os, kCubeVersion);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(cube.bands));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(cube.height));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(cube.width));
  put<std::uint8_t>(os, cube.wavelengths.empty() ? 0 : 1);
  if (!cube.wavelengths.empty())
    os.write(reinterpret_cast<const char*>(cube.wavelengths.data()),
             static_cast<std::streamsize>(cube.wavelengths.size() * sizeof(float)));
  os.write(reinterpret_cast<const char*>(cube.data.data()), static_cast<std::streamsize>(cube.data.size() * sizeof(float)));
  if (!os) fail(ErrorKind::io, "write failed: " + path.string());
}

SpectralCube load_cube(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) fail(ErrorKind::io, "cannot open " + path.string());
  const std::string what = "FRNC " + path.string();
  char magic[4] = {};
  is.read(magic, 4);
  if (is.gcount() != 4) fail(ErrorKind::truncated, what + ": truncated header");
  if (std::memcmp(magic, kCubeMagic, 4) != 0) fail(ErrorKind::format, what + ": bad magic");
  const auto version = get<std::uint32_t>(is, what);
  if (version != kCubeVersion) fail(ErrorKind::format, what + ": unsupported version " + std::to_string(version));
  const std::uint64_t l = get<std::uint32_t>(is, what), h = get<std::uint32_t>(is, what),
                      w = get<std::uint32_t>(is, what);
  const auto has_wl = get<std::uint8_t>(is, what);
  if (has_wl > 1) fail(ErrorKind::format, what + ": invalid wavelength flag");
  if (l == 0 || h == 0 || w == 0 || l * h > kMaxValues || l * h * w > kMaxValues)
    fail(ErrorKind::overflow, what + ": dimensions " + std::to_string(l) + "x" + std::to_string(h) + "x" +
                                  std::to_string(w) + " out of range");
  SpectralCube cube;
  cube.bands = l;
  cube.height = h;
  cube.width = w;
  if (has_wl) {
    cube.wavelengths.resize(l);
    is.read(reinterpret_cast<char*>(cube.wavelengths.data()), static_cast<std::streamsize>(l * sizeof(float)));
    if (is.gcount() != static_cast<std::streamsize>(l * sizeof(float)))
      fail(ErrorKind::truncated, what + ": truncated wavelengths");
  }
  // Compare the declared payload with what is actually left before allocating.
  const auto here = is.tellg();
  is.seekg(0, std::ios::end);
  const auto remaining = static_cast<std::uint64_t>(is.tellg() - here);
  is.seekg(here);
  const std::uint64_t need = l * h * w * sizeof(float);
  if (remaining < need)
    fail(ErrorKind::truncated, what + ": payload has " + std::to_string(remaining) + " bytes, header declares " +
                                   std::to_string(need));
  if (remaining > need) fail(ErrorKind::format, what + ": trailing bytes after payload");
  cube.data.resize(l * h * w);
  is.read(reinterpret_cast<char*>(cube.data.data()), static_cast<std::streamsize>(need));
  cube.validate();
  return cube;
}

void save_crf_csv(const std::filesystem::path& path, const CRF& crf) {
  crf.validate();
  std::ofstream os(path);
  if (!os) fail(ErrorKind::io, "cannot write " + path.string());
  os.precision(17);
  os << "wavelength_nm,r,g,b\n";
  for (std::size_t l = 0; l < crf.bands; ++l)
    os << crf.wavelengths[l] << ',' << crf.at(l, 0) << ',' << crf.at(l, 1) << ',' << crf.at(l, 2) << '\n';
}

CRF load_crf_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorKind::io, "cannot open " + path.string());
  std::string line;
  std::getline(is, line);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "wavelength_nm,r,g,b") fail(ErrorKind::format, path.string() + ": expected header wavelength_nm,r,g,b");
  CRF crf;
  std::size_t row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    double wl, r, g, b;
    if (!(ls >> wl >> r >> g >> b)) fail(ErrorKind::format, path.string() + ": malformed row " + std::to_string(row));
    crf.wavelengths.push_back(wl);
    crf.phi.insert(crf.phi.end(), {r, g, b});
  }
  crf.bands = crf.wavelengths.size();
  crf.validate();
  return crf;
}

namespace {

struct PngImage {
  std::size_t width = 0, height = 0;
  int bit_depth = 0;
  std::vector<float> values;
};

PngImage read_png_gray(const std::filesystem::path& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!fp) fail(ErrorKind::io, "cannot open " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    fail(ErrorKind::format, path.string() + ": not a PNG file");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) fail(ErrorKind::io, "libpng initialization failed");
  PngImage img;
  std::vector<png_bytep> rows;
  std::vector<png_byte> buf;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::format, path.string() + ": corrupt PNG data");
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  img.bit_depth = png_get_bit_depth(png, info);
  img.width = png_get_image_width(png, info);
  img.height = png_get_image_height(png, info);
  if (color != PNG_COLOR_TYPE_GRAY || (img.bit_depth != 8 && img.bit_depth != 16)) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::data, path.string() + ": expected 8- or 16-bit grayscale");
  }
  if (img.bit_depth == 16) png_set_swap(png);  // host-order 16-bit samples
  png_read_update_info(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  buf.resize(stride * img.height);
  rows.resize(img.height);
  for (std::size_t y = 0; y < img.height; ++y) rows[y] = buf.data() + y * stride;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  img.values.resize(img.width * img.height);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      if (img.bit_depth == 8) {
        img.values[y * img.width + x] = static_cast<float>(rows[y][x] / 255.0);
      } else {
        std::uint16_t v;
        std::memcpy(&v, rows[y] + 2 * x, 2);
        img.values[y * img.width + x] = static_cast<float>(v / 65535.0);
      }
    }
  return img;
}

std::uint16_t to_u16(float v) {
  const double c = std::clamp(static_cast<double>(v), 0.0, 1.0);
  return static_cast<std::uint16_t>(std::lround(c * 65535.0));
}

}  // namespace

SpectralCube load_png_band_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) fail(ErrorKind::io, dir.string() + " is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    if (e.is_regular_file() && ext == ".png") files.push_back(e.path());
  }
  if (files.empty()) fail(ErrorKind::data, dir.string() + ": no PNG files");
  std::sort(files.begin(), files.end());
  SpectralCube cube;
  int depth = 0;
  for (const auto& f : files) {
    PngImage img = read_png_gray(f);
    if (cube.bands == 0) {
      cube.height = img.height;
      cube.width = img.width;
      depth = img.bit_depth;
    } else if (img.height != cube.height || img.width != cube.width) {
      fail(ErrorKind::data, f.string() + ": size " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                                " differs from " + std::to_string(cube.width) + "x" + std::to_string(cube.height));
    } else if (img.bit_depth != depth) {
      fail(ErrorKind::data, f.string() + ": bit depth " + std::to_string(img.bit_depth) + " differs from " +
                                std::to_string(depth));
    }
    cube.data.insert(cube.data.end(), img.values.begin(), img.values.end());
    ++cube.bands;
  }
  return cube;
}

void save_pgm16(const std::filesystem::path& path, const float* plane, std::size_t height, std::size_t width) {
  auto os = open_out(path);
  os << "P5\n" << width << ' ' << height << "\n65535\n";
  std::vector<unsigned char> buf(2 * width * height);
  for (std::size_t i = 0; i < width * height; ++i) {
    const std::uint16_t v = to_u16(plane[i]);
    buf[2 * i] = static_cast<unsigned char>(v >> 8);  // PGM is big-endian
    buf[2 * i + 1] = static_cast<unsigned char>(v & 0xFF);
  }
  os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

void save_png16(const std::filesystem::path& path, const float* plane, std::size_t height, std::size_t width) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) fail(ErrorKind::io, "cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) fail(ErrorKind::io, "libpng initialization failed");
  std::vector<png_byte> buf(2 * width * height);
  for (std::size_t i = 0; i < width * height; ++i) {
    const std::uint16_t v = to_u16(plane[i]);
    buf[2 * i] = static_cast<png_byte>(v >> 8);
    buf[2 * i + 1] = static_cast<png_byte>(v & 0xFF);
  }
  std::vector<png_bytep> rows(height);
  for (std::size_t y = 0; y < height; ++y) rows[y] = buf.data() + 2 * y * width;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorKind::io, "PNG encoding failed: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 16,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace frn::simdata
