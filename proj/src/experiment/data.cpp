#include "experiment/data.hpp"

#include <algorithm>

#include "simdata/io.hpp"

namespace frn::experiment {

namespace fs = std::filesystem;

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

bool has_pngs(const fs::path& dir) {
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") return true;
  return false;
}

simdata::CRF crf_for(const std::optional<simdata::CRF>& loaded, std::size_t bands, const std::string& scene) {
  if (!loaded) return simdata::gaussian_crf(bands);
  require(loaded->bands == bands, ErrorKind::data,
          "scene '" + scene + "' has " + std::to_string(bands) + " bands but the CRF has " +
              std::to_string(loaded->bands));
  return *loaded;
}

}  // namespace

LoadedData load_dataset(const DataConfig& data, std::size_t bands) {
  require(!data.dir.empty(), ErrorKind::config, "data.dir is not set");
  const fs::path dir(data.dir);
  require(fs::is_directory(dir), ErrorKind::data, "data directory " + dir.string() + " does not exist");

  std::optional<simdata::CRF> file_crf;
  fs::path crf_path = data.crf.empty() ? dir / "crf.csv" : fs::path(data.crf);
  if (!data.crf.empty() || fs::exists(crf_path)) {
    try {
      file_crf = simdata::load_crf_csv(crf_path);
    } catch (const Error& e) {
      fail(ErrorKind::data, "cannot load CRF " + crf_path.string() + ": " + e.what());
    }
  }

  std::vector<fs::path> entries;
  for (const auto& e : fs::directory_iterator(dir)) entries.push_back(e.path());
  std::sort(entries.begin(), entries.end());

  LoadedData out;
  for (const auto& p : entries) {
    const std::string file = p.filename().string();
    train::Scene s;
    try {
      if (fs::is_regular_file(p) && p.extension() == ".frnc" && !ends_with(file, "_rgb.frnc")) {
        s.name = p.stem().string();
        s.cube = simdata::load_cube(p);
        require(s.cube.bands == bands, ErrorKind::data,
                "band mismatch: scene '" + s.name + "' has " + std::to_string(s.cube.bands) +
                    " bands, model expects " + std::to_string(bands));
        const fs::path companion = dir / (s.name + "_rgb.frnc");
        if (fs::exists(companion)) {
          s.rgb = simdata::load_cube(companion);
          require(s.rgb.bands == 3 && s.rgb.height == s.cube.height && s.rgb.width == s.cube.width,
                  ErrorKind::data, "RGB companion of '" + s.name + "' does not match its cube");
        } else {
          s.rgb = simdata::crf_project(s.cube, crf_for(file_crf, s.cube.bands, s.name));
        }
      } else if (fs::is_directory(p) && has_pngs(p)) {
        s.name = file;
        simdata::SpectralCube native = simdata::load_png_band_dir(p);
        s.rgb = simdata::crf_project(native, crf_for(file_crf, native.bands, s.name));
        s.cube = native.bands == bands ? std::move(native) : simdata::resample_bands(native, bands);
      } else {
        continue;
      }
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::config) throw;
      fail(ErrorKind::data, e.what());
    }
    out.scenes.push_back(std::move(s));
  }
  require(!out.scenes.empty(), ErrorKind::data, "no scenes found in " + dir.string());
  if (file_crf && file_crf->bands == bands) out.crf = file_crf;
  else if (!file_crf) out.crf = simdata::gaussian_crf(bands);
  return out;
}

std::pair<train::Dataset, train::Dataset> split_holdout(const train::Dataset& all, std::size_t holdout) {
  require(holdout < all.size(), ErrorKind::data,
          "holdout of " + std::to_string(holdout) + " leaves no training scenes out of " +
              std::to_string(all.size()));
  const auto cut = all.begin() + static_cast<std::ptrdiff_t>(all.size() - holdout);
  return {train::Dataset(all.begin(), cut), train::Dataset(cut, all.end())};
}

}  // namespace frn::experiment
