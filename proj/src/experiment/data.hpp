#pragma once

#include <filesystem>
#include <optional>

#include "experiment/config.hpp"
#include "simdata/cube.hpp"

namespace frn::experiment {

struct LoadedData {
  train::Dataset scenes;  // sorted by name
  /// CRF at the model's band count when one is known; drives the baseline.
  std::optional<simdata::CRF> crf;
};

/// Reads every scene of a directory: `<name>.frnc` cubes (with an optional
/// `<name>_rgb.frnc` companion) and subdirectories of per-band PNGs. PNG
/// scenes are resampled to `bands`; FRNC cubes must already match.
LoadedData load_dataset(const DataConfig& data, std::size_t bands);

/// Splits off the last `holdout` scenes.
std::pair<train::Dataset, train::Dataset> split_holdout(const train::Dataset& all, std::size_t holdout);

}  // namespace frn::experiment
