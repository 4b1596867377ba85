#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fractal/model.hpp"
#include "train/trainer.hpp"

namespace frn::experiment {

struct DataConfig {
  /// Directory of .frnc cubes and/or PNG band folders.
  std::string dir;
  /// The last `holdout` scenes in name order are kept for evaluation.
  std::size_t holdout = 2;
  /// Optional CRF CSV; falls back to <dir>/crf.csv, then a Gaussian CRF.
  std::string crf;
};

struct EvalConfig {
  std::size_t tile = 64;
  std::size_t overlap = 8;
  bool per_band = false;
  /// Pixels exported as spectral curves.
  std::size_t probes = 4;
};

struct ExperimentConfig {
  fractal::ModelConfig model;
  train::TrainConfig train;
  DataConfig data;
  EvalConfig eval;
  std::string out = "runs/frn";
  /// Checkpoint to continue from.
  std::string resume;
  /// Zeroes wall-clock fields so reruns are byte-identical.
  bool deterministic = false;

  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& config);
/// Strict: unknown keys and mistyped values raise a config error naming the key.
ExperimentConfig from_json(const nlohmann::json& doc);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Applies dotted-key overrides such as {"train.levels", "1"}. Values are
/// parsed according to the type of the field they replace.
void apply_overrides(ExperimentConfig& config, const std::vector<std::pair<std::string, std::string>>& overrides);

/// All dotted keys in document order.
std::vector<std::string> config_keys();

}  // namespace frn::experiment
