#pragma once

#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "experiment/config.hpp"

namespace frn::experiment {

/// Receives one human-readable progress line at a time.
using LogSink = std::function<void(const std::string&)>;

struct SynthOptions {
  std::size_t scenes = 10;
  std::size_t bands = 32;
  std::size_t size = 96;
  std::uint64_t seed = 0;
  std::size_t endmembers = 4;
  std::string out;
};

/// Writes scene_NNN.frnc cubes, their scene_NNN_rgb.frnc projections and
/// crf.csv. Returns the list of files written.
nlohmann::json cmd_synth(const SynthOptions& opt, const LogSink& log = {});

/// Trains and evaluates one run under config.out:
///   config.json  merged config
///   log.jsonl    one record per step or evaluation
///   ckpt/        step_NNNNNN.frnw and final.frnw
///   report.json  held-out metrics and the pseudo-inverse baseline
///   img/         exports for the first evaluation scene
nlohmann::json cmd_train(const ExperimentConfig& config, const LogSink& log = {});

struct EvalOptions {
  std::string checkpoint;
  /// Overrides the data directory stored with the checkpoint.
  std::string data;
  std::string out;
  /// Evaluate only the last N scenes; 0 means every scene.
  std::size_t holdout = 0;
  std::size_t tile = 64;
  std::size_t overlap = 8;
  bool per_band = false;
  std::size_t probes = 4;
};

/// Writes metrics.json, per-band PGM/PNG images of prediction, ground truth
/// and |residual| under img/<scene>/, and spectral curves under curves/.
nlohmann::json cmd_eval(const EvalOptions& opt, const LogSink& log = {});

struct AblateOptions {
  /// alpha, levels or refs.
  std::string axis;
  /// Empty selects the default rows for the axis.
  std::vector<std::string> values;
  ExperimentConfig base;
};

/// One run per row under base.out/<axis>/<row>, then table.md, table.csv and
/// ablation.json in base.out/<axis>.
nlohmann::json cmd_ablate(const AblateOptions& opt, const LogSink& log = {});

/// Pixel-aligned exports of one scene: per band pred/gt/|residual| as 16-bit
/// PGM and PNG, and `probes` spectral-curve CSVs.
void export_scene(const std::filesystem::path& img_dir, const std::filesystem::path& curve_dir,
                  const std::string& name, const simdata::SpectralCube& pred, const simdata::SpectralCube& gt,
                  std::size_t probes);

/// Evenly spread probe pixels along the main diagonal.
std::vector<std::pair<std::size_t, std::size_t>> probe_pixels(std::size_t height, std::size_t width,
                                                              std::size_t count);

/// Integer exit status for an error kind: 2 config, 3 data, 4 numeric.
int exit_code(ErrorKind kind);

}  // namespace frn::experiment
