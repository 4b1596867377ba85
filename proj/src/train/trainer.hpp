#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "fractal/model.hpp"
#include "metrics/metrics.hpp"
#include "simdata/patches.hpp"
#include "train/checkpoint.hpp"

namespace frn::train {

struct TrainConfig {
  double lr0 = 4e-4;
  double lr_min = 1e-6;
  std::size_t batch = 32;
  std::size_t total_steps = 2000;
  std::size_t patch = 64;
  std::uint64_t seed = 0;
  std::size_t eval_every = 0;
  std::size_t checkpoint_every = 0;
  AdamOptions adam;
  bool deep_supervision = false;
  double deep_weight = 0.5;
  bool flips = true;

  void validate() const;
};

struct Scene {
  std::string name;
  simdata::SpectralCube cube;
  simdata::SpectralCube rgb;
};

using Dataset = std::vector<Scene>;

/// Patches for one step, drawn from a generator seeded by (seed, step) so a
/// resumed run sees the same data.
std::vector<simdata::Patch> sample_batch(const Dataset& data, std::size_t step, std::uint64_t seed,
                                         std::size_t batch, std::size_t patch, bool flips);

struct StepRecord {
  std::size_t step = 0;
  double lr = 0;
  double loss = 0;
  double grad_norm = 0;
  double wall_ms = 0;
  std::vector<double> epsilon;
};

class Trainer {
 public:
  Trainer(fractal::FrnModel& model, const TrainConfig& config, const Dataset& data);

  /// One optimization step at the current step index.
  StepRecord step();
  std::size_t current_step() const { return step_; }

  /// Mean L1 loss of the model on a batch without updating anything.
  double batch_loss(const std::vector<simdata::Patch>& batch, ssm::ScanContext& ctx, bool accumulate_grad);

  Checkpoint checkpoint(const std::string& config_json) const;
  void resume(const Checkpoint& ckpt);

  Adam& optimizer() { return adam_; }
  const TrainConfig& config() const { return config_; }

 private:
  fractal::FrnModel& model_;
  TrainConfig config_;
  const Dataset& data_;
  Adam adam_;
  std::size_t step_ = 0;
};

struct TileOptions {
  std::size_t tile = 64;
  std::size_t overlap = 8;
};

/// Full-image inference from overlapping tiles blended with linear ramps.
simdata::SpectralCube predict_tiled(const fractal::FrnModel& model, const simdata::SpectralCube& rgb,
                                    const TileOptions& opt = {});

struct SceneReport {
  std::string name;
  metrics::MetricReport metrics;
};

struct EvalReport {
  metrics::MetricReport mean;
  std::vector<SceneReport> scenes;
};

/// Metrics averaged over scenes.
EvalReport aggregate(std::vector<SceneReport> scenes);

EvalReport evaluate(const fractal::FrnModel& model, const Dataset& data, const TileOptions& opt = {},
                    bool per_band = false);

}  // namespace frn::train
