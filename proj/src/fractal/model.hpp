#pragma once

#include <cstdint>
#include <vector>

#include "fractal/reconstruct.hpp"

namespace frn::fractal {

struct ModelConfig {
  std::size_t bands = 32;
  std::size_t levels = 5;
  /// Children per invocation; 0 picks balanced per-level factors of `bands`.
  std::size_t branch = 0;
  std::size_t refs = 4;
  bool use_rgb = true;
  std::size_t base_width = 32;
  std::size_t depth = 2;
  std::size_t blocks_per_stage = 1;
  std::size_t d_state = 8;
  double alpha = 0.5;
  /// Children refine their parent's estimate instead of replacing it.
  bool residual = true;

  void validate() const;
  RecursionPlan plan() const;
  net::GeneratorConfig generator_config(std::size_t out_channels) const;
};

/// The full recursive model: one atomic generator per level and the shared
/// parameter store. levels == 1 is the one-shot baseline.
class FrnModel {
 public:
  FrnModel(const ModelConfig& config, std::uint64_t seed);
  FrnModel(const FrnModel&) = delete;
  FrnModel& operator=(const FrnModel&) = delete;

  Reconstruction forward(const Tensor& rgb, ssm::ScanContext& ctx) const;
  /// Evaluation-mode forward without graph recording.
  Tensor predict(const Tensor& rgb) const;

  const ModelConfig& config() const { return config_; }
  const RecursionPlan& plan() const { return plan_; }
  const std::vector<net::AtomicGenerator>& generators() const { return generators_; }
  /// Per-level invocation codes; undefined for single-invocation levels.
  const std::vector<Tensor>& codes() const { return codes_; }
  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }

 private:
  ModelConfig config_;
  RecursionPlan plan_;
  ParameterStore store_;
  std::vector<net::AtomicGenerator> generators_;
  std::vector<Tensor> codes_;
};

}  // namespace frn::fractal
