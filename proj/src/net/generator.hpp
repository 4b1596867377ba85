#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "numerics/params.hpp"
#include "ssm/bssm.hpp"

namespace frn::net {

struct GeneratorConfig {
  std::size_t in_channels = 7;  // S references + RGB
  std::size_t out_channels = 2;
  std::size_t base_width = 32;
  std::size_t depth = 2;
  std::size_t blocks_per_stage = 1;
  std::size_t d_state = 8;
  double alpha = 0.5;

  void validate() const;
  /// Spatial sizes must be multiples of this.
  std::size_t spatial_multiple() const { return std::size_t{1} << depth; }
};

/// Exact learnable-scalar count of a generator with this config.
std::size_t param_count(const GeneratorConfig& config);

/// U-Net of BSSM blocks mapping [in_channels,H,W] to [out_channels,H,W].
/// Parameters live in a caller-owned store so several generators can share
/// one optimizer and checkpoint.
class AtomicGenerator {
 public:
  AtomicGenerator(const GeneratorConfig& config, ParameterStore& store, const std::string& prefix,
                  std::mt19937_64& rng);

  /// `shift` ([base_width] or undefined) is added to every pixel after the stem.
  Tensor forward(const Tensor& cond, ssm::ScanContext& ctx, const Tensor& shift = Tensor()) const;
  /// Evaluation-mode forward (epsilon = alpha / 2).
  Tensor forward(const Tensor& cond) const;

  const GeneratorConfig& config() const { return config_; }
  const std::string& prefix() const { return prefix_; }

 private:
  struct Conv {
    Tensor weight, bias;
  };
  Tensor block(const Tensor& x, const ssm::BssmParams& p, ssm::ScanContext& ctx) const;

  GeneratorConfig config_;
  std::string prefix_;
  Conv embed_, head_;
  std::vector<Conv> down_, fuse_;
  std::vector<std::vector<ssm::BssmParams>> enc_blocks_, dec_blocks_;
  std::vector<ssm::BssmParams> mid_blocks_;
};

}  // namespace frn::net
