#pragma once

#include <array>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "numerics/params.hpp"
#include "ssm/scan.hpp"

namespace frn::ssm {

/// How the band-mask threshold is chosen for each cross-scan invocation.
struct ScanContext {
  enum class Mode { train, eval };
  Mode mode = Mode::eval;
  double alpha = 0.5;
  /// Source of training-time draws; required in train mode when alpha > 0.
  std::mt19937_64* rng = nullptr;
  /// Every threshold used is appended here when set.
  std::vector<double>* epsilon_log = nullptr;
  /// Forces a fixed threshold regardless of mode.
  std::optional<double> epsilon_override;

  /// Train: uniform in [0, alpha]. Eval: alpha / 2.
  double next_epsilon();
};

/// One directional scan head: input-dependent B, C, delta projections plus
/// the diagonal state matrix and skip term.
struct SSMParams {
  Tensor x_proj;     // [C, R + 2N] -> (delta_low, B, C)
  Tensor dt_weight;  // [R, C]
  Tensor dt_bias;    // [C]
  Tensor a_log;      // [C, N], A = -exp(a_log)
  Tensor d_skip;     // [C]
  std::size_t dt_rank = 0;
  std::size_t d_state = 0;
};

struct BssmParams {
  std::size_t width = 0;
  Tensor ln_in_gamma, ln_in_beta;    // [C]
  Tensor dw_weight, dw_bias;         // [C,3,3], [C]
  std::array<SSMParams, 4> heads;
  Tensor ln_out_gamma, ln_out_beta;  // [C]
};

inline constexpr double kLayerNormEps = 1e-5;

std::size_t default_dt_rank(std::size_t width);

/// Registers the parameters of one BSSM block under `prefix` and returns
/// views onto them. Initialization follows the generator defaults.
BssmParams make_bssm_params(ParameterStore& store, const std::string& prefix, std::size_t width,
                            std::size_t d_state, std::mt19937_64& rng, DType dtype = DType::f32);
std::size_t bssm_param_count(std::size_t width, std::size_t d_state);

/// Traversal orders of an H x W map: row-major forward, row-major backward,
/// column-major forward, column-major backward. Entries are flat indices y*W+x.
std::array<ScanOrder, 4> scan_orders(std::size_t height, std::size_t width);

/// Runs band_mask + selective scan along each of the four orders and averages
/// the results. feat: [C,H,W].
Tensor cross_scan_2d(const Tensor& feat, const std::array<SSMParams, 4>& heads, double epsilon, double alpha);
Tensor cross_scan_2d(const Tensor& feat, const std::array<SSMParams, 4>& heads, ScanContext& ctx);

/// Same traversal with masking disabled entirely (vanilla selective scan).
Tensor cross_scan_2d_unmasked(const Tensor& feat, const std::array<SSMParams, 4>& heads);

/// feat + CS(LN(feat)) * SiLU(LN(feat)),  CS = DWConv -> SiLU -> cross-scan -> LN
Tensor bssm_block(const Tensor& feat, const BssmParams& p, double epsilon, double alpha);
Tensor bssm_block(const Tensor& feat, const BssmParams& p, ScanContext& ctx);
Tensor bssm_block_unmasked(const Tensor& feat, const BssmParams& p);

/// Adds the scan ops to the process-wide gradient-check registry.
void register_grad_ops();

}  // namespace frn::ssm
