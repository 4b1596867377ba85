#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "numerics/tensor.hpp"

namespace frn::ssm {

/// Below this |delta * A| the input matrix uses its second-order series.
inline constexpr double kSeriesSwitch = 1e-4;

struct DiscretizedParams {
  Tensor a_bar;  // [T, d_inner, d_state]
  Tensor b_bar;  // [T, d_inner, d_state]
};

struct BandMask {
  Tensor m;  // [T, d_inner], entries in {0, 1}
  double epsilon = 0.0;
  double alpha = 0.0;
};

using ScanOrder = std::shared_ptr<const std::vector<std::uint32_t>>;

/// Zero-order-hold discretization with diagonal A:
///   a_bar = exp(delta*A),  b_bar = (exp(delta*A) - 1) / A * B
/// delta: [T,D] (> 0), a: [D,N] (< 0), b: [T,N].
DiscretizedParams zoh_discretize(const Tensor& delta, const Tensor& a, const Tensor& b);

/// Per-token, per-channel input gate: mean over the state axis of
/// 1 - exp(delta*A). Lies in (0, 1) for delta > 0, A < 0.
Tensor gate_statistic(const Tensor& delta, const Tensor& a);

/// M[t,d] = 1 iff gate[t,d] >= epsilon. Requires epsilon in [0, alpha].
BandMask band_mask(const Tensor& delta, const Tensor& a, double epsilon, double alpha);

/// Recurrence over pre-discretized parameters in natural token order:
///   h_t = a_bar_t * h_{t-1} + b_bar_t * x_t
///   y_t = sum_state (c_t * M_t) h_t + d_skip * x_t
/// M is treated as a constant in the backward pass.
Tensor selective_scan(const Tensor& x, const DiscretizedParams& disc, const Tensor& c, const Tensor& d_skip,
                      const BandMask& mask);

/// Same recurrence with discretization fused in and an optional traversal
/// order (token indices, a permutation of [0,T)). Inputs and output stay in
/// storage order. An undefined mask means no masking. Channels whose mask
/// is zero for the rest of the traversal skip the recurrence entirely.
Tensor selective_scan_fused(const Tensor& x, const Tensor& delta, const Tensor& a, const Tensor& b,
                            const Tensor& c, const Tensor& d_skip, const Tensor& mask,
                            const ScanOrder& order = nullptr);

}  // namespace frn::ssm
