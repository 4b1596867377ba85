#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "numerics/params.hpp"

namespace frn::train {

/// mean(|pred - gt|) over every element.
Tensor l1_loss(const Tensor& pred, const Tensor& gt);

/// lr_min + (lr0 - lr_min) * (1 + cos(pi * step / total)) / 2; steps past
/// total stay at lr_min.
double cosine_lr(std::size_t step, std::size_t total, double lr0, double lr_min);

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First and second moments for one parameter, same shape and dtype.
struct AdamSlot {
  Tensor m, v;
};

/// One bias-corrected Adam update of a single tensor in place. `t` is the
/// 1-based step count.
void adam_update(Tensor& param, const Tensor& grad, AdamSlot& slot, std::uint64_t t, double lr,
                 const AdamOptions& opt = {});

/// Adam over every tensor of a parameter store.
class Adam {
 public:
  explicit Adam(ParameterStore& params, AdamOptions opt = {});

  /// Applies the accumulated gradients and advances the step counter.
  void step(double lr);
  std::uint64_t steps() const { return t_; }
  void set_steps(std::uint64_t t) { t_ = t; }
  std::vector<AdamSlot>& slots() { return slots_; }
  const std::vector<AdamSlot>& slots() const { return slots_; }
  const AdamOptions& options() const { return opt_; }

 private:
  ParameterStore& params_;
  AdamOptions opt_;
  std::vector<AdamSlot> slots_;
  std::uint64_t t_ = 0;
};

/// L2 norm of all parameter gradients.
double grad_norm(const ParameterStore& params);

}  // namespace frn::train
