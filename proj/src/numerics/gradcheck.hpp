#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "numerics/tensor.hpp"

namespace frn {

struct InputSpec {
  Shape shape;
  double lo = -2.0;
  double hi = 2.0;
  bool differentiable = true;
};

using OpFn = std::function<Tensor(std::span<const Tensor>)>;

struct RegisteredOp {
  std::vector<InputSpec> inputs;
  OpFn fn;
  /// Optional rejection test for sampled inputs, e.g. to keep hard thresholds
  /// away from the finite-difference stencil.
  std::function<bool(std::span<const Tensor>)> accept;
};

struct GradCheckReport {
  std::string op;
  /// Per-input max error, scaled by the larger of the analytic and numeric
  /// gradient magnitudes. NaN for non-differentiable inputs.
  std::vector<double> max_rel_error;
  double worst = 0.0;
  bool passed = false;
};

class OpRegistry {
 public:
  void add(const std::string& name, RegisteredOp op);
  bool contains(const std::string& name) const { return ops_.count(name) > 0; }
  const RegisteredOp& get(const std::string& name) const;
  std::vector<std::string> names() const;

 private:
  std::map<std::string, RegisteredOp> ops_;
};

/// Process-wide registry, pre-populated with the tensor ops in this library.
OpRegistry& op_registry();

/// Compares reverse-mode gradients against central differences in 64-bit.
/// The scalar probed is sum(op(inputs) * R) for a fixed random R.
GradCheckReport grad_check(const std::string& op_name, std::optional<std::vector<InputSpec>> input_spec,
                           double tolerance, std::uint64_t seed = 7, double h = 1e-5);

GradCheckReport grad_check(const std::string& name, const RegisteredOp& op, double tolerance,
                           std::uint64_t seed = 7, double h = 1e-5);

}  // namespace frn
