#include "numerics/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "numerics/ops.hpp"

namespace frn {

void OpRegistry::add(const std::string& name, RegisteredOp op) { ops_[name] = std::move(op); }

const RegisteredOp& OpRegistry::get(const std::string& name) const {
  auto it = ops_.find(name);
  if (it == ops_.end()) fail(ErrorKind::contract, "grad_check: unknown op '" + name + "'");
  return it->second;
}

std::vector<std::string> OpRegistry::names() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : ops_) out.push_back(k);
  return out;
}

namespace {

Tensor sample(const InputSpec& spec, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(spec.lo, spec.hi);
  std::vector<double> v(numel(spec.shape));
  for (auto& x : v) x = u(rng);
  return Tensor::from_vector(std::move(v), spec.shape);
}

double probe(const OpFn& fn, std::span<const Tensor> inputs, const std::vector<double>& weights) {
  NoGradGuard guard;
  Tensor out = fn(inputs);
  auto v = out.data<double>();
  double s = 0;
  for (std::size_t i = 0; i < v.size(); ++i) s += v[i] * weights[i];
  return s;
}

void register_builtins(OpRegistry& r) {
  using S = std::span<const Tensor>;
  auto in = [](Shape s, double lo = -2, double hi = 2) { return InputSpec{std::move(s), lo, hi, true}; };
  r.add("add", {{in({3, 4}), in({4})}, [](S x) { return add(x[0], x[1]); }, {}});
  r.add("sub", {{in({2, 3}), in({2, 1})}, [](S x) { return sub(x[0], x[1]); }, {}});
  r.add("mul", {{in({2, 3, 2}), in({3, 1})}, [](S x) { return mul(x[0], x[1]); }, {}});
  r.add("div", {{in({3, 4}), in({3, 4}, 0.5, 2.0)}, [](S x) { return div(x[0], x[1]); }, {}});
  r.add("mul_scalar", {{in({5})}, [](S x) { return mul_scalar(x[0], -1.7); }, {}});
  r.add("exp", {{in({6})}, [](S x) { return exp(x[0]); }, {}});
  r.add("log", {{in({6}, 0.2, 3.0)}, [](S x) { return log(x[0]); }, {}});
  r.add("abs", {{in({6})}, [](S x) { return abs(x[0]); },
                [](S x) {
                  for (double v : x[0].to_vector())
                    if (std::abs(v) < 1e-3) return false;
                  return true;
                }});
  r.add("square", {{in({6})}, [](S x) { return square(x[0]); }, {}});
  r.add("sigmoid", {{in({8})}, [](S x) { return sigmoid(x[0]); }, {}});
  r.add("silu", {{in({8})}, [](S x) { return silu(x[0]); }, {}});
  r.add("softplus", {{in({8})}, [](S x) { return softplus(x[0]); }, {}});
  r.add("sum", {{in({3, 4})}, [](S x) { return sum(x[0]); }, {}});
  r.add("mean", {{in({3, 4})}, [](S x) { return mean(x[0]); }, {}});
  r.add("mean_axis", {{in({2, 3, 4})}, [](S x) { return mean_axis(x[0], 1); }, {}});
  r.add("broadcast_to", {{in({3, 1})}, [](S x) { return broadcast_to(x[0], {2, 3, 4}); }, {}});
  r.add("reshape", {{in({2, 6})}, [](S x) { return reshape(x[0], {3, 4}); }, {}});
  r.add("transpose", {{in({2, 3, 4})}, [](S x) { return transpose(x[0]); }, {}});
  r.add("permute", {{in({2, 3, 4})}, [](S x) { return permute(x[0], {2, 0, 1}); }, {}});
  r.add("concat", {{in({2, 3}), in({2, 2})}, [](S x) { return concat(x, 1); }, {}});
  r.add("slice", {{in({4, 5})}, [](S x) { return slice(x[0], 1, 1, 4); }, {}});
  r.add("matmul", {{in({3, 4}), in({4, 2})}, [](S x) { return matmul(x[0], x[1]); }, {}});
  r.add("matmul_batched", {{in({2, 3, 4}), in({4, 2})}, [](S x) { return matmul(x[0], x[1]); }, {}});
  r.add("layer_norm",
        {{in({4, 3, 3}), in({4}), in({4})},
         [](S x) { return layer_norm(x[0], x[1], x[2], 1e-5, 0); },
         {}});
  r.add("conv2d",
        {{in({2, 5, 5}), in({3, 2, 3, 3}), in({3})},
         [](S x) { return conv2d(x[0], x[1], x[2], 1, 1); },
         {}});
  r.add("conv2d_strided",
        {{in({2, 6, 6}), in({3, 2, 2, 2}), in({3})},
         [](S x) { return conv2d(x[0], x[1], x[2], 2, 0); },
         {}});
  r.add("conv2d_pointwise",
        {{in({4, 3, 3}), in({2, 4, 1, 1}), in({2})},
         [](S x) { return conv2d(x[0], x[1], x[2], 1, 0); },
         {}});
  r.add("dwconv2d",
        {{in({2, 5, 5}), in({2, 3, 3}), in({2})},
         [](S x) { return dwconv2d(x[0], x[1], x[2], 1); },
         {}});
  r.add("upsample_nearest2x", {{in({2, 2, 3})}, [](S x) { return upsample_nearest2x(x[0]); }, {}});
}

}  // namespace

OpRegistry& op_registry() {
  static OpRegistry registry = [] {
    OpRegistry r;
    register_builtins(r);
    return r;
  }();
  return registry;
}

GradCheckReport grad_check(const std::string& name, const RegisteredOp& op, double tolerance, std::uint64_t seed,
                           double h) {
  std::mt19937_64 rng(seed);
  std::vector<Tensor> inputs;
  for (int attempt = 0;; ++attempt) {
    require(attempt < 1000, ErrorKind::contract, "grad_check: no acceptable input sample for " + name);
    inputs.clear();
    for (const auto& spec : op.inputs) inputs.push_back(sample(spec, rng));
    if (!op.accept || op.accept(inputs)) break;
  }
  for (std::size_t i = 0; i < inputs.size(); ++i)
    if (op.inputs[i].differentiable) inputs[i].requires_grad_();

  Tensor out = op.fn(inputs);
  std::vector<double> weights(out.numel());
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (auto& w : weights) w = u(rng);
  Tensor loss = sum(mul(out, Tensor::from_vector(weights, out.shape())));
  backward(loss);

  GradCheckReport report;
  report.op = name;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!op.inputs[i].differentiable) {
      report.max_rel_error.push_back(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    auto analytic = inputs[i].grad().to_vector();
    std::vector<double> numeric(analytic.size());
    for (std::size_t j = 0; j < analytic.size(); ++j) {
      std::vector<Tensor> probe_inputs;
      for (const auto& t : inputs) probe_inputs.push_back(t.detach());
      auto p = probe_inputs[i].data_mut<double>();
      const double x0 = p[j];
      p[j] = x0 + h;
      double fp = probe(op.fn, probe_inputs, weights);
      p[j] = x0 - h;
      double fm = probe(op.fn, probe_inputs, weights);
      numeric[j] = (fp - fm) / (2 * h);
    }
    double diff = 0, scale = 0;
    for (std::size_t j = 0; j < analytic.size(); ++j) {
      diff = std::max(diff, std::abs(analytic[j] - numeric[j]));
      scale = std::max({scale, std::abs(analytic[j]), std::abs(numeric[j])});
    }
    double err = scale > 1e-12 ? diff / scale : diff;
    report.max_rel_error.push_back(err);
    report.worst = std::max(report.worst, err);
  }
  report.passed = report.worst < tolerance;
  return report;
}

GradCheckReport grad_check(const std::string& op_name, std::optional<std::vector<InputSpec>> input_spec,
                           double tolerance, std::uint64_t seed, double h) {
  RegisteredOp op = op_registry().get(op_name);
  if (input_spec) {
    require(input_spec->size() == op.inputs.size(), ErrorKind::contract,
            "grad_check: " + op_name + " takes " + std::to_string(op.inputs.size()) + " inputs");
    op.inputs = *input_spec;
  }
  return grad_check(op_name, op, tolerance, seed, h);
}

}  // namespace frn
