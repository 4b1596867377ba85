#include "train/optim.hpp"

#include <cmath>
#include <numbers>

#include "numerics/ops.hpp"

namespace frn::train {

Tensor l1_loss(const Tensor& pred, const Tensor& gt) {
  require(pred.shape() == gt.shape(), ErrorKind::dimension,
          "l1_loss: prediction " + to_string(pred.shape()) + " vs target " + to_string(gt.shape()));
  return mean(abs(sub(pred, gt)));
}

double cosine_lr(std::size_t step, std::size_t total, double lr0, double lr_min) {
  if (total == 0 || step >= total) return lr_min;
  const double r = static_cast<double>(step) / static_cast<double>(total);
  return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + std::cos(std::numbers::pi * r));
}

void adam_update(Tensor& param, const Tensor& grad, AdamSlot& slot, std::uint64_t t, double lr,
                 const AdamOptions& opt) {
  require(param.shape() == grad.shape(), ErrorKind::dimension,
          "adam: parameter " + to_string(param.shape()) + " vs gradient " + to_string(grad.shape()));
  require(t >= 1, ErrorKind::contract, "adam: step count starts at 1");
  if (!slot.m.defined()) {
    slot.m = Tensor::zeros(param.shape(), param.dtype());
    slot.v = Tensor::zeros(param.shape(), param.dtype());
  }
  const double c1 = 1.0 - std::pow(opt.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(t));
  dispatch(param.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto p = param.data_mut<T>();
    auto g = grad.data<T>();
    auto m = slot.m.data_mut<T>();
    auto v = slot.v.data_mut<T>();
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      const double mi = opt.beta1 * m[i] + (1.0 - opt.beta1) * gi;
      const double vi = opt.beta2 * v[i] + (1.0 - opt.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double mhat = mi / c1, vhat = vi / c2;
      p[i] = static_cast<T>(p[i] - lr * mhat / (std::sqrt(vhat) + opt.eps));
    }
  });
}

Adam::Adam(ParameterStore& params, AdamOptions opt) : params_(params), opt_(opt) {
  for (auto& [name, t] : params_.entries())
    slots_.push_back({Tensor::zeros(t.shape(), t.dtype()), Tensor::zeros(t.shape(), t.dtype())});
}

void Adam::step(double lr) {
  ++t_;
  auto& entries = params_.entries();
  require(entries.size() == slots_.size(), ErrorKind::contract, "adam: parameter store changed size");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Tensor& p = entries[i].second;
    adam_update(p, p.grad(), slots_[i], t_, lr, opt_);
  }
}

double grad_norm(const ParameterStore& params) {
  double s = 0;
  for (const auto& [name, t] : params.entries()) {
    if (!t.has_grad()) continue;
    dispatch(t.dtype(), [&](auto tag) {
      using T = decltype(tag);
      for (T g : t.grad_data<T>()) s += static_cast<double>(g) * g;
    });
  }
  return std::sqrt(s);
}

}  // namespace frn::train
