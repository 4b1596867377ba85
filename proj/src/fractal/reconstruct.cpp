#include "fractal/reconstruct.hpp"

#include <algorithm>
#include <cmath>

#include "numerics/ops.hpp"

namespace frn::fractal {

Tensor select_references(const LevelState& state, const Interval& target, std::size_t refs, bool use_rgb) {
  require(refs >= 1, ErrorKind::contract, "select_references: S must be at least 1");
  require(state.rgb.defined() && state.rgb.rank() == 3 && state.rgb.dim(0) == 3, ErrorKind::dimension,
          "select_references: rgb must be [3,H,W]");
  std::vector<std::pair<Interval, Tensor>> cand(state.generated.begin(), state.generated.end());
  const double c = target.center();
  std::stable_sort(cand.begin(), cand.end(), [&](const auto& a, const auto& b) {
    const double da = std::abs(a.first.center() - c), db = std::abs(b.first.center() - c);
    if (da != db) return da < db;
    return a.first.center() < b.first.center();
  });
  if (cand.size() > refs) cand.resize(refs);
  std::sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) { return a.first.center() < b.first.center(); });
  std::vector<Tensor> parts;
  for (auto& [iv, t] : cand) parts.push_back(t);
  if (parts.size() < refs) {
    Tensor pad = mean_axis(state.rgb, 0, true);
    while (parts.size() < refs) parts.push_back(pad);
  }
  parts.push_back(use_rgb ? state.rgb : Tensor::zeros(state.rgb.shape(), state.rgb.dtype()));
  return concat(parts, 0);
}

Reconstruction reconstruct(const Tensor& rgb, const RecursionPlan& plan, const LevelGenerator& generate,
                           std::size_t refs, bool use_rgb, bool residual) {
  require(rgb.rank() == 3 && rgb.dim(0) == 3, ErrorKind::dimension,
          "reconstruct: rgb must be [3,H,W], got " + to_string(rgb.shape()));
  LevelState state;
  state.rgb = rgb;
  Reconstruction out;
  for (std::size_t l = 1; l <= plan.levels; ++l) {
    const LevelSpec& spec = plan.level_specs[l - 1];
    std::map<Interval, Tensor> next;
    for (std::size_t i = 0; i < spec.invocations.size(); ++i) {
      const Invocation& inv = spec.invocations[i];
      Tensor cond = select_references(state, inv.parent, refs, use_rgb);
      Tensor y = generate(l, i, cond);
      require(y.rank() == 3 && y.dim(0) == spec.branch && y.dim(1) == rgb.dim(1) && y.dim(2) == rgb.dim(2),
              ErrorKind::dimension,
              "reconstruct: level " + std::to_string(l) + " generator returned " + to_string(y.shape()));
      if (residual) y = add(y, l == 1 ? mean_axis(rgb, 0, true) : state.generated.at(inv.parent));
      for (std::size_t c = 0; c < spec.branch; ++c) next.emplace(inv.children[c], slice(y, 0, c, c + 1));
    }
    state.generated = std::move(next);
    std::vector<Tensor> planes;
    for (auto& [iv, t] : state.generated) planes.push_back(t);
    out.levels.push_back(concat(planes, 0));
  }
  out.cube = out.levels.back();
  return out;
}

Reconstruction reconstruct(const Tensor& rgb, const RecursionPlan& plan,
                           const std::vector<net::AtomicGenerator>& generators, ssm::ScanContext& ctx,
                           std::size_t refs, bool use_rgb, const std::vector<Tensor>& codes, bool residual) {
  require(codes.empty() || codes.size() == plan.levels, ErrorKind::contract,
          "reconstruct: need one position-code table per level");
  require(generators.size() == plan.levels, ErrorKind::contract,
          "reconstruct: plan has " + std::to_string(plan.levels) + " levels but " +
              std::to_string(generators.size()) + " generators were given");
  for (std::size_t l = 0; l < plan.levels; ++l) {
    const auto& cfg = generators[l].config();
    require(cfg.out_channels == plan.level_specs[l].branch && cfg.in_channels == refs + 3, ErrorKind::contract,
            "reconstruct: generator " + std::to_string(l + 1) + " is configured " + std::to_string(cfg.in_channels) +
                "->" + std::to_string(cfg.out_channels) + ", plan needs " + std::to_string(refs + 3) + "->" +
                std::to_string(plan.level_specs[l].branch));
  }
  return reconstruct(
      rgb, plan,
      [&](std::size_t level, std::size_t inv, const Tensor& cond) {
        const Tensor* table = codes.empty() ? nullptr : &codes[level - 1];
        if (!table || !table->defined()) return generators[level - 1].forward(cond, ctx);
        return generators[level - 1].forward(cond, ctx, slice(*table, 0, inv, inv + 1));
      },
      refs, use_rgb, residual);
}

Tensor one_shot_baseline(const Tensor& rgb, const net::AtomicGenerator& generator, ssm::ScanContext& ctx,
                         std::size_t refs, bool use_rgb, bool residual) {
  require(generator.config().in_channels == refs + 3, ErrorKind::contract,
          "one_shot_baseline: generator expects " + std::to_string(generator.config().in_channels) +
              " inputs, references give " + std::to_string(refs + 3));
  LevelState state;
  state.rgb = rgb;
  const std::size_t k = generator.config().out_channels;
  Tensor y = generator.forward(select_references(state, {0, k}, refs, use_rgb), ctx);
  return residual ? add(y, mean_axis(rgb, 0, true)) : y;
}

Tensor interval_means(const Tensor& cube, const std::vector<Interval>& intervals) {
  std::vector<Tensor> planes;
  for (const auto& iv : intervals) planes.push_back(mean_axis(slice(cube, 0, iv.lo, iv.hi), 0, true));
  return concat(planes, 0);
}

}  // namespace frn::fractal
