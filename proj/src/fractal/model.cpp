#include "fractal/model.hpp"

#include <cmath>

#include "numerics/init.hpp"

namespace frn::fractal {

void ModelConfig::validate() const {
  require(bands >= 2, ErrorKind::config, "model: bands must be at least 2");
  require(levels >= 1, ErrorKind::config, "model: levels must be at least 1");
  require(refs >= 1, ErrorKind::config, "model: refs must be at least 1");
  generator_config(2).validate();
  try {
    plan();
  } catch (const Error& e) {
    fail(ErrorKind::config, e.what());
  }
}

RecursionPlan ModelConfig::plan() const {
  if (levels == 1) return build_plan(bands, std::vector<std::size_t>{bands});
  if (branch == 0) return build_plan(bands, balanced_branches(bands, levels));
  RecursionPlan p = build_plan(bands, branch);
  require(p.levels == levels, ErrorKind::contract,
          "model: " + std::to_string(branch) + "^" + std::to_string(levels) + " != " + std::to_string(bands) +
              " bands; use branch 0 for mixed factors");
  return p;
}

net::GeneratorConfig ModelConfig::generator_config(std::size_t out_channels) const {
  net::GeneratorConfig g;
  g.in_channels = refs + 3;
  g.out_channels = out_channels;
  g.base_width = base_width;
  g.depth = depth;
  g.blocks_per_stage = blocks_per_stage;
  g.d_state = d_state;
  g.alpha = alpha;
  return g;
}

FrnModel::FrnModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  plan_ = config_.plan();
  std::mt19937_64 rng(seed);
  generators_.reserve(plan_.levels);
  for (std::size_t l = 0; l < plan_.levels; ++l)
    generators_.emplace_back(config_.generator_config(plan_.level_specs[l].branch), store_,
                             "level" + std::to_string(l + 1), rng);
  for (std::size_t l = 0; l < plan_.levels; ++l) {
    const std::size_t n = plan_.level_specs[l].invocations.size();
    codes_.push_back(n > 1 ? store_.add("level" + std::to_string(l + 1) + ".code",
                                        uniform_tensor({n, config_.base_width}, 0.1, rng))
                           : Tensor());
  }
}

Reconstruction FrnModel::forward(const Tensor& rgb, ssm::ScanContext& ctx) const {
  return reconstruct(rgb, plan_, generators_, ctx, config_.refs, config_.use_rgb, codes_, config_.residual);
}

Tensor FrnModel::predict(const Tensor& rgb) const {
  NoGradGuard guard;
  ssm::ScanContext ctx;
  ctx.mode = ssm::ScanContext::Mode::eval;
  ctx.alpha = config_.alpha;
  return forward(rgb, ctx).cube;
}

}  // namespace frn::fractal
