#pragma once

#include <functional>
#include <map>
#include <vector>

#include "fractal/plan.hpp"
#include "net/generator.hpp"

namespace frn::fractal {

/// Estimates produced by the most recent level, keyed by channel interval.
struct LevelState {
  std::map<Interval, Tensor> generated;  // each [1,H,W]
  Tensor rgb;                            // [3,H,W]
};

/// S reference planes (the generated intervals nearest to the target center,
/// ties toward the lower center, sorted by center, padded with the per-pixel
/// RGB mean) followed by the three RGB channels. With use_rgb off the RGB
/// channels are zeroed but keep their slots.
Tensor select_references(const LevelState& state, const Interval& target, std::size_t refs, bool use_rgb = true);

/// Maps (level, invocation index within the level, conditioning [S+3,H,W])
/// to [branch_of_level,H,W].
using LevelGenerator = std::function<Tensor(std::size_t level, std::size_t invocation, const Tensor& cond)>;

struct Reconstruction {
  Tensor cube;                // [K,H,W]
  std::vector<Tensor> levels; // level l output, one plane per interval in channel order
};

/// With `residual` on, every child is its parent's estimate plus the
/// generator output (level 1 starts from the per-pixel RGB mean).
Reconstruction reconstruct(const Tensor& rgb, const RecursionPlan& plan, const LevelGenerator& generate,
                           std::size_t refs, bool use_rgb = true, bool residual = false);

/// One generator per level, shared by that level's invocations. Sibling
/// invocations often see identical references, so `codes` (one [n_inv, width]
/// tensor per level, undefined where unused) tells them apart.
Reconstruction reconstruct(const Tensor& rgb, const RecursionPlan& plan,
                           const std::vector<net::AtomicGenerator>& generators, ssm::ScanContext& ctx,
                           std::size_t refs, bool use_rgb = true, const std::vector<Tensor>& codes = {},
                           bool residual = false);

/// Single call of a generator whose out_channels is K.
Tensor one_shot_baseline(const Tensor& rgb, const net::AtomicGenerator& generator, ssm::ScanContext& ctx,
                         std::size_t refs, bool use_rgb = true, bool residual = false);

/// Band-averaged version of a [K,H,W] cube over the given intervals.
Tensor interval_means(const Tensor& cube, const std::vector<Interval>& intervals);

}  // namespace frn::fractal
