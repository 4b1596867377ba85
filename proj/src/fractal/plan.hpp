#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace frn::fractal {

/// Half-open channel interval [lo, hi).
struct Interval {
  std::size_t lo = 0;
  std::size_t hi = 0;

  std::size_t width() const { return hi - lo; }
  double center() const { return 0.5 * static_cast<double>(lo + hi); }
  bool operator==(const Interval&) const = default;
  bool operator<(const Interval& o) const { return lo < o.lo || (lo == o.lo && hi < o.hi); }
};

struct Invocation {
  Interval parent;
  std::vector<Interval> children;
};

struct LevelSpec {
  std::size_t branch = 0;  // children per invocation at this level
  std::vector<Invocation> invocations;
};

/// Level-by-level schedule splitting [0, K) into progressively narrower
/// intervals. Level l refines each level l-1 interval into `branch` equal parts.
struct RecursionPlan {
  std::size_t k_bands = 0;
  /// Uniform branching factor, or 0 when levels use different factors.
  std::size_t branch = 0;
  std::size_t levels = 0;
  std::vector<LevelSpec> level_specs;

  std::vector<std::size_t> invocations_per_level() const;
  /// Intervals produced at level l (1-based), in channel order.
  std::vector<Interval> intervals_at(std::size_t level) const;
  std::size_t total_invocations() const;
};

/// K = n^m. Throws a contract error naming the nearest valid K otherwise.
RecursionPlan build_plan(std::size_t k_bands, std::size_t branch);

/// Plan with per-level branching factors whose product is K.
RecursionPlan build_plan(std::size_t k_bands, const std::vector<std::size_t>& branches);

/// Splits K into `levels` factors as evenly as possible, smallest first,
/// e.g. (32, 3) -> [2, 4, 4]. Throws when K has fewer prime factors than levels.
std::vector<std::size_t> balanced_branches(std::size_t k_bands, std::size_t levels);

/// Checks the partition and coverage invariants; returns an empty string when
/// the plan is consistent, otherwise a description of the first violation.
std::string validate_plan(const RecursionPlan& plan);

}  // namespace frn::fractal
