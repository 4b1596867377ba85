#include "fractal/plan.hpp"

#include <algorithm>
#include <cmath>

#include "numerics/error.hpp"

namespace frn::fractal {

std::vector<std::size_t> RecursionPlan::invocations_per_level() const {
  std::vector<std::size_t> out;
  for (const auto& l : level_specs) out.push_back(l.invocations.size());
  return out;
}

std::vector<Interval> RecursionPlan::intervals_at(std::size_t level) const {
  require(level >= 1 && level <= levels, ErrorKind::contract, "plan: level out of range");
  std::vector<Interval> out;
  for (const auto& inv : level_specs[level - 1].invocations)
    out.insert(out.end(), inv.children.begin(), inv.children.end());
  return out;
}

std::size_t RecursionPlan::total_invocations() const {
  std::size_t n = 0;
  for (const auto& l : level_specs) n += l.invocations.size();
  return n;
}

RecursionPlan build_plan(std::size_t k_bands, const std::vector<std::size_t>& branches) {
  require(!branches.empty(), ErrorKind::contract, "build_plan: at least one level is required");
  std::size_t prod = 1;
  for (std::size_t b : branches) {
    require(b >= 2 || (branches.size() == 1 && b == k_bands), ErrorKind::contract,
            "build_plan: branching factors must be at least 2");
    prod *= b;
  }
  require(prod == k_bands, ErrorKind::contract,
          "build_plan: branching factors multiply to " + std::to_string(prod) + ", not K = " +
              std::to_string(k_bands));
  RecursionPlan plan;
  plan.k_bands = k_bands;
  plan.levels = branches.size();
  plan.branch = std::all_of(branches.begin(), branches.end(), [&](std::size_t b) { return b == branches[0]; })
                    ? branches[0]
                    : 0;
  std::vector<Interval> current{{0, k_bands}};
  for (std::size_t b : branches) {
    LevelSpec spec;
    spec.branch = b;
    std::vector<Interval> next;
    for (const Interval& parent : current) {
      Invocation inv{parent, {}};
      const std::size_t w = parent.width() / b;
      for (std::size_t c = 0; c < b; ++c) inv.children.push_back({parent.lo + c * w, parent.lo + (c + 1) * w});
      next.insert(next.end(), inv.children.begin(), inv.children.end());
      spec.invocations.push_back(std::move(inv));
    }
    plan.level_specs.push_back(std::move(spec));
    current = std::move(next);
  }
  return plan;
}

RecursionPlan build_plan(std::size_t k_bands, std::size_t branch) {
  require(branch >= 2, ErrorKind::contract, "build_plan: branch must be at least 2");
  require(k_bands >= branch, ErrorKind::contract,
          "build_plan: K = " + std::to_string(k_bands) + " is smaller than n; nearest valid K is " +
              std::to_string(branch));
  std::size_t m = 0, p = 1;
  while (p < k_bands) {
    p *= branch;
    ++m;
  }
  if (p != k_bands) {
    const std::size_t below = p / branch;
    const std::size_t nearest = (k_bands - below <= p - k_bands) ? below : p;
    fail(ErrorKind::contract, "build_plan: K = " + std::to_string(k_bands) + " is not a power of n = " +
                                  std::to_string(branch) + "; nearest valid K is " + std::to_string(nearest));
  }
  return build_plan(k_bands, std::vector<std::size_t>(m, branch));
}

std::vector<std::size_t> balanced_branches(std::size_t k_bands, std::size_t levels) {
  require(levels >= 1, ErrorKind::contract, "balanced_branches: levels must be at least 1");
  require(k_bands >= 2, ErrorKind::contract, "balanced_branches: K must be at least 2");
  std::vector<std::size_t> primes;
  std::size_t k = k_bands;
  for (std::size_t p = 2; p * p <= k; ++p)
    while (k % p == 0) {
      primes.push_back(p);
      k /= p;
    }
  if (k > 1) primes.push_back(k);
  require(primes.size() >= levels, ErrorKind::contract,
          "balanced_branches: K = " + std::to_string(k_bands) + " cannot be split into " + std::to_string(levels) +
              " levels");
  std::vector<std::size_t> f(levels, 1);
  // Largest primes first, each onto the currently smallest factor.
  std::sort(primes.rbegin(), primes.rend());
  for (std::size_t p : primes) *std::min_element(f.begin(), f.end()) *= p;
  std::sort(f.begin(), f.end());
  return f;
}

std::string validate_plan(const RecursionPlan& plan) {
  if (plan.level_specs.size() != plan.levels) return "level count mismatch";
  std::size_t expected = 1;
  std::vector<Interval> prev{{0, plan.k_bands}};
  for (std::size_t l = 0; l < plan.levels; ++l) {
    const auto& spec = plan.level_specs[l];
    if (spec.invocations.size() != expected) return "level " + std::to_string(l + 1) + ": wrong invocation count";
    if (spec.invocations.size() != prev.size()) return "level " + std::to_string(l + 1) + ": parents mismatch";
    std::vector<Interval> cur;
    for (std::size_t i = 0; i < spec.invocations.size(); ++i) {
      const auto& inv = spec.invocations[i];
      if (!(inv.parent == prev[i])) return "level " + std::to_string(l + 1) + ": parent is not a previous interval";
      if (inv.children.size() != spec.branch) return "level " + std::to_string(l + 1) + ": wrong child count";
      std::size_t at = inv.parent.lo;
      for (const auto& c : inv.children) {
        if (c.lo != at || c.hi <= c.lo) return "level " + std::to_string(l + 1) + ": children do not partition parent";
        at = c.hi;
      }
      if (at != inv.parent.hi) return "level " + std::to_string(l + 1) + ": children do not cover parent";
      cur.insert(cur.end(), inv.children.begin(), inv.children.end());
    }
    expected *= spec.branch;
    prev = std::move(cur);
  }
  if (prev.size() != plan.k_bands) return "final level does not produce K channels";
  for (std::size_t i = 0; i < prev.size(); ++i)
    if (prev[i].lo != i || prev[i].hi != i + 1) return "final level is not one channel per interval";
  return {};
}

}  // namespace frn::fractal
