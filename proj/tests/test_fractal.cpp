#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "fractal/model.hpp"
#include "numerics/ops.hpp"

using namespace frn;
using namespace frn::fractal;

namespace {

Tensor random_rgb(std::size_t h, std::size_t w, std::uint64_t seed, DType dtype = DType::f64) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<double> v(3 * h * w);
  for (auto& x : v) x = u(rng);
  return Tensor::from_span(v, {3, h, w}, dtype);
}

Tensor plane(double value, std::size_t h, std::size_t w) { return Tensor::full({1, h, w}, value, DType::f64); }

// Every level tiles [0, K) with equal-width intervals, each nested in a parent.
void check_partition(const RecursionPlan& p) {
  std::size_t width = p.k_bands;
  std::vector<Interval> parents{{0, p.k_bands}};
  for (std::size_t l = 1; l <= p.levels; ++l) {
    const LevelSpec& spec = p.level_specs[l - 1];
    REQUIRE(spec.invocations.size() == parents.size());
    width /= spec.branch;
    std::vector<Interval> all;
    for (std::size_t i = 0; i < spec.invocations.size(); ++i) {
      const Invocation& inv = spec.invocations[i];
      CHECK(inv.parent == parents[i]);
      REQUIRE(inv.children.size() == spec.branch);
      std::size_t pos = inv.parent.lo;
      for (const Interval& c : inv.children) {
        CHECK(c.lo == pos);
        CHECK(c.width() == width);
        pos = c.hi;
      }
      CHECK(pos == inv.parent.hi);
      all.insert(all.end(), inv.children.begin(), inv.children.end());
    }
    std::vector<int> hits(p.k_bands, 0);
    for (const Interval& iv : all)
      for (std::size_t k = iv.lo; k < iv.hi; ++k) ++hits[k];
    CHECK(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
    CHECK(all == p.intervals_at(l));
    parents = all;
  }
  CHECK(width == 1);
}

}  // namespace

TEST_CASE("plan examples") {
  RecursionPlan p = build_plan(32, 2);
  CHECK(p.levels == 5);
  CHECK(p.invocations_per_level() == std::vector<std::size_t>{1, 2, 4, 8, 16});
  CHECK(p.total_invocations() == 31);

  RecursionPlan q = build_plan(27, 3);
  CHECK(q.levels == 3);
  CHECK(q.invocations_per_level() == std::vector<std::size_t>{1, 3, 9});
  CHECK(q.intervals_at(1) == std::vector<Interval>{{0, 9}, {9, 18}, {18, 27}});

  RecursionPlan r = build_plan(5, 5);
  CHECK(r.levels == 1);
  CHECK(r.invocations_per_level() == std::vector<std::size_t>{1});
  CHECK(r.intervals_at(1).size() == 5);

  CHECK(balanced_branches(32, 3) == std::vector<std::size_t>{2, 4, 4});
  CHECK(balanced_branches(32, 2) == std::vector<std::size_t>{4, 8});
  CHECK(balanced_branches(32, 1) == std::vector<std::size_t>{32});
  CHECK_THROWS_AS(balanced_branches(32, 6), Error);
}

TEST_CASE("plan rejects non-powers with a suggestion") {
  try {
    build_plan(31, 2);
    FAIL("expected a contract error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::contract);
    CHECK(std::string(e.what()).find("32") != std::string::npos);
  }
  CHECK_THROWS_AS(build_plan(32, 1), Error);
  CHECK_THROWS_AS(build_plan(12, std::vector<std::size_t>{2, 2, 2}), Error);
}

TEST_CASE("interval partition invariant for every plan up to K = 256") {
  std::size_t plans = 0;
  for (std::size_t n = 2; n <= 256; ++n)
    for (std::size_t k = n; k <= 256; k *= n) {
      RecursionPlan p = build_plan(k, n);
      CHECK(validate_plan(p).empty());
      std::size_t m = 0;
      for (std::size_t v = 1; v < k; v *= n) ++m;
      CHECK(p.levels == m);
      for (std::size_t l = 1; l <= m; ++l)
        CHECK(p.level_specs[l - 1].invocations.size() == static_cast<std::size_t>(std::pow(n, l - 1) + 0.5));
      check_partition(p);
      ++plans;
    }
  for (std::size_t k : {12u, 32u, 64u, 96u, 256u})
    for (std::size_t levels = 1; levels <= 4; ++levels) {
      std::vector<std::size_t> b;
      try {
        b = balanced_branches(k, levels);
      } catch (const Error&) {
        continue;
      }
      RecursionPlan p = build_plan(k, b);
      CHECK(validate_plan(p).empty());
      check_partition(p);
      ++plans;
    }
  CHECK(plans > 280);
}

TEST_CASE("select_references") {
  LevelState st;
  st.rgb = random_rgb(2, 3, 1);
  Tensor mean = mean_axis(st.rgb, 0, true);

  SUBCASE("empty state pads with the RGB mean") {
    Tensor c = select_references(st, {0, 32}, 4);
    CHECK(c.shape() == Shape{7, 2, 3});
    for (std::size_t s = 0; s < 4; ++s) CHECK(slice(c, 0, s, s + 1).to_vector() == mean.to_vector());
    CHECK(slice(c, 0, 4, 7).to_vector() == st.rgb.to_vector());
  }
  SUBCASE("nearest centers, ties toward the lower center") {
    // Plane value = interval center.
    for (std::size_t i = 0; i < 8; ++i) st.generated[{4 * i, 4 * i + 4}] = plane(4.0 * i + 2, 2, 3);
    Tensor c = select_references(st, {12, 14}, 4);  // center 13
    std::vector<double> want{6, 10, 14, 18};
    for (std::size_t s = 0; s < 4; ++s) CHECK(c.flat(s * 6) == want[s]);
  }
  SUBCASE("fixed arity with more slots than estimates") {
    st.generated[{0, 16}] = plane(8, 2, 3);
    st.generated[{16, 32}] = plane(24, 2, 3);
    Tensor c = select_references(st, {16, 32}, 5);
    CHECK(c.dim(0) == 8);
    CHECK(c.flat(0) == 8);
    CHECK(c.flat(6) == 24);
    for (std::size_t s = 2; s < 5; ++s) CHECK(slice(c, 0, s, s + 1).to_vector() == mean.to_vector());
  }
  SUBCASE("without RGB the colour slots are zero") {
    Tensor c = select_references(st, {0, 32}, 2, false);
    CHECK(c.dim(0) == 5);
    for (double v : slice(c, 0, 2, 5).to_vector()) CHECK(v == 0.0);
  }
}

namespace {

// Stub generator: child j of an invocation gets mean(reference slots) + j + level/10.
Tensor stub(std::size_t level, const Tensor& cond, std::size_t refs, std::size_t branch) {
  Tensor base = mean_axis(slice(cond, 0, 0, refs), 0, true);
  std::vector<Tensor> parts;
  for (std::size_t j = 0; j < branch; ++j)
    parts.push_back(add_scalar(base, static_cast<double>(j) + 0.1 * static_cast<double>(level)));
  return concat(parts, 0);
}

// Bookkeeping replay of the schedule on per-pixel scalars.
std::vector<double> replay(const RecursionPlan& plan, const std::vector<double>& rgb, std::size_t pixels,
                           std::size_t refs, bool reverse_siblings, bool residual = false) {
  struct Est {
    Interval iv;
    std::vector<double> v;
  };
  std::vector<double> pad(pixels);
  for (std::size_t p = 0; p < pixels; ++p) pad[p] = (rgb[p] + rgb[pixels + p] + rgb[2 * pixels + p]) / 3.0;
  std::vector<Est> prev;
  for (std::size_t l = 1; l <= plan.levels; ++l) {
    const LevelSpec& spec = plan.level_specs[l - 1];
    std::vector<Est> next;
    std::vector<std::size_t> idx(spec.invocations.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (reverse_siblings) std::reverse(idx.begin(), idx.end());
    for (std::size_t i : idx) {
      const Invocation& inv = spec.invocations[i];
      const double c = inv.parent.center();
      std::vector<Est> cand = prev;
      std::sort(cand.begin(), cand.end(), [&](const Est& a, const Est& b) {
        double da = std::abs(a.iv.center() - c), db = std::abs(b.iv.center() - c);
        return da != db ? da < db : a.iv.center() < b.iv.center();
      });
      if (cand.size() > refs) cand.resize(refs);
      for (std::size_t j = 0; j < spec.branch; ++j) {
        Est e{inv.children[j], std::vector<double>(pixels, 0.0)};
        for (std::size_t p = 0; p < pixels; ++p) {
          double s = 0;
          for (std::size_t r = 0; r < refs; ++r) s += r < cand.size() ? cand[r].v[p] : pad[p];
          e.v[p] = s / static_cast<double>(refs) + static_cast<double>(j) + 0.1 * static_cast<double>(l);
          if (residual) {
            const Est* parent = nullptr;
            for (const Est& q : prev)
              if (q.iv == inv.parent) parent = &q;
            e.v[p] += l == 1 ? pad[p] : parent->v[p];
          }
        }
        next.push_back(std::move(e));
      }
    }
    std::sort(next.begin(), next.end(), [](const Est& a, const Est& b) { return a.iv.lo < b.iv.lo; });
    prev = std::move(next);
  }
  std::vector<double> cube;
  for (const Est& e : prev) cube.insert(cube.end(), e.v.begin(), e.v.end());
  return cube;
}

}  // namespace

TEST_CASE("reconstruct matches a schedule-replay oracle") {
  const std::size_t h = 3, w = 2;
  Tensor rgb = random_rgb(h, w, 7);
  auto rgbv = rgb.to_vector();
  for (auto [k, branches] : std::vector<std::pair<std::size_t, std::vector<std::size_t>>>{
           {32, {2, 2, 2, 2, 2}}, {27, {3, 3, 3}}, {32, {2, 4, 4}}, {16, {16}}})
    for (std::size_t refs : {1u, 2u, 4u, 6u}) {
      RecursionPlan plan = build_plan(k, branches);
      for (bool residual : {false, true}) {
      std::size_t calls = 0, last_level = 0;
      auto gen = [&](std::size_t level, std::size_t inv, const Tensor& cond) {
        CHECK(cond.dim(0) == refs + 3);
        if (level != last_level) calls = 0, last_level = level;
        CHECK(inv == calls++);
        return stub(level, cond, refs, plan.level_specs[level - 1].branch);
      };
      Reconstruction rec = reconstruct(rgb, plan, gen, refs, true, residual);
      CHECK(rec.cube.shape() == Shape{k, h, w});
      CHECK(rec.levels.size() == plan.levels);
      auto want = replay(plan, rgbv, h * w, refs, false, residual);
      auto want_rev = replay(plan, rgbv, h * w, refs, true, residual);
      auto got = rec.cube.to_vector();
      REQUIRE(got.size() == want.size());
      for (std::size_t i = 0; i < got.size(); ++i) {
        CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
        CHECK(want[i] == want_rev[i]);
      }
      }
    }
}

TEST_CASE("reconstruct arity checks and determinism") {
  ModelConfig mc;
  mc.base_width = 8;
  mc.depth = 1;
  mc.levels = 3;
  mc.bands = 8;
  FrnModel model(mc, 3);
  Tensor rgb = random_rgb(4, 4, 2, DType::f32);
  Tensor a = model.predict(rgb), b = model.predict(rgb);
  CHECK(a.shape() == Shape{8, 4, 4});
  CHECK(a.to_vector() == b.to_vector());

  ssm::ScanContext ctx;
  ctx.alpha = mc.alpha;
  std::vector<net::AtomicGenerator> two(model.generators().begin(), model.generators().begin() + 2);
  CHECK_THROWS_AS(reconstruct(rgb, model.plan(), two, ctx, mc.refs), Error);
  CHECK_THROWS_AS(reconstruct(rgb, model.plan(), model.generators(), ctx, mc.refs + 1), Error);
}

TEST_CASE("one-shot baseline equals the single-level plan") {
  ModelConfig mc;
  mc.base_width = 8;
  mc.depth = 1;
  mc.levels = 1;
  mc.bands = 8;
  FrnModel model(mc, 4);
  CHECK(model.plan().levels == 1);
  CHECK(model.plan().total_invocations() == 1);
  Tensor rgb = random_rgb(4, 4, 5, DType::f32);
  ssm::ScanContext c1, c2;
  c1.alpha = c2.alpha = mc.alpha;
  Tensor one = one_shot_baseline(rgb, model.generators()[0], c1, mc.refs);
  Tensor rec = reconstruct(rgb, model.plan(), model.generators(), c2, mc.refs).cube;
  CHECK(one.shape() == Shape{8, 4, 4});
  CHECK(one.to_vector() == rec.to_vector());

  ssm::ScanContext c3, c4;
  c3.alpha = c4.alpha = mc.alpha;
  Tensor one_res = one_shot_baseline(rgb, model.generators()[0], c3, mc.refs, true, true);
  CHECK(one_res.to_vector() == model.forward(rgb, c4).cube.to_vector());
  auto a = one_res.to_vector(), b = one.to_vector(), m = mean_axis(rgb, 0, true).to_vector();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i] + m[i % m.size()]).epsilon(1e-6));
}

TEST_CASE("model config") {
  ModelConfig mc;
  CHECK(mc.plan().invocations_per_level() == std::vector<std::size_t>{1, 2, 4, 8, 16});
  mc.branch = 3;
  CHECK_THROWS_AS(mc.validate(), Error);
  mc.branch = 0;
  mc.levels = 2;
  CHECK(mc.plan().level_specs[1].branch == 8);
}

TEST_CASE("interval means") {
  std::vector<double> v(4 * 2);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
  Tensor cube = Tensor::from_vector(v, {4, 1, 2});
  auto m = interval_means(cube, {{0, 2}, {2, 4}}).to_vector();
  CHECK(m == std::vector<double>{1, 2, 5, 6});
}

TEST_CASE("invocation codes separate siblings with identical references") {
  ModelConfig mc;
  mc.base_width = 8;
  mc.depth = 1;
  mc.bands = 8;
  mc.levels = 3;
  mc.residual = false;
  FrnModel model(mc, 5);
  const RecursionPlan& plan = model.plan();
  std::size_t expect = 0;
  for (std::size_t l = 0; l < plan.levels; ++l) {
    expect += net::param_count(model.generators()[l].config());
    const std::size_t n = plan.level_specs[l].invocations.size();
    CHECK(model.codes()[l].defined() == (n > 1));
    if (n > 1) {
      CHECK(model.codes()[l].shape() == Shape{n, mc.base_width});
      expect += n * mc.base_width;
    }
  }
  CHECK(model.params().scalar_count() == expect);

  // Level 2 has two invocations whose reference sets coincide (S = 4 covers
  // both level-1 estimates), so only the codes can tell them apart.
  Tensor rgb = random_rgb(4, 4, 9, DType::f32);
  Reconstruction rec;
  {
    NoGradGuard guard;
    ssm::ScanContext ctx;
    ctx.alpha = mc.alpha;
    rec = model.forward(rgb, ctx);
  }
  LevelState st;
  st.rgb = rgb;
  for (std::size_t c = 0; c < 2; ++c) st.generated.emplace(plan.level_specs[0].invocations[0].children[c],
                                                          slice(rec.levels[0], 0, c, c + 1));
  const auto& inv = plan.level_specs[1].invocations;
  CHECK(select_references(st, inv[0].parent, mc.refs).to_vector() ==
        select_references(st, inv[1].parent, mc.refs).to_vector());
  auto lv = rec.levels[1].to_vector();
  const std::size_t half = lv.size() / 2;
  double diff = 0;
  for (std::size_t i = 0; i < half; ++i) diff += std::abs(lv[i] - lv[half + i]);
  CHECK(diff > 1e-3);
}
