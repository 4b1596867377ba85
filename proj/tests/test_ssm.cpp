#include <algorithm>
#include <numeric>
#include <cmath>
#include <random>

#include "doctest.h"
#include "numerics/gradcheck.hpp"
#include "numerics/ops.hpp"
#include "ssm/bssm.hpp"

using namespace frn;
using namespace frn::ssm;

namespace {

std::vector<double> uniform(std::size_t n, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

struct ScanCase {
  std::size_t t, d, n;
  std::vector<double> x, delta, a, b, c, dskip;
};

ScanCase random_case(std::mt19937_64& rng, std::size_t t, std::size_t d, std::size_t n) {
  ScanCase s{t, d, n, {}, {}, {}, {}, {}, {}};
  s.x = uniform(t * d, rng, -1, 1);
  s.delta = uniform(t * d, rng, 0.01, 1.5);
  s.a = uniform(d * n, rng, -2, -0.05);
  s.b = uniform(t * n, rng, -1, 1);
  s.c = uniform(t * n, rng, -1, 1);
  s.dskip = uniform(d, rng, -1, 1);
  return s;
}

// Explicit per-token recurrence, computed in double from float-rounded inputs.
std::vector<double> naive_scan(const ScanCase& s, const std::vector<double>& mask) {
  auto f = [](double v) { return static_cast<double>(static_cast<float>(v)); };
  std::vector<double> y(s.t * s.d), h(s.d * s.n, 0.0);
  for (std::size_t t = 0; t < s.t; ++t)
    for (std::size_t i = 0; i < s.d; ++i) {
      double acc = 0;
      for (std::size_t k = 0; k < s.n; ++k) {
        double z = f(s.delta[t * s.d + i]) * f(s.a[i * s.n + k]);
        double abar = std::exp(z);
        double bbar = (abar - 1) / f(s.a[i * s.n + k]) * f(s.b[t * s.n + k]);
        double& hk = h[i * s.n + k];
        hk = abar * hk + bbar * f(s.x[t * s.d + i]);
        acc += f(s.c[t * s.n + k]) * mask[t * s.d + i] * hk;
      }
      y[t * s.d + i] = acc + f(s.dskip[i]) * f(s.x[t * s.d + i]);
    }
  return y;
}

Tensor t32(const std::vector<double>& v, Shape s) { return Tensor::from_span(v, std::move(s)); }

}  // namespace

TEST_CASE("zoh scalar closed form and series switch") {
  auto d = Tensor::from_values({1, 1}, {std::log(2.0)}, DType::f64);
  auto a = Tensor::from_values({1, 1}, {-1.0}, DType::f64);
  auto b = Tensor::from_values({1, 1}, {1.0}, DType::f64);
  auto disc = zoh_discretize(d, a, b);
  CHECK(std::abs(disc.a_bar.item() - 0.5) < 1e-12);
  CHECK(std::abs(disc.b_bar.item() - 0.5) < 1e-12);

  // Both sides of the switch point agree with each other and with the exact form.
  for (double z : {1e-4 * (1 - 1e-12), 1e-4 * (1 + 1e-12)}) {
    auto dz = Tensor::from_values({1, 1}, {z}, DType::f64);
    double bb = zoh_discretize(dz, a, b).b_bar.item();
    CHECK(std::abs(bb - (-std::expm1(-z))) < 1e-9);
  }
  // Limit dA -> 0 gives dB.
  auto tiny = Tensor::from_values({1, 1}, {1e-9}, DType::f64);
  auto b3 = Tensor::from_values({1, 1}, {3.0}, DType::f64);
  CHECK(zoh_discretize(tiny, a, b3).b_bar.item() == doctest::Approx(3e-9).epsilon(1e-9));

  CHECK_THROWS_AS(zoh_discretize(Tensor::from_values({1, 1}, {0.0}, DType::f64), a, b), Error);
  CHECK_THROWS_AS(zoh_discretize(d, Tensor::from_values({1, 1}, {0.5}, DType::f64), b), Error);
}

TEST_CASE("a_bar lies in (0,1)") {
  std::mt19937_64 rng(1);
  auto s = random_case(rng, 10, 4, 3);
  auto disc = zoh_discretize(t32(s.delta, {10, 4}), t32(s.a, {4, 3}), t32(s.b, {10, 3}));
  for (double v : disc.a_bar.to_vector()) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("selective_scan hand cases") {
  // scalar head, a_bar=1, b_bar=1, c=1, D=0, M=1: cumulative sum
  auto x = Tensor::from_values({3, 1}, {1, 2, 3}, DType::f64);
  DiscretizedParams disc{Tensor::full({3, 1, 1}, 1.0, DType::f64), Tensor::full({3, 1, 1}, 1.0, DType::f64)};
  auto c = Tensor::full({3, 1}, 1.0, DType::f64);
  auto d0 = Tensor::zeros({1}, DType::f64);
  BandMask ones{Tensor::full({3, 1}, 1.0, DType::f64), 0.0, 0.5};
  CHECK(selective_scan(x, disc, c, d0, ones).to_vector() == std::vector<double>{1, 3, 6});

  BandMask zeros{Tensor::zeros({3, 1}, DType::f64), 0.4, 0.5};
  for (double v : selective_scan(x, disc, c, d0, zeros).to_vector()) CHECK(v == 0.0);

  // a_bar = 0: memoryless
  DiscretizedParams mem{Tensor::zeros({3, 1, 1}, DType::f64), Tensor::full({3, 1, 1}, 0.5, DType::f64)};
  auto dsk = Tensor::full({1}, 2.0, DType::f64);
  auto y = selective_scan(x, mem, c, dsk, ones).to_vector();
  for (std::size_t t = 0; t < 3; ++t) CHECK(y[t] == doctest::Approx(0.5 * (t + 1) + 2.0 * (t + 1)));

  CHECK_THROWS_AS(selective_scan(Tensor::zeros({4, 1}, DType::f64), disc, c, d0, ones), Error);
}

TEST_CASE("selective_scan matches naive recurrence over 200 configurations") {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> tl(1, 64), dl(1, 8), nl(1, 8);
  double worst = 0;
  for (int trial = 0; trial < 200; ++trial) {
    auto s = random_case(rng, tl(rng), dl(rng), nl(rng));
    std::vector<double> mask(s.t * s.d);
    std::bernoulli_distribution coin(0.7);
    for (auto& m : mask) m = coin(rng) ? 1.0 : 0.0;
    auto ref = naive_scan(s, mask);
    Tensor delta = t32(s.delta, {s.t, s.d}), a = t32(s.a, {s.d, s.n}), b = t32(s.b, {s.t, s.n});
    auto disc = zoh_discretize(delta, a, b);
    BandMask bm{t32(mask, {s.t, s.d}), 0.1, 0.5};
    auto y1 = selective_scan(t32(s.x, {s.t, s.d}), disc, t32(s.c, {s.t, s.n}), t32(s.dskip, {s.d}), bm).to_vector();
    auto y2 = selective_scan_fused(t32(s.x, {s.t, s.d}), delta, a, b, t32(s.c, {s.t, s.n}), t32(s.dskip, {s.d}), bm.m)
                  .to_vector();
    for (std::size_t i = 0; i < ref.size(); ++i) {
      worst = std::max(worst, std::abs(y1[i] - ref[i]));
      worst = std::max(worst, std::abs(y2[i] - ref[i]));
    }
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("fused scan with traversal order equals scanning the permuted sequence") {
  std::mt19937_64 rng(5);
  auto s = random_case(rng, 9, 3, 4);
  std::vector<std::uint32_t> perm(9);
  std::iota(perm.begin(), perm.end(), 0u);
  std::shuffle(perm.begin(), perm.end(), rng);
  ScanCase p = s;
  for (std::size_t t = 0; t < 9; ++t) {
    std::size_t src = perm[t];
    for (std::size_t i = 0; i < 3; ++i) {
      p.x[t * 3 + i] = s.x[src * 3 + i];
      p.delta[t * 3 + i] = s.delta[src * 3 + i];
    }
    for (std::size_t k = 0; k < 4; ++k) {
      p.b[t * 4 + k] = s.b[src * 4 + k];
      p.c[t * 4 + k] = s.c[src * 4 + k];
    }
  }
  auto ref = naive_scan(p, std::vector<double>(27, 1.0));
  auto order = std::make_shared<const std::vector<std::uint32_t>>(perm);
  auto y = selective_scan_fused(t32(s.x, {9, 3}), t32(s.delta, {9, 3}), t32(s.a, {3, 4}), t32(s.b, {9, 4}),
                                t32(s.c, {9, 4}), t32(s.dskip, {3}), Tensor(), order)
               .to_vector();
  for (std::size_t t = 0; t < 9; ++t)
    for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(y[perm[t] * 3 + i] - ref[t * 3 + i]) < 1e-5);
}

TEST_CASE("band_mask thresholds the gate statistic") {
  // d_state 1, A = -1: gate = 1 - exp(-delta), so delta = -log(1 - g).
  std::vector<double> g{0.2, 0.6, 0.5};
  std::vector<double> dv;
  for (double v : g) dv.push_back(-std::log1p(-v));
  auto delta = Tensor::from_span(dv, {3, 1}, DType::f64);
  auto a = Tensor::from_values({1, 1}, {-1.0}, DType::f64);
  auto gate = gate_statistic(delta, a).to_vector();
  for (std::size_t i = 0; i < 3; ++i) CHECK(gate[i] == doctest::Approx(g[i]).epsilon(1e-15));
  // Compare against the computed gates so the boundary case is exact.
  auto m = band_mask(delta, a, gate[2], 0.5).m.to_vector();
  CHECK(m == std::vector<double>{0, 1, 1});
  auto m2 = band_mask(delta, a, 0.5, 0.5).m.to_vector();
  CHECK(m2[0] == 0.0);
  CHECK(m2[1] == 1.0);

  CHECK_THROWS_AS(band_mask(delta, a, 0.6, 0.5), Error);
  CHECK_THROWS_AS(band_mask(delta, a, -0.1, 0.5), Error);
}

TEST_CASE("band_mask matches brute-force oracle and is monotone") {
  std::mt19937_64 rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    auto s = random_case(rng, 16, 5, 6);
    auto delta = t32(s.delta, {16, 5}), a = t32(s.a, {5, 6});
    std::uniform_real_distribution<double> ue(0.0, 1.0);
    double e1 = ue(rng), e2 = ue(rng);
    if (e1 > e2) std::swap(e1, e2);
    auto m1 = band_mask(delta, a, e1, 1.0).m.to_vector();
    auto m2 = band_mask(delta, a, e2, 1.0).m.to_vector();
    std::size_t ones = 0, oracle = 0;
    for (std::size_t t = 0; t < 16; ++t)
      for (std::size_t i = 0; i < 5; ++i) {
        float acc = 0;
        for (std::size_t k = 0; k < 6; ++k)
          acc += -std::expm1(static_cast<float>(s.delta[t * 5 + i]) * static_cast<float>(s.a[i * 6 + k]));
        double gate = acc / 6.0f;
        if (std::abs(gate - e1) > 1e-5) oracle += gate >= e1;
        else oracle += m1[t * 5 + i] > 0;
        ones += m1[t * 5 + i] > 0;
        CHECK(m1[t * 5 + i] >= m2[t * 5 + i]);
      }
    CHECK(ones == oracle);
  }
}

TEST_CASE("epsilon zero and near one") {
  std::mt19937_64 rng(3);
  auto s = random_case(rng, 20, 4, 5);
  auto delta = t32(s.delta, {20, 4}), a = t32(s.a, {4, 5});
  for (double v : band_mask(delta, a, 0.0, 0.5).m.to_vector()) CHECK(v == 1.0);
  for (double v : band_mask(delta, a, 0.999, 1.0).m.to_vector()) CHECK(v == 0.0);

  auto x = t32(s.x, {20, 4}), b = t32(s.b, {20, 5}), c = t32(s.c, {20, 5}), d = t32(s.dskip, {4});
  auto masked = selective_scan_fused(x, delta, a, b, c, d, band_mask(delta, a, 0.0, 0.5).m).to_vector();
  auto plain = selective_scan_fused(x, delta, a, b, c, d, Tensor()).to_vector();
  CHECK(masked == plain);
}

TEST_CASE("long sequences stay bounded") {
  std::mt19937_64 rng(9);
  auto s = random_case(rng, 10000, 2, 4);
  auto disc = zoh_discretize(t32(s.delta, {10000, 2}), t32(s.a, {2, 4}), t32(s.b, {10000, 4}));
  auto y = selective_scan_fused(t32(s.x, {10000, 2}), t32(s.delta, {10000, 2}), t32(s.a, {2, 4}),
                                t32(s.b, {10000, 4}), t32(s.c, {10000, 4}), t32(s.dskip, {2}), Tensor())
               .to_vector();
  // |h_t| <= sum_s |b_bar_s x_s|, so |y_t| <= sum_k |c_tk| * that + |D x_t|.
  auto bb = disc.b_bar.to_vector();
  std::vector<double> bound(2 * 4, 0.0);
  for (std::size_t t = 0; t < 10000; ++t)
    for (std::size_t i = 0; i < 2; ++i) {
      double lim = 0;
      for (std::size_t k = 0; k < 4; ++k) {
        bound[i * 4 + k] += std::abs(bb[(t * 2 + i) * 4 + k] * s.x[t * 2 + i]);
        lim += std::abs(s.c[t * 4 + k]) * bound[i * 4 + k];
      }
      double v = y[t * 2 + i];
      CHECK(std::isfinite(v));
      CHECK(std::abs(v) <= lim + std::abs(s.dskip[i] * s.x[t * 2 + i]) + 1e-3);
    }
}

TEST_CASE("scan orders enumerate the four rasters") {
  auto o = scan_orders(2, 2);
  // flat index y*W+x: (0,0)=0 (0,1)=1 (1,0)=2 (1,1)=3
  CHECK(*o[0] == std::vector<std::uint32_t>{0, 1, 2, 3});
  CHECK(*o[1] == std::vector<std::uint32_t>{3, 2, 1, 0});
  CHECK(*o[2] == std::vector<std::uint32_t>{0, 2, 1, 3});
  CHECK(*o[3] == std::vector<std::uint32_t>{3, 1, 2, 0});
  auto r = scan_orders(3, 5);
  for (const auto& ord : r) {
    std::vector<std::uint32_t> inv(15), sorted(*ord);
    std::sort(sorted.begin(), sorted.end());
    for (std::uint32_t i = 0; i < 15; ++i) CHECK(sorted[i] == i);
    for (std::uint32_t i = 0; i < 15; ++i) inv[(*ord)[i]] = i;
    for (std::uint32_t i = 0; i < 15; ++i) CHECK((*ord)[inv[i]] == i);
  }
}

TEST_CASE("cross scan and block contracts") {
  ParameterStore store;
  std::mt19937_64 rng(4);
  auto p = make_bssm_params(store, "blk", 8, 4, rng);
  CHECK(store.scalar_count() == bssm_param_count(8, 4));

  // H = W = 1: every direction sees the same single token.
  std::vector<double> fv = uniform(8, rng, -1, 1);
  auto f1 = Tensor::from_span(fv, {8, 1, 1});
  auto cs = cross_scan_2d(f1, p.heads, 0.0, 0.5);
  CHECK(cs.shape() == Shape{8, 1, 1});

  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{1, 1}, {3, 5}, {4, 4}}) {
    auto feat = Tensor::from_span(uniform(8 * h * w, rng, -1, 1), {8, h, w});
    CHECK(bssm_block(feat, p, 0.1, 0.5).shape() == feat.shape());
    // epsilon = 0 equals the unmasked block bit for bit.
    CHECK(bssm_block(feat, p, 0.0, 0.5).to_vector() == bssm_block_unmasked(feat, p).to_vector());
  }
  CHECK_THROWS_AS(bssm_block(Tensor::zeros({4, 2, 2}), p, 0.1, 0.5), Error);
  CHECK_THROWS_AS(bssm_block(Tensor::zeros({8, 2, 2}), p, 0.7, 0.5), Error);

  // Zeroed output norm forces the branch to zero: residual identity.
  auto feat = Tensor::from_span(uniform(8 * 16, rng, -1, 1), {8, 4, 4});
  p.ln_out_gamma.data_mut<float>()[0] = 0;
  for (auto& v : p.ln_out_gamma.data_mut<float>()) v = 0;
  CHECK(bssm_block(feat, p, 0.2, 0.5).to_vector() == feat.to_vector());
}

TEST_CASE("scan context epsilon draws") {
  std::mt19937_64 rng(1);
  std::vector<double> log;
  ScanContext ctx;
  ctx.mode = ScanContext::Mode::train;
  ctx.alpha = 0.5;
  ctx.rng = &rng;
  ctx.epsilon_log = &log;
  for (int i = 0; i < 50; ++i) {
    double e = ctx.next_epsilon();
    CHECK(e >= 0.0);
    CHECK(e <= 0.5);
  }
  CHECK(log.size() == 50);
  ctx.mode = ScanContext::Mode::eval;
  CHECK(ctx.next_epsilon() == 0.25);
}

TEST_CASE("scan ops pass grad_check") {
  register_grad_ops();
  for (const char* name :
       {"zoh_a_bar", "zoh_b_bar", "selective_scan", "selective_scan_fused", "masked_scan", "masked_scan_ordered",
        "bssm_block"}) {
    CAPTURE(name);
    auto rep = grad_check(name, std::nullopt, 1e-4);
    CHECK(rep.passed);
  }
}

TEST_CASE("band_mask threshold path agrees with the direct gate") {
  std::mt19937_64 rng(77);
  for (DType dt : {DType::f32, DType::f64})
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t t = 200, d = 6, n = 1 + trial % 8;
      Tensor delta = Tensor::from_span(uniform(t * d, rng, 1e-4, 4.0), {t, d}, dt);
      Tensor a = Tensor::from_span(uniform(d * n, rng, -3.0, -0.01), {d, n}, dt);
      const double eps = std::uniform_real_distribution<double>(0.0, 0.9)(rng);
      auto g = gate_statistic(delta, a).to_vector();
      auto m = band_mask(delta, a, eps, 1.0).m.to_vector();
      for (std::size_t i = 0; i < g.size(); ++i) {
        const bool want = dt == DType::f32 ? static_cast<float>(g[i]) >= static_cast<float>(eps) : g[i] >= eps;
        CHECK(m[i] == (want ? 1.0 : 0.0));
      }
    }
}
