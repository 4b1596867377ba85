#include "ssm/bssm.hpp"

#include <cmath>
#include <map>
#include <mutex>

#include "numerics/gradcheck.hpp"
#include "numerics/init.hpp"
#include "numerics/ops.hpp"

namespace frn::ssm {

double ScanContext::next_epsilon() {
  double eps;
  if (epsilon_override) {
    eps = *epsilon_override;
  } else if (mode == Mode::train && alpha > 0.0) {
    require(rng != nullptr, ErrorKind::contract, "ScanContext: training mode needs an rng");
    eps = std::uniform_real_distribution<double>(0.0, alpha)(*rng);
  } else {
    eps = alpha / 2.0;
  }
  if (epsilon_log) epsilon_log->push_back(eps);
  return eps;
}

std::size_t default_dt_rank(std::size_t width) { return (width + 15) / 16; }

BssmParams make_bssm_params(ParameterStore& store, const std::string& prefix, std::size_t width,
                            std::size_t d_state, std::mt19937_64& rng, DType dtype) {
  BssmParams p;
  p.width = width;
  const std::size_t r = default_dt_rank(width);
  p.ln_in_gamma = store.add(prefix + ".ln_in.gamma", Tensor::full({width}, 1.0, dtype));
  p.ln_in_beta = store.add(prefix + ".ln_in.beta", Tensor::zeros({width}, dtype));
  p.dw_weight = store.add(prefix + ".dwconv.weight", fan_in_uniform({width, 3, 3}, 9, rng, dtype));
  p.dw_bias = store.add(prefix + ".dwconv.bias", fan_in_uniform({width}, 9, rng, dtype));
  // softplus(bias) = 0.05 at init.
  const double dt_bias = std::log(std::expm1(0.05));
  for (std::size_t k = 0; k < 4; ++k) {
    const std::string hp = prefix + ".scan" + std::to_string(k);
    SSMParams& h = p.heads[k];
    h.dt_rank = r;
    h.d_state = d_state;
    h.x_proj = store.add(hp + ".x_proj", fan_in_uniform({width, r + 2 * d_state}, width, rng, dtype));
    h.dt_weight = store.add(hp + ".dt_proj.weight", fan_in_uniform({r, width}, r, rng, dtype));
    h.dt_bias = store.add(hp + ".dt_proj.bias", Tensor::full({width}, dt_bias, dtype));
    // A = -exp(a_log) spans [-1, -1/16] log-uniformly along the state axis.
    std::vector<double> alog(width * d_state);
    for (std::size_t i = 0; i < width; ++i)
      for (std::size_t n = 0; n < d_state; ++n) {
        double frac = d_state > 1 ? static_cast<double>(n) / static_cast<double>(d_state - 1) : 0.0;
        alog[i * d_state + n] = std::log(1.0 / 16.0) * (1.0 - frac);
      }
    h.a_log = store.add(hp + ".a_log", Tensor::from_span(alog, {width, d_state}, dtype));
    h.d_skip = store.add(hp + ".d_skip", Tensor::full({width}, 1.0, dtype));
  }
  p.ln_out_gamma = store.add(prefix + ".ln_out.gamma", Tensor::full({width}, 1.0, dtype));
  p.ln_out_beta = store.add(prefix + ".ln_out.beta", Tensor::zeros({width}, dtype));
  return p;
}

std::size_t bssm_param_count(std::size_t width, std::size_t d_state) {
  const std::size_t r = default_dt_rank(width);
  const std::size_t head = width * (r + 2 * d_state) + r * width + width + width * d_state + width;
  return 2 * width + (9 * width + width) + 4 * head + 2 * width;
}

std::array<ScanOrder, 4> scan_orders(std::size_t height, std::size_t width) {
  static std::mutex mu;
  static std::map<std::pair<std::size_t, std::size_t>, std::array<ScanOrder, 4>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto key = std::make_pair(height, width);
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  const std::size_t t = height * width;
  std::vector<std::uint32_t> row(t), col(t);
  for (std::size_t i = 0; i < t; ++i) row[i] = static_cast<std::uint32_t>(i);
  std::size_t s = 0;
  for (std::size_t x = 0; x < width; ++x)
    for (std::size_t y = 0; y < height; ++y) col[s++] = static_cast<std::uint32_t>(y * width + x);
  std::vector<std::uint32_t> row_rev(row.rbegin(), row.rend()), col_rev(col.rbegin(), col.rend());
  std::array<ScanOrder, 4> orders{
      std::make_shared<const std::vector<std::uint32_t>>(std::move(row)),
      std::make_shared<const std::vector<std::uint32_t>>(std::move(row_rev)),
      std::make_shared<const std::vector<std::uint32_t>>(std::move(col)),
      std::make_shared<const std::vector<std::uint32_t>>(std::move(col_rev)),
  };
  cache.emplace(key, orders);
  return orders;
}

namespace {

// epsilon < 0 selects the unmasked path.
Tensor cross_scan_impl(const Tensor& feat, const std::array<SSMParams, 4>& heads, double epsilon, double alpha) {
  require(feat.rank() == 3, ErrorKind::dimension, "cross_scan_2d: expected [C,H,W], got " + to_string(feat.shape()));
  const std::size_t c = feat.dim(0), h = feat.dim(1), w = feat.dim(2);
  require(h >= 1 && w >= 1, ErrorKind::dimension, "cross_scan_2d: empty feature map");
  Tensor tokens = transpose(reshape(feat, {c, h * w}));  // [T, C]
  auto orders = scan_orders(h, w);
  std::vector<Tensor> projs;
  for (const SSMParams& p : heads) {
    require(p.x_proj.dim(0) == c, ErrorKind::dimension,
            "cross_scan_2d: head width " + std::to_string(p.x_proj.dim(0)) + " vs features " + to_string(feat.shape()));
    projs.push_back(p.x_proj);
  }
  // One wide projection for all four heads.
  Tensor proj_all = matmul(tokens, concat(projs, 1));
  Tensor total;
  std::size_t off = 0;
  for (std::size_t k = 0; k < 4; ++k) {
    const SSMParams& p = heads[k];
    const std::size_t r = p.dt_rank, n = p.d_state;
    Tensor dt_low = slice(proj_all, 1, off, off + r);
    Tensor b = slice(proj_all, 1, off + r, off + r + n);
    Tensor cm = slice(proj_all, 1, off + r + n, off + r + 2 * n);
    off += r + 2 * n;
    Tensor delta = softplus(add(matmul(dt_low, p.dt_weight), p.dt_bias));
    Tensor a = neg(exp(p.a_log));
    Tensor mask;
    if (epsilon >= 0.0) mask = band_mask(delta, a, epsilon, alpha).m;
    Tensor y = selective_scan_fused(tokens, delta, a, b, cm, p.d_skip, mask, orders[k]);
    total = total.defined() ? add(total, y) : y;
  }
  return reshape(transpose(mul_scalar(total, 0.25)), {c, h, w});
}

Tensor block_impl(const Tensor& feat, const BssmParams& p, double epsilon, double alpha) {
  require(feat.rank() == 3 && feat.dim(0) == p.width, ErrorKind::dimension,
          "bssm_block: block width " + std::to_string(p.width) + " vs input " + to_string(feat.shape()));
  Tensor ln = layer_norm(feat, p.ln_in_gamma, p.ln_in_beta, kLayerNormEps, 0);
  Tensor branch = silu(dwconv2d(ln, p.dw_weight, p.dw_bias, 1));
  branch = cross_scan_impl(branch, p.heads, epsilon, alpha);
  branch = layer_norm(branch, p.ln_out_gamma, p.ln_out_beta, kLayerNormEps, 0);
  return add(mul(branch, silu(ln)), feat);
}

}  // namespace

Tensor cross_scan_2d(const Tensor& feat, const std::array<SSMParams, 4>& heads, double epsilon, double alpha) {
  require(epsilon >= 0.0 && epsilon <= alpha, ErrorKind::contract, "cross_scan_2d: epsilon outside [0, alpha]");
  return cross_scan_impl(feat, heads, epsilon, alpha);
}

Tensor cross_scan_2d(const Tensor& feat, const std::array<SSMParams, 4>& heads, ScanContext& ctx) {
  return cross_scan_2d(feat, heads, ctx.next_epsilon(), ctx.alpha);
}

Tensor cross_scan_2d_unmasked(const Tensor& feat, const std::array<SSMParams, 4>& heads) {
  return cross_scan_impl(feat, heads, -1.0, 0.0);
}

Tensor bssm_block(const Tensor& feat, const BssmParams& p, double epsilon, double alpha) {
  require(epsilon >= 0.0 && epsilon <= alpha, ErrorKind::contract, "bssm_block: epsilon outside [0, alpha]");
  return block_impl(feat, p, epsilon, alpha);
}

Tensor bssm_block(const Tensor& feat, const BssmParams& p, ScanContext& ctx) {
  return bssm_block(feat, p, ctx.next_epsilon(), ctx.alpha);
}

Tensor bssm_block_unmasked(const Tensor& feat, const BssmParams& p) { return block_impl(feat, p, -1.0, 0.0); }

void register_grad_ops() {
  using S = std::span<const Tensor>;
  auto& reg = op_registry();
  if (reg.contains("selective_scan_fused")) return;
  auto in = [](Shape s, double lo = -2, double hi = 2) { return InputSpec{std::move(s), lo, hi, true}; };
  constexpr std::size_t T = 6, D = 3, N = 4;
  // delta in [0.05, 2], A from a_log in [-2, 1] so A in [-e, -e^-2].
  reg.add("zoh_a_bar", {{in({T, D}, 0.05, 2.0), in({D, N}, -2.0, 1.0), in({T, N})},
                        [](S x) { return zoh_discretize(x[0], neg(exp(x[1])), x[2]).a_bar; },
                        {}});
  reg.add("zoh_b_bar", {{in({T, D}, 0.05, 2.0), in({D, N}, -2.0, 1.0), in({T, N})},
                        [](S x) { return zoh_discretize(x[0], neg(exp(x[1])), x[2]).b_bar; },
                        {}});
  reg.add("selective_scan",
          {{in({T, D}), in({T, D, N}, 0.05, 0.95), in({T, D, N}), in({T, N}), in({D})},
           [](S x) {
             BandMask m{Tensor::full({T, D}, 1.0, DType::f64), 0.0, 0.0};
             return selective_scan(x[0], {x[1], x[2]}, x[3], x[4], m);
           },
           {}});
  reg.add("selective_scan_fused",
          {{in({T, D}), in({T, D}, 0.05, 2.0), in({D, N}, -2.0, 1.0), in({T, N}), in({T, N}), in({D})},
           [](S x) { return selective_scan_fused(x[0], x[1], neg(exp(x[2])), x[3], x[4], x[5], Tensor()); },
           {}});
  // The mask is recomputed from delta and A on every probe; samples whose gate
  // sits within 1e-3 of the threshold are rejected so it stays locally constant.
  constexpr double eps = 0.3;
  auto away_from_threshold = [](S x) {
    Tensor g = gate_statistic(x[1], neg(exp(x[2])));
    for (double v : g.to_vector())
      if (std::abs(v - eps) < 1e-3) return false;
    return true;
  };
  reg.add("masked_scan",
          {{in({T, D}), in({T, D}, 0.05, 2.0), in({D, N}, -2.0, 1.0), in({T, N}), in({T, N}), in({D})},
           [](S x) {
             Tensor a = neg(exp(x[2]));
             Tensor mask = band_mask(x[1].detach(), a.detach(), eps, 0.5).m;
             return selective_scan_fused(x[0], x[1], a, x[3], x[4], x[5], mask);
           },
           away_from_threshold});
  reg.add("masked_scan_ordered",
          {{in({T, D}), in({T, D}, 0.05, 2.0), in({D, N}, -2.0, 1.0), in({T, N}), in({T, N}), in({D})},
           [](S x) {
             Tensor a = neg(exp(x[2]));
             Tensor mask = band_mask(x[1].detach(), a.detach(), eps, 0.5).m;
             auto order = std::make_shared<const std::vector<std::uint32_t>>(std::vector<std::uint32_t>{4, 1, 5, 0, 2, 3});
             return selective_scan_fused(x[0], x[1], a, x[3], x[4], x[5], mask, order);
           },
           away_from_threshold});
  reg.add("bssm_block", {{in({4, 3, 3})}, [](S x) {
                           static const auto params = [] {
                             static ParameterStore store;
                             std::mt19937_64 rng(11);
                             return make_bssm_params(store, "probe", 4, 2, rng, DType::f64);
                           }();
                           return bssm_block(x[0], params, 0.0, 0.5);
                         },
                         {}});
}

}  // namespace frn::ssm
