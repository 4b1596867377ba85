#include "ssm/scan.hpp"

#include "numerics/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

namespace frn::ssm {

using detail::grad_of;
using detail::make_result;
using detail::values_of;

namespace {

// psi(dt, a) = (exp(dt*a) - 1) / a, so that b_bar = psi * B.
template <class T>
inline T psi(T dt, T a, T z, T em1) {
  const T series = dt * (T(1) + z * (T(0.5) + z / T(6)));
  const T exact = em1 / a;
  return std::abs(z) < static_cast<T>(kSeriesSwitch) ? series : exact;
}

template <class T>
inline T dpsi_ddt(T z, T ab) {
  const T series = T(1) + z * (T(1) + z * T(0.5));
  return std::abs(z) < static_cast<T>(kSeriesSwitch) ? series : ab;
}

// d psi / d a = dt^2 * phi'(z), phi(z) = (e^z - 1) / z.
template <class T>
inline T dpsi_da(T dt, T z, T ab, T em1) {
  if (std::abs(z) < static_cast<T>(kSeriesSwitch)) return dt * dt * (T(0.5) + z / T(3));
  T dphi;
  if (std::abs(z) < T(1e-2))
    dphi = T(0.5) + z * (T(1) / T(3) + z * (T(1) / T(8) + z * (T(1) / T(30) + z / T(144))));
  else
    dphi = (z * ab - em1) / (z * z);
  return dt * dt * dphi;
}

// Per-channel gate of one token, computed exactly as gate_statistic does.
template <class T>
T gate_one(T dt, const T* ai, std::size_t n, T inv_n, T* tmp) {
  for (std::size_t k = 0; k < n; ++k) tmp[k] = kernels::expm1_any(dt * ai[k]);
  T s = 0;
  for (std::size_t k = 0; k < n; ++k) s -= tmp[k];
  return s * inv_n;
}

void check_positive(const Tensor& t, const char* what) {
  dispatch(t.dtype(), [&](auto tag) {
    using T = decltype(tag);
    bool ok = true, finite = true;
    for (T v : t.data<T>()) {
      ok &= v > T(0);
      finite &= std::isfinite(v);
    }
    // NaN or Inf here means the values upstream diverged.
    if (!finite) fail(ErrorKind::numeric, std::string(what) + " is not finite");
    if (!ok) fail(ErrorKind::contract, std::string(what) + " must be strictly positive");
  });
}

void check_negative(const Tensor& t, const char* what) {
  dispatch(t.dtype(), [&](auto tag) {
    using T = decltype(tag);
    bool ok = true, finite = true;
    for (T v : t.data<T>()) {
      ok &= v < T(0);
      finite &= std::isfinite(v);
    }
    // NaN or Inf here means the values upstream diverged.
    if (!finite) fail(ErrorKind::numeric, std::string(what) + " is not finite");
    if (!ok) fail(ErrorKind::contract, std::string(what) + " must be strictly negative");
  });
}

void check_shape(const Tensor& t, const Shape& s, const char* what) {
  require(t.shape() == s, ErrorKind::dimension,
          std::string(what) + ": expected " + to_string(s) + ", got " + to_string(t.shape()));
}

void check_dtype(const Tensor& ref, const Tensor& t, const char* what) {
  require(t.dtype() == ref.dtype(), ErrorKind::contract, std::string(what) + ": mixed dtypes");
}

}  // namespace

DiscretizedParams zoh_discretize(const Tensor& delta, const Tensor& a, const Tensor& b) {
  require(delta.rank() == 2 && a.rank() == 2 && b.rank() == 2, ErrorKind::dimension,
          "zoh_discretize: expected delta [T,D], A [D,N], B [T,N]");
  const std::size_t t_len = delta.dim(0), d = delta.dim(1), n = a.dim(1);
  check_shape(a, {d, n}, "zoh_discretize A");
  check_shape(b, {t_len, n}, "zoh_discretize B");
  check_dtype(delta, a, "zoh_discretize");
  check_dtype(delta, b, "zoh_discretize");
  check_positive(delta, "zoh_discretize: delta");
  check_negative(a, "zoh_discretize: A");
  Shape out{t_len, d, n};
  return dispatch(delta.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto dv = delta.data<T>();
    auto av = a.data<T>();
    auto bv = b.data<T>();
    Buffer abuf = std::vector<T>(t_len * d * n);
    Buffer bbuf = std::vector<T>(t_len * d * n);
    auto ao = std::get<std::vector<T>>(abuf).data();
    auto bo = std::get<std::vector<T>>(bbuf).data();
    for (std::size_t t = 0; t < t_len; ++t)
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t k = 0; k < n; ++k) {
          T dt = dv[t * d + i], ak = av[i * n + k];
          T z = dt * ak;
          T em1 = kernels::expm1_any(z);
          std::size_t o = (t * d + i) * n + k;
          ao[o] = em1 + T(1);
          bo[o] = psi(dt, ak, z, em1) * bv[t * n + k];
        }
    DiscretizedParams p;
    p.a_bar = make_result(out, std::move(abuf), {delta, a}, "zoh_a_bar", [t_len, d, n](Node& self) {
      auto g = grad_of<T>(self);
      Node& nd = *self.inputs[0];
      Node& na = *self.inputs[1];
      auto dv = values_of<T>(nd);
      auto av = values_of<T>(na);
      auto ab = values_of<T>(self);
      std::span<T> gd, ga;
      if (nd.requires_grad) gd = grad_of<T>(nd);
      if (na.requires_grad) ga = grad_of<T>(na);
      for (std::size_t t = 0; t < t_len; ++t)
        for (std::size_t i = 0; i < d; ++i)
          for (std::size_t k = 0; k < n; ++k) {
            std::size_t o = (t * d + i) * n + k;
            T gv = g[o] * ab[o];
            if (nd.requires_grad) gd[t * d + i] += gv * av[i * n + k];
            if (na.requires_grad) ga[i * n + k] += gv * dv[t * d + i];
          }
    });
    p.b_bar = make_result(out, std::move(bbuf), {delta, a, b}, "zoh_b_bar", [t_len, d, n](Node& self) {
      auto g = grad_of<T>(self);
      Node& nd = *self.inputs[0];
      Node& na = *self.inputs[1];
      Node& nb = *self.inputs[2];
      auto dv = values_of<T>(nd);
      auto av = values_of<T>(na);
      auto bv = values_of<T>(nb);
      std::span<T> gd, ga, gb;
      if (nd.requires_grad) gd = grad_of<T>(nd);
      if (na.requires_grad) ga = grad_of<T>(na);
      if (nb.requires_grad) gb = grad_of<T>(nb);
      for (std::size_t t = 0; t < t_len; ++t)
        for (std::size_t i = 0; i < d; ++i)
          for (std::size_t k = 0; k < n; ++k) {
            std::size_t o = (t * d + i) * n + k;
            T dt = dv[t * d + i], ak = av[i * n + k], bk = bv[t * n + k];
            T z = dt * ak;
            T em1 = kernels::expm1_any(z);
            T ab = em1 + T(1);
            if (nd.requires_grad) gd[t * d + i] += g[o] * bk * dpsi_ddt(z, ab);
            if (na.requires_grad) ga[i * n + k] += g[o] * bk * dpsi_da(dt, z, ab, em1);
            if (nb.requires_grad) gb[t * n + k] += g[o] * psi(dt, ak, z, em1);
          }
    });
    return p;
  });
}

Tensor gate_statistic(const Tensor& delta, const Tensor& a) {
  require(delta.rank() == 2 && a.rank() == 2 && a.dim(0) == delta.dim(1), ErrorKind::dimension,
          "gate_statistic: delta " + to_string(delta.shape()) + " vs A " + to_string(a.shape()));
  check_dtype(delta, a, "gate_statistic");
  const std::size_t t_len = delta.dim(0), d = delta.dim(1), n = a.dim(1);
  return dispatch(delta.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto dv = delta.data<T>();
    auto av = a.data<T>();
    std::vector<T> g(t_len * d);
    const T inv_n = T(1) / static_cast<T>(n);
    std::vector<T> tmp(n);
    for (std::size_t t = 0; t < t_len; ++t)
      for (std::size_t i = 0; i < d; ++i) {
        g[t * d + i] = gate_one(dv[t * d + i], av.data() + i * n, n, inv_n, tmp.data());
      }
    return Tensor::from_vector(std::move(g), {t_len, d});
  });
}

namespace {

// The gate is increasing in delta. Returns a bracket [lo, hi] such that the
// gate is certainly below `target - tol` under lo and certainly at least
// `target + tol` above hi.
template <class T>
std::pair<double, double> delta_bracket(const T* ai, std::size_t n, double target, double tol) {
  auto g = [&](double x) {
    double s = 0;
    for (std::size_t k = 0; k < n; ++k) s -= static_cast<double>(kernels::expm1_any(static_cast<T>(x) * ai[k]));
    return s / static_cast<double>(n);
  };
  auto solve = [&](double y, bool lower) {
    if (y <= 0.0) return 0.0;
    if (y >= 1.0) return std::numeric_limits<double>::infinity();
    double lo = 0.0, hi = 1.0;
    while (g(hi) < y) {
      lo = hi;
      hi *= 4.0;
      if (hi > 1e30) return std::numeric_limits<double>::infinity();
    }
    for (int it = 0; it < 60 && hi - lo > 1e-3 * hi; ++it) {
      const double mid = 0.5 * (lo + hi);
      (g(mid) < y ? lo : hi) = mid;
    }
    return lower ? lo : hi;
  };
  return {solve(target - tol, true), solve(target + tol, false)};
}

}  // namespace

BandMask band_mask(const Tensor& delta, const Tensor& a, double epsilon, double alpha) {
  require(epsilon >= 0.0 && epsilon <= alpha, ErrorKind::contract,
          "band_mask: epsilon " + std::to_string(epsilon) + " outside [0, " + std::to_string(alpha) + "]");
  require(delta.rank() == 2 && a.rank() == 2 && a.dim(0) == delta.dim(1), ErrorKind::dimension,
          "band_mask: delta " + to_string(delta.shape()) + " vs A " + to_string(a.shape()));
  check_dtype(delta, a, "band_mask");
  check_positive(delta, "band_mask: delta");
  check_negative(a, "band_mask: A");
  BandMask mask;
  mask.epsilon = epsilon;
  mask.alpha = alpha;
  const std::size_t t_len = delta.dim(0), d = delta.dim(1), n = a.dim(1);
  mask.m = dispatch(delta.dtype(), [&](auto tag) {
    using T = decltype(tag);
    std::vector<T> m(t_len * d, T(1));
    if (epsilon == 0.0) return Tensor::from_vector(std::move(m), {t_len, d});
    auto dv = delta.data<T>();
    auto av = a.data<T>();
    const T inv_n = T(1) / static_cast<T>(n);
    const T eps = static_cast<T>(epsilon);
    std::vector<T> tmp(n);
    // Short sequences are cheaper to gate directly.
    const bool bracketed = t_len > 32;
    for (std::size_t i = 0; i < d; ++i) {
      const T* ai = av.data() + i * n;
      auto [lo, hi] = bracketed ? delta_bracket(ai, n, epsilon, 1e-4)
                                : std::pair{0.0, std::numeric_limits<double>::infinity()};
      for (std::size_t t = 0; t < t_len; ++t) {
        const double dt = dv[t * d + i];
        T on;
        if (dt <= lo)
          on = T(0);
        else if (dt >= hi)
          on = T(1);
        else
          on = gate_one(dv[t * d + i], ai, n, inv_n, tmp.data()) >= eps ? T(1) : T(0);
        m[t * d + i] = on;
      }
    }
    return Tensor::from_vector(std::move(m), {t_len, d});
  });
  return mask;
}

Tensor selective_scan(const Tensor& x, const DiscretizedParams& disc, const Tensor& c, const Tensor& d_skip,
                      const BandMask& mask) {
  require(x.rank() == 2 && disc.a_bar.rank() == 3, ErrorKind::dimension,
          "selective_scan: expected x [T,D] and a_bar [T,D,N]");
  const std::size_t t_len = x.dim(0), d = x.dim(1), n = disc.a_bar.dim(2);
  check_shape(disc.a_bar, {t_len, d, n}, "selective_scan a_bar");
  check_shape(disc.b_bar, {t_len, d, n}, "selective_scan b_bar");
  check_shape(c, {t_len, n}, "selective_scan C");
  check_shape(d_skip, {d}, "selective_scan D");
  check_shape(mask.m, {t_len, d}, "selective_scan mask");
  for (const Tensor* t : {&disc.a_bar, &disc.b_bar, &c, &d_skip, &mask.m}) check_dtype(x, *t, "selective_scan");
  Tensor m = mask.m;
  return dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xv = x.data<T>();
    auto av = disc.a_bar.data<T>();
    auto bv = disc.b_bar.data<T>();
    auto cv = c.data<T>();
    auto dsk = d_skip.data<T>();
    auto mv = m.data<T>();
    Buffer buf = std::vector<T>(t_len * d);
    auto y = std::get<std::vector<T>>(buf).data();
    std::vector<T> h(d * n, T(0));
    std::vector<T> hist(t_len * d * n);
    for (std::size_t t = 0; t < t_len; ++t) {
      for (std::size_t i = 0; i < d; ++i) {
        T acc = 0;
        T xt = xv[t * d + i];
        for (std::size_t k = 0; k < n; ++k) {
          std::size_t o = (t * d + i) * n + k;
          h[i * n + k] = av[o] * h[i * n + k] + bv[o] * xt;
          acc += cv[t * n + k] * mv[t * d + i] * h[i * n + k];
        }
        y[t * d + i] = acc + dsk[i] * xt;
      }
      std::copy(h.begin(), h.end(), hist.begin() + static_cast<std::ptrdiff_t>(t * d * n));
    }
    return make_result(
        {t_len, d}, std::move(buf), {x, disc.a_bar, disc.b_bar, c, d_skip, m}, "selective_scan",
        [t_len, d, n, hist = std::move(hist)](Node& self) {
          auto gy = grad_of<T>(self);
          Node &nx = *self.inputs[0], &na = *self.inputs[1], &nb = *self.inputs[2], &nc = *self.inputs[3],
               &nd = *self.inputs[4], &nm = *self.inputs[5];
          auto xv = values_of<T>(nx);
          auto av = values_of<T>(na);
          auto bv = values_of<T>(nb);
          auto cv = values_of<T>(nc);
          auto dsk = values_of<T>(nd);
          auto mv = values_of<T>(nm);
          std::span<T> gx, ga, gb, gc, gd;
          if (nx.requires_grad) gx = grad_of<T>(nx);
          if (na.requires_grad) ga = grad_of<T>(na);
          if (nb.requires_grad) gb = grad_of<T>(nb);
          if (nc.requires_grad) gc = grad_of<T>(nc);
          if (nd.requires_grad) gd = grad_of<T>(nd);
          std::vector<T> gh(d * n, T(0));
          for (std::size_t t = t_len; t-- > 0;) {
            const T* ht = hist.data() + t * d * n;
            const T* hp = t > 0 ? hist.data() + (t - 1) * d * n : nullptr;
            for (std::size_t i = 0; i < d; ++i) {
              T g = gy[t * d + i];
              T xt = xv[t * d + i];
              if (nx.requires_grad) gx[t * d + i] += g * dsk[i];
              if (nd.requires_grad) gd[i] += g * xt;
              T gm = g * mv[t * d + i];
              for (std::size_t k = 0; k < n; ++k) {
                std::size_t o = (t * d + i) * n + k;
                if (nc.requires_grad) gc[t * n + k] += gm * ht[i * n + k];
                T ghk = gh[i * n + k] + gm * cv[t * n + k];
                if (na.requires_grad) ga[o] += ghk * (hp ? hp[i * n + k] : T(0));
                if (nb.requires_grad) gb[o] += ghk * xt;
                if (nx.requires_grad) gx[t * d + i] += ghk * bv[o];
                gh[i * n + k] = ghk * av[o];
              }
            }
          }
        });
  });
}

Tensor selective_scan_fused(const Tensor& x, const Tensor& delta, const Tensor& a, const Tensor& b, const Tensor& c,
                            const Tensor& d_skip, const Tensor& mask, const ScanOrder& order) {
  require(x.rank() == 2, ErrorKind::dimension, "selective_scan_fused: expected x [T,D], got " + to_string(x.shape()));
  const std::size_t t_len = x.dim(0), d = x.dim(1);
  require(a.rank() == 2 && a.dim(0) == d, ErrorKind::dimension,
          "selective_scan_fused: A " + to_string(a.shape()) + " vs x " + to_string(x.shape()));
  const std::size_t n = a.dim(1);
  check_shape(delta, {t_len, d}, "selective_scan_fused delta");
  check_shape(b, {t_len, n}, "selective_scan_fused B");
  check_shape(c, {t_len, n}, "selective_scan_fused C");
  check_shape(d_skip, {d}, "selective_scan_fused D");
  for (const Tensor* t : {&delta, &a, &b, &c, &d_skip}) check_dtype(x, *t, "selective_scan_fused");
  if (mask.defined()) {
    check_shape(mask, {t_len, d}, "selective_scan_fused mask");
    check_dtype(x, mask, "selective_scan_fused");
  }
  if (order) require(order->size() == t_len, ErrorKind::dimension, "selective_scan_fused: order length");
  check_positive(delta, "selective_scan_fused: delta");
  check_negative(a, "selective_scan_fused: A");

  return dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xv = x.data<T>();
    auto dv = delta.data<T>();
    auto av = a.data<T>();
    auto bv = b.data<T>();
    auto cv = c.data<T>();
    auto dsk = d_skip.data<T>();
    std::vector<std::uint8_t> on(t_len * d, 1);
    if (mask.defined()) {
      auto mv = mask.data<T>();
      for (std::size_t i = 0; i < on.size(); ++i) on[i] = mv[i] != T(0);
    }
    auto tok = [&order](std::size_t s) -> std::size_t { return order ? (*order)[s] : s; };
    // last traversal step at which each channel is read out (-1: never).
    std::vector<long> last(d, -1);
    for (std::size_t s = 0; s < t_len; ++s) {
      std::size_t t = tok(s);
      for (std::size_t i = 0; i < d; ++i)
        if (on[t * d + i]) last[i] = static_cast<long>(s);
    }
    const std::size_t steps = static_cast<std::size_t>(*std::max_element(last.begin(), last.end()) + 1);
    const bool keep = grad_enabled() && detail::any_requires_grad({&x, &delta, &a, &b, &c, &d_skip});

    Buffer buf = std::vector<T>(t_len * d, T(0));
    auto y = std::get<std::vector<T>>(buf).data();
    std::vector<T> h(d * n, T(0));
    std::vector<T> hist(keep ? steps * d * n : 0);
    for (std::size_t s = 0; s < steps; ++s) {
      const std::size_t t = tok(s);
      const T* bt = bv.data() + t * n;
      const T* ct = cv.data() + t * n;
      for (std::size_t i = 0; i < d; ++i) {
        if (static_cast<long>(s) > last[i]) continue;
        const T dt = dv[t * d + i], xt = xv[t * d + i];
        const T* ai = av.data() + i * n;
        T* hi = h.data() + i * n;
        for (std::size_t k = 0; k < n; ++k) {
          const T z = dt * ai[k];
          const T em1 = kernels::expm1_any(z);
          hi[k] = (em1 + T(1)) * hi[k] + psi(dt, ai[k], z, em1) * bt[k] * xt;
        }
        if (on[t * d + i]) {
          T acc = 0;
          for (std::size_t k = 0; k < n; ++k) acc += ct[k] * hi[k];
          y[t * d + i] = acc;
        }
        if (keep) std::copy_n(hi, n, hist.data() + (s * d + i) * n);
      }
    }
    for (std::size_t t = 0; t < t_len; ++t)
      for (std::size_t i = 0; i < d; ++i) y[t * d + i] += dsk[i] * xv[t * d + i];

    return make_result(
        {t_len, d}, std::move(buf), {x, delta, a, b, c, d_skip}, "selective_scan_fused",
        [t_len, d, n, steps, order, on = std::move(on), last = std::move(last), hist = std::move(hist)](Node& self) {
          auto gy = grad_of<T>(self);
          Node &nx = *self.inputs[0], &ndl = *self.inputs[1], &na = *self.inputs[2], &nb = *self.inputs[3],
               &nc = *self.inputs[4], &nd = *self.inputs[5];
          auto xv = values_of<T>(nx);
          auto dv = values_of<T>(ndl);
          auto av = values_of<T>(na);
          auto bv = values_of<T>(nb);
          auto cv = values_of<T>(nc);
          auto dsk = values_of<T>(nd);
          // Dense scratch accumulators; folded into the graph grads at the end.
          std::vector<T> gx(t_len * d, T(0)), gdl(t_len * d, T(0)), ga(d * n, T(0)), gb(t_len * n, T(0)),
              gc(t_len * n, T(0));
          auto tok = [&order](std::size_t s) -> std::size_t { return order ? (*order)[s] : s; };
          std::vector<T> gh(d * n, T(0));
          for (std::size_t s = steps; s-- > 0;) {
            const std::size_t t = tok(s);
            const T* bt = bv.data() + t * n;
            const T* ct = cv.data() + t * n;
            for (std::size_t i = 0; i < d; ++i) {
              if (static_cast<long>(s) > last[i]) continue;
              const T dt = dv[t * d + i], xt = xv[t * d + i];
              const T* ai = av.data() + i * n;
              const T* hs = hist.data() + (s * d + i) * n;
              const T* hp = s > 0 ? hist.data() + ((s - 1) * d + i) * n : nullptr;
              T* ghi = gh.data() + i * n;
              if (on[t * d + i]) {
                const T g = gy[t * d + i];
                for (std::size_t k = 0; k < n; ++k) {
                  ghi[k] += g * ct[k];
                  gc[t * n + k] += g * hs[k];
                }
              }
              T gxt = 0, gdt = 0;
              for (std::size_t k = 0; k < n; ++k) {
                const T g = ghi[k];
                const T z = dt * ai[k];
                const T em1 = kernels::expm1_any(z);
                const T ab = em1 + T(1);
                const T ps = psi(dt, ai[k], z, em1);
                const T hprev = hp ? hp[k] : T(0);
                const T g_ab = g * hprev;      // d/d a_bar
                const T g_bb = g * xt;         // d/d b_bar
                gxt += g * ps * bt[k];
                gdt += g_ab * ai[k] * ab + g_bb * bt[k] * dpsi_ddt(z, ab);
                ga[i * n + k] += g_ab * dt * ab + g_bb * bt[k] * dpsi_da(dt, z, ab, em1);
                gb[t * n + k] += g_bb * ps;
                ghi[k] = g * ab;
              }
              gx[t * d + i] += gxt;
              gdl[t * d + i] += gdt;
            }
          }
          std::vector<T> gd(d, T(0));
          for (std::size_t t = 0; t < t_len; ++t)
            for (std::size_t i = 0; i < d; ++i) {
              gx[t * d + i] += gy[t * d + i] * dsk[i];
              gd[i] += gy[t * d + i] * xv[t * d + i];
            }
          auto fold = [](Node& node, const std::vector<T>& src) {
            if (!node.requires_grad) return;
            auto dst = grad_of<T>(node);
            for (std::size_t j = 0; j < src.size(); ++j) dst[j] += src[j];
          };
          fold(nx, gx);
          fold(ndl, gdl);
          fold(na, ga);
          fold(nb, gb);
          fold(nc, gc);
          fold(nd, gd);
        });
  });
}

}  // namespace frn::ssm
