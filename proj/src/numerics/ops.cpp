#include "numerics/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <memory>
#include <numeric>

#include "numerics/kernels.hpp"

namespace frn {

using detail::grad_of;
using detail::make_result;
using detail::values_of;

namespace {

void require_same_dtype(const Tensor& a, const Tensor& b, const char* op) {
  require(a.dtype() == b.dtype(), ErrorKind::contract, std::string(op) + ": mixed dtypes");
}

template <class T>
Buffer buffer_of(std::size_t n) {
  return std::vector<T>(n, T(0));
}

template <class T>
std::span<T> out_span(Buffer& b) {
  return std::get<std::vector<T>>(b);
}

// ---------------------------------------------------------------------------
// Broadcasting

Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  std::size_t r = std::max(a.size(), b.size());
  Shape out(r);
  for (std::size_t i = 0; i < r; ++i) {
    std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1)
      fail(ErrorKind::dimension,
           std::string(op) + ": cannot broadcast " + to_string(a) + " with " + to_string(b));
    out[i] = da == 1 ? db : da;
  }
  return out;
}

// Strides of `in` laid out in `out`'s index space; broadcast axes get 0.
std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::size_t r = out.size();
  std::vector<std::size_t> s(r, 0);
  std::size_t stride = 1;
  for (std::size_t i = in.size(); i-- > 0;) {
    std::size_t oi = i + (r - in.size());
    s[oi] = in[i] == 1 ? 0 : stride;
    stride *= in[i];
  }
  return s;
}

// Calls f(out_index, a_offset, b_offset) for every output element.
template <class F>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, F&& f) {
  std::size_t r = out.size();
  std::size_t total = numel(out);
  if (total == 0) return;
  if (r == 0) {
    f(0, 0, 0);
    return;
  }
  std::size_t last = out[r - 1];
  std::size_t la = sa[r - 1], lb = sb[r - 1];
  std::vector<std::size_t> idx(r, 0);
  std::size_t oa = 0, ob = 0;
  for (std::size_t base = 0; base < total; base += last) {
    for (std::size_t j = 0; j < last; ++j) f(base + j, oa + j * la, ob + j * lb);
    for (std::size_t ax = r - 1; ax-- > 0;) {
      ++idx[ax];
      oa += sa[ax];
      ob += sb[ax];
      if (idx[ax] < out[ax]) break;
      oa -= sa[ax] * idx[ax];
      ob -= sb[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
}

enum class BinOp { add, sub, mul, div };

Tensor binary(const Tensor& a, const Tensor& b, BinOp op, const char* name) {
  require_same_dtype(a, b, name);
  Shape out_shape = broadcast_shape(a.shape(), b.shape(), name);
  bool same = a.shape() == b.shape();
  auto sa = broadcast_strides(a.shape(), out_shape);
  auto sb = broadcast_strides(b.shape(), out_shape);
  return dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Buffer buf = buffer_of<T>(numel(out_shape));
    auto o = out_span<T>(buf);
    auto x = a.data<T>();
    auto y = b.data<T>();
    auto apply = [op](T u, T v) {
      switch (op) {
        case BinOp::add: return u + v;
        case BinOp::sub: return u - v;
        case BinOp::mul: return u * v;
        case BinOp::div: return u / v;
      }
      return T(0);
    };
    if (same) {
      for (std::size_t i = 0; i < o.size(); ++i) o[i] = apply(x[i], y[i]);
    } else {
      for_each_broadcast(out_shape, sa, sb,
                         [&](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = apply(x[ia], y[ib]); });
    }
    return make_result(out_shape, std::move(buf), {a, b}, name,
                       [op, out_shape, sa, sb](Node& self) {
                         auto g = grad_of<T>(self);
                         Node& na = *self.inputs[0];
                         Node& nb = *self.inputs[1];
                         auto x = values_of<T>(na);
                         auto y = values_of<T>(nb);
                         bool ga_on = na.requires_grad, gb_on = nb.requires_grad;
                         std::span<T> ga, gb;
                         if (ga_on) ga = grad_of<T>(na);
                         if (gb_on) gb = grad_of<T>(nb);
                         for_each_broadcast(out_shape, sa, sb,
                                            [&](std::size_t i, std::size_t ia, std::size_t ib) {
                                              T gi = g[i];
                                              switch (op) {
                                                case BinOp::add:
                                                  if (ga_on) ga[ia] += gi;
                                                  if (gb_on) gb[ib] += gi;
                                                  break;
                                                case BinOp::sub:
                                                  if (ga_on) ga[ia] += gi;
                                                  if (gb_on) gb[ib] -= gi;
                                                  break;
                                                case BinOp::mul:
                                                  if (ga_on) ga[ia] += gi * y[ib];
                                                  if (gb_on) gb[ib] += gi * x[ia];
                                                  break;
                                                case BinOp::div:
                                                  if (ga_on) ga[ia] += gi / y[ib];
                                                  if (gb_on) gb[ib] -= gi * x[ia] / (y[ib] * y[ib]);
                                                  break;
                                              }
                                            });
                       });
  });
}

// Unary op with derivative expressed through input x and output y.
template <class Fwd, class Deriv>
Tensor unary(const Tensor& a, const char* name, Fwd fwd, Deriv deriv) {
  return dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto x = a.data<T>();
    Buffer buf = buffer_of<T>(x.size());
    auto o = out_span<T>(buf);
    for (std::size_t i = 0; i < x.size(); ++i) o[i] = fwd(x[i]);
    return make_result(a.shape(), std::move(buf), {a}, name, [deriv](Node& self) {
      Node& in = *self.inputs[0];
      if (!in.requires_grad) return;
      auto g = grad_of<T>(self);
      auto x = values_of<T>(in);
      auto y = values_of<T>(self);
      auto gi = grad_of<T>(in);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i] * deriv(x[i], y[i]);
    });
  });
}

template <class T>
T sigmoid_scalar(T x) {
  const T e = kernels::exp_any(-std::abs(x));
  const T r = T(1) / (T(1) + e);
  return x >= T(0) ? r : e * r;
}

template <class T>
T softplus_scalar(T x) {
  // log1p(exp(-|x|)) + max(x, 0)
  return kernels::log1p_unit(kernels::exp_any(-std::abs(x))) + std::max(x, T(0));
}

// outer x axis x inner decomposition of a shape around `axis`.
struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::mul, "mul"); }
Tensor div(const Tensor& a, const Tensor& b) { return binary(a, b, BinOp::div, "div"); }

Tensor add_scalar(const Tensor& a, double s) {
  return unary(
      a, "add_scalar", [s](auto x) { return x + static_cast<decltype(x)>(s); },
      [](auto, auto) { return decltype(0.0f)(1); });
}

Tensor mul_scalar(const Tensor& a, double s) {
  return dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    const T k = static_cast<T>(s);
    return unary(a, "mul_scalar", [k](T x) { return k * x; }, [k](T, T) { return k; });
  });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor exp(const Tensor& a) {
  return unary(
      a, "exp", [](auto x) { return std::exp(x); }, [](auto, auto y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary(
      a, "log", [](auto x) { return std::log(x); },
      [](auto x, auto) { return decltype(x)(1) / x; });
}

Tensor abs(const Tensor& a) {
  return unary(
      a, "abs", [](auto x) { return std::abs(x); },
      [](auto x, auto) {
        using T = decltype(x);
        return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0));
      });
}

Tensor square(const Tensor& a) {
  return unary(
      a, "square", [](auto x) { return x * x; }, [](auto x, auto) { return decltype(x)(2) * x; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      a, "sigmoid", [](auto x) { return sigmoid_scalar(x); },
      [](auto, auto y) { return y * (decltype(y)(1) - y); });
}

Tensor silu(const Tensor& a) {
  return unary(
      a, "silu", [](auto x) { return x * sigmoid_scalar(x); },
      [](auto x, auto) {
        using T = decltype(x);
        T s = sigmoid_scalar(x);
        return s * (T(1) + x * (T(1) - s));
      });
}

Tensor softplus(const Tensor& a) {
  return unary(
      a, "softplus", [](auto x) { return softplus_scalar(x); },
      [](auto x, auto) { return sigmoid_scalar(x); });
}

// ---------------------------------------------------------------------------
// Reductions and shape ops

Tensor sum(const Tensor& a) {
  return dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto x = a.data<T>();
    double acc = 0;
    for (auto v : x) acc += v;
    Buffer buf = std::vector<T>{static_cast<T>(acc)};
    return make_result(Shape{}, std::move(buf), {a}, "sum", [](Node& self) {
      Node& in = *self.inputs[0];
      if (!in.requires_grad) return;
      T g = grad_of<T>(self)[0];
      for (auto& v : grad_of<T>(in)) v += g;
    });
  });
}

Tensor mean(const Tensor& a) {
  require(a.numel() > 0, ErrorKind::contract, "mean of empty tensor");
  return mul_scalar(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor sum_axis(const Tensor& a, std::size_t axis, bool keepdim) {
  require(axis < a.rank(), ErrorKind::dimension,
          "sum_axis: axis " + std::to_string(axis) + " out of range for " + to_string(a.shape()));
  auto sp = split_axis(a.shape(), axis);
  Shape out_shape = a.shape();
  if (keepdim)
    out_shape[axis] = 1;
  else
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  return dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto x = a.data<T>();
    Buffer buf = buffer_of<T>(sp.outer * sp.inner);
    auto o = out_span<T>(buf);
    for (std::size_t p = 0; p < sp.outer; ++p)
      for (std::size_t c = 0; c < sp.n; ++c)
        for (std::size_t q = 0; q < sp.inner; ++q) o[p * sp.inner + q] += x[(p * sp.n + c) * sp.inner + q];
    return make_result(out_shape, std::move(buf), {a}, "sum_axis", [sp](Node& self) {
      Node& in = *self.inputs[0];
      if (!in.requires_grad) return;
      auto g = grad_of<T>(self);
      auto gi = grad_of<T>(in);
      for (std::size_t p = 0; p < sp.outer; ++p)
        for (std::size_t c = 0; c < sp.n; ++c)
          for (std::size_t q = 0; q < sp.inner; ++q) gi[(p * sp.n + c) * sp.inner + q] += g[p * sp.inner + q];
    });
  });
}

Tensor mean_axis(const Tensor& a, std::size_t axis, bool keepdim) {
  require(axis < a.rank() && a.dim(axis) > 0, ErrorKind::dimension, "mean_axis: bad axis");
  return mul_scalar(sum_axis(a, axis, keepdim), 1.0 / static_cast<double>(a.dim(axis)));
}

Tensor broadcast_to(const Tensor& a, const Shape& shape) {
  Shape check = broadcast_shape(a.shape(), shape, "broadcast_to");
  require(check == shape, ErrorKind::dimension,
          "broadcast_to: " + to_string(a.shape()) + " does not broadcast to " + to_string(shape));
  auto sa = broadcast_strides(a.shape(), shape);
  std::vector<std::size_t> none(shape.size(), 0);
  return dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto x = a.data<T>();
    Buffer buf = buffer_of<T>(numel(shape));
    auto o = out_span<T>(buf);
    for_each_broadcast(shape, sa, none, [&](std::size_t i, std::size_t ia, std::size_t) { o[i] = x[ia]; });
    return make_result(shape, std::move(buf), {a}, "broadcast_to", [shape, sa, none](Node& self) {
      Node& in = *self.inputs[0];
      if (!in.requires_grad) return;
      auto g = grad_of<T>(self);
      auto gi = grad_of<T>(in);
      for_each_broadcast(shape, sa, none, [&](std::size_t i, std::size_t ia, std::size_t) { gi[ia] += g[i]; });
    });
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  require(numel(shape) == a.numel(), ErrorKind::dimension,
          "reshape: " + to_string(a.shape()) + " -> " + to_string(shape));
  return dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto x = a.data<T>();
    Buffer buf = std::vector<T>(x.begin(), x.end());
    return make_result(std::move(shape), std::move(buf), {a}, "reshape", [](Node& self) {
      Node& in = *self.inputs[0];
      if (!in.requires_grad) return;
      auto g = grad_of<T>(self);
      auto gi = grad_of<T>(in);
      for (std::size_t i = 0; i < g.size(); ++i) gi[i] += g[i];
    });
  });
}

Tensor permute(const Tensor& a, const std::vector<std::size_t>& dims) {
  std::size_t r = a.rank();
  require(dims.size() == r, ErrorKind::dimension, "permute: rank mismatch");
  std::vector<bool> seen(r, false);
  for (auto d : dims) {
    require(d < r && !seen[d], ErrorKind::contract, "permute: dims must be a permutation");
    seen[d] = true;
  }
  Shape out_shape(r);
  std::vector<std::size_t> in_strides(r), out_src_strides(r);
  std::size_t st = 1;
  for (std::size_t i = r; i-- > 0;) {
    in_strides[i] = st;
    st *= a.dim(i);
  }
  for (std::size_t i = 0; i < r; ++i) {
    out_shape[i] = a.dim(dims[i]);
    out_src_strides[i] = in_strides[dims[i]];
  }
  std::vector<std::size_t> none(r, 0);
  return dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto x = a.data<T>();
    Buffer buf = buffer_of<T>(x.size());
    auto o = out_span<T>(buf);
    for_each_broadcast(out_shape, out_src_strides, none,
                       [&](std::size_t i, std::size_t ia, std::size_t) { o[i] = x[ia]; });
    return make_result(out_shape, std::move(buf), {a}, "permute",
                       [out_shape, out_src_strides, none](Node& self) {
                         Node& in = *self.inputs[0];
                         if (!in.requires_grad) return;
                         auto g = grad_of<T>(self);
                         auto gi = grad_of<T>(in);
                         for_each_broadcast(out_shape, out_src_strides, none,
                                            [&](std::size_t i, std::size_t ia, std::size_t) { gi[ia] += g[i]; });
                       });
  });
}

Tensor transpose(const Tensor& a) {
  require(a.rank() >= 2, ErrorKind::dimension, "transpose: rank < 2");
  std::vector<std::size_t> dims(a.rank());
  std::iota(dims.begin(), dims.end(), 0);
  std::swap(dims[a.rank() - 1], dims[a.rank() - 2]);
  return permute(a, dims);
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  require(!parts.empty(), ErrorKind::contract, "concat: no inputs");
  const Shape& first = parts[0].shape();
  require(axis < first.size(), ErrorKind::dimension, "concat: axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    require(p.rank() == first.size() && p.dtype() == parts[0].dtype(), ErrorKind::dimension,
            "concat: rank/dtype mismatch");
    for (std::size_t i = 0; i < first.size(); ++i)
      if (i != axis)
        require(p.dim(i) == first[i], ErrorKind::dimension,
                "concat: " + to_string(p.shape()) + " vs " + to_string(first));
    out_shape[axis] += p.dim(axis);
    widths.push_back(p.dim(axis));
  }
  auto sp = split_axis(out_shape, axis);
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return dispatch(parts[0].dtype(), [&](auto tag) {
    using T = decltype(tag);
    Buffer buf = buffer_of<T>(numel(out_shape));
    auto o = out_span<T>(buf);
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      auto x = parts[k].template data<T>();
      std::size_t w = widths[k];
      for (std::size_t p = 0; p < sp.outer; ++p)
        std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(p * w * sp.inner), w * sp.inner,
                    o.begin() + static_cast<std::ptrdiff_t>((p * sp.n + off) * sp.inner));
      off += w;
    }
    return make_result(out_shape, std::move(buf), inputs, "concat", [sp, widths](Node& self) {
      auto g = grad_of<T>(self);
      std::size_t off = 0;
      for (std::size_t k = 0; k < self.inputs.size(); ++k) {
        Node& in = *self.inputs[k];
        std::size_t w = widths[k];
        if (in.requires_grad) {
          auto gi = grad_of<T>(in);
          for (std::size_t p = 0; p < sp.outer; ++p)
            for (std::size_t q = 0; q < w * sp.inner; ++q)
              gi[p * w * sp.inner + q] += g[(p * sp.n + off) * sp.inner + q];
        }
        off += w;
      }
    });
  });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  require(axis < a.rank(), ErrorKind::dimension, "slice: axis out of range");
  require(begin <= end && end <= a.dim(axis), ErrorKind::dimension,
          "slice: [" + std::to_string(begin) + "," + std::to_string(end) + ") out of range for " +
              to_string(a.shape()));
  auto sp = split_axis(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape[axis] = end - begin;
  std::size_t w = end - begin;
  return dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto x = a.data<T>();
    Buffer buf = buffer_of<T>(numel(out_shape));
    auto o = out_span<T>(buf);
    for (std::size_t p = 0; p < sp.outer; ++p)
      std::copy_n(x.begin() + static_cast<std::ptrdiff_t>((p * sp.n + begin) * sp.inner), w * sp.inner,
                  o.begin() + static_cast<std::ptrdiff_t>(p * w * sp.inner));
    return make_result(out_shape, std::move(buf), {a}, "slice", [sp, w, begin](Node& self) {
      Node& in = *self.inputs[0];
      if (!in.requires_grad) return;
      auto g = grad_of<T>(self);
      auto gi = grad_of<T>(in);
      for (std::size_t p = 0; p < sp.outer; ++p)
        for (std::size_t q = 0; q < w * sp.inner; ++q)
          gi[(p * sp.n + begin) * sp.inner + q] += g[p * w * sp.inner + q];
    });
  });
}

// ---------------------------------------------------------------------------
// matmul

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_same_dtype(a, b, "matmul");
  require(a.rank() >= 1 && b.rank() >= 1, ErrorKind::dimension, "matmul: scalar operand");
  if (a.rank() == 1) {
    Tensor r = matmul(reshape(a, {1, a.dim(0)}), b);
    Shape s = r.shape();
    s.erase(s.end() - 2);
    return reshape(r, s);
  }
  if (b.rank() == 1) {
    Tensor r = matmul(a, reshape(b, {b.dim(0), 1}));
    Shape s = r.shape();
    s.pop_back();
    return reshape(r, s);
  }
  const std::size_t m = a.dim(a.rank() - 2), k = a.dim(a.rank() - 1);
  const std::size_t kb = b.dim(b.rank() - 2), n = b.dim(b.rank() - 1);
  if (k != kb)
    fail(ErrorKind::dimension,
         "matmul: inner dimensions differ: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  Shape ba(a.shape().begin(), a.shape().end() - 2);
  Shape bb(b.shape().begin(), b.shape().end() - 2);
  Shape batch;
  try {
    batch = broadcast_shape(ba, bb, "matmul");
  } catch (const Error&) {
    fail(ErrorKind::dimension,
         "matmul: batch dimensions not broadcastable: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  auto sa = broadcast_strides(ba, batch);
  auto sb = broadcast_strides(bb, batch);
  Shape out_shape = batch;
  out_shape.push_back(m);
  out_shape.push_back(n);
  // Enumerate (out batch, a batch, b batch) offsets once.
  std::vector<std::array<std::size_t, 3>> pairs;
  for_each_broadcast(batch, sa, sb, [&](std::size_t i, std::size_t ia, std::size_t ib) {
    pairs.push_back({i, ia, ib});
  });
  return dispatch(a.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto x = a.data<T>();
    auto y = b.data<T>();
    Buffer buf = buffer_of<T>(numel(out_shape));
    auto o = out_span<T>(buf);
    for (const auto& [io, ia, ib] : pairs)
      kernels::gemm_nn(m, n, k, x.data() + ia * m * k, y.data() + ib * k * n, o.data() + io * m * n);
    return make_result(out_shape, std::move(buf), {a, b}, "matmul", [pairs, m, n, k](Node& self) {
      auto g = grad_of<T>(self);
      Node& na = *self.inputs[0];
      Node& nb = *self.inputs[1];
      auto x = values_of<T>(na);
      auto y = values_of<T>(nb);
      if (na.requires_grad) {
        auto ga = grad_of<T>(na);
        for (const auto& [io, ia, ib] : pairs)
          kernels::gemm_nt(m, n, k, g.data() + io * m * n, y.data() + ib * k * n, ga.data() + ia * m * k);
      }
      if (nb.requires_grad) {
        auto gb = grad_of<T>(nb);
        for (const auto& [io, ia, ib] : pairs)
          kernels::gemm_tn(m, n, k, x.data() + ia * m * k, g.data() + io * m * n, gb.data() + ib * k * n);
      }
    });
  });
}

// ---------------------------------------------------------------------------
// layer_norm

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps, std::size_t axis) {
  require(axis < x.rank(), ErrorKind::dimension, "layer_norm: axis out of range");
  require(eps > 0, ErrorKind::contract, "layer_norm: eps must be positive");
  const std::size_t c = x.dim(axis);
  require(gamma.numel() == c && beta.numel() == c, ErrorKind::dimension,
          "layer_norm: affine length " + std::to_string(gamma.numel()) + " for " + std::to_string(c) +
              " channels");
  require_same_dtype(x, gamma, "layer_norm");
  require_same_dtype(x, beta, "layer_norm");
  auto sp = split_axis(x.shape(), axis);
  return dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto in = x.data<T>();
    auto gm = gamma.data<T>();
    auto bt = beta.data<T>();
    Buffer buf = buffer_of<T>(in.size());
    auto o = out_span<T>(buf);
    std::vector<T> xhat(in.size());
    std::vector<T> rstd(sp.outer * sp.inner);
    std::vector<double> mu(sp.inner), var(sp.inner);
    for (std::size_t p = 0; p < sp.outer; ++p) {
      std::fill(mu.begin(), mu.end(), 0.0);
      std::fill(var.begin(), var.end(), 0.0);
      const T* base = in.data() + p * sp.n * sp.inner;
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t q = 0; q < sp.inner; ++q) mu[q] += base[ch * sp.inner + q];
      for (auto& v : mu) v /= static_cast<double>(c);
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t q = 0; q < sp.inner; ++q) {
          double d = base[ch * sp.inner + q] - mu[q];
          var[q] += d * d;
        }
      for (std::size_t q = 0; q < sp.inner; ++q)
        rstd[p * sp.inner + q] = static_cast<T>(1.0 / std::sqrt(var[q] / static_cast<double>(c) + eps));
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t q = 0; q < sp.inner; ++q) {
          std::size_t i = (p * sp.n + ch) * sp.inner + q;
          T xh = static_cast<T>((in[i] - mu[q])) * rstd[p * sp.inner + q];
          xhat[i] = xh;
          o[i] = xh * gm[ch] + bt[ch];
        }
    }
    return make_result(
        x.shape(), std::move(buf), {x, gamma, beta}, "layer_norm",
        [sp, xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
          auto g = grad_of<T>(self);
          Node& nx = *self.inputs[0];
          Node& ng = *self.inputs[1];
          Node& nb = *self.inputs[2];
          auto gm = values_of<T>(ng);
          const std::size_t c = sp.n;
          if (ng.requires_grad || nb.requires_grad) {
            std::span<T> gg, gb;
            if (ng.requires_grad) gg = grad_of<T>(ng);
            if (nb.requires_grad) gb = grad_of<T>(nb);
            for (std::size_t p = 0; p < sp.outer; ++p)
              for (std::size_t ch = 0; ch < c; ++ch) {
                std::size_t i0 = (p * sp.n + ch) * sp.inner;
                if (ng.requires_grad) gg[ch] += kernels::dot(g.data() + i0, xhat.data() + i0, sp.inner);
                if (nb.requires_grad) {
                  T s = 0;
                  for (std::size_t q = 0; q < sp.inner; ++q) s += g[i0 + q];
                  gb[ch] += s;
                }
              }
          }
          if (!nx.requires_grad) return;
          auto gx = grad_of<T>(nx);
          std::vector<T> m1(sp.inner), m2(sp.inner);
          const T inv_c = T(1) / static_cast<T>(c);
          for (std::size_t p = 0; p < sp.outer; ++p) {
            std::fill(m1.begin(), m1.end(), T(0));
            std::fill(m2.begin(), m2.end(), T(0));
            for (std::size_t ch = 0; ch < c; ++ch) {
              std::size_t i0 = (p * sp.n + ch) * sp.inner;
              for (std::size_t q = 0; q < sp.inner; ++q) {
                T gh = g[i0 + q] * gm[ch];
                m1[q] += gh;
                m2[q] += gh * xhat[i0 + q];
              }
            }
            for (std::size_t ch = 0; ch < c; ++ch) {
              std::size_t i0 = (p * sp.n + ch) * sp.inner;
              for (std::size_t q = 0; q < sp.inner; ++q) {
                T gh = g[i0 + q] * gm[ch];
                gx[i0 + q] += rstd[p * sp.inner + q] * (gh - m1[q] * inv_c - xhat[i0 + q] * m2[q] * inv_c);
              }
            }
          }
        });
  });
}

// ---------------------------------------------------------------------------
// Convolutions

namespace {

struct ConvGeom {
  std::size_t ci, h, w, co, kh, kw, stride, pad, ho, wo;
};

// Valid output-column range [lo, hi) for kernel column kx.
inline void col_range(const ConvGeom& g, std::size_t kx, std::size_t& lo, std::size_t& hi) {
  // ix = ox*s + kx - p in [0, w)
  long p = static_cast<long>(g.pad), s = static_cast<long>(g.stride), k = static_cast<long>(kx);
  long l = p - k > 0 ? (p - k + s - 1) / s : 0;
  long h = (static_cast<long>(g.w) - 1 + p - k);
  h = h < 0 ? 0 : h / s + 1;
  if (static_cast<long>(g.w) - 1 + p - k < 0) h = 0;
  lo = static_cast<std::size_t>(std::min<long>(l, static_cast<long>(g.wo)));
  hi = static_cast<std::size_t>(std::min<long>(h, static_cast<long>(g.wo)));
  if (hi < lo) hi = lo;
}

// cols[(ci*kh+ky)*kw+kx, oy*wo+ox] = x[ci, oy*s+ky-p, ox*s+kx-p] (0 outside).
template <class T>
void im2col(const ConvGeom& g, const T* x, T* cols) {
  const std::size_t plane = g.ho * g.wo;
  for (std::size_t ci = 0; ci < g.ci; ++ci)
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        T* row = cols + ((ci * g.kh + ky) * g.kw + kx) * plane;
        std::size_t lo, hi;
        col_range(g, kx, lo, hi);
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          T* dst = row + oy * g.wo;
          long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill_n(dst, g.wo, T(0));
            continue;
          }
          const T* xr = x + (ci * g.h + static_cast<std::size_t>(iy)) * g.w;
          std::fill_n(dst, lo, T(0));
          for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] = xr[ox * g.stride + kx - g.pad];
          std::fill(dst + hi, dst + g.wo, T(0));
        }
      }
}

template <class T>
void col2im_add(const ConvGeom& g, const T* cols, T* x) {
  const std::size_t plane = g.ho * g.wo;
  for (std::size_t ci = 0; ci < g.ci; ++ci)
    for (std::size_t ky = 0; ky < g.kh; ++ky)
      for (std::size_t kx = 0; kx < g.kw; ++kx) {
        const T* row = cols + ((ci * g.kh + ky) * g.kw + kx) * plane;
        std::size_t lo, hi;
        col_range(g, kx, lo, hi);
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          T* xr = x + (ci * g.h + static_cast<std::size_t>(iy)) * g.w;
          const T* src = row + oy * g.wo;
          for (std::size_t ox = lo; ox < hi; ++ox) xr[ox * g.stride + kx - g.pad] += src[ox];
        }
      }
}

template <class T>
void conv_forward(const ConvGeom& g, const T* x, const T* w, T* out) {
  const std::size_t plane = g.ho * g.wo, ck = g.ci * g.kh * g.kw;
  std::unique_ptr<T[]> cols(new T[ck * plane]);
  im2col(g, x, cols.get());
  kernels::gemm_nn(g.co, plane, ck, w, cols.get(), out);
}

template <class T>
void conv_backward(const ConvGeom& g, const T* x, const T* w, const T* go, T* gx, T* gw) {
  const std::size_t plane = g.ho * g.wo, ck = g.ci * g.kh * g.kw;
  std::unique_ptr<T[]> cols(new T[ck * plane]);
  if (gw) {
    im2col(g, x, cols.get());
    kernels::gemm_nt(g.co, plane, ck, go, cols.get(), gw);
  }
  if (gx) {
    std::fill_n(cols.get(), ck * plane, T(0));
    kernels::gemm_tn(g.co, plane, ck, w, go, cols.get());
    col2im_add(g, cols.get(), gx);
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride, std::size_t padding) {
  require(x.rank() == 3 && w.rank() == 4, ErrorKind::dimension,
          "conv2d: expected x [Ci,H,W] and w [Co,Ci,kh,kw], got " + to_string(x.shape()) + " and " +
              to_string(w.shape()));
  require(w.dim(1) == x.dim(0), ErrorKind::dimension,
          "conv2d: input channels " + to_string(x.shape()) + " vs kernel " + to_string(w.shape()));
  require(stride >= 1, ErrorKind::contract, "conv2d: stride must be >= 1");
  require_same_dtype(x, w, "conv2d");
  ConvGeom g{x.dim(0), x.dim(1), x.dim(2), w.dim(0), w.dim(2), w.dim(3), stride, padding, 0, 0};
  require(g.kh <= g.h + 2 * padding && g.kw <= g.w + 2 * padding, ErrorKind::dimension,
          "conv2d: kernel " + to_string(w.shape()) + " larger than padded input " + to_string(x.shape()));
  g.ho = (g.h + 2 * padding - g.kh) / stride + 1;
  g.wo = (g.w + 2 * padding - g.kw) / stride + 1;
  if (bias.defined())
    require(bias.numel() == g.co && bias.dtype() == x.dtype(), ErrorKind::dimension, "conv2d: bias length");
  const bool pointwise = g.kh == 1 && g.kw == 1 && stride == 1 && padding == 0;
  Shape out_shape{g.co, g.ho, g.wo};
  return dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Buffer buf = buffer_of<T>(numel(out_shape));
    auto o = out_span<T>(buf);
    const std::size_t plane = g.ho * g.wo;
    if (bias.defined()) {
      auto b = bias.data<T>();
      for (std::size_t co = 0; co < g.co; ++co) std::fill_n(o.begin() + static_cast<std::ptrdiff_t>(co * plane), plane, b[co]);
    }
    if (pointwise)
      kernels::gemm_nn(g.co, plane, g.ci, w.data<T>().data(), x.data<T>().data(), o.data());
    else
      conv_forward(g, x.data<T>().data(), w.data<T>().data(), o.data());
    std::vector<Tensor> inputs{x, w};
    if (bias.defined()) inputs.push_back(bias);
    return make_result(out_shape, std::move(buf), inputs, "conv2d", [g, pointwise](Node& self) {
      auto go = grad_of<T>(self);
      Node& nx = *self.inputs[0];
      Node& nw = *self.inputs[1];
      auto xv = values_of<T>(nx);
      auto wv = values_of<T>(nw);
      const std::size_t plane = g.ho * g.wo;
      if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
        auto gb = grad_of<T>(*self.inputs[2]);
        for (std::size_t co = 0; co < g.co; ++co) {
          T s = 0;
          for (std::size_t i = 0; i < plane; ++i) s += go[co * plane + i];
          gb[co] += s;
        }
      }
      T* gx = nx.requires_grad ? grad_of<T>(nx).data() : nullptr;
      T* gw = nw.requires_grad ? grad_of<T>(nw).data() : nullptr;
      if (pointwise) {
        // out[Co,P] = W[Co,Ci] X[Ci,P]
        if (gx) kernels::gemm_tn(g.co, plane, g.ci, wv.data(), go.data(), gx);
        if (gw) {
          for (std::size_t co = 0; co < g.co; ++co)
            for (std::size_t ci = 0; ci < g.ci; ++ci)
              gw[co * g.ci + ci] += kernels::dot(go.data() + co * plane, xv.data() + ci * plane, plane);
        }
      } else {
        conv_backward(g, xv.data(), wv.data(), go.data(), gx, gw);
      }
    });
  });
}

Tensor dwconv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t padding) {
  require(x.rank() == 3 && w.rank() == 3, ErrorKind::dimension,
          "dwconv2d: expected x [C,H,W] and w [C,k,k], got " + to_string(x.shape()) + " and " +
              to_string(w.shape()));
  require(w.dim(0) == x.dim(0), ErrorKind::dimension,
          "dwconv2d: one kernel per channel required, " + to_string(x.shape()) + " vs " + to_string(w.shape()));
  require_same_dtype(x, w, "dwconv2d");
  const std::size_t c = x.dim(0);
  ConvGeom g{1, x.dim(1), x.dim(2), 1, w.dim(1), w.dim(2), 1, padding, 0, 0};
  require(g.kh <= g.h + 2 * padding && g.kw <= g.w + 2 * padding, ErrorKind::dimension,
          "dwconv2d: kernel " + to_string(w.shape()) + " larger than padded input " + to_string(x.shape()));
  g.ho = g.h + 2 * padding - g.kh + 1;
  g.wo = g.w + 2 * padding - g.kw + 1;
  if (bias.defined())
    require(bias.numel() == c && bias.dtype() == x.dtype(), ErrorKind::dimension, "dwconv2d: bias length");
  Shape out_shape{c, g.ho, g.wo};
  return dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    Buffer buf = buffer_of<T>(numel(out_shape));
    auto o = out_span<T>(buf);
    auto xv = x.data<T>();
    auto wv = w.data<T>();
    const std::size_t in_plane = g.h * g.w, out_plane = g.ho * g.wo, kk = g.kh * g.kw;
    for (std::size_t ch = 0; ch < c; ++ch) {
      if (bias.defined()) std::fill_n(o.begin() + static_cast<std::ptrdiff_t>(ch * out_plane), out_plane, bias.data<T>()[ch]);
      conv_forward(g, xv.data() + ch * in_plane, wv.data() + ch * kk, o.data() + ch * out_plane);
    }
    std::vector<Tensor> inputs{x, w};
    if (bias.defined()) inputs.push_back(bias);
    return make_result(out_shape, std::move(buf), inputs, "dwconv2d", [g, c](Node& self) {
      auto go = grad_of<T>(self);
      Node& nx = *self.inputs[0];
      Node& nw = *self.inputs[1];
      auto xv = values_of<T>(nx);
      auto wv = values_of<T>(nw);
      const std::size_t in_plane = g.h * g.w, out_plane = g.ho * g.wo, kk = g.kh * g.kw;
      if (self.inputs.size() > 2 && self.inputs[2]->requires_grad) {
        auto gb = grad_of<T>(*self.inputs[2]);
        for (std::size_t ch = 0; ch < c; ++ch) {
          T s = 0;
          for (std::size_t i = 0; i < out_plane; ++i) s += go[ch * out_plane + i];
          gb[ch] += s;
        }
      }
      T* gx = nx.requires_grad ? grad_of<T>(nx).data() : nullptr;
      T* gw = nw.requires_grad ? grad_of<T>(nw).data() : nullptr;
      for (std::size_t ch = 0; ch < c; ++ch)
        conv_backward(g, xv.data() + ch * in_plane, wv.data() + ch * kk, go.data() + ch * out_plane,
                      gx ? gx + ch * in_plane : nullptr, gw ? gw + ch * kk : nullptr);
    });
  });
}

Tensor upsample_nearest2x(const Tensor& x) {
  require(x.rank() == 3, ErrorKind::dimension, "upsample_nearest2x: expected [C,H,W], got " + to_string(x.shape()));
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Shape out_shape{c, 2 * h, 2 * w};
  return dispatch(x.dtype(), [&](auto tag) {
    using T = decltype(tag);
    auto xv = x.data<T>();
    Buffer buf = buffer_of<T>(numel(out_shape));
    auto o = out_span<T>(buf);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < 2 * h; ++y)
        for (std::size_t xx = 0; xx < 2 * w; ++xx)
          o[(ch * 2 * h + y) * 2 * w + xx] = xv[(ch * h + y / 2) * w + xx / 2];
    return make_result(out_shape, std::move(buf), {x}, "upsample_nearest2x", [c, h, w](Node& self) {
      Node& in = *self.inputs[0];
      if (!in.requires_grad) return;
      auto g = grad_of<T>(self);
      auto gi = grad_of<T>(in);
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < 2 * h; ++y)
          for (std::size_t xx = 0; xx < 2 * w; ++xx)
            gi[(ch * h + y / 2) * w + xx / 2] += g[(ch * 2 * h + y) * 2 * w + xx];
    });
  });
}

}  // namespace frn
