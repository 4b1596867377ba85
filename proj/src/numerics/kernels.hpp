#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>

// Dense inner loops shared by the tensor ops. All accumulate into the output.
namespace frn::kernels {

template <class T>
inline T dot(const T* a, const T* b, std::size_t n) {
  T acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (std::size_t l = 0; l < 8; ++l) acc[l] += a[i + l] * b[i + l];
  T s = (acc[0] + acc[1]) + (acc[2] + acc[3]) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

template <class T>
inline void axpy(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// C[M,N] += A[M,K] * B[K,N]
template <class T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av != T(0)) axpy(av, b + p * n, crow, n);
    }
  }
}

// C[M,K] += A[M,N] * B[K,N]^T
template <class T>
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * n;
    T* crow = c + i * k;
    for (std::size_t p = 0; p < k; ++p) crow[p] += dot(arow, b + p * n, n);
  }
}

// C[K,N] += A[M,K]^T * B[M,N]
template <class T>
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    const T* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av != T(0)) axpy(av, brow, c + p * n, n);
    }
  }
}

// exp for float with ~2 ulp error; branch-free so loops over it vectorize.
inline float exp_fast(float x) {
  x = x < -87.0f ? -87.0f : (x > 88.0f ? 88.0f : x);
  const float kf = x * 1.44269504f;
  const int k = static_cast<int>(kf + (kf >= 0.0f ? 0.5f : -0.5f));
  const float fk = static_cast<float>(k);
  const float r = (x - fk * 0.693145752f) - fk * 1.42860677e-6f;
  float p = 1.0f / 5040.0f;
  p = p * r + 1.0f / 720.0f;
  p = p * r + 1.0f / 120.0f;
  p = p * r + 1.0f / 24.0f;
  p = p * r + 1.0f / 6.0f;
  p = p * r + 0.5f;
  p = p * r + 1.0f;
  p = p * r + 1.0f;
  const std::int32_t bits = (k + 127) << 23;
  float scale;
  std::memcpy(&scale, &bits, sizeof scale);
  return p * scale;
}

// expm1 keeping relative accuracy near zero.
inline float expm1_fast(float x) {
  float p = 1.0f / 40320.0f;
  p = p * x + 1.0f / 5040.0f;
  p = p * x + 1.0f / 720.0f;
  p = p * x + 1.0f / 120.0f;
  p = p * x + 1.0f / 24.0f;
  p = p * x + 1.0f / 6.0f;
  p = p * x + 0.5f;
  p = p * x + 1.0f;
  p = p * x;
  const float e = exp_fast(x) - 1.0f;
  return (x > -0.5f && x < 0.5f) ? p : e;
}

// log(1 + x) for x in [0, 1] via the atanh series in s = x / (2 + x).
inline float log1p_unit_fast(float x) {
  const float s = x / (2.0f + x);
  const float s2 = s * s;
  float p = 1.0f / 15.0f;
  p = p * s2 + 1.0f / 13.0f;
  p = p * s2 + 1.0f / 11.0f;
  p = p * s2 + 1.0f / 9.0f;
  p = p * s2 + 1.0f / 7.0f;
  p = p * s2 + 1.0f / 5.0f;
  p = p * s2 + 1.0f / 3.0f;
  p = p * s2 + 1.0f;
  return 2.0f * s * p;
}

inline float expm1_any(float x) { return expm1_fast(x); }
inline double expm1_any(double x) { return std::expm1(x); }
inline float exp_any(float x) { return exp_fast(x); }
inline double exp_any(double x) { return std::exp(x); }
inline float log1p_unit(float x) { return log1p_unit_fast(x); }
inline double log1p_unit(double x) { return std::log1p(x); }

}  // namespace frn::kernels
