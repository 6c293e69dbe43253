#include <cmath>

#include "dru/kernels.hpp"

// Reference kernels. Written as plain loops; every SIMD variant is tested
// against these.

namespace dru::kern {
namespace {

void gemm_nn_s(i64 M, i64 N, i64 K, const real_t* A, i64 lda, const real_t* B, i64 ldb,
               real_t* C, i64 ldc) {
  for (i64 m = 0; m < M; ++m) {
    for (i64 k = 0; k < K; ++k) {
      const real_t a = A[m * lda + k];
      const real_t* brow = B + k * ldb;
      real_t* crow = C + m * ldc;
      for (i64 n = 0; n < N; ++n) crow[n] += a * brow[n];
    }
  }
}

void gemm_tn_s(i64 M, i64 N, i64 K, const real_t* A, i64 lda, const real_t* B, i64 ldb,
               real_t* C, i64 ldc) {
  for (i64 k = 0; k < K; ++k) {
    const real_t* arow = A + k * lda;
    const real_t* brow = B + k * ldb;
    for (i64 m = 0; m < M; ++m) {
      const real_t a = arow[m];
      real_t* crow = C + m * ldc;
      for (i64 n = 0; n < N; ++n) crow[n] += a * brow[n];
    }
  }
}

void gemm_nt_s(i64 M, i64 N, i64 K, const real_t* A, i64 lda, const real_t* B, i64 ldb,
               real_t* C, i64 ldc) {
  for (i64 m = 0; m < M; ++m) {
    const real_t* arow = A + m * lda;
    for (i64 n = 0; n < N; ++n) {
      const real_t* brow = B + n * ldb;
      real_t acc = 0;
      for (i64 k = 0; k < K; ++k) acc += arow[k] * brow[k];
      C[m * ldc + n] += acc;
    }
  }
}

void add_s(i64 n, const real_t* a, const real_t* b, real_t* out) {
  for (i64 i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void acc_s(i64 n, real_t* dst, const real_t* src) {
  for (i64 i = 0; i < n; ++i) dst[i] += src[i];
}

void mul_s(i64 n, const real_t* a, const real_t* b, real_t* out) {
  for (i64 i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void mul_acc_s(i64 n, const real_t* a, const real_t* b, real_t* dst) {
  for (i64 i = 0; i < n; ++i) dst[i] += a[i] * b[i];
}

void axpy_s(i64 n, real_t a, const real_t* x, real_t* y) {
  for (i64 i = 0; i < n; ++i) y[i] += a * x[i];
}

void scale_shift_s(i64 n, const real_t* x, real_t a, real_t b, real_t* y) {
  for (i64 i = 0; i < n; ++i) y[i] = a * x[i] + b;
}

void relu_fwd_s(i64 n, const real_t* x, real_t* y) {
  for (i64 i = 0; i < n; ++i) y[i] = x[i] > real_t(0) ? x[i] : real_t(0);
}

void relu_bwd_s(i64 n, const real_t* x, const real_t* gy, real_t* gx) {
  for (i64 i = 0; i < n; ++i) {
    if (x[i] > real_t(0)) gx[i] += gy[i];
  }
}

real_t sum_s(i64 n, const real_t* x) {
  real_t acc = 0;
  for (i64 i = 0; i < n; ++i) acc += x[i];
  return acc;
}

real_t sum_sq_diff_s(i64 n, const real_t* x, real_t mu) {
  real_t acc = 0;
  for (i64 i = 0; i < n; ++i) {
    const real_t d = x[i] - mu;
    acc += d * d;
  }
  return acc;
}

void adam_step_s(i64 n, real_t* p, const real_t* g, real_t* m, real_t* v, real_t lr, real_t b1,
                 real_t b2, real_t eps, real_t inv_bc1, real_t inv_bc2) {
  for (i64 i = 0; i < n; ++i) {
    const real_t gi = g[i];
    m[i] = b1 * m[i] + (real_t(1) - b1) * gi;
    v[i] = b2 * v[i] + (real_t(1) - b2) * (gi * gi);
    const real_t mhat = m[i] * inv_bc1;
    const real_t vhat = v[i] * inv_bc2;
    p[i] = p[i] - lr * (mhat / (std::sqrt(vhat) + eps));
  }
}

}  // namespace

const KernelTable& scalar_table() {
  static const KernelTable t{
      "scalar",     gemm_nn_s, gemm_tn_s,      gemm_nt_s, add_s,         acc_s,
      mul_s,        mul_acc_s, axpy_s,         scale_shift_s, relu_fwd_s, relu_bwd_s,
      sum_s,        sum_sq_diff_s, adam_step_s,
  };
  return t;
}

}  // namespace dru::kern
