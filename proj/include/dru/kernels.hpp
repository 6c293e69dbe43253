#pragma once

#include <cstdint>

#include "dru/config.hpp"

namespace dru::kern {

using i64 = std::int64_t;

// Hot arithmetic loops, routed through a function table so a SIMD variant can
// be selected at runtime. The scalar table is the reference semantics; SIMD
// tables must agree with it (bit-exact for elementwise ops, small relative
// error for reductions and matrix products, which reassociate).
struct KernelTable {
  const char* name;

  // Accumulating row-major matrix products. C is M x N with row stride ldc.
  //   gemm_nn: C[m,n] += sum_k A[m*lda+k] * B[k*ldb+n]
  //   gemm_tn: C[m,n] += sum_k A[k*lda+m] * B[k*ldb+n]
  //   gemm_nt: C[m,n] += sum_k A[m*lda+k] * B[n*ldb+k]
  void (*gemm_nn)(i64 M, i64 N, i64 K, const real_t* A, i64 lda, const real_t* B, i64 ldb,
                  real_t* C, i64 ldc);
  void (*gemm_tn)(i64 M, i64 N, i64 K, const real_t* A, i64 lda, const real_t* B, i64 ldb,
                  real_t* C, i64 ldc);
  void (*gemm_nt)(i64 M, i64 N, i64 K, const real_t* A, i64 lda, const real_t* B, i64 ldb,
                  real_t* C, i64 ldc);

  // elementwise
  void (*add)(i64 n, const real_t* a, const real_t* b, real_t* out);      // out = a + b
  void (*acc)(i64 n, real_t* dst, const real_t* src);                     // dst += src
  void (*mul)(i64 n, const real_t* a, const real_t* b, real_t* out);      // out = a * b
  void (*mul_acc)(i64 n, const real_t* a, const real_t* b, real_t* dst);  // dst += a * b
  void (*axpy)(i64 n, real_t a, const real_t* x, real_t* y);              // y += a * x
  void (*scale_shift)(i64 n, const real_t* x, real_t a, real_t b, real_t* y);  // y = a*x + b
  void (*relu_fwd)(i64 n, const real_t* x, real_t* y);
  void (*relu_bwd)(i64 n, const real_t* x, const real_t* gy, real_t* gx);  // gx += (x>0)*gy

  // reductions
  real_t (*sum)(i64 n, const real_t* x);
  real_t (*sum_sq_diff)(i64 n, const real_t* x, real_t mu);  // sum (x - mu)^2

  // fused Adam update over one parameter array:
  //   m = b1*m + (1-b1)*g;  v = b2*v + (1-b2)*g*g
  //   p -= lr * (m*inv_bc1) / (sqrt(v*inv_bc2) + eps)
  void (*adam_step)(i64 n, real_t* p, const real_t* g, real_t* m, real_t* v, real_t lr,
                    real_t b1, real_t b2, real_t eps, real_t inv_bc1, real_t inv_bc2);
};

enum class Backend { scalar, avx2 };

// Active table. Auto-detected on first use; deterministic per process.
const KernelTable& active();
Backend active_backend();

// Force a backend (tests, --deterministic). Returns false if unavailable.
bool set_backend(Backend b);

const KernelTable& scalar_table();
const KernelTable* avx2_table();  // nullptr when not compiled in or CPU lacks AVX2+FMA

}  // namespace dru::kern
