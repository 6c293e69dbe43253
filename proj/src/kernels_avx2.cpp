#include "dru/kernels.hpp"

// AVX2+FMA variants of the float kernels. This translation unit is compiled
// with -mavx2 -mfma on x86_64; execution is still gated at runtime by the
// dispatcher. Elementwise kernels keep the scalar operation order (no FMA
// contraction) so they stay bit-identical to the reference table; the matrix
// products and reductions use FMA / lane accumulators and are held to a small
// relative error instead.

#if !defined(DRU_REAL_DOUBLE) && defined(__AVX2__) && defined(__FMA__)

#include <immintrin.h>

#include <cmath>

namespace dru::kern {
namespace {

inline float hsum8(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  __m128 s = _mm_add_ps(lo, hi);
  s = _mm_add_ps(s, _mm_movehl_ps(s, s));
  s = _mm_add_ss(s, _mm_shuffle_ps(s, s, 1));
  return _mm_cvtss_f32(s);
}

void gemm_nn_v(i64 M, i64 N, i64 K, const float* A, i64 lda, const float* B, i64 ldb, float* C,
               i64 ldc) {
  for (i64 m = 0; m < M; ++m) {
    float* crow = C + m * ldc;
    for (i64 k = 0; k < K; ++k) {
      const __m256 a = _mm256_set1_ps(A[m * lda + k]);
      const float* brow = B + k * ldb;
      i64 n = 0;
      for (; n + 16 <= N; n += 16) {
        __m256 c0 = _mm256_loadu_ps(crow + n);
        __m256 c1 = _mm256_loadu_ps(crow + n + 8);
        c0 = _mm256_fmadd_ps(a, _mm256_loadu_ps(brow + n), c0);
        c1 = _mm256_fmadd_ps(a, _mm256_loadu_ps(brow + n + 8), c1);
        _mm256_storeu_ps(crow + n, c0);
        _mm256_storeu_ps(crow + n + 8, c1);
      }
      for (; n + 8 <= N; n += 8) {
        __m256 c0 = _mm256_loadu_ps(crow + n);
        c0 = _mm256_fmadd_ps(a, _mm256_loadu_ps(brow + n), c0);
        _mm256_storeu_ps(crow + n, c0);
      }
      const float as = A[m * lda + k];
      for (; n < N; ++n) crow[n] += as * brow[n];
    }
  }
}

void gemm_tn_v(i64 M, i64 N, i64 K, const float* A, i64 lda, const float* B, i64 ldb, float* C,
               i64 ldc) {
  for (i64 k = 0; k < K; ++k) {
    const float* arow = A + k * lda;
    const float* brow = B + k * ldb;
    for (i64 m = 0; m < M; ++m) {
      const __m256 a = _mm256_set1_ps(arow[m]);
      float* crow = C + m * ldc;
      i64 n = 0;
      for (; n + 16 <= N; n += 16) {
        __m256 c0 = _mm256_loadu_ps(crow + n);
        __m256 c1 = _mm256_loadu_ps(crow + n + 8);
        c0 = _mm256_fmadd_ps(a, _mm256_loadu_ps(brow + n), c0);
        c1 = _mm256_fmadd_ps(a, _mm256_loadu_ps(brow + n + 8), c1);
        _mm256_storeu_ps(crow + n, c0);
        _mm256_storeu_ps(crow + n + 8, c1);
      }
      for (; n + 8 <= N; n += 8) {
        __m256 c0 = _mm256_loadu_ps(crow + n);
        c0 = _mm256_fmadd_ps(a, _mm256_loadu_ps(brow + n), c0);
        _mm256_storeu_ps(crow + n, c0);
      }
      const float as = arow[m];
      for (; n < N; ++n) crow[n] += as * brow[n];
    }
  }
}

void gemm_nt_v(i64 M, i64 N, i64 K, const float* A, i64 lda, const float* B, i64 ldb, float* C,
               i64 ldc) {
  for (i64 m = 0; m < M; ++m) {
    const float* arow = A + m * lda;
    for (i64 n = 0; n < N; ++n) {
      const float* brow = B + n * ldb;
      __m256 acc = _mm256_setzero_ps();
      i64 k = 0;
      for (; k + 8 <= K; k += 8) {
        acc = _mm256_fmadd_ps(_mm256_loadu_ps(arow + k), _mm256_loadu_ps(brow + k), acc);
      }
      float s = hsum8(acc);
      for (; k < K; ++k) s += arow[k] * brow[k];
      C[m * ldc + n] += s;
    }
  }
}

void add_v(i64 n, const float* a, const float* b, float* out) {
  i64 i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  }
  for (; i < n; ++i) out[i] = a[i] + b[i];
}

void acc_v(i64 n, float* dst, const float* src) {
  i64 i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(dst + i, _mm256_add_ps(_mm256_loadu_ps(dst + i), _mm256_loadu_ps(src + i)));
  }
  for (; i < n; ++i) dst[i] += src[i];
}

void mul_v(i64 n, const float* a, const float* b, float* out) {
  i64 i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i)));
  }
  for (; i < n; ++i) out[i] = a[i] * b[i];
}

void mul_acc_v(i64 n, const float* a, const float* b, float* dst) {
  i64 i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 p = _mm256_mul_ps(_mm256_loadu_ps(a + i), _mm256_loadu_ps(b + i));
    _mm256_storeu_ps(dst + i, _mm256_add_ps(_mm256_loadu_ps(dst + i), p));
  }
  for (; i < n; ++i) dst[i] += a[i] * b[i];
}

void axpy_v(i64 n, float a, const float* x, float* y) {
  const __m256 av = _mm256_set1_ps(a);
  i64 i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 p = _mm256_mul_ps(av, _mm256_loadu_ps(x + i));
    _mm256_storeu_ps(y + i, _mm256_add_ps(_mm256_loadu_ps(y + i), p));
  }
  for (; i < n; ++i) y[i] += a * x[i];
}

void scale_shift_v(i64 n, const float* x, float a, float b, float* y) {
  const __m256 av = _mm256_set1_ps(a);
  const __m256 bv = _mm256_set1_ps(b);
  i64 i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 p = _mm256_mul_ps(av, _mm256_loadu_ps(x + i));
    _mm256_storeu_ps(y + i, _mm256_add_ps(p, bv));
  }
  for (; i < n; ++i) y[i] = a * x[i] + b;
}

void relu_fwd_v(i64 n, const float* x, float* y) {
  const __m256 zero = _mm256_setzero_ps();
  i64 i = 0;
  for (; i + 8 <= n; i += 8) {
    _mm256_storeu_ps(y + i, _mm256_max_ps(_mm256_loadu_ps(x + i), zero));
  }
  for (; i < n; ++i) y[i] = x[i] > 0.f ? x[i] : 0.f;
}

void relu_bwd_v(i64 n, const float* x, const float* gy, float* gx) {
  const __m256 zero = _mm256_setzero_ps();
  i64 i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 xv = _mm256_loadu_ps(x + i);
    const __m256 g = _mm256_loadu_ps(gx + i);
    const __m256 summed = _mm256_add_ps(g, _mm256_loadu_ps(gy + i));
    const __m256 mask = _mm256_cmp_ps(xv, zero, _CMP_GT_OQ);
    _mm256_storeu_ps(gx + i, _mm256_blendv_ps(g, summed, mask));
  }
  for (; i < n; ++i) {
    if (x[i] > 0.f) gx[i] += gy[i];
  }
}

float sum_v(i64 n, const float* x) {
  __m256 acc = _mm256_setzero_ps();
  i64 i = 0;
  for (; i + 8 <= n; i += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(x + i));
  float s = hsum8(acc);
  for (; i < n; ++i) s += x[i];
  return s;
}

float sum_sq_diff_v(i64 n, const float* x, float mu) {
  const __m256 muv = _mm256_set1_ps(mu);
  __m256 acc = _mm256_setzero_ps();
  i64 i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 d = _mm256_sub_ps(_mm256_loadu_ps(x + i), muv);
    acc = _mm256_fmadd_ps(d, d, acc);
  }
  float s = hsum8(acc);
  for (; i < n; ++i) {
    const float d = x[i] - mu;
    s += d * d;
  }
  return s;
}

void adam_step_v(i64 n, float* p, const float* g, float* m, float* v, float lr, float b1,
                 float b2, float eps, float inv_bc1, float inv_bc2) {
  const __m256 b1v = _mm256_set1_ps(b1);
  const __m256 b2v = _mm256_set1_ps(b2);
  const __m256 ob1 = _mm256_set1_ps(1.f - b1);
  const __m256 ob2 = _mm256_set1_ps(1.f - b2);
  const __m256 lrv = _mm256_set1_ps(lr);
  const __m256 epsv = _mm256_set1_ps(eps);
  const __m256 c1 = _mm256_set1_ps(inv_bc1);
  const __m256 c2 = _mm256_set1_ps(inv_bc2);
  i64 i = 0;
  for (; i + 8 <= n; i += 8) {
    const __m256 gi = _mm256_loadu_ps(g + i);
    __m256 mi = _mm256_loadu_ps(m + i);
    __m256 vi = _mm256_loadu_ps(v + i);
    // keep mul/add split so results match the scalar kernel bit for bit
    mi = _mm256_add_ps(_mm256_mul_ps(b1v, mi), _mm256_mul_ps(ob1, gi));
    vi = _mm256_add_ps(_mm256_mul_ps(b2v, vi), _mm256_mul_ps(ob2, _mm256_mul_ps(gi, gi)));
    _mm256_storeu_ps(m + i, mi);
    _mm256_storeu_ps(v + i, vi);
    const __m256 mhat = _mm256_mul_ps(mi, c1);
    const __m256 vhat = _mm256_mul_ps(vi, c2);
    const __m256 denom = _mm256_add_ps(_mm256_sqrt_ps(vhat), epsv);
    const __m256 upd = _mm256_mul_ps(lrv, _mm256_div_ps(mhat, denom));
    _mm256_storeu_ps(p + i, _mm256_sub_ps(_mm256_loadu_ps(p + i), upd));
  }
  for (; i < n; ++i) {
    const float gi = g[i];
    m[i] = b1 * m[i] + (1.f - b1) * gi;
    v[i] = b2 * v[i] + (1.f - b2) * (gi * gi);
    const float mhat = m[i] * inv_bc1;
    const float vhat = v[i] * inv_bc2;
    p[i] = p[i] - lr * (mhat / (std::sqrt(vhat) + eps));
  }
}

}  // namespace

const KernelTable* avx2_table() {
  static const KernelTable t{
      "avx2",       gemm_nn_v, gemm_tn_v,      gemm_nt_v, add_v,         acc_v,
      mul_v,        mul_acc_v, axpy_v,         scale_shift_v, relu_fwd_v, relu_bwd_v,
      sum_v,        sum_sq_diff_v, adam_step_v,
  };
  return &t;
}

}  // namespace dru::kern

#else  // double build or non-AVX2 target: no vector table

namespace dru::kern {
const KernelTable* avx2_table() { return nullptr; }
}  // namespace dru::kern

#endif
