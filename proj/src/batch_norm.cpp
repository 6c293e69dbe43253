#include <cmath>
#include <vector>

#include "dru/kernels.hpp"
#include "dru/ops.hpp"

namespace dru {

using kern::i64;

namespace {

// dot product via the accumulating nt-product with M = N = 1
real_t dot(const kern::KernelTable& K, i64 n, const real_t* a, const real_t* b) {
  real_t out = 0;
  K.gemm_nt(1, 1, n, a, n, b, n, &out, 1);
  return out;
}

}  // namespace

Var batch_norm(Tape& t, const Var& x, BatchNormParams& p, Mode mode) {
  if (!p.gamma || !p.beta || !p.running_mean || !p.running_var) {
    throw UsageError("batch_norm: missing parameters");
  }
  if (!(p.epsilon > real_t(0))) {
    throw UsageError("batch_norm: epsilon must be positive");
  }
  const Shape4 xs = x.shape();
  const i64 C = p.channels();
  if (xs.c != C) {
    throw ShapeError("batch_norm: input channels " + std::to_string(xs.c) +
                     " do not match parameter channels " + std::to_string(C) + " (input " +
                     xs.str() + ")");
  }
  const auto& K = kern::active();
  const i64 HW = xs.h * xs.w;
  const i64 cnt = xs.n * HW;

  auto mean = std::make_shared<std::vector<real_t>>(C);
  auto inv_std = std::make_shared<std::vector<real_t>>(C);

  if (mode == Mode::train) {
    real_t* rm = p.running_mean->value.data();
    real_t* rv = p.running_var->value.data();
    for (i64 c = 0; c < C; ++c) {
      real_t s = 0;
      for (i64 n = 0; n < xs.n; ++n) s += K.sum(HW, x.val().plane(n, c));
      const real_t mu = s / real_t(cnt);
      real_t sq = 0;
      for (i64 n = 0; n < xs.n; ++n) sq += K.sum_sq_diff(HW, x.val().plane(n, c), mu);
      const real_t var = sq / real_t(cnt);  // population variance
      (*mean)[c] = mu;
      (*inv_std)[c] = real_t(1) / std::sqrt(var + p.epsilon);
      rm[c] = p.momentum * rm[c] + (real_t(1) - p.momentum) * mu;
      rv[c] = p.momentum * rv[c] + (real_t(1) - p.momentum) * var;
    }
  } else {
    const real_t* rm = p.running_mean->value.data();
    const real_t* rv = p.running_var->value.data();
    for (i64 c = 0; c < C; ++c) {
      (*mean)[c] = rm[c];
      (*inv_std)[c] = real_t(1) / std::sqrt(rv[c] + p.epsilon);
    }
  }

  Tensor4 y(xs);
  const real_t* gamma = p.gamma->value.data();
  const real_t* beta = p.beta->value.data();
  for (i64 n = 0; n < xs.n; ++n) {
    for (i64 c = 0; c < C; ++c) {
      const real_t a = gamma[c] * (*inv_std)[c];
      const real_t b = beta[c] - a * (*mean)[c];
      K.scale_shift(HW, x.val().plane(n, c), a, b, y.plane(n, c));
    }
  }

  if (!t.recording()) return Tape::detached(std::move(y));

  Var xr = t.ensure(x);
  Var gr = t.param(*p.gamma);
  Var br = t.param(*p.beta);
  const int out_id = t.add_slot(std::make_shared<const Tensor4>(std::move(y)));
  const int xid = xr.id, gid = gr.id, bid = br.id;
  auto xval = xr.value;
  const bool batch_stats = (mode == Mode::train);

  t.add_node(OpKind::batch_norm, {xid, gid, bid}, out_id,
             [=, gval = gr.value](Tape& tt) {
               const auto& KK = kern::active();
               const Tensor4& gy = tt.grad(out_id);
               Tensor4& gx = tt.grad(xid);
               Tensor4& gg = tt.grad(gid);
               Tensor4& gb = tt.grad(bid);
               const real_t* gm = gval->data();
               for (i64 c = 0; c < C; ++c) {
                 const real_t mu = (*mean)[c];
                 const real_t s = (*inv_std)[c];
                 real_t dbeta = 0, dot_gx = 0;
                 for (i64 n = 0; n < xs.n; ++n) {
                   dbeta += KK.sum(HW, gy.plane(n, c));
                   dot_gx += dot(KK, HW, gy.plane(n, c), xval->plane(n, c));
                 }
                 const real_t dgamma = s * (dot_gx - mu * dbeta);
                 gb.data()[c] += dbeta;
                 gg.data()[c] += dgamma;
                 if (batch_stats) {
                   // dx = (g*s) * (gy - dbeta/cnt - xhat * dgamma/cnt), expanded to
                   // c1*gy + c2*x + c3 so it runs as two axpys and a constant
                   const real_t gs = gm[c] * s;
                   const real_t c1 = gs;
                   const real_t c2 = -gs * s * dgamma / real_t(cnt);
                   const real_t c3 = gs * (s * mu * dgamma - dbeta) / real_t(cnt);
                   for (i64 n = 0; n < xs.n; ++n) {
                     real_t* gxp = gx.plane(n, c);
                     KK.axpy(HW, c1, gy.plane(n, c), gxp);
                     KK.axpy(HW, c2, xval->plane(n, c), gxp);
                     for (i64 i = 0; i < HW; ++i) gxp[i] += c3;
                   }
                 } else {
                   // running statistics are constants
                   const real_t a = gm[c] * s;
                   for (i64 n = 0; n < xs.n; ++n) KK.axpy(HW, a, gy.plane(n, c), gx.plane(n, c));
                 }
               }
             });
  return t.var(out_id);
}

}  // namespace dru
