#include <cmath>
#include <cstring>

#include "dru/kernels.hpp"
#include "dru/ops.hpp"
#include "dru/rng.hpp"

namespace dru {

using kern::i64;

Var relu(Tape& t, const Var& x) {
  const auto& K = kern::active();
  Tensor4 y(x.shape());
  K.relu_fwd(y.numel(), x.val().data(), y.data());

  if (!t.recording()) return Tape::detached(std::move(y));
  Var xr = t.ensure(x);
  const int out_id = t.add_slot(std::make_shared<const Tensor4>(std::move(y)));
  const int xid = xr.id;
  t.add_node(OpKind::relu, {xid}, out_id, [=, xval = xr.value](Tape& tt) {
    const Tensor4& gy = tt.grad(out_id);
    Tensor4& gx = tt.grad(xid);
    kern::active().relu_bwd(gx.numel(), xval->data(), gy.data(), gx.data());
  });
  return t.var(out_id);
}

Var dropout(Tape& t, const Var& x, real_t rate, Mode mode, std::uint64_t seed) {
  if (!(rate >= real_t(0) && rate < real_t(1))) {
    throw UsageError("dropout: rate must be in [0,1), got " + std::to_string(rate));
  }
  if (mode == Mode::infer || rate == real_t(0)) {
    // identity, bit-exact; share the buffer
    if (!t.recording()) return Var{x.value, -1};
    Var xr = t.ensure(x);
    const int out_id = t.add_slot(xr.value);
    const int xid = xr.id;
    t.add_node(OpKind::dropout, {xid}, out_id, [=](Tape& tt) {
      const Tensor4& gy = tt.grad(out_id);
      Tensor4& gx = tt.grad(xid);
      kern::active().acc(gx.numel(), gx.data(), gy.data());
    });
    return t.var(out_id);
  }

  const auto& K = kern::active();
  const real_t scale = real_t(1) / (real_t(1) - rate);
  auto mask = std::make_shared<Tensor4>(x.shape());
  Rng rng(seed);
  real_t* m = mask->data();
  const i64 n = mask->numel();
  for (i64 i = 0; i < n; ++i) m[i] = rng.uniform() < rate ? real_t(0) : scale;

  Tensor4 y(x.shape());
  K.mul(n, x.val().data(), m, y.data());

  if (!t.recording()) return Tape::detached(std::move(y));
  Var xr = t.ensure(x);
  const int out_id = t.add_slot(std::make_shared<const Tensor4>(std::move(y)));
  const int xid = xr.id;
  t.add_node(OpKind::dropout, {xid}, out_id, [=](Tape& tt) {
    const Tensor4& gy = tt.grad(out_id);
    Tensor4& gx = tt.grad(xid);
    kern::active().mul_acc(gx.numel(), gy.data(), mask->data(), gx.data());
  });
  return t.var(out_id);
}

Var concat_channels(Tape& t, const Var& a, const Var& b) {
  const Shape4 as = a.shape(), bs = b.shape();
  if (as.n != bs.n || as.h != bs.h || as.w != bs.w) {
    throw ShapeError("concat_channels: inputs must agree on (n,h,w), got " + as.str() + " vs " +
                     bs.str());
  }
  const i64 HW = as.h * as.w;
  const i64 alen = as.c * HW, blen = bs.c * HW;
  Tensor4 y({as.n, as.c + bs.c, as.h, as.w});
  for (i64 n = 0; n < as.n; ++n) {
    std::memcpy(y.plane(n, 0), a.val().plane(n, 0), sizeof(real_t) * alen);
    std::memcpy(y.plane(n, as.c), b.val().plane(n, 0), sizeof(real_t) * blen);
  }

  if (!t.recording()) return Tape::detached(std::move(y));
  Var ar = t.ensure(a);
  Var br = t.ensure(b);
  const int out_id = t.add_slot(std::make_shared<const Tensor4>(std::move(y)));
  const int aid = ar.id, bid = br.id;
  const i64 ac = as.c, nn = as.n;
  t.add_node(OpKind::concat, {aid, bid}, out_id, [=](Tape& tt) {
    const auto& K = kern::active();
    const Tensor4& gy = tt.grad(out_id);
    Tensor4& ga = tt.grad(aid);
    Tensor4& gb = tt.grad(bid);
    for (i64 n = 0; n < nn; ++n) {
      K.acc(alen, ga.plane(n, 0), gy.plane(n, 0));
      K.acc(blen, gb.plane(n, 0), gy.plane(n, ac));
    }
  });
  return t.var(out_id);
}

Var add(Tape& t, const Var& a, const Var& b) {
  require_same_shape(a.val(), b.val(), "add");
  const auto& K = kern::active();
  Tensor4 y(a.shape());
  K.add(y.numel(), a.val().data(), b.val().data(), y.data());

  if (!t.recording()) return Tape::detached(std::move(y));
  Var ar = t.ensure(a);
  Var br = t.ensure(b);
  const int out_id = t.add_slot(std::make_shared<const Tensor4>(std::move(y)));
  const int aid = ar.id, bid = br.id;
  t.add_node(OpKind::add, {aid, bid}, out_id, [=](Tape& tt) {
    const auto& KK = kern::active();
    const Tensor4& gy = tt.grad(out_id);
    KK.acc(gy.numel(), tt.grad(aid).data(), gy.data());
    KK.acc(gy.numel(), tt.grad(bid).data(), gy.data());
  });
  return t.var(out_id);
}

Var softmax_channels(Tape& t, const Var& x) {
  const Shape4 xs = x.shape();
  const i64 C = xs.c, HW = xs.h * xs.w;
  auto y = std::make_shared<Tensor4>(xs);
  for (i64 n = 0; n < xs.n; ++n) {
    const real_t* xp = x.val().plane(n, 0);
    real_t* yp = y->plane(n, 0);
    for (i64 i = 0; i < HW; ++i) {
      real_t mx = xp[i];
      for (i64 c = 1; c < C; ++c) mx = std::max(mx, xp[c * HW + i]);
      real_t s = 0;
      for (i64 c = 0; c < C; ++c) {
        const real_t e = std::exp(xp[c * HW + i] - mx);
        yp[c * HW + i] = e;
        s += e;
      }
      const real_t inv = real_t(1) / s;
      for (i64 c = 0; c < C; ++c) yp[c * HW + i] *= inv;
    }
  }

  if (!t.recording()) return Var{std::move(y), -1};
  Var xr = t.ensure(x);
  const int out_id = t.add_slot(y);
  const int xid = xr.id;
  t.add_node(OpKind::softmax, {xid}, out_id, [=](Tape& tt) {
    const Tensor4& gy = tt.grad(out_id);
    Tensor4& gx = tt.grad(xid);
    for (i64 n = 0; n < xs.n; ++n) {
      const real_t* yp = y->plane(n, 0);
      const real_t* gp = gy.plane(n, 0);
      real_t* gxp = gx.plane(n, 0);
      for (i64 i = 0; i < HW; ++i) {
        real_t d = 0;
        for (i64 c = 0; c < C; ++c) d += gp[c * HW + i] * yp[c * HW + i];
        for (i64 c = 0; c < C; ++c) {
          gxp[c * HW + i] += yp[c * HW + i] * (gp[c * HW + i] - d);
        }
      }
    }
  });
  return t.var(out_id);
}

LabelMap argmax_channels(const Tensor4& x) {
  const Shape4 xs = x.shape();
  const i64 C = xs.c, HW = xs.h * xs.w;
  LabelMap out(xs.n, xs.h, xs.w);
  for (i64 n = 0; n < xs.n; ++n) {
    const real_t* xp = x.plane(n, 0);
    std::int32_t* op = out.v.data() + n * HW;
    for (i64 i = 0; i < HW; ++i) {
      i64 best = 0;
      real_t bv = xp[i];
      for (i64 c = 1; c < C; ++c) {
        if (xp[c * HW + i] > bv) {
          bv = xp[c * HW + i];
          best = c;
        }
      }
      op[i] = static_cast<std::int32_t>(best);
    }
  }
  return out;
}

Var sum_all(Tape& t, const Var& x) {
  const auto& K = kern::active();
  Tensor4 y({1, 1, 1, 1});
  y.data()[0] = K.sum(x.val().numel(), x.val().data());

  if (!t.recording()) return Tape::detached(std::move(y));
  Var xr = t.ensure(x);
  const int out_id = t.add_slot(std::make_shared<const Tensor4>(std::move(y)));
  const int xid = xr.id;
  t.add_node(OpKind::sum, {xid}, out_id, [=](Tape& tt) {
    const real_t g = tt.grad(out_id).data()[0];
    Tensor4& gx = tt.grad(xid);
    real_t* p = gx.data();
    for (i64 i = 0; i < gx.numel(); ++i) p[i] += g;
  });
  return t.var(out_id);
}

Var weighted_sum_all(Tape& t, const Var& x, std::shared_ptr<const Tensor4> weights) {
  require_same_shape(x.val(), *weights, "weighted_sum_all");
  const auto& K = kern::active();
  Tensor4 y({1, 1, 1, 1});
  y.data()[0] = 0;
  K.gemm_nt(1, 1, x.val().numel(), x.val().data(), 0, weights->data(), 0, y.data(), 1);

  if (!t.recording()) return Tape::detached(std::move(y));
  Var xr = t.ensure(x);
  const int out_id = t.add_slot(std::make_shared<const Tensor4>(std::move(y)));
  const int xid = xr.id;
  t.add_node(OpKind::sum, {xid}, out_id, [=](Tape& tt) {
    const real_t g = tt.grad(out_id).data()[0];
    Tensor4& gx = tt.grad(xid);
    kern::active().axpy(gx.numel(), g, weights->data(), gx.data());
  });
  return t.var(out_id);
}

}  // namespace dru
