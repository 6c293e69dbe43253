#include <algorithm>
#include <vector>

#include "dru/kernels.hpp"
#include "dru/ops.hpp"

namespace dru {

using kern::i64;

std::int64_t conv_out_extent(std::int64_t in, std::int64_t k, std::int64_t stride,
                             PaddingMode mode) {
  if (mode == PaddingMode::same_ceil) return (in + stride - 1) / stride;
  if (in < k) {
    throw ShapeError("conv2d: valid padding needs input extent >= kernel, got " +
                     std::to_string(in) + " < " + std::to_string(k));
  }
  return (in - k) / stride + 1;
}

namespace {

struct ConvGeom {
  i64 oh, ow;      // output extent
  i64 pt, pl;      // top/left zero padding
};

ConvGeom conv_geom(i64 h, i64 w, i64 kh, i64 kw, i64 stride, PaddingMode mode) {
  ConvGeom g{};
  g.oh = conv_out_extent(h, kh, stride, mode);
  g.ow = conv_out_extent(w, kw, stride, mode);
  if (mode == PaddingMode::same_ceil) {
    // pad split follows the ceil rule: excess goes bottom/right
    const i64 ph = std::max<i64>((g.oh - 1) * stride + kh - h, 0);
    const i64 pw = std::max<i64>((g.ow - 1) * stride + kw - w, 0);
    g.pt = ph / 2;
    g.pl = pw / 2;
  }
  return g;
}

// column layout: row = (c*kh + ki)*kw + kj, col = oh*ow_out + ow
void im2col(const real_t* x, i64 C, i64 H, i64 W, i64 kh, i64 kw, i64 stride, const ConvGeom& g,
            real_t* col) {
  const i64 NP = g.oh * g.ow;
  for (i64 c = 0; c < C; ++c) {
    for (i64 ki = 0; ki < kh; ++ki) {
      for (i64 kj = 0; kj < kw; ++kj) {
        real_t* dst = col + ((c * kh + ki) * kw + kj) * NP;
        for (i64 oh = 0; oh < g.oh; ++oh) {
          const i64 ih = oh * stride + ki - g.pt;
          real_t* drow = dst + oh * g.ow;
          if (ih < 0 || ih >= H) {
            std::fill(drow, drow + g.ow, real_t(0));
            continue;
          }
          const real_t* srow = x + (c * H + ih) * W;
          for (i64 ow = 0; ow < g.ow; ++ow) {
            const i64 iw = ow * stride + kj - g.pl;
            drow[ow] = (iw >= 0 && iw < W) ? srow[iw] : real_t(0);
          }
        }
      }
    }
  }
}

void col2im_acc(const real_t* col, i64 C, i64 H, i64 W, i64 kh, i64 kw, i64 stride,
                const ConvGeom& g, real_t* x_grad) {
  const i64 NP = g.oh * g.ow;
  for (i64 c = 0; c < C; ++c) {
    for (i64 ki = 0; ki < kh; ++ki) {
      for (i64 kj = 0; kj < kw; ++kj) {
        const real_t* src = col + ((c * kh + ki) * kw + kj) * NP;
        for (i64 oh = 0; oh < g.oh; ++oh) {
          const i64 ih = oh * stride + ki - g.pt;
          if (ih < 0 || ih >= H) continue;
          real_t* xrow = x_grad + (c * H + ih) * W;
          const real_t* srow = src + oh * g.ow;
          for (i64 ow = 0; ow < g.ow; ++ow) {
            const i64 iw = ow * stride + kj - g.pl;
            if (iw >= 0 && iw < W) xrow[iw] += srow[ow];
          }
        }
      }
    }
  }
}

void check_conv_args(const Var& x, const ConvParams& p) {
  if (!p.weight || !p.bias) throw UsageError("conv2d: missing weight/bias parameters");
  if (x.shape().c != p.in_ch()) {
    throw ShapeError("conv2d: input channels " + std::to_string(x.shape().c) +
                     " do not match weight in_ch " + std::to_string(p.in_ch()) + " (input " +
                     x.shape().str() + ", weight " + p.weight->value.shape().str() + ")");
  }
  if (p.stride != 1 && p.stride != 2) {
    throw UsageError("conv2d: stride must be 1 or 2, got " + std::to_string(p.stride));
  }
  if (p.kh() < 1 || p.kh() > 3 || p.kw() < 1 || p.kw() > 3) {
    throw UsageError("conv2d: kernel extents must be in {1,2,3}, got " +
                     p.weight->value.shape().str());
  }
  if (p.bias->value.numel() != p.out_ch()) {
    throw ShapeError("conv2d: bias length " + std::to_string(p.bias->value.numel()) +
                     " != out_ch " + std::to_string(p.out_ch()));
  }
}

}  // namespace

Var conv2d(Tape& t, const Var& x, const ConvParams& p) {
  check_conv_args(x, p);
  const auto& K = kern::active();
  const Shape4 xs = x.shape();
  const i64 OC = p.out_ch(), IC = p.in_ch(), kh = p.kh(), kw = p.kw();
  const ConvGeom g = conv_geom(xs.h, xs.w, kh, kw, p.stride, p.padding);
  const i64 NP = g.oh * g.ow;
  const i64 KD = IC * kh * kw;
  const bool pointwise = (kh == 1 && kw == 1 && p.stride == 1);

  Tensor4 y({xs.n, OC, g.oh, g.ow});
  const real_t* W = p.weight->value.data();
  const real_t* bias = p.bias->value.data();

  std::vector<real_t> col;
  if (!pointwise) col.resize(static_cast<std::size_t>(KD * NP));

  for (i64 n = 0; n < xs.n; ++n) {
    real_t* out = y.plane(n, 0);
    for (i64 oc = 0; oc < OC; ++oc) std::fill(out + oc * NP, out + (oc + 1) * NP, bias[oc]);
    const real_t* b_mat = pointwise ? x.val().plane(n, 0) : col.data();
    if (!pointwise) im2col(x.val().plane(n, 0), IC, xs.h, xs.w, kh, kw, p.stride, g, col.data());
    K.gemm_nn(OC, NP, KD, W, KD, b_mat, NP, out, NP);
  }

  if (!t.recording()) return Tape::detached(std::move(y));

  Var xr = t.ensure(x);
  Var wr = t.param(*p.weight);
  Var br = t.param(*p.bias);
  const int out_id = t.add_slot(std::make_shared<const Tensor4>(std::move(y)));
  const int xid = xr.id, wid = wr.id, bid = br.id;
  auto xval = xr.value;
  auto stride = p.stride;

  t.add_node(OpKind::conv2d, {xid, wid, bid}, out_id,
             [=, Wv = wr.value](Tape& tt) {
               const auto& KK = kern::active();
               const Tensor4& gy = tt.grad(out_id);
               Tensor4& gw = tt.grad(wid);
               Tensor4& gb = tt.grad(bid);
               Tensor4& gx = tt.grad(xid);
               std::vector<real_t> colbuf, dcol;
               if (!pointwise) {
                 colbuf.resize(static_cast<std::size_t>(KD * NP));
                 dcol.resize(static_cast<std::size_t>(KD * NP));
               }
               for (i64 n = 0; n < xs.n; ++n) {
                 const real_t* gyn = gy.plane(n, 0);
                 const real_t* xn = xval->plane(n, 0);
                 const real_t* cmat = pointwise ? xn : colbuf.data();
                 if (!pointwise) im2col(xn, IC, xs.h, xs.w, kh, kw, stride, g, colbuf.data());
                 // dW += gy . col^T
                 KK.gemm_nt(OC, KD, NP, gyn, NP, cmat, NP, gw.data(), KD);
                 for (i64 oc = 0; oc < OC; ++oc) gb.data()[oc] += KK.sum(NP, gyn + oc * NP);
                 // dX via dcol = W^T . gy
                 if (pointwise) {
                   KK.gemm_tn(KD, NP, OC, Wv->data(), KD, gyn, NP, gx.plane(n, 0), NP);
                 } else {
                   std::fill(dcol.begin(), dcol.end(), real_t(0));
                   KK.gemm_tn(KD, NP, OC, Wv->data(), KD, gyn, NP, dcol.data(), NP);
                   col2im_acc(dcol.data(), IC, xs.h, xs.w, kh, kw, stride, g, gx.plane(n, 0));
                 }
               }
             });
  return t.var(out_id);
}

Var conv2d_transpose(Tape& t, const Var& x, const ConvParams& p, std::int64_t target_h,
                     std::int64_t target_w) {
  if (!p.weight || !p.bias) throw UsageError("conv2d_transpose: missing weight/bias parameters");
  const Shape4 ws = p.weight->value.shape();
  if (p.stride != 2 || ws.h != 2 || ws.w != 2) {
    throw UsageError("conv2d_transpose: only stride 2 with a 2x2 kernel is supported, got "
                     "stride " + std::to_string(p.stride) + " kernel " + ws.str());
  }
  const Shape4 xs = x.shape();
  const i64 CA = ws.n;  // tconv input channels
  const i64 CB = ws.c;  // tconv output channels
  if (xs.c != CA) {
    throw ShapeError("conv2d_transpose: input channels " + std::to_string(xs.c) +
                     " do not match weight in_ch " + std::to_string(CA) + " (input " + xs.str() +
                     ", weight " + ws.str() + ")");
  }
  if (p.bias->value.numel() != CB) {
    throw ShapeError("conv2d_transpose: bias length " + std::to_string(p.bias->value.numel()) +
                     " != out_ch " + std::to_string(CB));
  }
  const i64 full_h = 2 * xs.h, full_w = 2 * xs.w;
  if (target_h > full_h || target_w > full_w) {
    throw ShapeError("conv2d_transpose: target (" + std::to_string(target_h) + "," +
                     std::to_string(target_w) + ") exceeds producible extent (" +
                     std::to_string(full_h) + "," + std::to_string(full_w) + ")");
  }
  if (target_h < full_h - 1 || target_w < full_w - 1) {
    throw ShapeError("conv2d_transpose: target (" + std::to_string(target_h) + "," +
                     std::to_string(target_w) + ") must be 2h/2w or 2h-1/2w-1 for input " +
                     xs.str());
  }

  const auto& K = kern::active();
  const i64 NP = xs.h * xs.w;
  const i64 M4 = CB * 4;
  Tensor4 y({xs.n, CB, target_h, target_w});
  const real_t* W = p.weight->value.data();  // (CA, CB, 2, 2) => CA x (CB*4)
  const real_t* bias = p.bias->value.data();
  std::vector<real_t> patch(static_cast<std::size_t>(M4 * NP));

  for (i64 n = 0; n < xs.n; ++n) {
    std::fill(patch.begin(), patch.end(), real_t(0));
    K.gemm_tn(M4, NP, CA, W, M4, x.val().plane(n, 0), NP, patch.data(), NP);
    real_t* out = y.plane(n, 0);
    for (i64 b = 0; b < CB; ++b) {
      real_t* oplane = out + b * target_h * target_w;
      std::fill(oplane, oplane + target_h * target_w, bias[b]);
      for (i64 ki = 0; ki < 2; ++ki) {
        for (i64 kj = 0; kj < 2; ++kj) {
          const real_t* prow = patch.data() + ((b * 2 + ki) * 2 + kj) * NP;
          for (i64 i = 0; i < xs.h; ++i) {
            const i64 oi = 2 * i + ki;
            if (oi >= target_h) break;
            for (i64 j = 0; j < xs.w; ++j) {
              const i64 oj = 2 * j + kj;
              if (oj >= target_w) break;
              oplane[oi * target_w + oj] += prow[i * xs.w + j];
            }
          }
        }
      }
    }
  }

  if (!t.recording()) return Tape::detached(std::move(y));

  Var xr = t.ensure(x);
  Var wr = t.param(*p.weight);
  Var br = t.param(*p.bias);
  const int out_id = t.add_slot(std::make_shared<const Tensor4>(std::move(y)));
  const int xid = xr.id, wid = wr.id, bid = br.id;
  auto xval = xr.value;

  t.add_node(OpKind::conv2d_transpose, {xid, wid, bid}, out_id,
             [=, Wv = wr.value](Tape& tt) {
               const auto& KK = kern::active();
               const Tensor4& gy = tt.grad(out_id);
               Tensor4& gw = tt.grad(wid);
               Tensor4& gb = tt.grad(bid);
               Tensor4& gx = tt.grad(xid);
               std::vector<real_t> gpatch(static_cast<std::size_t>(M4 * NP));
               for (i64 n = 0; n < xs.n; ++n) {
                 const real_t* gyn = gy.plane(n, 0);
                 for (i64 b = 0; b < CB; ++b) {
                   const real_t* gplane = gyn + b * target_h * target_w;
                   gb.data()[b] += KK.sum(target_h * target_w, gplane);
                   for (i64 ki = 0; ki < 2; ++ki) {
                     for (i64 kj = 0; kj < 2; ++kj) {
                       real_t* prow = gpatch.data() + ((b * 2 + ki) * 2 + kj) * NP;
                       for (i64 i = 0; i < xs.h; ++i) {
                         const i64 oi = 2 * i + ki;
                         for (i64 j = 0; j < xs.w; ++j) {
                           const i64 oj = 2 * j + kj;
                           prow[i * xs.w + j] = (oi < target_h && oj < target_w)
                                                    ? gplane[oi * target_w + oj]
                                                    : real_t(0);
                         }
                       }
                     }
                   }
                 }
                 // dX += W . gpatch ; dW += x . gpatch^T
                 KK.gemm_nn(CA, NP, M4, Wv->data(), M4, gpatch.data(), NP, gx.plane(n, 0), NP);
                 KK.gemm_nt(CA, M4, NP, xval->plane(n, 0), NP, gpatch.data(), NP, gw.data(), M4);
               }
             });
  return t.var(out_id);
}

}  // namespace dru
