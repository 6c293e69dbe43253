#include <cmath>

#include "dru/kernels.hpp"
#include "dru/train.hpp"

namespace dru {

using kern::i64;

Var sparse_ce_loss(Tape& t, const Var& logits, const LabelMap& labels) {
  const Shape4 xs = logits.shape();
  const i64 C = xs.c, HW = xs.h * xs.w;
  if (labels.n != xs.n || labels.h != xs.h || labels.w != xs.w) {
    throw ShapeError("sparse_ce_loss: label map (" + std::to_string(labels.n) + "," +
                     std::to_string(labels.h) + "," + std::to_string(labels.w) +
                     ") does not match logits " + xs.str());
  }

  const double floor_logp = std::log(1e-12);
  auto probs = std::make_shared<Tensor4>(xs);  // softmax, saved for backward
  double acc = 0.0;
  for (i64 n = 0; n < xs.n; ++n) {
    const real_t* zp = logits.val().plane(n, 0);
    real_t* pp = probs->plane(n, 0);
    const std::int32_t* lp = labels.v.data() + n * HW;
    for (i64 i = 0; i < HW; ++i) {
      const std::int32_t label = lp[i];
      if (label < 0 || label >= C) {
        throw DataError("sparse_ce_loss: label " + std::to_string(label) + " out of range [0," +
                        std::to_string(C) + ") at (n=" + std::to_string(n) +
                        ",h=" + std::to_string(i / xs.w) + ",w=" + std::to_string(i % xs.w) + ")");
      }
      real_t mx = zp[i];
      for (i64 c = 1; c < C; ++c) mx = std::max(mx, zp[c * HW + i]);
      double se = 0.0;
      for (i64 c = 0; c < C; ++c) se += std::exp(double(zp[c * HW + i]) - double(mx));
      const double lse = double(mx) + std::log(se);
      for (i64 c = 0; c < C; ++c) {
        pp[c * HW + i] = static_cast<real_t>(std::exp(double(zp[c * HW + i]) - lse));
      }
      const double logp = std::max(double(zp[label * HW + i]) - lse, floor_logp);
      acc -= logp;
    }
  }
  const i64 N = xs.n * HW;
  Tensor4 loss({1, 1, 1, 1});
  loss.data()[0] = static_cast<real_t>(acc / double(N));

  if (!t.recording()) return Tape::detached(std::move(loss));
  Var zr = t.ensure(logits);
  const int out_id = t.add_slot(std::make_shared<const Tensor4>(std::move(loss)));
  const int zid = zr.id;
  auto lbl = std::make_shared<LabelMap>(labels);
  t.add_node(OpKind::ce_loss, {zid}, out_id, [=](Tape& tt) {
    const real_t g = tt.grad(out_id).data()[0];
    Tensor4& gz = tt.grad(zid);
    const real_t scale = g / real_t(N);
    for (i64 n = 0; n < xs.n; ++n) {
      const real_t* pp = probs->plane(n, 0);
      real_t* gp = gz.plane(n, 0);
      const std::int32_t* lp = lbl->v.data() + n * HW;
      for (i64 c = 0; c < C; ++c) {
        for (i64 i = 0; i < HW; ++i) {
          const real_t onehot = (lp[i] == c) ? real_t(1) : real_t(0);
          gp[c * HW + i] += scale * (pp[c * HW + i] - onehot);
        }
      }
    }
  });
  return t.var(out_id);
}

}  // namespace dru
