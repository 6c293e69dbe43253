#pragma once

#include <cstdint>

#include "dru/tape.hpp"

namespace dru {

enum class PaddingMode { same_ceil, valid };
enum class Mode { train, infer };

// Convolution weights (out_ch, in_ch, kh, kw) plus per-output-channel bias
// stored as (1, out_ch, 1, 1). For conv2d_transpose the weight axes read as
// (tconv in_ch, tconv out_ch, kh, kw) — the transpose of the forward layout —
// and the bias covers the produced (dim-1) channels.
struct ConvParams {
  Parameter* weight = nullptr;
  Parameter* bias = nullptr;
  int stride = 1;
  PaddingMode padding = PaddingMode::same_ceil;

  std::int64_t out_ch() const { return weight->value.n(); }
  std::int64_t in_ch() const { return weight->value.c(); }
  std::int64_t kh() const { return weight->value.h(); }
  std::int64_t kw() const { return weight->value.w(); }
};

// Per-channel affine + running statistics, all shaped (1, C, 1, 1).
// epsilon/momentum defaults follow the Keras BatchNormalization layer.
struct BatchNormParams {
  Parameter* gamma = nullptr;
  Parameter* beta = nullptr;
  Parameter* running_mean = nullptr;
  Parameter* running_var = nullptr;  // >= 0 elementwise
  real_t epsilon = real_t(1e-3);
  real_t momentum = real_t(0.99);

  std::int64_t channels() const { return gamma->value.c(); }
};

// output spatial extent for one axis
std::int64_t conv_out_extent(std::int64_t in, std::int64_t k, std::int64_t stride,
                             PaddingMode mode);

Var conv2d(Tape& t, const Var& x, const ConvParams& p);

// stride-2 / 2x2-kernel upsampling; output cropped top-left to (target_h,
// target_w), which must be 2h or 2h-1 per axis so it meets the skip extent.
Var conv2d_transpose(Tape& t, const Var& x, const ConvParams& p, std::int64_t target_h,
                     std::int64_t target_w);

// train: normalize by batch statistics over (n,h,w) per channel and update
// running stats by exponential moving average; infer: use running stats.
Var batch_norm(Tape& t, const Var& x, BatchNormParams& p, Mode mode);

Var relu(Tape& t, const Var& x);

// Inverted dropout: train mode zeroes elements with probability `rate` and
// scales survivors by 1/(1-rate); infer mode and rate 0 are bit-identical to
// the input. The mask is a pure function of `seed`.
Var dropout(Tape& t, const Var& x, real_t rate, Mode mode, std::uint64_t seed);

Var concat_channels(Tape& t, const Var& a, const Var& b);

Var add(Tape& t, const Var& a, const Var& b);

// per-pixel softmax over the channel axis, max-subtracted for stability
Var softmax_channels(Tape& t, const Var& x);

// per-pixel index of the maximal channel; ties break to the lowest index
LabelMap argmax_channels(const Tensor4& x);

// scalar sum of all elements (loss plumbing / tests)
Var sum_all(Tape& t, const Var& x);

// scalar sum of x * weights with constant weights (loss plumbing / tests)
Var weighted_sum_all(Tape& t, const Var& x, std::shared_ptr<const Tensor4> weights);

}  // namespace dru
