#pragma once

// Independent reference implementations used as test oracles. Everything here
// is deliberately written the slow, obvious way and must stay decoupled from
// the library's compute paths.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "dru/metrics.hpp"
#include "dru/ops.hpp"
#include "dru/rng.hpp"
#include "dru/tensor.hpp"

namespace oracle {

using dru::LabelMap;
using dru::Rng;
using dru::Shape4;
using dru::Tensor4;
using dru::real_t;

inline Tensor4 randn(Shape4 s, std::uint64_t seed, double scale = 1.0) {
  Tensor4 t(s);
  Rng rng(seed);
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    t.data()[i] = static_cast<real_t>(scale * rng.normal());
  }
  return t;
}

// quadruple-loop direct-summation convolution, same_ceil or valid padding
inline Tensor4 conv2d_naive(const Tensor4& x, const Tensor4& w, const Tensor4& bias, int stride,
                            dru::PaddingMode pad) {
  const auto xs = x.shape();
  const std::int64_t oc = w.n(), ic = w.c(), kh = w.h(), kw = w.w();
  std::int64_t oh, ow, pt = 0, pl = 0;
  if (pad == dru::PaddingMode::same_ceil) {
    oh = (xs.h + stride - 1) / stride;
    ow = (xs.w + stride - 1) / stride;
    pt = std::max<std::int64_t>((oh - 1) * stride + kh - xs.h, 0) / 2;
    pl = std::max<std::int64_t>((ow - 1) * stride + kw - xs.w, 0) / 2;
  } else {
    oh = (xs.h - kh) / stride + 1;
    ow = (xs.w - kw) / stride + 1;
  }
  Tensor4 y({xs.n, oc, oh, ow});
  for (std::int64_t n = 0; n < xs.n; ++n) {
    for (std::int64_t o = 0; o < oc; ++o) {
      for (std::int64_t i = 0; i < oh; ++i) {
        for (std::int64_t j = 0; j < ow; ++j) {
          double acc = bias.data()[o];
          for (std::int64_t c = 0; c < ic; ++c) {
            for (std::int64_t ki = 0; ki < kh; ++ki) {
              for (std::int64_t kj = 0; kj < kw; ++kj) {
                const std::int64_t yy = i * stride + ki - pt;
                const std::int64_t xx = j * stride + kj - pl;
                if (yy < 0 || yy >= xs.h || xx < 0 || xx >= xs.w) continue;
                acc += double(x.at(n, c, yy, xx)) * double(w.at(o, c, ki, kj));
              }
            }
          }
          y.at(n, o, i, j) = static_cast<real_t>(acc);
        }
      }
    }
  }
  return y;
}

// stride-2 scatter then top-left crop; weights (in_ch, out_ch, 2, 2)
inline Tensor4 tconv_naive(const Tensor4& x, const Tensor4& w, const Tensor4& bias,
                           std::int64_t th, std::int64_t tw) {
  const auto xs = x.shape();
  const std::int64_t ca = w.n(), cb = w.c();
  Tensor4 full({xs.n, cb, 2 * xs.h, 2 * xs.w});
  for (std::int64_t n = 0; n < xs.n; ++n) {
    for (std::int64_t b = 0; b < cb; ++b) {
      for (std::int64_t i = 0; i < 2 * xs.h; ++i) {
        for (std::int64_t j = 0; j < 2 * xs.w; ++j) full.at(n, b, i, j) = bias.data()[b];
      }
    }
    for (std::int64_t a = 0; a < ca; ++a) {
      for (std::int64_t i = 0; i < xs.h; ++i) {
        for (std::int64_t j = 0; j < xs.w; ++j) {
          for (std::int64_t b = 0; b < cb; ++b) {
            for (int ki = 0; ki < 2; ++ki) {
              for (int kj = 0; kj < 2; ++kj) {
                full.at(n, b, 2 * i + ki, 2 * j + kj) +=
                    x.at(n, a, i, j) * w.at(a, b, ki, kj);
              }
            }
          }
        }
      }
    }
  }
  Tensor4 y({xs.n, cb, th, tw});
  for (std::int64_t n = 0; n < xs.n; ++n)
    for (std::int64_t b = 0; b < cb; ++b)
      for (std::int64_t i = 0; i < th; ++i)
        for (std::int64_t j = 0; j < tw; ++j) y.at(n, b, i, j) = full.at(n, b, i, j);
  return y;
}

// Eq-literal sparse CE: per-pixel naive softmax, one-hot expansion, mean
inline double ce_loss_onehot(const Tensor4& logits, const LabelMap& labels) {
  const auto s = logits.shape();
  const std::int64_t HW = s.h * s.w;
  double total = 0.0;
  for (std::int64_t n = 0; n < s.n; ++n) {
    for (std::int64_t i = 0; i < HW; ++i) {
      double denom = 0.0;
      for (std::int64_t c = 0; c < s.c; ++c) {
        denom += std::exp(double(logits.plane(n, 0)[c * HW + i]));
      }
      for (std::int64_t c = 0; c < s.c; ++c) {
        const double onehot = (labels.v[n * HW + i] == c) ? 1.0 : 0.0;
        const double p = std::exp(double(logits.plane(n, 0)[c * HW + i])) / denom;
        total -= onehot * std::log(std::max(p, 1e-12));
      }
    }
  }
  return total / double(s.n * HW);
}

// all-pairs surface-distance HD95 (6-connectivity surfaces, linear-interp
// percentile), for volumes small enough to brute force
inline double hd95_bruteforce(const dru::BinaryVolume& a, const dru::BinaryVolume& b,
                              dru::Spacing sp = {}) {
  auto surface = [](const dru::BinaryVolume& m) {
    std::vector<std::array<std::int64_t, 3>> out;
    for (std::int64_t d = 0; d < m.depth; ++d)
      for (std::int64_t y = 0; y < m.h; ++y)
        for (std::int64_t x = 0; x < m.w; ++x) {
          if (!m.at(d, y, x)) continue;
          bool edge = d == 0 || d == m.depth - 1 || y == 0 || y == m.h - 1 || x == 0 ||
                      x == m.w - 1;
          if (!edge) {
            edge = !m.at(d - 1, y, x) || !m.at(d + 1, y, x) || !m.at(d, y - 1, x) ||
                   !m.at(d, y + 1, x) || !m.at(d, y, x - 1) || !m.at(d, y, x + 1);
          }
          if (edge) out.push_back({d, y, x});
        }
    return out;
  };
  auto directed = [&sp](const std::vector<std::array<std::int64_t, 3>>& from,
                        const std::vector<std::array<std::int64_t, 3>>& to) {
    std::vector<double> d;
    d.reserve(from.size());
    for (const auto& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : to) {
        const double dd = double(p[0] - q[0]) * sp.d;
        const double dy = double(p[1] - q[1]) * sp.h;
        const double dx = double(p[2] - q[2]) * sp.w;
        best = std::min(best, dd * dd + dy * dy + dx * dx);
      }
      d.push_back(std::sqrt(best));
    }
    return d;
  };
  auto pct95 = [](std::vector<double> d) {
    std::sort(d.begin(), d.end());
    if (d.size() == 1) return d[0];
    const double rank = 0.95 * double(d.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(rank);
    if (lo + 1 >= d.size()) return d.back();
    return d[lo] + (rank - double(lo)) * (d[lo + 1] - d[lo]);
  };
  const auto sa = surface(a), sb = surface(b);
  return std::max(pct95(directed(sa, sb)), pct95(directed(sb, sa)));
}

// central finite differences of a scalar function over a tensor
inline Tensor4 fd_gradient(Tensor4& x, const std::function<double()>& eval, double h) {
  Tensor4 g(x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const real_t keep = x.data()[i];
    x.data()[i] = static_cast<real_t>(double(keep) + h);
    const double up = eval();
    x.data()[i] = static_cast<real_t>(double(keep) - h);
    const double dn = eval();
    x.data()[i] = keep;
    g.data()[i] = static_cast<real_t>((up - dn) / (2.0 * h));
  }
  return g;
}

// relative error between gradient tensors: max abs difference over the sum of
// max magnitudes
inline double grad_rel_error(const Tensor4& a, const Tensor4& f) {
  double max_diff = 0.0, max_a = 0.0, max_f = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    max_diff = std::max(max_diff, std::abs(double(a.data()[i]) - double(f.data()[i])));
    max_a = std::max(max_a, std::abs(double(a.data()[i])));
    max_f = std::max(max_f, std::abs(double(f.data()[i])));
  }
  return max_diff / (max_a + max_f + 1e-30);
}

inline double max_abs_diff(const Tensor4& a, const Tensor4& b) {
  double m = 0.0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    m = std::max(m, std::abs(double(a.data()[i]) - double(b.data()[i])));
  }
  return m;
}

}  // namespace oracle
