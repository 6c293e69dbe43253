#include "dru/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "dru/errors.hpp"

namespace dru {
namespace {

void require_dims(const BinaryVolume& a, const BinaryVolume& b, const char* op) {
  if (a.depth != b.depth || a.h != b.h || a.w != b.w) {
    throw ShapeError(std::string(op) + ": volume dims mismatch (" + std::to_string(a.depth) +
                     "," + std::to_string(a.h) + "," + std::to_string(a.w) + ") vs (" +
                     std::to_string(b.depth) + "," + std::to_string(b.h) + "," +
                     std::to_string(b.w) + ")");
  }
}

std::int64_t count(const BinaryVolume& m) {
  std::int64_t n = 0;
  for (std::uint8_t x : m.v) n += x;
  return n;
}

// mask voxels with at least one face-adjacent background neighbor;
// out-of-bounds counts as background
std::vector<std::int64_t> surface_voxels(const BinaryVolume& m) {
  std::vector<std::int64_t> out;
  for (std::int64_t d = 0; d < m.depth; ++d) {
    for (std::int64_t y = 0; y < m.h; ++y) {
      for (std::int64_t x = 0; x < m.w; ++x) {
        if (!m.at(d, y, x)) continue;
        const bool surface =
            d == 0 || d == m.depth - 1 || y == 0 || y == m.h - 1 || x == 0 || x == m.w - 1 ||
            !m.at(d - 1, y, x) || !m.at(d + 1, y, x) || !m.at(d, y - 1, x) ||
            !m.at(d, y + 1, x) || !m.at(d, y, x - 1) || !m.at(d, y, x + 1);
        if (surface) out.push_back((d * m.h + y) * m.w + x);
      }
    }
  }
  return out;
}

constexpr double kInf = std::numeric_limits<double>::infinity();

// 1-D squared distance transform (lower envelope of parabolas) on a uniform
// grid with the given spacing; infinite cells carry no parabola
void dt1d(const double* f, double* out, std::int64_t n, std::int64_t stride, double spacing,
          std::vector<std::int64_t>& vx, std::vector<double>& zx, std::vector<double>& fbuf) {
  vx.resize(n);
  zx.resize(n + 1);
  fbuf.resize(n);
  for (std::int64_t i = 0; i < n; ++i) fbuf[i] = f[i * stride];
  const double s2 = spacing * spacing;
  std::int64_t k = -1;  // empty envelope
  for (std::int64_t q = 0; q < n; ++q) {
    if (fbuf[q] == kInf) continue;
    bool placed = false;
    while (k >= 0 && !placed) {
      const std::int64_t v = vx[k];
      const double s = ((fbuf[q] - fbuf[v]) / s2 + double(q + v) * double(q - v)) /
                       (2.0 * double(q - v));
      if (s <= zx[k]) {
        --k;
      } else {
        ++k;
        vx[k] = q;
        zx[k] = s;
        zx[k + 1] = kInf;
        placed = true;
      }
    }
    if (!placed) {
      k = 0;
      vx[0] = q;
      zx[0] = -kInf;
      zx[1] = kInf;
    }
  }
  if (k < 0) {
    for (std::int64_t q = 0; q < n; ++q) out[q * stride] = kInf;
    return;
  }
  std::int64_t kk = 0;
  for (std::int64_t q = 0; q < n; ++q) {
    while (zx[kk + 1] < double(q)) ++kk;
    const double dq = (double(q) - double(vx[kk])) * spacing;
    out[q * stride] = dq * dq + fbuf[vx[kk]];
  }
}

// exact squared Euclidean distance to the nearest source voxel
std::vector<double> edt_sq(const BinaryVolume& shape_of, const std::vector<std::int64_t>& sources,
                           Spacing sp) {
  const std::int64_t D = shape_of.depth, H = shape_of.h, W = shape_of.w;
  std::vector<double> g(static_cast<std::size_t>(D * H * W), kInf);
  for (std::int64_t idx : sources) g[idx] = 0.0;

  std::vector<std::int64_t> vx;
  std::vector<double> zx, fbuf, tmp(g.size());

  // along w
  for (std::int64_t d = 0; d < D; ++d)
    for (std::int64_t y = 0; y < H; ++y)
      dt1d(g.data() + (d * H + y) * W, tmp.data() + (d * H + y) * W, W, 1, sp.w, vx, zx, fbuf);
  // along h
  for (std::int64_t d = 0; d < D; ++d)
    for (std::int64_t x = 0; x < W; ++x)
      dt1d(tmp.data() + d * H * W + x, g.data() + d * H * W + x, H, W, sp.h, vx, zx, fbuf);
  // along depth
  for (std::int64_t y = 0; y < H; ++y)
    for (std::int64_t x = 0; x < W; ++x)
      dt1d(g.data() + y * W + x, tmp.data() + y * W + x, D, H * W, sp.d, vx, zx, fbuf);
  return tmp;
}

double percentile_linear(std::vector<double>& d, double p) {
  std::sort(d.begin(), d.end());
  if (d.size() == 1) return d[0];
  const double rank = p / 100.0 * double(d.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(rank);
  const double frac = rank - double(lo);
  if (lo + 1 >= d.size()) return d.back();
  return d[lo] + frac * (d[lo + 1] - d[lo]);
}

}  // namespace

RegionMaskSet region_masks(const VolumeU8& labels) {
  RegionMaskSet r;
  r.wt = BinaryVolume(labels.depth, labels.h, labels.w);
  r.tc = BinaryVolume(labels.depth, labels.h, labels.w);
  r.et = BinaryVolume(labels.depth, labels.h, labels.w);
  for (std::int64_t i = 0; i < labels.numel(); ++i) {
    const std::uint8_t l = labels.v[i];
    switch (l) {
      case 0: break;
      case 1:
        r.wt.v[i] = 1;
        r.tc.v[i] = 1;
        break;
      case 2: r.wt.v[i] = 1; break;
      case 4:
        r.wt.v[i] = 1;
        r.tc.v[i] = 1;
        r.et.v[i] = 1;
        break;
      default:
        throw DataError("region_masks: label value " + std::to_string(int(l)) +
                        " outside the expected set {0,1,2,4}");
    }
  }
  return r;
}

double dice(const BinaryVolume& a, const BinaryVolume& b, const MetricConventions& conv) {
  require_dims(a, b, "dice");
  std::int64_t na = 0, nb = 0, inter = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    na += a.v[i];
    nb += b.v[i];
    inter += (a.v[i] & b.v[i]);
  }
  if (na == 0 && nb == 0) return conv.both_empty_dice;
  if (na == 0 || nb == 0) return conv.one_empty_dice;
  return 2.0 * double(inter) / double(na + nb);
}

double sensitivity(const BinaryVolume& pred, const BinaryVolume& truth,
                   const MetricConventions& conv) {
  require_dims(pred, truth, "sensitivity");
  std::int64_t tp = 0, fn = 0;
  for (std::int64_t i = 0; i < pred.numel(); ++i) {
    if (truth.v[i]) {
      if (pred.v[i]) ++tp;
      else ++fn;
    }
  }
  if (tp + fn == 0) return conv.empty_truth_sensitivity;
  return double(tp) / double(tp + fn);
}

double specificity(const BinaryVolume& pred, const BinaryVolume& truth,
                   const MetricConventions& conv) {
  require_dims(pred, truth, "specificity");
  std::int64_t tn = 0, fp = 0;
  for (std::int64_t i = 0; i < pred.numel(); ++i) {
    if (!truth.v[i]) {
      if (pred.v[i]) ++fp;
      else ++tn;
    }
  }
  if (tn + fp == 0) return conv.all_truth_specificity;
  return double(tn) / double(tn + fp);
}

double hausdorff95(const BinaryVolume& pred, const BinaryVolume& truth, Spacing spacing,
                   const MetricConventions& conv) {
  require_dims(pred, truth, "hausdorff95");
  const std::int64_t np = count(pred), nt = count(truth);
  if (np == 0 && nt == 0) return conv.both_empty_hd95;
  if (np == 0 || nt == 0) {
    // sentinel: the volume diagonal in mm
    const double dd = double(pred.depth) * spacing.d;
    const double dh = double(pred.h) * spacing.h;
    const double dw = double(pred.w) * spacing.w;
    return std::sqrt(dd * dd + dh * dh + dw * dw);
  }

  const std::vector<std::int64_t> sp = surface_voxels(pred);
  const std::vector<std::int64_t> st = surface_voxels(truth);
  const std::vector<double> dist_to_truth = edt_sq(pred, st, spacing);
  const std::vector<double> dist_to_pred = edt_sq(pred, sp, spacing);

  std::vector<double> d_pt, d_tp;
  d_pt.reserve(sp.size());
  d_tp.reserve(st.size());
  for (std::int64_t idx : sp) d_pt.push_back(std::sqrt(dist_to_truth[idx]));
  for (std::int64_t idx : st) d_tp.push_back(std::sqrt(dist_to_pred[idx]));
  return std::max(percentile_linear(d_pt, 95.0), percentile_linear(d_tp, 95.0));
}

MetricsReport evaluate_case(const VolumeU8& pred, const VolumeU8& truth,
                            const std::string& subject_id, Spacing spacing) {
  if (pred.depth != truth.depth || pred.h != truth.h || pred.w != truth.w) {
    throw ShapeError("evaluate_case: prediction and truth dims differ for subject " + subject_id);
  }
  const RegionMaskSet pm = region_masks(pred);
  const RegionMaskSet tm = region_masks(truth);
  const std::array<const BinaryVolume*, 3> pv = {&pm.wt, &pm.et, &pm.tc};
  const std::array<const BinaryVolume*, 3> tv = {&tm.wt, &tm.et, &tm.tc};

  MetricsReport r;
  r.subject_id = subject_id;
  for (int i = 0; i < 3; ++i) {
    r.regions[i].dsc = dice(*pv[i], *tv[i]);
    r.regions[i].sensitivity = sensitivity(*pv[i], *tv[i]);
    r.regions[i].specificity = specificity(*pv[i], *tv[i]);
    r.regions[i].hd95 = hausdorff95(*pv[i], *tv[i], spacing);
  }
  return r;
}

CohortSummary aggregate(const std::vector<MetricsReport>& reports) {
  CohortSummary s;
  s.cases = static_cast<std::int64_t>(reports.size());
  if (reports.empty()) return s;
  auto for_each_metric = [](RegionMetrics& m, auto&& fn) {
    fn(m.dsc, 0);
    fn(m.sensitivity, 1);
    fn(m.specificity, 2);
    fn(m.hd95, 3);
  };
  auto metric_of = [](const RegionMetrics& m, int k) {
    switch (k) {
      case 0: return m.dsc;
      case 1: return m.sensitivity;
      case 2: return m.specificity;
      default: return m.hd95;
    }
  };
  for (int ri = 0; ri < 3; ++ri) {
    for_each_metric(s.mean[ri], [&](double& slot, int k) {
      double acc = 0;
      for (const auto& r : reports) acc += metric_of(r.regions[ri], k);
      slot = acc / double(reports.size());
    });
    for_each_metric(s.sd[ri], [&](double& slot, int k) {
      const double mu = metric_of(s.mean[ri], k);
      double acc = 0;
      for (const auto& r : reports) {
        const double d = metric_of(r.regions[ri], k) - mu;
        acc += d * d;
      }
      slot = std::sqrt(acc / double(reports.size()));  // population SD
    });
  }
  return s;
}

void write_report_csv(const std::string& path, const std::vector<MetricsReport>& reports,
                      const CohortSummary& summary,
                      const std::vector<std::pair<std::string, std::string>>& skipped) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open report csv '" + path + "' for writing");
  char buf[256];
  os << "subject,region,dsc,sensitivity,specificity,hd95\n";
  for (const auto& r : reports) {
    for (int i = 0; i < 3; ++i) {
      std::snprintf(buf, sizeof(buf), "%s,%s,%.6f,%.6f,%.6f,%.6f\n", r.subject_id.c_str(),
                    kRegionNames[i], r.regions[i].dsc, r.regions[i].sensitivity,
                    r.regions[i].specificity, r.regions[i].hd95);
      os << buf;
    }
  }
  os << "cohort,metric,wt_mean,wt_sd,et_mean,et_sd,tc_mean,tc_sd\n";
  const char* metric_names[4] = {"dsc", "sensitivity", "specificity", "hd95"};
  auto metric_of = [](const RegionMetrics& m, int k) {
    switch (k) {
      case 0: return m.dsc;
      case 1: return m.sensitivity;
      case 2: return m.specificity;
      default: return m.hd95;
    }
  };
  for (int k = 0; k < 4; ++k) {
    std::snprintf(buf, sizeof(buf), "cohort,%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", metric_names[k],
                  metric_of(summary.mean[0], k), metric_of(summary.sd[0], k),
                  metric_of(summary.mean[1], k), metric_of(summary.sd[1], k),
                  metric_of(summary.mean[2], k), metric_of(summary.sd[2], k));
    os << buf;
  }
  for (const auto& [subject, reason] : skipped) {
    os << "skipped," << subject << "," << reason << "\n";
  }
}

}  // namespace dru
