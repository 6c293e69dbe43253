#pragma once

#include <array>
#include <string>
#include <vector>

#include "dru/volume.hpp"

namespace dru {

// 0/1 voxel mask, same layout as VolumeU8.
struct BinaryVolume {
  std::int64_t depth = 0, h = 0, w = 0;
  std::vector<std::uint8_t> v;

  BinaryVolume() = default;
  BinaryVolume(std::int64_t d, std::int64_t hh, std::int64_t ww)
      : depth(d), h(hh), w(ww), v(static_cast<std::size_t>(d * hh * ww), 0) {}
  std::uint8_t at(std::int64_t d, std::int64_t y, std::int64_t x) const {
    return v[(d * h + y) * w + x];
  }
  std::int64_t numel() const { return depth * h * w; }
};

// Evaluated regions, nested et ⊆ tc ⊆ wt:
//   WT = labels {1,2,4}, TC = {1,4}, ET = {4}
struct RegionMaskSet {
  BinaryVolume wt, tc, et;
};

RegionMaskSet region_masks(const VolumeU8& labels);

struct Spacing {
  double d = 1.0, h = 1.0, w = 1.0;  // mm per voxel
};

// Empty-mask conventions; kept in one place so alternates can be swapped.
// one_empty_hd95 resolves to the volume diagonal in mm.
struct MetricConventions {
  double both_empty_dice = 1.0;
  double one_empty_dice = 0.0;
  double empty_truth_sensitivity = 1.0;
  double all_truth_specificity = 1.0;
  double both_empty_hd95 = 0.0;
};

double dice(const BinaryVolume& a, const BinaryVolume& b, const MetricConventions& conv = {});
double sensitivity(const BinaryVolume& pred, const BinaryVolume& truth,
                   const MetricConventions& conv = {});
double specificity(const BinaryVolume& pred, const BinaryVolume& truth,
                   const MetricConventions& conv = {});

// 95th-percentile symmetric surface distance. Surfaces are mask voxels with a
// face-adjacent background neighbor (volume border counts as background);
// percentile uses linear interpolation; the larger of both directions wins.
double hausdorff95(const BinaryVolume& pred, const BinaryVolume& truth, Spacing spacing = {},
                   const MetricConventions& conv = {});

struct RegionMetrics {
  double dsc = 0, sensitivity = 0, specificity = 0, hd95 = 0;
};

inline constexpr std::array<const char*, 3> kRegionNames = {"wt", "et", "tc"};

struct MetricsReport {
  std::string subject_id;
  std::array<RegionMetrics, 3> regions;  // wt, et, tc
};

MetricsReport evaluate_case(const VolumeU8& pred, const VolumeU8& truth,
                            const std::string& subject_id, Spacing spacing = {});

// cohort mean and population SD per region / metric
struct CohortSummary {
  std::array<RegionMetrics, 3> mean, sd;
  std::int64_t cases = 0;
};

CohortSummary aggregate(const std::vector<MetricsReport>& reports);

// Report CSV: one row per case per region, then a cohort section mirroring the
// WT/ET/TC mean (SD) table layout, then any skipped subjects.
void write_report_csv(const std::string& path, const std::vector<MetricsReport>& reports,
                      const CohortSummary& summary,
                      const std::vector<std::pair<std::string, std::string>>& skipped = {});

}  // namespace dru
