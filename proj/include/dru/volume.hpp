#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "dru/tensor.hpp"

namespace dru {

// 3-D scalar volume, row-major (depth, h, w).
struct VolumeF {
  std::int64_t depth = 0, h = 0, w = 0;
  std::vector<float> v;

  VolumeF() = default;
  VolumeF(std::int64_t d, std::int64_t hh, std::int64_t ww)
      : depth(d), h(hh), w(ww), v(static_cast<std::size_t>(d * hh * ww), 0.f) {}
  float& at(std::int64_t d, std::int64_t y, std::int64_t x) { return v[(d * h + y) * w + x]; }
  float at(std::int64_t d, std::int64_t y, std::int64_t x) const { return v[(d * h + y) * w + x]; }
  std::int64_t numel() const { return depth * h * w; }
};

// 3-D label/intensity volume of bytes.
struct VolumeU8 {
  std::int64_t depth = 0, h = 0, w = 0;
  std::vector<std::uint8_t> v;

  VolumeU8() = default;
  VolumeU8(std::int64_t d, std::int64_t hh, std::int64_t ww)
      : depth(d), h(hh), w(ww), v(static_cast<std::size_t>(d * hh * ww), 0) {}
  std::uint8_t& at(std::int64_t d, std::int64_t y, std::int64_t x) {
    return v[(d * h + y) * w + x];
  }
  std::uint8_t at(std::int64_t d, std::int64_t y, std::int64_t x) const {
    return v[(d * h + y) * w + x];
  }
  std::int64_t numel() const { return depth * h * w; }
};

inline constexpr std::array<const char*, 4> kModalityNames = {"flair", "t1", "t1ce", "t2"};
inline constexpr std::array<std::uint8_t, 4> kExternalLabels = {0, 1, 2, 4};

// Four co-registered modality volumes plus optional expert labels {0,1,2,4}.
struct VolumeStack {
  std::array<VolumeF, 4> modalities;  // flair, t1, t1ce, t2
  std::optional<VolumeU8> labels;
  std::string subject_id;

  void validate() const;  // all dims agree
};

// mean / population SD over voxels strictly > 0
struct NormalizationStats {
  double mean = 0.0;
  double sd = 0.0;
};

NormalizationStats compute_norm_stats(const VolumeF& vol);

// Intensity standardization to 8-bit: background (v == 0) maps to 0; values
// beyond mean +/- 3*SD clamp to 254 / 0; in between, round((v - mean) * 128 /
// (3*SD) + 127) clamped to [0, 254]. Monotone over the foreground domain.
VolumeU8 normalize_volume(const VolumeF& vol, const NormalizationStats& stats);

// One axial slice: 4 normalized modality channels plus optional raw labels.
struct SliceSample {
  std::int64_t h = 0, w = 0;
  std::vector<std::uint8_t> image;                 // (4, h, w) channel-major, values in [0,254]
  std::optional<std::vector<std::uint8_t>> label;  // (h, w), values in {0,1,2,4}
  std::string subject_id;
  int slice_index = 0;

  std::uint8_t* channel(int c) { return image.data() + c * h * w; }
  const std::uint8_t* channel(int c) const { return image.data() + c * h * w; }
};

// 155 axial slices for a standard stack; labels sliced identically.
std::vector<SliceSample> volume_to_slices(const VolumeStack& stack);

struct MaskSlice {
  int index = 0;
  std::int64_t h = 0, w = 0;
  std::vector<std::uint8_t> v;
};

// Stacks mask slices along depth; requires contiguous indices 0..S-1.
VolumeU8 reconstruct_volume(std::vector<MaskSlice> slices);

// external {0,1,2,4} <-> internal contiguous {0,1,2,3}
std::int32_t label_to_internal(std::uint8_t external);
std::uint8_t label_to_external(std::int32_t internal);

// network input scaling for normalized 8-bit slices: (v - 127) / 128
Tensor4 slice_to_input(const SliceSample& s);
LabelMap slice_label_internal(const SliceSample& s);

// Raw volume container (text header, then little-endian payload):
//   DRUVOL 1
//   name <id>
//   dims <depth> <h> <w>
//   dtype f32|u8
//   data\n<binary>
void write_volume(const std::string& path, const std::string& name, const VolumeF& vol);
void write_volume(const std::string& path, const std::string& name, const VolumeU8& vol);
VolumeF read_volume_f32(const std::string& path, std::string* name_out = nullptr);
VolumeU8 read_volume_u8(const std::string& path, std::string* name_out = nullptr);

}  // namespace dru
