#include "dru/volume.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dru/errors.hpp"

namespace dru {

void VolumeStack::validate() const {
  const VolumeF& ref = modalities[0];
  if (ref.numel() == 0) throw DataError("VolumeStack: empty volume for subject " + subject_id);
  for (int m = 1; m < 4; ++m) {
    const VolumeF& v = modalities[m];
    if (v.depth != ref.depth || v.h != ref.h || v.w != ref.w) {
      throw DataError("VolumeStack: modality '" + std::string(kModalityNames[m]) +
                      "' dims do not match '" + kModalityNames[0] + "' for subject " +
                      subject_id);
    }
  }
  if (labels && (labels->depth != ref.depth || labels->h != ref.h || labels->w != ref.w)) {
    throw DataError("VolumeStack: label dims do not match modalities for subject " + subject_id);
  }
}

NormalizationStats compute_norm_stats(const VolumeF& vol) {
  // two-pass over foreground (v > 0), population SD
  double sum = 0.0;
  std::int64_t count = 0;
  float first = 0.f;
  bool distinct = false, any = false;
  for (float x : vol.v) {
    if (x > 0.f) {
      if (!any) {
        first = x;
        any = true;
      } else if (x != first) {
        distinct = true;
      }
      sum += x;
      ++count;
    }
  }
  if (!any) throw DataError("compute_norm_stats: volume has no foreground voxels (all <= 0)");
  if (!distinct) {
    throw DataError("compute_norm_stats: degenerate volume, all foreground voxels equal " +
                    std::to_string(first) + " (SD would be 0)");
  }
  const double mean = sum / double(count);
  double sq = 0.0;
  for (float x : vol.v) {
    if (x > 0.f) {
      const double d = double(x) - mean;
      sq += d * d;
    }
  }
  NormalizationStats st;
  st.mean = mean;
  st.sd = std::sqrt(sq / double(count));
  if (st.sd <= 0.0) throw DataError("compute_norm_stats: degenerate volume (SD = 0)");
  return st;
}

namespace {

// round half away from zero
std::int64_t round_away(double x) {
  return static_cast<std::int64_t>(x >= 0 ? std::floor(x + 0.5) : std::ceil(x - 0.5));
}

}  // namespace

VolumeU8 normalize_volume(const VolumeF& vol, const NormalizationStats& stats) {
  if (!(stats.sd > 0.0)) throw DataError("normalize_volume: stats.SD must be positive");
  VolumeU8 out(vol.depth, vol.h, vol.w);
  const double inv = 128.0 / (3.0 * stats.sd);
  for (std::int64_t i = 0; i < vol.numel(); ++i) {
    const float x = vol.v[i];
    std::uint8_t y;
    if (x == 0.f) {
      y = 0;  // background stays 0
    } else if (double(x) > stats.mean + 3.0 * stats.sd) {
      y = 254;
    } else if (double(x) < stats.mean - 3.0 * stats.sd) {
      y = 0;
    } else {
      const std::int64_t q = round_away((double(x) - stats.mean) * inv + 127.0);
      y = static_cast<std::uint8_t>(std::clamp<std::int64_t>(q, 0, 254));
    }
    out.v[i] = y;
  }
  return out;
}

std::vector<SliceSample> volume_to_slices(const VolumeStack& stack) {
  stack.validate();
  std::array<NormalizationStats, 4> stats;
  std::array<VolumeU8, 4> norm;
  for (int m = 0; m < 4; ++m) {
    stats[m] = compute_norm_stats(stack.modalities[m]);
    norm[m] = normalize_volume(stack.modalities[m], stats[m]);
  }
  const std::int64_t D = stack.modalities[0].depth;
  const std::int64_t H = stack.modalities[0].h;
  const std::int64_t W = stack.modalities[0].w;
  const std::int64_t plane = H * W;

  std::vector<SliceSample> out;
  out.reserve(static_cast<std::size_t>(D));
  for (std::int64_t k = 0; k < D; ++k) {
    SliceSample s;
    s.h = H;
    s.w = W;
    s.subject_id = stack.subject_id;
    s.slice_index = static_cast<int>(k);
    s.image.resize(static_cast<std::size_t>(4 * plane));
    for (int m = 0; m < 4; ++m) {
      std::memcpy(s.channel(m), norm[m].v.data() + k * plane, static_cast<std::size_t>(plane));
    }
    if (stack.labels) {
      s.label.emplace(stack.labels->v.begin() + k * plane,
                      stack.labels->v.begin() + (k + 1) * plane);
    }
    out.push_back(std::move(s));
  }
  return out;
}

VolumeU8 reconstruct_volume(std::vector<MaskSlice> slices) {
  if (slices.empty()) throw DataError("reconstruct_volume: no slices");
  std::sort(slices.begin(), slices.end(),
            [](const MaskSlice& a, const MaskSlice& b) { return a.index < b.index; });
  const std::int64_t S = static_cast<std::int64_t>(slices.size());
  const std::int64_t H = slices[0].h, W = slices[0].w;
  for (std::int64_t k = 0; k < S; ++k) {
    if (slices[k].index != k) {
      throw DataError("reconstruct_volume: gap at " + std::to_string(k) +
                      " (found index " + std::to_string(slices[k].index) + ")");
    }
    if (slices[k].h != H || slices[k].w != W) {
      throw DataError("reconstruct_volume: slice " + std::to_string(k) + " dims differ");
    }
  }
  VolumeU8 out(S, H, W);
  for (std::int64_t k = 0; k < S; ++k) {
    std::memcpy(out.v.data() + k * H * W, slices[k].v.data(), static_cast<std::size_t>(H * W));
  }
  return out;
}

std::int32_t label_to_internal(std::uint8_t external) {
  switch (external) {
    case 0: return 0;
    case 1: return 1;
    case 2: return 2;
    case 4: return 3;
    default:
      throw DataError("label value " + std::to_string(int(external)) +
                      " outside the expected set {0,1,2,4}");
  }
}

std::uint8_t label_to_external(std::int32_t internal) {
  switch (internal) {
    case 0: return 0;
    case 1: return 1;
    case 2: return 2;
    case 3: return 4;
    default:
      throw DataError("internal class " + std::to_string(internal) + " outside [0,4)");
  }
}

Tensor4 slice_to_input(const SliceSample& s) {
  Tensor4 x({1, 4, s.h, s.w});
  const std::int64_t plane = s.h * s.w;
  for (int c = 0; c < 4; ++c) {
    const std::uint8_t* src = s.channel(c);
    real_t* dst = x.plane(0, c);
    for (std::int64_t i = 0; i < plane; ++i) {
      dst[i] = (real_t(src[i]) - real_t(127)) / real_t(128);
    }
  }
  return x;
}

LabelMap slice_label_internal(const SliceSample& s) {
  if (!s.label) throw DataError("slice " + std::to_string(s.slice_index) + " has no label");
  LabelMap m(1, s.h, s.w);
  for (std::int64_t i = 0; i < s.h * s.w; ++i) m.v[i] = label_to_internal((*s.label)[i]);
  return m;
}

namespace {

void write_volume_raw(const std::string& path, const std::string& name, std::int64_t d,
                      std::int64_t h, std::int64_t w, const char* dtype, const void* payload,
                      std::size_t bytes) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open volume file '" + path + "' for writing");
  os << "DRUVOL 1\n"
     << "name " << name << "\n"
     << "dims " << d << " " << h << " " << w << "\n"
     << "dtype " << dtype << "\n"
     << "data\n";
  os.write(static_cast<const char*>(payload), static_cast<std::streamsize>(bytes));
  if (!os) throw DataError("write failed for volume file '" + path + "'");
}

struct RawHeader {
  std::string name;
  std::int64_t d = 0, h = 0, w = 0;
  std::string dtype;
};

RawHeader read_volume_header(std::istream& is, const std::string& path) {
  RawHeader hd;
  std::string line;
  if (!std::getline(is, line) || line != "DRUVOL 1") {
    throw FormatError("volume file '" + path + "': missing DRUVOL 1 header");
  }
  bool saw_dims = false, saw_dtype = false;
  while (std::getline(is, line)) {
    if (line == "data") {
      if (!saw_dims || !saw_dtype) {
        throw FormatError("volume file '" + path + "': incomplete header");
      }
      return hd;
    }
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "name") {
      ls >> hd.name;
    } else if (key == "dims") {
      ls >> hd.d >> hd.h >> hd.w;
      if (!ls || hd.d < 1 || hd.h < 1 || hd.w < 1) {
        throw FormatError("volume file '" + path + "': bad dims line");
      }
      saw_dims = true;
    } else if (key == "dtype") {
      ls >> hd.dtype;
      saw_dtype = true;
    } else {
      throw FormatError("volume file '" + path + "': unknown header key '" + key + "'");
    }
  }
  throw FormatError("volume file '" + path + "': missing data marker");
}

}  // namespace

void write_volume(const std::string& path, const std::string& name, const VolumeF& vol) {
  static_assert(sizeof(float) == 4);
  write_volume_raw(path, name, vol.depth, vol.h, vol.w, "f32", vol.v.data(),
                   vol.v.size() * sizeof(float));
}

void write_volume(const std::string& path, const std::string& name, const VolumeU8& vol) {
  write_volume_raw(path, name, vol.depth, vol.h, vol.w, "u8", vol.v.data(), vol.v.size());
}

VolumeF read_volume_f32(const std::string& path, std::string* name_out) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open volume file '" + path + "'");
  RawHeader hd = read_volume_header(is, path);
  if (hd.dtype != "f32") {
    throw FormatError("volume file '" + path + "': expected dtype f32, got '" + hd.dtype + "'");
  }
  VolumeF vol(hd.d, hd.h, hd.w);
  is.read(reinterpret_cast<char*>(vol.v.data()),
          static_cast<std::streamsize>(vol.v.size() * sizeof(float)));
  if (!is) throw FormatError("volume file '" + path + "': truncated payload");
  if (name_out) *name_out = hd.name;
  return vol;
}

VolumeU8 read_volume_u8(const std::string& path, std::string* name_out) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open volume file '" + path + "'");
  RawHeader hd = read_volume_header(is, path);
  if (hd.dtype != "u8") {
    throw FormatError("volume file '" + path + "': expected dtype u8, got '" + hd.dtype + "'");
  }
  VolumeU8 vol(hd.d, hd.h, hd.w);
  is.read(reinterpret_cast<char*>(vol.v.data()), static_cast<std::streamsize>(vol.v.size()));
  if (!is) throw FormatError("volume file '" + path + "': truncated payload");
  if (name_out) *name_out = hd.name;
  return vol;
}

}  // namespace dru
