#include "dru/slice_io.hpp"

#include <cstdio>
#include <filesystem>

#include "dru/png_io.hpp"

namespace fs = std::filesystem;

namespace dru {

std::string slice_image_name(const std::string& subject, int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "_slice_%03d.png", index);
  return subject + buf;
}

std::string slice_mask_name(const std::string& subject, int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "_seg_%03d.png", index);
  return subject + buf;
}

void write_slice(const SliceSample& s, const std::string& dir) {
  const std::int64_t plane = s.h * s.w;
  if (s.image.size() != static_cast<std::size_t>(4 * plane)) {
    throw DataError("write_slice: image buffer does not hold 4 channels");
  }
  for (std::uint8_t v : s.image) {
    if (v > 254) {
      throw DataError("write_slice: image value " + std::to_string(int(v)) +
                      " outside [0,254] for subject " + s.subject_id);
    }
  }

  PngImage img;
  img.w = s.w;
  img.h = s.h;
  img.channels = 4;
  img.pixels.resize(static_cast<std::size_t>(4 * plane));
  for (std::int64_t i = 0; i < plane; ++i) {
    for (int c = 0; c < 4; ++c) img.pixels[i * 4 + c] = s.channel(c)[i];
  }
  write_png((fs::path(dir) / slice_image_name(s.subject_id, s.slice_index)).string(), img);

  if (s.label) {
    PngImage mask;
    mask.w = s.w;
    mask.h = s.h;
    mask.channels = 1;
    mask.pixels = *s.label;
    write_png((fs::path(dir) / slice_mask_name(s.subject_id, s.slice_index)).string(), mask);
  }
}

SliceSample read_slice(const std::string& dir, const std::string& subject, int index,
                       bool with_label) {
  const std::string img_path = (fs::path(dir) / slice_image_name(subject, index)).string();
  PngImage img = read_png(img_path);
  if (img.channels != 4) {
    throw FormatError("read_slice: '" + img_path + "' has " + std::to_string(img.channels) +
                      " channels, expected 4 (one per modality)");
  }

  SliceSample s;
  s.h = img.h;
  s.w = img.w;
  s.subject_id = subject;
  s.slice_index = index;
  const std::int64_t plane = s.h * s.w;
  s.image.resize(static_cast<std::size_t>(4 * plane));
  for (std::int64_t i = 0; i < plane; ++i) {
    for (int c = 0; c < 4; ++c) s.channel(c)[i] = img.pixels[i * 4 + c];
  }

  if (with_label) {
    const std::string mask_path = (fs::path(dir) / slice_mask_name(subject, index)).string();
    PngImage mask = read_png(mask_path);
    if (mask.channels != 1) {
      throw FormatError("read_slice: mask '" + mask_path + "' has " +
                        std::to_string(mask.channels) + " channels, expected 1");
    }
    if (mask.w != s.w || mask.h != s.h) {
      throw DataError("read_slice: mask dims do not match image for '" + mask_path + "'");
    }
    std::string offenders;
    int bad = 0;
    for (std::int64_t i = 0; i < plane; ++i) {
      const std::uint8_t v = mask.pixels[i];
      if (v != 0 && v != 1 && v != 2 && v != 4) {
        if (bad < 8) {
          offenders += " (" + std::to_string(i / s.w) + "," + std::to_string(i % s.w) + ")=" +
                       std::to_string(int(v));
        }
        ++bad;
      }
    }
    if (bad > 0) {
      throw DataError("read_slice: mask '" + mask_path + "' has " + std::to_string(bad) +
                      " pixels outside the label set {0,1,2,4}:" + offenders +
                      (bad > 8 ? " ..." : ""));
    }
    s.label = std::move(mask.pixels);
  }
  return s;
}

std::vector<SliceSample> read_subject_slices(const std::string& dir, const std::string& subject,
                                             bool with_labels) {
  std::vector<SliceSample> out;
  for (int index = 0;; ++index) {
    const fs::path p = fs::path(dir) / slice_image_name(subject, index);
    if (!fs::exists(p)) break;
    out.push_back(read_slice(dir, subject, index, with_labels));
  }
  if (out.empty()) {
    throw DataError("no slices found for subject '" + subject + "' under '" + dir + "'");
  }
  return out;
}

}  // namespace dru
