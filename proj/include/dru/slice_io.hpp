#pragma once

#include <string>
#include <vector>

#include "dru/volume.hpp"

namespace dru {

// `<subject>_slice_<index:03>.png` / `<subject>_seg_<index:03>.png`
std::string slice_image_name(const std::string& subject, int index);
std::string slice_mask_name(const std::string& subject, int index);

// Writes the 4-channel slice image (RGBA, channel order = modality order) and,
// when labels are present, the single-channel mask with raw values {0,1,2,4}.
void write_slice(const SliceSample& s, const std::string& dir);

// Inverse of write_slice, bit-exact. Validates channel count, bit depth and
// the mask label domain (offending pixels are listed).
SliceSample read_slice(const std::string& dir, const std::string& subject, int index,
                       bool with_label);

// All slices of one subject directory, ordered by index (0..S-1 contiguous).
std::vector<SliceSample> read_subject_slices(const std::string& dir, const std::string& subject,
                                             bool with_labels);

}  // namespace dru
