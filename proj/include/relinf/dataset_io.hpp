#pragma once

#include "relinf/types.hpp"

#include <string>

namespace relinf {

/// CSV with header row `label,f0,f1,...`; labels are base-10 integers.
/// num_classes == 0 infers c as max(label) + 1.
Dataset load_csv(const std::string& path, int num_classes = 0);

/// Big-endian IDX pair: images (magic 0x00000803) and labels
/// (magic 0x00000801). Pixel values are scaled to [0, 1].
Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                 int num_classes = 0);

void save_csv(const std::string& path, const Dataset& data);

}  // namespace relinf
