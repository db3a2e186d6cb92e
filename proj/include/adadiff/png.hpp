#pragma once

#include "adadiff/metrics.hpp"

#include <torch/torch.h>

#include <filesystem>

namespace adadiff {

/// 8-bit grayscale PNG of a magnitude image, windowed to [0, 99th percentile].
/// For display only.
void write_magnitude_png(const std::filesystem::path& path, const MagnitudeImage& image);

/// Black/white PNG of a boolean (H, W) sampling pattern.
void write_mask_png(const std::filesystem::path& path, const torch::Tensor& pattern);

/// Display window upper bound used by write_magnitude_png.
double display_window(const MagnitudeImage& image);

} // namespace adadiff
