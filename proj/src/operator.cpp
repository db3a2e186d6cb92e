#include "adadiff/operator.hpp"

#include "adadiff/error.hpp"
#include "adadiff/random.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <vector>

namespace adadiff {

std::string to_string(MaskKind kind) {
  return kind == MaskKind::VariableDensity1D ? "vd1d" : "vd2d";
}

MaskKind mask_kind_from_string(const std::string& name) {
  if (name == "vd2d" || name == "2d") {
    return MaskKind::VariableDensity2D;
  }
  if (name == "vd1d" || name == "1d") {
    return MaskKind::VariableDensity1D;
  }
  throw ConfigError("unknown mask kind '" + name + "' (expected vd2d or vd1d)");
}

int64_t Mask::sampledCount() const {
  return pattern.sum().item<int64_t>();
}

Mask Mask::full(int64_t rows, int64_t cols) {
  Mask m;
  m.pattern = torch::ones({rows, cols}, torch::kBool);
  m.calibRows = rows;
  m.calibCols = cols;
  return m;
}

Mask Mask::empty(int64_t rows, int64_t cols) {
  Mask m;
  m.pattern = torch::zeros({rows, cols}, torch::kBool);
  m.accel = std::numeric_limits<double>::infinity();
  return m;
}

namespace {

// Weighted draw of `count` distinct indices (Efraimidis-Spirakis keys).
std::vector<int64_t> weightedDraw(const std::vector<double>& weights, int64_t count, SplitMix64& rng) {
  std::vector<std::pair<double, int64_t>> keys;
  keys.reserve(weights.size());
  for (size_t i = 0; i < weights.size(); ++i) {
    const double u = rng.uniformOpen();
    if (weights[i] > 0.0) {
      keys.emplace_back(std::log(u) / weights[i], static_cast<int64_t>(i));
    }
  }
  count = std::min<int64_t>(count, static_cast<int64_t>(keys.size()));
  std::partial_sort(keys.begin(), keys.begin() + count, keys.end(),
                    [](const auto& a, const auto& b) { return a.first > b.first || (a.first == b.first && a.second < b.second); });
  std::vector<int64_t> out;
  out.reserve(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) {
    out.push_back(keys[static_cast<size_t>(i)].second);
  }
  return out;
}

// Gaussian density exp(-d^2 / (2 sigma^2)); sigma bisected so the weights sum to `target`.
std::vector<double> calibratedDensity(const std::vector<double>& dist2, const std::vector<bool>& eligible,
                                      double target) {
  auto total = [&](double sigma) {
    double s = 0.0;
    for (size_t i = 0; i < dist2.size(); ++i) {
      if (eligible[i]) {
        s += std::exp(-dist2[i] / (2.0 * sigma * sigma));
      }
    }
    return s;
  };
  double lo = 1e-4;
  double hi = 1.0;
  while (total(hi) < target && hi < 1e6) {
    hi *= 2.0;
  }
  for (int it = 0; it < 200 && hi - lo > 1e-12 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (total(mid) < target ? lo : hi) = mid;
  }
  const double sigma = 0.5 * (lo + hi);
  std::vector<double> w(dist2.size(), 0.0);
  for (size_t i = 0; i < dist2.size(); ++i) {
    if (eligible[i]) {
      w[i] = std::exp(-dist2[i] / (2.0 * sigma * sigma));
    }
  }
  return w;
}

} // namespace

Mask make_mask(int64_t rows, int64_t cols, double accel, MaskKind kind, double calibFraction, uint64_t seed) {
  if (rows <= 0 || cols <= 0) {
    throw ConfigError("mask: shape must be positive");
  }
  if (!(accel >= 1.0)) {
    throw ConfigError("mask: acceleration must be >= 1");
  }
  if (calibFraction < 0.0 || calibFraction > 1.0) {
    throw ConfigError("mask: calibration fraction must lie in [0, 1]");
  }

  Mask m;
  m.accel = accel;
  m.kind = kind;
  m.seed = seed;
  SplitMix64 rng(seed);

  if (kind == MaskKind::VariableDensity2D) {
    const int64_t budget = static_cast<int64_t>(std::floor(static_cast<double>(rows * cols) / accel));
    m.calibRows = std::llround(static_cast<double>(rows) * std::sqrt(calibFraction));
    m.calibCols = std::llround(static_cast<double>(cols) * std::sqrt(calibFraction));
    const int64_t calib = m.calibRows * m.calibCols;
    if (calib > budget) {
      throw ConfigError("mask: calibration block (" + std::to_string(calib) + " points) exceeds budget of " +
                        std::to_string(budget));
    }
    const int64_t r0 = rows / 2 - m.calibRows / 2;
    const int64_t c0 = cols / 2 - m.calibCols / 2;
    std::vector<bool> sampled(static_cast<size_t>(rows * cols), false);
    std::vector<bool> eligible(sampled.size(), true);
    std::vector<double> dist2(sampled.size());
    for (int64_t i = 0; i < rows; ++i) {
      for (int64_t j = 0; j < cols; ++j) {
        const size_t idx = static_cast<size_t>(i * cols + j);
        const double dy = static_cast<double>(i - rows / 2) / (0.5 * rows);
        const double dx = static_cast<double>(j - cols / 2) / (0.5 * cols);
        dist2[idx] = dy * dy + dx * dx;
        if (i >= r0 && i < r0 + m.calibRows && j >= c0 && j < c0 + m.calibCols) {
          sampled[idx] = true;
          eligible[idx] = false;
        }
      }
    }
    const int64_t remaining = budget - calib;
    const int64_t available = rows * cols - calib;
    if (remaining >= available) {
      std::fill(sampled.begin(), sampled.end(), true);
    } else if (remaining > 0) {
      const auto w = calibratedDensity(dist2, eligible, static_cast<double>(remaining));
      for (int64_t idx : weightedDraw(w, remaining, rng)) {
        sampled[static_cast<size_t>(idx)] = true;
      }
    }
    m.pattern = torch::zeros({rows, cols}, torch::kBool);
    auto acc = m.pattern.accessor<bool, 2>();
    for (int64_t i = 0; i < rows; ++i) {
      for (int64_t j = 0; j < cols; ++j) {
        acc[i][j] = sampled[static_cast<size_t>(i * cols + j)];
      }
    }
    return m;
  }

  // 1D: whole columns along the phase-encode (last) axis.
  const int64_t budget = static_cast<int64_t>(std::floor(static_cast<double>(cols) / accel));
  m.calibRows = rows;
  m.calibCols = std::llround(static_cast<double>(cols) * calibFraction);
  if (m.calibCols > budget) {
    throw ConfigError("mask: calibration lines (" + std::to_string(m.calibCols) + ") exceed budget of " +
                      std::to_string(budget));
  }
  const int64_t c0 = cols / 2 - m.calibCols / 2;
  std::vector<bool> sampled(static_cast<size_t>(cols), false);
  std::vector<bool> eligible(sampled.size(), true);
  std::vector<double> dist2(sampled.size());
  for (int64_t j = 0; j < cols; ++j) {
    const double dx = static_cast<double>(j - cols / 2) / (0.5 * cols);
    dist2[static_cast<size_t>(j)] = dx * dx;
    if (j >= c0 && j < c0 + m.calibCols) {
      sampled[static_cast<size_t>(j)] = true;
      eligible[static_cast<size_t>(j)] = false;
    }
  }
  const int64_t remaining = budget - m.calibCols;
  if (remaining >= cols - m.calibCols) {
    std::fill(sampled.begin(), sampled.end(), true);
  } else if (remaining > 0) {
    const auto w = calibratedDensity(dist2, eligible, static_cast<double>(remaining));
    for (int64_t idx : weightedDraw(w, remaining, rng)) {
      sampled[static_cast<size_t>(idx)] = true;
    }
  }
  m.pattern = torch::zeros({rows, cols}, torch::kBool);
  for (int64_t j = 0; j < cols; ++j) {
    if (sampled[static_cast<size_t>(j)]) {
      m.pattern.index_put_({torch::indexing::Slice(), j}, true);
    }
  }
  return m;
}

CoilMaps CoilMaps::unit(int64_t rows, int64_t cols) {
  return {torch::ones({1, rows, cols}, torch::kComplexDouble)};
}

CoilMaps make_coil_maps(int64_t rows, int64_t cols, int64_t coils, uint64_t seed) {
  if (coils < 1) {
    throw ConfigError("coil maps: need at least one coil");
  }
  SplitMix64 rng(seed);
  const double pi = std::numbers::pi;
  const double extent = static_cast<double>(std::max(rows, cols));
  const double width = 0.6 * extent;
  const double ramp = 0.5 * 2.0 * pi / extent; // half a cycle across the field of view

  auto re = torch::zeros({coils, rows, cols}, torch::kFloat64);
  auto im = torch::zeros({coils, rows, cols}, torch::kFloat64);
  auto reA = re.accessor<double, 3>();
  auto imA = im.accessor<double, 3>();
  for (int64_t c = 0; c < coils; ++c) {
    const double theta = 2.0 * pi * static_cast<double>(c) / static_cast<double>(coils) + 0.2 * (rng.uniform() - 0.5);
    const double cy = 0.5 * rows + 0.5 * rows * std::sin(theta);
    const double cx = 0.5 * cols + 0.5 * cols * std::cos(theta);
    const double phase0 = 2.0 * pi * rng.uniform();
    for (int64_t i = 0; i < rows; ++i) {
      for (int64_t j = 0; j < cols; ++j) {
        const double dy = static_cast<double>(i) - cy;
        const double dx = static_cast<double>(j) - cx;
        const double mag = std::exp(-(dy * dy + dx * dx) / (2.0 * width * width));
        const double phase = phase0 + ramp * ((static_cast<double>(i) - 0.5 * rows) * std::sin(theta) +
                                              (static_cast<double>(j) - 0.5 * cols) * std::cos(theta));
        reA[c][i][j] = mag * std::cos(phase);
        imA[c][i][j] = mag * std::sin(phase);
      }
    }
  }
  auto maps = torch::complex(re, im);
  auto norm = torch::sqrt((re * re + im * im).sum(0, /*keepdim=*/true));
  return {maps / norm};
}

ImagingOperator::ImagingOperator(Mask mask, CoilMaps coils) : mask_(std::move(mask)), coils_(std::move(coils)) {
  if (mask_.pattern.dim() != 2 || coils_.maps.dim() != 3 || mask_.rows() != coils_.rows() ||
      mask_.cols() != coils_.cols()) {
    throw ContractError("operator: mask and coil map shapes disagree");
  }
  mask_.pattern = mask_.pattern.to(torch::kBool);
  coils_.maps = coils_.maps.to(torch::kComplexDouble);
  sampled_ = mask_.sampledCount();
}

void ImagingOperator::checkImage(const torch::Tensor& image) const {
  const auto d = image.dim();
  if ((d != 3 && d != 4) || image.size(d - 3) != 2 || image.size(d - 2) != rows() || image.size(d - 1) != cols()) {
    throw ContractError("operator: expected image shaped (2, " + std::to_string(rows()) + ", " +
                        std::to_string(cols()) + ") or batched");
  }
  if (image.is_complex()) {
    throw ContractError("operator: images are real (re, im) channel tensors");
  }
}

void ImagingOperator::checkKspace(const torch::Tensor& kspace) const {
  const auto d = kspace.dim();
  if ((d != 3 && d != 4) || kspace.size(d - 3) != coilCount() || kspace.size(d - 2) != rows() ||
      kspace.size(d - 1) != cols()) {
    throw ContractError("operator: expected k-space shaped (" + std::to_string(coilCount()) + ", " +
                        std::to_string(rows()) + ", " + std::to_string(cols()) + ") or batched");
  }
  if (!kspace.is_complex()) {
    throw ContractError("operator: k-space must be complex");
  }
}

torch::Tensor fft2c(const torch::Tensor& x) {
  const std::vector<int64_t> dims{-2, -1};
  return torch::fft::fftshift(torch::fft::fft2(torch::fft::ifftshift(x, dims), c10::nullopt, dims, "ortho"), dims);
}

torch::Tensor ifft2c(const torch::Tensor& k) {
  const std::vector<int64_t> dims{-2, -1};
  return torch::fft::fftshift(torch::fft::ifft2(torch::fft::ifftshift(k, dims), c10::nullopt, dims, "ortho"), dims);
}

torch::Tensor to_complex(const torch::Tensor& channels) {
  return torch::complex(channels.select(-3, 0), channels.select(-3, 1));
}

torch::Tensor to_channels(const torch::Tensor& complex) {
  return torch::stack({torch::real(complex), torch::imag(complex)}, -3);
}

torch::Tensor ImagingOperator::forward(const torch::Tensor& image) const {
  checkImage(image);
  const auto cdtype = image.scalar_type() == torch::kFloat64 ? torch::kComplexDouble : torch::kComplexFloat;
  auto x = to_complex(image).unsqueeze(-3);      // (..., 1, H, W)
  auto coilImages = x * coils_.maps.to(cdtype);   // (..., C, H, W)
  return fft2c(coilImages) * mask_.pattern;
}

torch::Tensor ImagingOperator::adjoint(const torch::Tensor& kspace) const {
  checkKspace(kspace);
  const auto cdtype = kspace.scalar_type();
  auto coilImages = ifft2c(kspace * mask_.pattern);
  auto combined = (coilImages * torch::conj(coils_.maps.to(cdtype))).sum(-3);
  return to_channels(combined);
}

torch::Tensor apply_A(const torch::Tensor& image, const ImagingOperator& op) {
  return op.forward(image);
}

torch::Tensor apply_AH(const torch::Tensor& kspace, const ImagingOperator& op) {
  return op.adjoint(kspace);
}

torch::Tensor dc_projection(const torch::Tensor& xCur, const torch::Tensor& y, const ImagingOperator& op) {
  return xCur + op.adjoint(y - op.forward(xCur));
}

torch::Tensor zero_filled(const torch::Tensor& y, const ImagingOperator& op) {
  return op.adjoint(y);
}

torch::Tensor dc_loss(const torch::Tensor& image, const torch::Tensor& y, const ImagingOperator& op) {
  auto residual = torch::view_as_real(op.forward(image) - y);
  const auto entries = op.sampledEntries() * (image.dim() == 4 ? image.size(0) : 1);
  if (entries == 0) {
    return residual.abs().sum() * 0.0;
  }
  return residual.abs().sum() / static_cast<double>(entries);
}

} // namespace adadiff
