#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <string>

namespace adadiff {

enum class MaskKind { VariableDensity2D, VariableDensity1D };

std::string to_string(MaskKind kind);
MaskKind mask_kind_from_string(const std::string& name);

/// Cartesian k-space sampling pattern, stored centered (DC at (H/2, W/2)).
struct Mask {
  torch::Tensor pattern; ///< bool, (H, W)
  double accel = 1.0;
  int64_t calibRows = 0;
  int64_t calibCols = 0;
  MaskKind kind = MaskKind::VariableDensity2D;
  uint64_t seed = 0;

  int64_t rows() const { return pattern.size(0); }
  int64_t cols() const { return pattern.size(1); }
  int64_t sampledCount() const;

  static Mask full(int64_t rows, int64_t cols);
  static Mask empty(int64_t rows, int64_t cols);
};

/// Variable-density random mask.
///
/// 2D kind samples floor(H*W/R) distinct points; 1D kind samples floor(W/R)
/// full phase-encode columns. Points (or columns) outside the calibration
/// block are drawn without replacement with weights from a centered Gaussian
/// density whose width is bisected until the expected draw count matches the
/// budget. The calibration block covers `calibFraction` of the k-space area
/// (a centered square-ish block for 2D, central columns for 1D) and counts
/// against the budget.
Mask make_mask(int64_t rows, int64_t cols, double accel, MaskKind kind, double calibFraction,
               uint64_t seed);

/// Coil sensitivities normalized so that sum_c |B_c|^2 = 1 at every pixel.
struct CoilMaps {
  torch::Tensor maps; ///< complex128, (C, H, W)

  int64_t coils() const { return maps.size(0); }
  int64_t rows() const { return maps.size(1); }
  int64_t cols() const { return maps.size(2); }

  /// Single coil with B = 1 everywhere.
  static CoilMaps unit(int64_t rows, int64_t cols);
};

/// Smooth Gaussian-lobe sensitivities centered on evenly spaced border
/// positions, each with a gentle linear phase ramp.
CoilMaps make_coil_maps(int64_t rows, int64_t cols, int64_t coils, uint64_t seed);

/// A = Omega F B with a centered orthonormal 2D DFT.
///
/// Images are real tensors with a leading (real, imag) channel pair:
/// (2, H, W) or batched (N, 2, H, W). Measurements are complex tensors
/// (C, H, W) or (N, C, H, W) whose precision follows the image dtype.
class ImagingOperator {
public:
  ImagingOperator(Mask mask, CoilMaps coils);

  const Mask& mask() const { return mask_; }
  const CoilMaps& coils() const { return coils_; }
  int64_t rows() const { return mask_.rows(); }
  int64_t cols() const { return mask_.cols(); }
  int64_t coilCount() const { return coils_.coils(); }
  /// Number of acquired complex entries across all coils.
  int64_t sampledEntries() const { return sampled_ * coils_.coils(); }

  torch::Tensor forward(const torch::Tensor& image) const;
  torch::Tensor adjoint(const torch::Tensor& kspace) const;

private:
  void checkImage(const torch::Tensor& image) const;
  void checkKspace(const torch::Tensor& kspace) const;

  Mask mask_;
  CoilMaps coils_;
  int64_t sampled_ = 0;
};

/// Centered orthonormal 2D DFT over the last two dimensions of a complex tensor.
torch::Tensor fft2c(const torch::Tensor& x);
torch::Tensor ifft2c(const torch::Tensor& k);

/// (…, 2, H, W) real <-> (…, H, W) complex.
torch::Tensor to_complex(const torch::Tensor& channels);
torch::Tensor to_channels(const torch::Tensor& complex);

torch::Tensor apply_A(const torch::Tensor& image, const ImagingOperator& op);
torch::Tensor apply_AH(const torch::Tensor& kspace, const ImagingOperator& op);

/// xCur + A^H (y - A xCur).
torch::Tensor dc_projection(const torch::Tensor& xCur, const torch::Tensor& y, const ImagingOperator& op);

torch::Tensor zero_filled(const torch::Tensor& y, const ImagingOperator& op);

/// l1 norm of A x - y over real and imaginary parts, divided by the number
/// of acquired complex entries (0 for an empty mask). Differentiable in x.
torch::Tensor dc_loss(const torch::Tensor& image, const torch::Tensor& y, const ImagingOperator& op);

} // namespace adadiff
