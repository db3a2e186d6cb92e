#pragma once

#include "adadiff/json_util.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace adadiff {

/// Row-major magnitude image.
struct MagnitudeImage {
  int64_t rows = 0;
  int64_t cols = 0;
  std::vector<double> data;

  double at(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * cols + j)]; }
};

/// |x| of a (2, H, W) real/imaginary channel tensor.
MagnitudeImage magnitude(const torch::Tensor& channels);

inline constexpr double kPsnrIdentical = std::numeric_limits<double>::infinity();

/// PSNR in dB after dividing each image by its own mean. The peak is the
/// maximum of the normalized reference. Identical normalized images give
/// +infinity. Throws EvaluationError when the reference has zero mean.
double psnr(const MagnitudeImage& ref, const MagnitudeImage& rec);

struct SsimOptions {
  int window = 7;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

/// Mean SSIM over all fully contained Gaussian-weighted windows, computed on
/// unity-mean normalized images with dynamic range = max of the normalized reference.
double ssim(const MagnitudeImage& ref, const MagnitudeImage& rec, const SsimOptions& options = {});

/// Two-sided Wilcoxon signed-rank p-value for paired samples. Zero
/// differences are dropped; ties get average ranks. Up to 12 non-zero pairs
/// the null distribution is enumerated exactly, above that the normal
/// approximation with tie-corrected variance is used. All-zero differences
/// give p = 1; between 1 and 4 non-zero pairs is a contract violation.
double signed_rank_test(std::span<const double> a, std::span<const double> b);

inline constexpr int kExactSignedRankLimit = 12;

/// One reconstructed slice scored against its reference.
struct MetricRow {
  std::string method;
  std::string contrast;
  std::string subject;
  int64_t slice = 0;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct Summary {
  double mean = 0.0;
  double std = 0.0;
  int64_t count = 0;
};

/// Sample mean and standard deviation (n - 1 denominator; 0 for a single value).
Summary summarize(std::span<const double> values);

struct MethodSummary {
  std::string method;
  std::string contrast; ///< "all" pools every contrast
  Summary psnr;
  Summary ssim;
};

struct PairwiseTest {
  std::string methodA;
  std::string methodB;
  std::string contrast;
  double psnrP = 1.0;
  double ssimP = 1.0;
  int64_t pairs = 0;
};

/// Per-slice metrics with grouped summaries and paired tests.
///
/// Summaries average each subject's slices first and then report mean and
/// std across subjects, unless `slicePooled` is set.
class MetricReport {
public:
  explicit MetricReport(bool slicePooled = false) : slicePooled_(slicePooled) {}

  void add(MetricRow row);
  const std::vector<MetricRow>& rows() const { return rows_; }
  bool slicePooled() const { return slicePooled_; }

  std::vector<std::string> methods() const;
  std::vector<std::string> contrasts() const;

  std::vector<MethodSummary> summaries() const;
  /// Signed-rank tests between every pair of methods, pairing slices by
  /// (subject, contrast, slice). Pairs with fewer than 5 non-zero
  /// differences report p = 1 for that metric.
  std::vector<PairwiseTest> pairwise() const;

  /// Per-slice rows as comma-separated text with a header line.
  std::string toCsv() const;
  /// Summary table, one line per (method, contrast).
  std::string summaryCsv() const;
  json toJson() const;

private:
  std::vector<MetricRow> rows_;
  bool slicePooled_;
};

} // namespace adadiff
