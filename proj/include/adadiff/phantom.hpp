#pragma once

#include "adadiff/json_util.hpp"
#include "adadiff/operator.hpp"

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace adadiff {

enum class Contrast { T1, T2, PD };

std::string to_string(Contrast c);
Contrast contrast_from_string(const std::string& name);

inline constexpr int kTissueCount = 3;

struct Ellipse {
  double cx = 0, cy = 0; ///< center in [-1, 1] image coordinates
  double a = 1, b = 1;   ///< semi-axes
  double angle = 0;      ///< radians
  int tissue = 0;        ///< index into the per-contrast lookup; -1 for the head outline
};

/// Ellipse phantom with a smooth phase: magnitude in [0, 1].
struct Phantom {
  torch::Tensor image; ///< float32 (2, H, W): real and imaginary channels
  Contrast contrast = Contrast::T1;
  uint64_t seed = 0;
  std::vector<Ellipse> ellipses; ///< head outline first, then inner structures in paint order
  /// Intensity of each tissue class in every contrast, [tissue][contrast].
  std::array<std::array<double, 3>, kTissueCount + 1> intensity{};
  std::array<double, 3> phaseCoeffs{}; ///< phase = c0 x + c1 y + c2 x y
};

/// Geometry and tissue intensities depend only on the seed; the contrast
/// picks which intensity column is painted. Throws ConfigError below 32x32.
Phantom make_phantom(Contrast contrast, int64_t rows, int64_t cols, uint64_t seed);

/// Disjoint per-contrast intensity range of a tissue class; class 0 is the head background.
std::pair<double, double> tissue_range(int tissue, Contrast contrast);

// Dataset on disk: manifest.json plus one raw little-endian float32 file per
// slice with interleaved (real, imag) values in row-major order.

inline constexpr const char* kDataFormat = "adadiff-data-v1";

enum class Split { Train, Val, Test };
std::string to_string(Split s);
Split split_from_string(const std::string& name);

struct SliceEntry {
  std::string file; ///< relative to the dataset root
  Contrast contrast = Contrast::T1;
  int64_t slice = 0;
  uint64_t seed = 0;
};

struct SubjectEntry {
  std::string id;
  Split split = Split::Train;
  uint64_t seed = 0;
  std::vector<SliceEntry> slices;
};

struct DatasetManifest {
  std::string version = kDataFormat;
  int64_t rows = 0;
  int64_t cols = 0;
  uint64_t seed = 0;
  std::vector<Contrast> contrasts;
  int64_t slicesPerSubject = 0;
  std::vector<SubjectEntry> subjects;

  int64_t sliceCount() const;
};

json to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const json& j);

/// Generates phantoms for every subject/slice/contrast, writes them under
/// `root` and returns the manifest (also written as root/manifest.json).
/// Subjects are split 70/10/20 into train/val/test by a seeded shuffle.
DatasetManifest make_dataset(int64_t subjects, const std::vector<Contrast>& contrasts, int64_t rows, int64_t cols,
                             int64_t slicesPerSubject, uint64_t seed, const std::filesystem::path& root);

/// Reads and validates root/manifest.json: every file must exist with the declared size.
DatasetManifest load_manifest(const std::filesystem::path& root);

/// A slice with its location in the dataset.
struct SliceRef {
  std::string subject;
  SliceEntry entry;
};

std::vector<SliceRef> split_slices(const DatasetManifest& m, Split split);

/// (2, H, W) float32 image of one slice.
torch::Tensor load_slice(const std::filesystem::path& root, const DatasetManifest& m, const SliceEntry& entry);
/// Stacked (N, 2, H, W) images of a split, in manifest order; `limit` < 0 means all.
torch::Tensor load_split(const std::filesystem::path& root, const DatasetManifest& m, Split split,
                         int64_t limit = -1);

/// Raw complex float32 arrays: values are written exactly as float32.
void write_cfl(const std::filesystem::path& path, const torch::Tensor& channels);
torch::Tensor read_cfl(const std::filesystem::path& path, int64_t rows, int64_t cols);

/// y = A x + sigma * (complex unit Gaussian) on sampled entries; sigma = 0 is noise free.
torch::Tensor simulate_acquisition(const torch::Tensor& image, const ImagingOperator& op, double noiseSigma,
                                   uint64_t seed);

} // namespace adadiff
