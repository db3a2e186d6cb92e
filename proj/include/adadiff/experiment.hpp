#pragma once

#include "adadiff/json_util.hpp"
#include "adadiff/mapper.hpp"
#include "adadiff/metrics.hpp"
#include "adadiff/operator.hpp"
#include "adadiff/phantom.hpp"
#include "adadiff/recon.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace adadiff {

/// Environment variable holding the root that relative output paths resolve against.
inline constexpr const char* kOutputRootEnv = "ADADIFF_OUTPUT_ROOT";

struct DataConfig {
  int64_t subjects = 10;
  std::vector<std::string> contrasts{"T1", "T2", "PD"};
  int64_t imageSize = 64;
  int64_t slicesPerSubject = 4;
  uint64_t seed = 1;
  std::string dir = "data";
};

struct ScheduleConfig {
  int totalSteps = 1000;
  int stride = 125;
  double betaMin = DiffusionSchedule::kDefaultBetaMin;
  double betaMax = DiffusionSchedule::kDefaultBetaMax;
};

struct TrainConfig {
  uint64_t seed = 7;
  int64_t maxSlices = 200;        ///< training images taken from the train split (-1: all)
  int64_t validationSlices = 20;  ///< images from the val split for the r=1 l1 trace
};

struct OperatorConfig {
  double accel = 4.0;
  std::string maskKind = "vd2d";
  double calibFraction = 1.0 / 64.0;
  int64_t coils = 1;
  double noiseSigma = 0.0;
  uint64_t seed = 11;
};

struct EvalConfig {
  std::string split = "test";
  int64_t maxSlices = 20; ///< -1: all slices of the split
  bool slicePooled = false;
  int workers = 1;
};

/// Full experiment description. Every seed is explicit; unknown keys are rejected.
struct ExperimentConfig {
  DataConfig data;
  ScheduleConfig schedule;
  MapperConfig mapper;
  TrainConfig train;
  OperatorConfig op;
  ReconConfig recon;
  EvalConfig eval;
  std::string outputDir = "runs/default";

  static ExperimentConfig fromJson(const json& j);
  json toJson() const;
  DiffusionSchedule makeSchedule() const;
};

/// Parses `dotted.key=value` and writes it into `doc`. The value is read as
/// JSON when possible, otherwise as a string.
void apply_override(json& doc, const std::string& assignment);

/// Reads a config file (or the defaults when `path` is empty) and applies overrides.
json load_config_document(const std::filesystem::path& path, const std::vector<std::string>& overrides);

/// Relative paths resolve against $ADADIFF_OUTPUT_ROOT when it is set.
std::filesystem::path resolve_output(const std::string& path);

/// Writes `cfg` as config.json into `dir` (created if needed).
void echo_config(const ExperimentConfig& cfg, const std::filesystem::path& dir);

/// Training variants exposed on the command line.
enum class PriorVariant { Adversarial, L1, NoZ };
std::string to_string(PriorVariant v);
PriorVariant prior_variant_from_string(const std::string& name);

DatasetManifest run_gen_data(const ExperimentConfig& cfg);

/// Trains (or resumes) a prior and writes it to `checkpoint`, refreshing the
/// file after every epoch.
Prior run_train(const ExperimentConfig& cfg, PriorVariant variant, const std::filesystem::path& checkpoint,
                const std::optional<std::filesystem::path>& resumeFrom = std::nullopt);

/// Operator for one slice: mask and coils seeded from the operator seed and the slice seed.
ImagingOperator make_slice_operator(const OperatorConfig& op, int64_t size, uint64_t sliceSeed);

struct SliceOutcome {
  SliceRef ref;
  ReconResult result;
  torch::Tensor reference;  ///< (2, H, W)
  torch::Tensor zeroFilled; ///< (2, H, W)
  double psnrInit = 0, psnrFin = 0, psnrZeroFilled = 0;
  double ssimInit = 0, ssimFin = 0, ssimZeroFilled = 0;
};

/// Reconstructs the configured evaluation slices with `prior` and the given
/// variant. When `archiveDir` is set, writes one archive per slice:
/// xinit.cfl, xfin.cfl, reference.cfl, mask.png, init.png, fin.png,
/// reference.png and result.json.
std::vector<SliceOutcome> run_reconstruct(const ExperimentConfig& cfg, const Prior& prior, ReconVariant variant,
                                          const std::optional<std::filesystem::path>& archiveDir);

/// Ablation sweep: full, no_adapt and no_train with the adversarial prior,
/// plus full reconstructions with l1-trained and no-z-trained priors. Priors
/// are read from `priorDir` when present there and trained otherwise.
MetricReport run_ablate(const ExperimentConfig& cfg, const std::filesystem::path& priorDir,
                        const std::optional<std::filesystem::path>& archiveRoot);

/// Scores every archive under `reconDir` (searched recursively for
/// result.json) against the dataset references.
MetricReport run_eval(const std::filesystem::path& reconDir, const std::filesystem::path& dataDir,
                      bool slicePooled);

void write_report(const MetricReport& report, const std::filesystem::path& dir);

} // namespace adadiff
