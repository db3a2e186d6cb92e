#pragma once

#include "adadiff/json_util.hpp"
#include "adadiff/mapper.hpp"
#include "adadiff/operator.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace adadiff {

enum class ReconVariant { Full, NoAdapt, NoTrain };

std::string to_string(ReconVariant v);
ReconVariant recon_variant_from_string(const std::string& name);

/// Latent policy in the rapid phase: a fresh draw per reverse step, or one draw reused.
enum class RapidLatent { Fresh, Fixed };
/// Latent policy during adaptation: one draw held fixed, or a new draw every iteration.
enum class AdaptLatent { Fixed, Resample };

struct ReconConfig {
  int64_t iterations = 200; ///< J
  double learningRate = 1e-3;
  double adamBeta1 = 0.5;
  double adamBeta2 = 0.9;
  ReconVariant variant = ReconVariant::Full;
  uint64_t seed = 0;
  RapidLatent rapidLatent = RapidLatent::Fresh;
  AdaptLatent adaptLatent = AdaptLatent::Fixed;
  bool keepAdaptedParams = false;

  /// Throws ConfigError on negative J or a non-positive learning rate.
  void validate() const;
};

json to_json(const ReconConfig& c);
ReconConfig recon_config_from_json(const json& node, const std::string& path = "recon");

/// Work performed, for checking phase accounting.
struct ReconCounters {
  int64_t dcProjections = 0;
  int64_t reverseSteps = 0;
  int64_t adaptSteps = 0;
};

struct ReconResult {
  torch::Tensor xInit; ///< (2, H, W)
  torch::Tensor xFin;  ///< (2, H, W)
  std::vector<double> dcLossTrace; ///< loss before each of the J updates
  std::optional<NamedTensors> adaptedParams;
  double wallTimeSeconds = 0.0;
  ReconCounters counters;
  ReconVariant variant = ReconVariant::Full;
  uint64_t rapidSeed = 0;
  uint64_t adaptSeed = 0;
  RapidLatent rapidLatent = RapidLatent::Fresh;
  AdaptLatent adaptLatent = AdaptLatent::Fixed;
};

/// Rapid diffusion: start from unit Gaussian noise at step T/k; for r = T/k..1
/// project onto the data, estimate x0 with the generator at step r and draw x
/// at r-1 from the posterior. No projection follows the last step.
torch::Tensor rapid_diffusion(const Prior& prior, const torch::Tensor& y, const ImagingOperator& op, uint64_t seed,
                              RapidLatent latent = RapidLatent::Fresh, ReconCounters* counters = nullptr);

/// Same loop over an arbitrary x0 estimator (e.g. an oracle in tests).
torch::Tensor rapid_diffusion(const DenoiserFn& denoiser, const DiffusionSchedule& schedule, int64_t zDim,
                              const torch::Tensor& y, const ImagingOperator& op, uint64_t seed,
                              RapidLatent latent = RapidLatent::Fresh, ReconCounters* counters = nullptr);

/// Fine-tunes a copy of the generator on the l1 data-consistency loss of
/// G(xInit, 0, z). The source prior is left untouched.
ReconResult adapt_prior(const Prior& prior, const torch::Tensor& xInit, const torch::Tensor& y,
                        const ImagingOperator& op, const ReconConfig& config);

/// Two-phase reconstruction for the configured variant.
ReconResult reconstruct(const Prior& prior, const torch::Tensor& y, const ImagingOperator& op,
                        const ReconConfig& config);

} // namespace adadiff
