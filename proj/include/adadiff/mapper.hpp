#pragma once

#include "adadiff/adam.hpp"
#include "adadiff/json_util.hpp"
#include "adadiff/networks.hpp"
#include "adadiff/schedule.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace adadiff {

inline constexpr const char* kPriorFormat = "adadiff-prior-v1";

enum class TrainMode { Adversarial, L1 };

std::string to_string(TrainMode mode);
TrainMode train_mode_from_string(const std::string& name);

using NamedTensors = std::vector<std::pair<std::string, torch::Tensor>>;

json to_json(const MapperConfig& config);
/// Keys absent from `node` keep their defaults; unknown keys throw ConfigError.
MapperConfig mapper_config_from_json(const json& node, const std::string& path = "mapper");

/// Per-epoch means recorded during training.
struct TrainingTrace {
  std::vector<double> generatorLoss;     ///< adversarial generator loss, or the l1 loss in l1 mode
  std::vector<double> discriminatorLoss; ///< total L_D (empty in l1 mode)
  std::vector<double> realTerm;
  std::vector<double> fakeTerm;
  std::vector<double> penaltyTerm;
  std::vector<double> validationL1; ///< l1 error of the r=1 estimate on validation images
};

struct TrainingMeta {
  uint64_t seed = 0;
  TrainMode mode = TrainMode::Adversarial;
  int64_t epochsCompleted = 0;
  TrainingTrace trace;
  /// Optimizer moments for resuming; empty before the first epoch.
  NamedTensors generatorOptimizer;
  NamedTensors discriminatorOptimizer;
  int64_t generatorSteps = 0;
  int64_t discriminatorSteps = 0;
};

/// Generator/discriminator pair with the schedule it is trained against.
/// Copies share network storage; use clone() for an independent copy.
struct Prior {
  MapperConfig config;
  DiffusionSchedule schedule;
  Generator generator{nullptr};
  Discriminator discriminator{nullptr};
  TrainingMeta meta;

  Prior clone() const;
};

/// Seeded initialization of both networks.
Prior initialize_prior(const MapperConfig& config, const DiffusionSchedule& schedule, uint64_t seed,
                       TrainMode mode = TrainMode::Adversarial);

/// Fresh generator with the prior's architecture and parameters.
Generator clone_generator(const Prior& prior);

/// x0 estimate from x_{t+k}. Accepts (2, S, S) with z (zDim) or batched
/// (N, 2, S, S) with z (N, zDim). r in 0..T/k.
torch::Tensor generate_x0(const Prior& prior, const torch::Tensor& xNext, int r, const torch::Tensor& z);

/// Discriminator logit for the pair (x_t, x_{t+k}) at step r (index of x_{t+k}).
torch::Tensor discriminate(const Prior& prior, const torch::Tensor& xt, const torch::Tensor& xNext, int r);

/// Network-agnostic hooks so the losses can be checked against stub networks.
/// `t` carries the time index r * stride for each batch element.
using DenoiserFn = std::function<torch::Tensor(const torch::Tensor& xNext, const torch::Tensor& t,
                                               const torch::Tensor& z)>;
using CriticFn = std::function<torch::Tensor(const torch::Tensor& xt, const torch::Tensor& xNext,
                                             const torch::Tensor& t)>;

DenoiserFn denoiser_of(const Prior& prior);
CriticFn critic_of(const Prior& prior);

/// One minibatch of training draws. rIndices hold the lower step r of each
/// (x_t, x_{t+k}) pair, r in 0..T/k-1.
struct TrainBatch {
  torch::Tensor x0;             ///< (N, 2, S, S)
  std::vector<int> rIndices;
  torch::Tensor noiseA;         ///< x_t = sqrt(abar[r]) x0 + sqrt(1-abar[r]) noiseA
  torch::Tensor noiseB;         ///< x_{t+k} = sqrt(alpha[r+1]) x_t + sqrt(gamma[r+1]) noiseB
  torch::Tensor z;              ///< (N, zDim)
  torch::Tensor posteriorNoise; ///< draw for the fake x_t sample

  /// Throws ContractError when batch dimensions disagree or r is out of range.
  void validate(const DiffusionSchedule& schedule) const;
};

TrainBatch draw_batch(const torch::Tensor& x0, const DiffusionSchedule& schedule, int64_t zDim,
                      torch::Generator& gen);

/// Same pairs, fresh latent and posterior draws.
TrainBatch redraw_latents(const TrainBatch& batch, torch::Generator& gen);

struct TrainPair {
  torch::Tensor xt;
  torch::Tensor xNext;
  torch::Tensor t; ///< time index of x_{t+k}
};

/// Real pair (x_t, x_{t+k}) for a batch.
TrainPair real_pair(const DiffusionSchedule& schedule, const TrainBatch& batch);

/// Generator-driven x_t sample through the closed-form posterior.
torch::Tensor fake_sample(const DenoiserFn& generator, const DiffusionSchedule& schedule, const TrainBatch& batch,
                          const TrainPair& pair);

struct DiscriminatorLoss {
  torch::Tensor total;
  torch::Tensor real;    ///< mean -log D(x_t, x_{t+k})
  torch::Tensor fake;    ///< mean -log(1 - D(x_hat_t, x_{t+k}))
  torch::Tensor penalty; ///< mean 0.5 * |grad_{x_t} logit|^2 on real pairs
};

/// L_D with R1 penalty; differentiable in the critic's parameters. The fake
/// path runs the generator without gradient tracking.
DiscriminatorLoss discriminator_loss(const DenoiserFn& generator, const CriticFn& critic,
                                     const DiffusionSchedule& schedule, const TrainBatch& batch);

/// Non-saturating L_G = mean -log D(x_hat_t, x_{t+k}); differentiable in the generator.
torch::Tensor generator_loss(const DenoiserFn& generator, const CriticFn& critic, const DiffusionSchedule& schedule,
                             const TrainBatch& batch);

/// Pixel-wise l1 between the generator's x0 estimate and the true x0.
torch::Tensor l1_loss(const DenoiserFn& generator, const DiffusionSchedule& schedule, const TrainBatch& batch);

DiscriminatorLoss loss_discriminator(const Prior& prior, const TrainBatch& batch);
torch::Tensor loss_generator(const Prior& prior, const TrainBatch& batch);

struct TrainOptions {
  TrainMode mode = TrainMode::Adversarial;
  uint64_t seed = 0;
  /// Optional held-out images (N, 2, S, S) for the per-epoch r=1 l1 trace.
  torch::Tensor validation;
  /// Called after each epoch; meta.epochsCompleted is already advanced and
  /// the optimizer state stored, so the prior can be checkpointed as is.
  std::function<void(const Prior&)> onEpoch;
};

/// Trains from a fresh seeded initialization for config.epochs epochs.
Prior train(const torch::Tensor& dataset, const MapperConfig& config, const DiffusionSchedule& schedule,
            const TrainOptions& options);

/// Continues training `prior` until it has completed `targetEpochs` epochs.
/// The prior's stored seed and optimizer state are used, so an interrupted run
/// resumed from a checkpoint follows the same batch stream.
void continue_training(Prior& prior, const torch::Tensor& dataset, int64_t targetEpochs, const TrainOptions& options);

/// Mean |G(x_{t+k}, r) - x0| over `images` with a fixed noise/latent draw from `seed`.
double denoising_l1(const Prior& prior, const torch::Tensor& images, int r, uint64_t seed);

void save_prior(const Prior& prior, const std::filesystem::path& path);
Prior load_prior(const std::filesystem::path& path);

} // namespace adadiff
