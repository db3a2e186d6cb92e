#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <vector>

namespace adadiff {

enum class ResampleMode { Nearest, Fir };

std::string to_string(ResampleMode mode);
ResampleMode resample_mode_from_string(const std::string& name);

/// Architecture and optimizer settings for the adversarial mapper.
///
/// Full-scale values: 6 encoder stages at 256x256, 2 flat encoder blocks (3
/// per decoder stage), an 8-layer latent MLP, 500 epochs.
/// The defaults below are the desk-scale reduction.
struct MapperConfig {
  int64_t imageSize = 64;
  int64_t baseChannels = 16;
  std::vector<int64_t> channelMult{1, 2, 2, 2}; ///< one entry per encoder stage
  std::vector<int64_t> attentionStages{2, 3};   ///< encoder stages carrying self-attention
  std::vector<int64_t> decoderAttentionStages{2};
  int64_t encoderFlatBlocks = 1; ///< decoder stages use one more, each fed by a skip connection
  int64_t zDim = 32;
  int64_t zMlpLayers = 4;
  int64_t timeEmbedDim = 64;
  int64_t discChannels = 16;
  ResampleMode resample = ResampleMode::Nearest;
  bool zAblation = false; ///< latent input zeroed: plain (non-adaptive) normalization

  double learningRate = 2e-4;
  double discLearningRate = 2e-4;
  double adamBeta1 = 0.5;
  double adamBeta2 = 0.9;
  int64_t epochs = 25;
  int64_t batchSize = 4;

  int64_t encoderStages() const { return static_cast<int64_t>(channelMult.size()); }
  /// Throws ConfigError on inconsistent settings.
  void validate() const;
};

/// Sinusoidal encoding of a (possibly fractional) time index, (N) -> (N, dim).
torch::Tensor sinusoidal_embedding(const torch::Tensor& t, int64_t dim);

/// Group norm whose per-channel scale and shift are predicted from a latent embedding.
class AdaptiveGroupNormImpl : public torch::nn::Module {
public:
  AdaptiveGroupNormImpl(int64_t channels, int64_t styleDim);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& style);

private:
  int64_t groups_;
  torch::nn::Linear affine_{nullptr};
};
TORCH_MODULE(AdaptiveGroupNorm);

/// Learnable separable 4-tap filter used for resampling.
class FirResampleImpl : public torch::nn::Module {
public:
  FirResampleImpl(int64_t channels, bool up);
  torch::Tensor forward(const torch::Tensor& x);

private:
  int64_t channels_;
  bool up_;
  torch::Tensor taps_;
};
TORCH_MODULE(FirResample);

enum class BlockResample { None, Down, Up };

/// Residual generator block: AdaGN -> SiLU -> (resample) -> conv + time bias
/// -> AdaGN -> SiLU -> conv, with a 1x1 skip when channels change.
class GeneratorBlockImpl : public torch::nn::Module {
public:
  GeneratorBlockImpl(int64_t in, int64_t out, int64_t timeDim, int64_t styleDim, BlockResample resample,
                     ResampleMode mode);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& temb, const torch::Tensor& style);
  BlockResample resample() const { return resample_; }

private:
  torch::Tensor resampleTensor(const torch::Tensor& x, FirResample& fir);

  BlockResample resample_;
  ResampleMode mode_;
  AdaptiveGroupNorm norm1_{nullptr}, norm2_{nullptr};
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, skip_{nullptr};
  torch::nn::Linear timeBias_{nullptr};
  FirResample firMain_{nullptr}, firSkip_{nullptr};
};
TORCH_MODULE(GeneratorBlock);

class AttentionBlockImpl : public torch::nn::Module {
public:
  explicit AttentionBlockImpl(int64_t channels);
  torch::Tensor forward(const torch::Tensor& x);

private:
  int64_t groups_;
  torch::nn::Conv2d qkv_{nullptr}, proj_{nullptr};
};
TORCH_MODULE(AttentionBlock);

/// Time- and latent-conditioned residual encoder-decoder predicting the clean
/// image from a noisy one. Input/output: (N, 2, S, S).
class GeneratorImpl : public torch::nn::Module {
public:
  explicit GeneratorImpl(const MapperConfig& cfg);
  /// t: (N) time indices (r * stride); z: (N, zDim).
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& t, const torch::Tensor& z);

private:
  struct Layer {
    enum Kind { Block, Attention } kind;
    size_t index;
    bool pushesSkip;
    bool consumesSkip;
  };

  MapperConfig cfg_;
  torch::nn::Sequential timeMlp_{nullptr};
  torch::nn::Sequential zMlp_{nullptr};
  torch::nn::Conv2d inConv_{nullptr}, outConv_{nullptr};
  torch::nn::ModuleList blocks_{nullptr};
  torch::nn::ModuleList attention_{nullptr};
  std::vector<Layer> encoder_, decoder_;
  GeneratorBlock middle_{nullptr};
  int64_t outGroups_ = 1;
};
TORCH_MODULE(Generator);

class DiscriminatorBlockImpl : public torch::nn::Module {
public:
  DiscriminatorBlockImpl(int64_t in, int64_t out, int64_t timeDim, ResampleMode mode);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& temb);

private:
  ResampleMode mode_;
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, skip_{nullptr};
  torch::nn::Linear timeBias_{nullptr};
  FirResample firMain_{nullptr}, firSkip_{nullptr};
};
TORCH_MODULE(DiscriminatorBlock);

/// Pair-conditioned residual downsampling encoder with a single linear
/// output layer. Consumes (x_t, x_{t+k}) stacked into 4 channels.
class DiscriminatorImpl : public torch::nn::Module {
public:
  explicit DiscriminatorImpl(const MapperConfig& cfg);
  /// Returns one logit per batch element, (N).
  torch::Tensor forward(const torch::Tensor& xt, const torch::Tensor& xNext, const torch::Tensor& t);

private:
  int64_t timeDim_;
  torch::nn::Sequential timeMlp_{nullptr};
  torch::nn::Conv2d inConv_{nullptr};
  torch::nn::ModuleList blocks_{nullptr};
  torch::nn::Linear out_{nullptr};
};
TORCH_MODULE(Discriminator);

/// Re-draws every parameter from `gen` so initialization depends only on the seed.
void reinitialize(torch::nn::Module& module, torch::Generator& gen);

/// Deep copy of all parameters and buffers, keyed by name.
std::vector<std::pair<std::string, torch::Tensor>> snapshot_parameters(const torch::nn::Module& module);
void load_parameters(torch::nn::Module& module, const std::vector<std::pair<std::string, torch::Tensor>>& params);

} // namespace adadiff
