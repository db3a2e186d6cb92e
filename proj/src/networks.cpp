#include "adadiff/networks.hpp"

#include "adadiff/error.hpp"

#include <algorithm>
#include <cmath>

namespace F = torch::nn::functional;

namespace adadiff {

std::string to_string(ResampleMode mode) {
  return mode == ResampleMode::Fir ? "fir" : "nearest";
}

ResampleMode resample_mode_from_string(const std::string& name) {
  if (name == "nearest") {
    return ResampleMode::Nearest;
  }
  if (name == "fir") {
    return ResampleMode::Fir;
  }
  throw ConfigError("unknown resample mode '" + name + "' (expected nearest or fir)");
}

void MapperConfig::validate() const {
  const auto stages = encoderStages();
  if (stages < 2) {
    throw ConfigError("mapper: need at least 2 encoder stages");
  }
  if (imageSize <= 0 || imageSize % (int64_t{1} << (stages - 1)) != 0) {
    throw ConfigError("mapper: imageSize must be divisible by 2^(encoderStages-1)");
  }
  if (imageSize % (int64_t{1} << stages) != 0) {
    throw ConfigError("mapper: discriminator needs imageSize divisible by 2^encoderStages");
  }
  if (zDim <= 0 || zMlpLayers < 1 || timeEmbedDim <= 0 || timeEmbedDim % 2 != 0) {
    throw ConfigError("mapper: zDim, zMlpLayers must be positive and timeEmbedDim positive and even");
  }
  if (baseChannels <= 0 || discChannels <= 0 || encoderFlatBlocks < 1) {
    throw ConfigError("mapper: channel counts and block counts must be positive");
  }
  for (auto m : channelMult) {
    if (m <= 0) {
      throw ConfigError("mapper: channel multipliers must be positive");
    }
  }
  auto checkStages = [&](const std::vector<int64_t>& list) {
    for (auto s : list) {
      if (s < 0 || s >= stages) {
        throw ConfigError("mapper: attention stage index out of range");
      }
    }
  };
  checkStages(attentionStages);
  checkStages(decoderAttentionStages);
  if (!(learningRate > 0.0) || !(discLearningRate > 0.0)) {
    throw ConfigError("mapper: learning rates must be positive");
  }
  if (!(adamBeta1 >= 0.0 && adamBeta1 < 1.0) || !(adamBeta2 >= 0.0 && adamBeta2 < 1.0)) {
    throw ConfigError("mapper: Adam decay rates must lie in [0, 1)");
  }
  if (epochs < 0 || batchSize < 1) {
    throw ConfigError("mapper: epochs must be >= 0 and batchSize >= 1");
  }
}

namespace {

int64_t groupsFor(int64_t channels) {
  for (int64_t g = 8; g > 1; g /= 2) {
    if (channels % g == 0) {
      return g;
    }
  }
  return 1;
}

bool contains(const std::vector<int64_t>& v, int64_t x) {
  return std::find(v.begin(), v.end(), x) != v.end();
}

torch::nn::Conv2d conv3x3(int64_t in, int64_t out) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).padding(1));
}

torch::nn::Conv2d conv1x1(int64_t in, int64_t out) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1));
}

// Inserts a zero after every pixel along both spatial axes.
torch::Tensor zeroStuff(const torch::Tensor& x) {
  const auto n = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  auto cols = torch::stack({x, torch::zeros_like(x)}, -1).reshape({n, c, h, 2 * w});
  return torch::stack({cols, torch::zeros_like(cols)}, -2).reshape({n, c, 2 * h, 2 * w});
}

} // namespace

torch::Tensor sinusoidal_embedding(const torch::Tensor& t, int64_t dim) {
  const int64_t half = dim / 2;
  auto opts = torch::TensorOptions().dtype(torch::kFloat32);
  auto freqs = torch::exp(-std::log(10000.0) * torch::arange(half, opts) / static_cast<double>(half));
  auto args = t.to(torch::kFloat32).unsqueeze(1) * freqs.unsqueeze(0);
  return torch::cat({torch::sin(args), torch::cos(args)}, 1);
}

AdaptiveGroupNormImpl::AdaptiveGroupNormImpl(int64_t channels, int64_t styleDim)
    : groups_(groupsFor(channels)) {
  affine_ = register_module("affine", torch::nn::Linear(styleDim, 2 * channels));
}

torch::Tensor AdaptiveGroupNormImpl::forward(const torch::Tensor& x, const torch::Tensor& style) {
  auto params = affine_->forward(style).unsqueeze(-1).unsqueeze(-1);
  auto parts = params.chunk(2, 1);
  return torch::group_norm(x, groups_) * (1.0 + parts[0]) + parts[1];
}

FirResampleImpl::FirResampleImpl(int64_t channels, bool up) : channels_(channels), up_(up) {
  taps_ = register_parameter("taps", torch::tensor({1.0f, 3.0f, 3.0f, 1.0f}) / 8.0f);
}

torch::Tensor FirResampleImpl::forward(const torch::Tensor& x) {
  auto kernel = torch::outer(taps_, taps_);
  if (up_) {
    kernel = kernel * 4.0; // compensates the inserted zeros
  }
  auto weight = kernel.to(x.scalar_type()).expand({channels_, 1, 4, 4});
  if (up_) {
    auto padded = F::pad(zeroStuff(x), F::PadFuncOptions({2, 1, 2, 1}));
    return F::conv2d(padded, weight, F::Conv2dFuncOptions().groups(channels_));
  }
  auto padded = F::pad(x, F::PadFuncOptions({1, 1, 1, 1}));
  return F::conv2d(padded, weight, F::Conv2dFuncOptions().stride(2).groups(channels_));
}

GeneratorBlockImpl::GeneratorBlockImpl(int64_t in, int64_t out, int64_t timeDim, int64_t styleDim,
                                       BlockResample resample, ResampleMode mode)
    : resample_(resample), mode_(mode) {
  norm1_ = register_module("norm1", AdaptiveGroupNorm(in, styleDim));
  conv1_ = register_module("conv1", conv3x3(in, out));
  timeBias_ = register_module("time_bias", torch::nn::Linear(timeDim, out));
  norm2_ = register_module("norm2", AdaptiveGroupNorm(out, styleDim));
  conv2_ = register_module("conv2", conv3x3(out, out));
  if (in != out) {
    skip_ = register_module("skip", conv1x1(in, out));
  }
  if (resample != BlockResample::None && mode == ResampleMode::Fir) {
    const bool up = resample == BlockResample::Up;
    firMain_ = register_module("fir_main", FirResample(in, up));
    firSkip_ = register_module("fir_skip", FirResample(in, up));
  }
}

torch::Tensor GeneratorBlockImpl::resampleTensor(const torch::Tensor& x, FirResample& fir) {
  switch (resample_) {
  case BlockResample::None:
    return x;
  case BlockResample::Down:
    return mode_ == ResampleMode::Fir ? fir->forward(x) : F::avg_pool2d(x, F::AvgPool2dFuncOptions(2));
  case BlockResample::Up:
    return mode_ == ResampleMode::Fir
               ? fir->forward(x)
               : F::interpolate(x, F::InterpolateFuncOptions()
                                       .scale_factor(std::vector<double>{2.0, 2.0})
                                       .mode(torch::kNearest));
  }
  return x;
}

torch::Tensor GeneratorBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& temb,
                                          const torch::Tensor& style) {
  auto h = torch::silu(norm1_->forward(x, style));
  h = resampleTensor(h, firMain_);
  auto shortcut = resampleTensor(x, firSkip_);
  h = conv1_->forward(h) + timeBias_->forward(temb).unsqueeze(-1).unsqueeze(-1);
  h = conv2_->forward(torch::silu(norm2_->forward(h, style)));
  if (skip_) {
    shortcut = skip_->forward(shortcut);
  }
  return (shortcut + h) * M_SQRT1_2;
}

AttentionBlockImpl::AttentionBlockImpl(int64_t channels) : groups_(groupsFor(channels)) {
  qkv_ = register_module("qkv", conv1x1(channels, 3 * channels));
  proj_ = register_module("proj", conv1x1(channels, channels));
}

torch::Tensor AttentionBlockImpl::forward(const torch::Tensor& x) {
  const auto n = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
  auto qkv = qkv_->forward(torch::group_norm(x, groups_)).reshape({n, 3, c, h * w});
  auto q = qkv.select(1, 0), k = qkv.select(1, 1), v = qkv.select(1, 2);
  auto weights = torch::softmax(torch::bmm(q.transpose(1, 2), k) / std::sqrt(static_cast<double>(c)), -1);
  auto out = torch::bmm(v, weights.transpose(1, 2)).reshape({n, c, h, w});
  return (x + proj_->forward(out)) * M_SQRT1_2;
}

GeneratorImpl::GeneratorImpl(const MapperConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const int64_t td = cfg_.timeEmbedDim;
  const int64_t zd = cfg_.zDim;
  timeMlp_ = register_module(
      "time_mlp", torch::nn::Sequential(torch::nn::Linear(td, td), torch::nn::SiLU(), torch::nn::Linear(td, td)));
  zMlp_ = register_module("z_mlp", torch::nn::Sequential());
  for (int64_t i = 0; i < cfg_.zMlpLayers; ++i) {
    zMlp_->push_back(torch::nn::Linear(zd, zd));
    zMlp_->push_back(torch::nn::SiLU());
  }
  blocks_ = register_module("blocks", torch::nn::ModuleList());
  attention_ = register_module("attention", torch::nn::ModuleList());

  const int64_t stages = cfg_.encoderStages();
  int64_t ch = cfg_.baseChannels;
  inConv_ = register_module("in_conv", conv3x3(2, ch));
  std::vector<int64_t> skipChannels{ch};

  auto addBlock = [&](int64_t in, int64_t out, BlockResample rs) {
    blocks_->push_back(GeneratorBlock(in, out, td, zd, rs, cfg_.resample));
    return blocks_->size() - 1;
  };
  auto addAttention = [&](int64_t c) {
    attention_->push_back(AttentionBlock(c));
    return attention_->size() - 1;
  };

  for (int64_t s = 0; s < stages; ++s) {
    const int64_t out = cfg_.baseChannels * cfg_.channelMult[static_cast<size_t>(s)];
    for (int64_t b = 0; b < cfg_.encoderFlatBlocks; ++b) {
      encoder_.push_back({Layer::Block, addBlock(ch, out, BlockResample::None), true, false});
      ch = out;
      if (contains(cfg_.attentionStages, s)) {
        encoder_.push_back({Layer::Attention, addAttention(ch), false, false});
      }
      skipChannels.push_back(ch);
    }
    if (s < stages - 1) {
      encoder_.push_back({Layer::Block, addBlock(ch, ch, BlockResample::Down), true, false});
      skipChannels.push_back(ch);
    }
  }

  middle_ = register_module("middle", GeneratorBlock(ch, ch, td, zd, BlockResample::None, cfg_.resample));

  for (int64_t s = stages - 1; s >= 0; --s) {
    const int64_t out = cfg_.baseChannels * cfg_.channelMult[static_cast<size_t>(s)];
    for (int64_t b = 0; b < cfg_.encoderFlatBlocks + 1; ++b) {
      const int64_t skip = skipChannels.back();
      skipChannels.pop_back();
      decoder_.push_back({Layer::Block, addBlock(ch + skip, out, BlockResample::None), false, true});
      ch = out;
      if (contains(cfg_.decoderAttentionStages, s)) {
        decoder_.push_back({Layer::Attention, addAttention(ch), false, false});
      }
    }
    if (s > 0) {
      decoder_.push_back({Layer::Block, addBlock(ch, ch, BlockResample::Up), false, false});
    }
  }
  outGroups_ = groupsFor(ch);
  outConv_ = register_module("out_conv", conv3x3(ch, 2));
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& x, const torch::Tensor& t, const torch::Tensor& z) {
  auto temb = timeMlp_->forward(sinusoidal_embedding(t, cfg_.timeEmbedDim).to(x.scalar_type()));
  auto latent = cfg_.zAblation ? torch::zeros_like(z) : z;
  auto style = zMlp_->forward(latent.to(x.scalar_type()));

  auto h = inConv_->forward(x);
  std::vector<torch::Tensor> skips{h};
  for (const auto& layer : encoder_) {
    if (layer.kind == Layer::Attention) {
      // Attention output replaces the skip of the block it follows.
      h = attention_[layer.index]->as<AttentionBlock>()->forward(h);
      skips.back() = h;
      continue;
    }
    h = blocks_[layer.index]->as<GeneratorBlock>()->forward(h, temb, style);
    if (layer.pushesSkip) {
      skips.push_back(h);
    }
  }
  h = middle_->forward(h, temb, style);
  for (const auto& layer : decoder_) {
    if (layer.kind == Layer::Attention) {
      h = attention_[layer.index]->as<AttentionBlock>()->forward(h);
      continue;
    }
    if (layer.consumesSkip) {
      h = torch::cat({h, skips.back()}, 1);
      skips.pop_back();
    }
    h = blocks_[layer.index]->as<GeneratorBlock>()->forward(h, temb, style);
  }
  return outConv_->forward(torch::silu(torch::group_norm(h, outGroups_)));
}

DiscriminatorBlockImpl::DiscriminatorBlockImpl(int64_t in, int64_t out, int64_t timeDim, ResampleMode mode)
    : mode_(mode) {
  conv1_ = register_module("conv1", conv3x3(in, out));
  timeBias_ = register_module("time_bias", torch::nn::Linear(timeDim, out));
  conv2_ = register_module("conv2", conv3x3(out, out));
  skip_ = register_module("skip", conv1x1(in, out));
  if (mode == ResampleMode::Fir) {
    firMain_ = register_module("fir_main", FirResample(out, false));
    firSkip_ = register_module("fir_skip", FirResample(out, false));
  }
}

torch::Tensor DiscriminatorBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& temb) {
  auto down = [&](const torch::Tensor& v, FirResample& fir) {
    return mode_ == ResampleMode::Fir ? fir->forward(v) : F::avg_pool2d(v, F::AvgPool2dFuncOptions(2));
  };
  auto h = conv1_->forward(F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(0.2)));
  h = h + timeBias_->forward(temb).unsqueeze(-1).unsqueeze(-1);
  h = F::leaky_relu(h, F::LeakyReLUFuncOptions().negative_slope(0.2));
  h = conv2_->forward(down(h, firMain_));
  return (down(skip_->forward(x), firSkip_) + h) * M_SQRT1_2;
}

DiscriminatorImpl::DiscriminatorImpl(const MapperConfig& cfg) : timeDim_(cfg.timeEmbedDim) {
  cfg.validate();
  const int64_t td = cfg.timeEmbedDim;
  auto leaky = torch::nn::LeakyReLUOptions().negative_slope(0.2);
  timeMlp_ = register_module("time_mlp",
                             torch::nn::Sequential(torch::nn::Linear(td, td), torch::nn::LeakyReLU(leaky),
                                                   torch::nn::Linear(td, td), torch::nn::LeakyReLU(leaky)));
  int64_t ch = cfg.discChannels;
  inConv_ = register_module("in_conv", conv1x1(4, ch));
  blocks_ = register_module("blocks", torch::nn::ModuleList());
  for (int64_t s = 0; s < cfg.encoderStages(); ++s) {
    const int64_t out = cfg.discChannels * cfg.channelMult[static_cast<size_t>(s)];
    blocks_->push_back(DiscriminatorBlock(ch, out, td, cfg.resample));
    ch = out;
  }
  out_ = register_module("out", torch::nn::Linear(ch, 1));
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& xt, const torch::Tensor& xNext, const torch::Tensor& t) {
  auto temb = timeMlp_->forward(sinusoidal_embedding(t, timeDim_).to(xt.scalar_type()));
  auto h = inConv_->forward(torch::cat({xt, xNext}, 1));
  for (const auto& block : *blocks_) {
    h = block->as<DiscriminatorBlock>()->forward(h, temb);
  }
  h = F::leaky_relu(h, F::LeakyReLUFuncOptions().negative_slope(0.2)).sum({2, 3});
  return out_->forward(h).squeeze(1);
}

void reinitialize(torch::nn::Module& module, torch::Generator& gen) {
  torch::NoGradGuard guard;
  for (auto& item : module.named_parameters(/*recurse=*/true)) {
    const auto& name = item.key();
    auto& p = item.value();
    const bool isBias = name.size() >= 4 && name.compare(name.size() - 4, 4, "bias") == 0;
    if (name.find("taps") != std::string::npos) {
      p.copy_(torch::tensor({1.0, 3.0, 3.0, 1.0}, p.options()) / 8.0);
    } else if (name.find("affine") != std::string::npos) {
      // Adaptive normalization starts as plain group norm.
      p.zero_();
    } else if (isBias) {
      p.zero_();
    } else {
      const double fanIn = static_cast<double>(p.numel() / p.size(0));
      const double bound = 1.0 / std::sqrt(fanIn);
      p.copy_(torch::rand(p.sizes(), gen, p.options()) * (2.0 * bound) - bound);
    }
  }
}

std::vector<std::pair<std::string, torch::Tensor>> snapshot_parameters(const torch::nn::Module& module) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& item : module.named_parameters(/*recurse=*/true)) {
    out.emplace_back(item.key(), item.value().detach().clone());
  }
  return out;
}

void load_parameters(torch::nn::Module& module, const std::vector<std::pair<std::string, torch::Tensor>>& params) {
  torch::NoGradGuard guard;
  auto named = module.named_parameters(/*recurse=*/true);
  if (named.size() != params.size()) {
    throw ContractError("load_parameters: expected " + std::to_string(named.size()) + " tensors, got " +
                        std::to_string(params.size()));
  }
  for (const auto& [name, value] : params) {
    auto* target = named.find(name);
    if (target == nullptr) {
      throw ContractError("load_parameters: unknown parameter '" + name + "'");
    }
    if (!target->sizes().equals(value.sizes())) {
      throw ContractError("load_parameters: shape mismatch for '" + name + "'");
    }
    target->copy_(value);
  }
}

} // namespace adadiff
