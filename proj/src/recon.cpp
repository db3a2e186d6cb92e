#include "adadiff/recon.hpp"

#include "adadiff/error.hpp"
#include "adadiff/random.hpp"

#include <chrono>
#include <cmath>

namespace adadiff {

std::string to_string(ReconVariant v) {
  switch (v) {
  case ReconVariant::Full:
    return "full";
  case ReconVariant::NoAdapt:
    return "no_adapt";
  case ReconVariant::NoTrain:
    return "no_train";
  }
  return "?";
}

ReconVariant recon_variant_from_string(const std::string& name) {
  if (name == "full") {
    return ReconVariant::Full;
  }
  if (name == "no_adapt") {
    return ReconVariant::NoAdapt;
  }
  if (name == "no_train") {
    return ReconVariant::NoTrain;
  }
  throw ConfigError("unknown reconstruction variant '" + name + "' (expected full, no_adapt or no_train)");
}

void ReconConfig::validate() const {
  if (iterations < 0) {
    throw ConfigError("recon: iterations must be >= 0");
  }
  if (!(learningRate > 0.0)) {
    throw ConfigError("recon: learningRate must be positive");
  }
  if (!(adamBeta1 >= 0.0 && adamBeta1 < 1.0) || !(adamBeta2 >= 0.0 && adamBeta2 < 1.0)) {
    throw ConfigError("recon: Adam decay rates must lie in [0, 1)");
  }
}

json to_json(const ReconConfig& c) {
  json j;
  j["iterations"] = c.iterations;
  j["learningRate"] = c.learningRate;
  j["adamBeta1"] = c.adamBeta1;
  j["adamBeta2"] = c.adamBeta2;
  j["variant"] = to_string(c.variant);
  j["seed"] = c.seed;
  j["rapidLatent"] = c.rapidLatent == RapidLatent::Fresh ? "fresh" : "fixed";
  j["adaptLatent"] = c.adaptLatent == AdaptLatent::Fixed ? "fixed" : "resample";
  j["keepAdaptedParams"] = c.keepAdaptedParams;
  return j;
}

ReconConfig recon_config_from_json(const json& node, const std::string& path) {
  ReconConfig c;
  ObjectReader r(node, path);
  r.read("iterations", c.iterations);
  r.read("learningRate", c.learningRate);
  r.read("adamBeta1", c.adamBeta1);
  r.read("adamBeta2", c.adamBeta2);
  std::string variant = to_string(c.variant);
  r.read("variant", variant);
  c.variant = recon_variant_from_string(variant);
  r.read("seed", c.seed);
  std::string rapid = "fresh";
  r.read("rapidLatent", rapid);
  if (rapid != "fresh" && rapid != "fixed") {
    throw ConfigError(path + ".rapidLatent: expected fresh or fixed");
  }
  c.rapidLatent = rapid == "fresh" ? RapidLatent::Fresh : RapidLatent::Fixed;
  std::string adapt = "fixed";
  r.read("adaptLatent", adapt);
  if (adapt != "fixed" && adapt != "resample") {
    throw ConfigError(path + ".adaptLatent: expected fixed or resample");
  }
  c.adaptLatent = adapt == "fixed" ? AdaptLatent::Fixed : AdaptLatent::Resample;
  r.read("keepAdaptedParams", c.keepAdaptedParams);
  r.finish();
  c.validate();
  return c;
}

namespace {

uint64_t rapid_seed(uint64_t seed) {
  return derive_seed(seed, 0x4a9);
}

uint64_t adapt_seed(uint64_t seed) {
  return derive_seed(seed, 0xada);
}

uint64_t untrained_seed(uint64_t seed) {
  return derive_seed(seed, 0x0e7);
}

void check_measurement(const torch::Tensor& y, const ImagingOperator& op) {
  if (y.dim() != 3 || y.size(0) != op.coilCount() || y.size(1) != op.rows() || y.size(2) != op.cols() ||
      !y.is_complex()) {
    throw ContractError("reconstruction: measurements must be complex (C, H, W) matching the operator");
  }
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

} // namespace

torch::Tensor rapid_diffusion(const DenoiserFn& denoiser, const DiffusionSchedule& schedule, int64_t zDim,
                              const torch::Tensor& y, const ImagingOperator& op, uint64_t seed, RapidLatent latent,
                              ReconCounters* counters) {
  check_measurement(y, op);
  torch::NoGradGuard guard;
  auto gen = make_generator(seed);
  const auto opts = torch::TensorOptions().dtype(torch::kFloat32);
  const auto yy = y.to(torch::kComplexFloat);

  auto x = torch::randn({1, 2, op.rows(), op.cols()}, gen, opts);
  auto z = torch::randn({1, zDim}, gen, opts);
  for (int r = schedule.steps(); r >= 1; --r) {
    auto projected = dc_projection(x, yy, op);
    if (counters) {
      ++counters->dcProjections;
    }
    if (latent == RapidLatent::Fresh && r != schedule.steps()) {
      z = torch::randn({1, zDim}, gen, opts);
    }
    auto t = torch::full({1}, static_cast<float>(schedule.timeIndex(r)));
    auto x0Tilde = denoiser(projected, t, z);
    const auto post = posterior_params(schedule, x0Tilde, projected, r - 1);
    x = sample_posterior(post.mean, post.variance, torch::randn(x.sizes(), gen, opts));
    if (counters) {
      ++counters->reverseSteps;
    }
  }
  return x.squeeze(0);
}

torch::Tensor rapid_diffusion(const Prior& prior, const torch::Tensor& y, const ImagingOperator& op, uint64_t seed,
                              RapidLatent latent, ReconCounters* counters) {
  if (op.rows() != prior.config.imageSize || op.cols() != prior.config.imageSize) {
    throw ConfigError("rapid_diffusion: operator shape does not match the prior's image size");
  }
  return rapid_diffusion(denoiser_of(prior), prior.schedule, prior.config.zDim, y, op, seed, latent, counters);
}

ReconResult adapt_prior(const Prior& prior, const torch::Tensor& xInit, const torch::Tensor& y,
                        const ImagingOperator& op, const ReconConfig& config) {
  config.validate();
  check_measurement(y, op);
  if (xInit.dim() != 3 || xInit.size(0) != 2 || xInit.size(1) != op.rows() || xInit.size(2) != op.cols()) {
    throw ContractError("adapt_prior: xInit must be (2, H, W) matching the operator");
  }
  ReconResult result;
  result.variant = config.variant;
  result.adaptSeed = adapt_seed(config.seed);
  result.adaptLatent = config.adaptLatent;
  result.xInit = xInit.to(torch::kFloat32).clone();

  auto generator = clone_generator(prior);
  generator->eval();
  std::vector<std::pair<std::string, torch::Tensor>> params;
  for (auto& item : generator->named_parameters(/*recurse=*/true)) {
    params.emplace_back(item.key(), item.value());
  }
  Adam opt(params, {config.learningRate, config.adamBeta1, config.adamBeta2, 1e-8});

  auto gen = make_generator(result.adaptSeed);
  const auto opts = torch::TensorOptions().dtype(torch::kFloat32);
  auto z = torch::randn({1, prior.config.zDim}, gen, opts);
  const auto input = result.xInit.unsqueeze(0);
  const auto t0 = torch::zeros({1});
  const auto yy = y.to(torch::kComplexFloat);

  result.dcLossTrace.reserve(static_cast<size_t>(config.iterations));
  for (int64_t j = 0; j < config.iterations; ++j) {
    if (config.adaptLatent == AdaptLatent::Resample && j > 0) {
      z = torch::randn({1, prior.config.zDim}, gen, opts);
    }
    opt.zeroGrad();
    auto loss = dc_loss(generator->forward(input, t0, z), yy, op);
    const double value = loss.item<double>();
    if (!std::isfinite(value)) {
      throw DivergenceError("adaptation", static_cast<long>(j));
    }
    result.dcLossTrace.push_back(value);
    loss.backward();
    opt.step();
    ++result.counters.adaptSteps;
  }
  {
    torch::NoGradGuard guard;
    result.xFin = generator->forward(input, t0, z).squeeze(0);
  }
  if (config.keepAdaptedParams) {
    result.adaptedParams = snapshot_parameters(*generator);
  }
  return result;
}

ReconResult reconstruct(const Prior& prior, const torch::Tensor& y, const ImagingOperator& op,
                        const ReconConfig& config) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  ReconResult result;

  switch (config.variant) {
  case ReconVariant::Full: {
    ReconCounters counters;
    auto xInit = rapid_diffusion(prior, y, op, rapid_seed(config.seed), config.rapidLatent, &counters);
    result = adapt_prior(prior, xInit, y, op, config);
    result.counters.dcProjections = counters.dcProjections;
    result.counters.reverseSteps = counters.reverseSteps;
    break;
  }
  case ReconVariant::NoAdapt: {
    result.xInit = rapid_diffusion(prior, y, op, rapid_seed(config.seed), config.rapidLatent, &result.counters);
    result.xFin = result.xInit.clone();
    break;
  }
  case ReconVariant::NoTrain: {
    if (op.rows() != prior.config.imageSize || op.cols() != prior.config.imageSize) {
      throw ConfigError("reconstruct: operator shape does not match the prior's image size");
    }
    const auto untrained = initialize_prior(prior.config, prior.schedule, untrained_seed(config.seed));
    const auto xInit = zero_filled(y.to(torch::kComplexFloat), op);
    result = adapt_prior(untrained, xInit, y, op, config);
    break;
  }
  }
  result.variant = config.variant;
  result.rapidSeed = config.variant == ReconVariant::NoTrain ? 0 : rapid_seed(config.seed);
  result.rapidLatent = config.rapidLatent;
  result.adaptLatent = config.adaptLatent;
  if (config.variant == ReconVariant::NoAdapt) {
    result.adaptSeed = 0;
  }
  result.wallTimeSeconds = seconds_since(start);
  return result;
}

} // namespace adadiff
