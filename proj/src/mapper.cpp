#include "adadiff/mapper.hpp"

#include "adadiff/error.hpp"
#include "adadiff/random.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>

namespace F = torch::nn::functional;

namespace adadiff {

std::string to_string(TrainMode mode) {
  return mode == TrainMode::L1 ? "l1" : "adversarial";
}

TrainMode train_mode_from_string(const std::string& name) {
  if (name == "adversarial" || name == "adv") {
    return TrainMode::Adversarial;
  }
  if (name == "l1") {
    return TrainMode::L1;
  }
  throw ConfigError("unknown training mode '" + name + "' (expected adversarial or l1)");
}

json to_json(const MapperConfig& c) {
  json j;
  j["imageSize"] = c.imageSize;
  j["baseChannels"] = c.baseChannels;
  j["channelMult"] = c.channelMult;
  j["attentionStages"] = c.attentionStages;
  j["decoderAttentionStages"] = c.decoderAttentionStages;
  j["encoderFlatBlocks"] = c.encoderFlatBlocks;
  j["zDim"] = c.zDim;
  j["zMlpLayers"] = c.zMlpLayers;
  j["timeEmbedDim"] = c.timeEmbedDim;
  j["discChannels"] = c.discChannels;
  j["resample"] = to_string(c.resample);
  j["zAblation"] = c.zAblation;
  j["learningRate"] = c.learningRate;
  j["discLearningRate"] = c.discLearningRate;
  j["adamBeta1"] = c.adamBeta1;
  j["adamBeta2"] = c.adamBeta2;
  j["epochs"] = c.epochs;
  j["batchSize"] = c.batchSize;
  return j;
}

MapperConfig mapper_config_from_json(const json& node, const std::string& path) {
  MapperConfig c;
  ObjectReader r(node, path);
  r.read("imageSize", c.imageSize);
  r.read("baseChannels", c.baseChannels);
  r.read("channelMult", c.channelMult);
  r.read("attentionStages", c.attentionStages);
  r.read("decoderAttentionStages", c.decoderAttentionStages);
  r.read("encoderFlatBlocks", c.encoderFlatBlocks);
  r.read("zDim", c.zDim);
  r.read("zMlpLayers", c.zMlpLayers);
  r.read("timeEmbedDim", c.timeEmbedDim);
  r.read("discChannels", c.discChannels);
  std::string resample = to_string(c.resample);
  r.read("resample", resample);
  c.resample = resample_mode_from_string(resample);
  r.read("zAblation", c.zAblation);
  r.read("learningRate", c.learningRate);
  r.read("discLearningRate", c.discLearningRate);
  r.read("adamBeta1", c.adamBeta1);
  r.read("adamBeta2", c.adamBeta2);
  r.read("epochs", c.epochs);
  r.read("batchSize", c.batchSize);
  r.finish();
  c.validate();
  return c;
}

namespace {

NamedTensors clone_all(const NamedTensors& in) {
  NamedTensors out;
  out.reserve(in.size());
  for (const auto& [name, t] : in) {
    out.emplace_back(name, t.clone());
  }
  return out;
}

NamedTensors named_params(torch::nn::Module& module) {
  NamedTensors out;
  for (auto& item : module.named_parameters(/*recurse=*/true)) {
    out.emplace_back(item.key(), item.value());
  }
  return out;
}

torch::Tensor time_tensor(const DiffusionSchedule& schedule, const std::vector<int>& r, int offset) {
  std::vector<float> t(r.size());
  for (size_t i = 0; i < r.size(); ++i) {
    t[i] = static_cast<float>(schedule.timeIndex(r[i] + offset));
  }
  return torch::tensor(t);
}

void set_requires_grad(torch::nn::Module& module, bool on) {
  for (auto& p : module.parameters()) {
    p.requires_grad_(on);
  }
}

void check_images(const torch::Tensor& x, int64_t size, const char* what) {
  if (x.dim() != 4 || x.size(1) != 2 || x.size(2) != size || x.size(3) != size) {
    throw ContractError(std::string(what) + ": expected (N, 2, " + std::to_string(size) + ", " +
                        std::to_string(size) + ") images");
  }
}

} // namespace

Prior Prior::clone() const {
  Prior out;
  out.config = config;
  out.schedule = schedule;
  out.generator = Generator(config);
  out.discriminator = Discriminator(config);
  load_parameters(*out.generator, snapshot_parameters(*generator));
  load_parameters(*out.discriminator, snapshot_parameters(*discriminator));
  out.meta = meta;
  out.meta.generatorOptimizer = clone_all(meta.generatorOptimizer);
  out.meta.discriminatorOptimizer = clone_all(meta.discriminatorOptimizer);
  return out;
}

Prior initialize_prior(const MapperConfig& config, const DiffusionSchedule& schedule, uint64_t seed,
                       TrainMode mode) {
  config.validate();
  if (schedule.steps() < 1) {
    throw ConfigError("initialize_prior: schedule has no steps");
  }
  Prior prior;
  prior.config = config;
  prior.schedule = schedule;
  prior.generator = Generator(config);
  prior.discriminator = Discriminator(config);
  auto gen = make_generator(derive_seed(seed, 0x1417));
  reinitialize(*prior.generator, gen);
  reinitialize(*prior.discriminator, gen);
  prior.meta.seed = seed;
  prior.meta.mode = mode;
  return prior;
}

Generator clone_generator(const Prior& prior) {
  Generator g(prior.config);
  load_parameters(*g, snapshot_parameters(*prior.generator));
  return g;
}

torch::Tensor generate_x0(const Prior& prior, const torch::Tensor& xNext, int r, const torch::Tensor& z) {
  if (r < 0 || r > prior.schedule.steps()) {
    throw ContractError("generate_x0: step index out of range");
  }
  const bool single = xNext.dim() == 3;
  auto x = single ? xNext.unsqueeze(0) : xNext;
  auto zz = single ? z.unsqueeze(0) : z;
  check_images(x, prior.config.imageSize, "generate_x0");
  if (zz.dim() != 2 || zz.size(0) != x.size(0) || zz.size(1) != prior.config.zDim) {
    throw ContractError("generate_x0: latent must be (N, zDim)");
  }
  auto t = torch::full({x.size(0)}, static_cast<float>(prior.schedule.timeIndex(r)));
  auto out = prior.generator.ptr()->forward(x, t, zz);
  return single ? out.squeeze(0) : out;
}

torch::Tensor discriminate(const Prior& prior, const torch::Tensor& xt, const torch::Tensor& xNext, int r) {
  if (r < 1 || r > prior.schedule.steps()) {
    throw ContractError("discriminate: step index out of range");
  }
  if (!xt.sizes().equals(xNext.sizes())) {
    throw ContractError("discriminate: x_t and x_{t+k} shapes differ");
  }
  const bool single = xt.dim() == 3;
  auto a = single ? xt.unsqueeze(0) : xt;
  auto b = single ? xNext.unsqueeze(0) : xNext;
  check_images(a, prior.config.imageSize, "discriminate");
  auto t = torch::full({a.size(0)}, static_cast<float>(prior.schedule.timeIndex(r)));
  auto out = prior.discriminator.ptr()->forward(a, b, t);
  return single ? out.squeeze(0) : out;
}

DenoiserFn denoiser_of(const Prior& prior) {
  auto g = prior.generator;
  return [g](const torch::Tensor& x, const torch::Tensor& t, const torch::Tensor& z) { return g.ptr()->forward(x, t, z); };
}

CriticFn critic_of(const Prior& prior) {
  auto d = prior.discriminator;
  return [d](const torch::Tensor& xt, const torch::Tensor& xNext, const torch::Tensor& t) {
    return d.ptr()->forward(xt, xNext, t);
  };
}

void TrainBatch::validate(const DiffusionSchedule& schedule) const {
  if (!x0.defined() || x0.dim() < 1) {
    throw ContractError("TrainBatch: missing x0");
  }
  const auto n = x0.size(0);
  if (static_cast<int64_t>(rIndices.size()) != n) {
    throw ContractError("TrainBatch: rIndices length differs from batch size");
  }
  for (const auto& t : {noiseA, noiseB, posteriorNoise}) {
    if (!t.defined() || !t.sizes().equals(x0.sizes())) {
      throw ContractError("TrainBatch: noise shape differs from x0");
    }
  }
  if (!z.defined() || z.dim() != 2 || z.size(0) != n) {
    throw ContractError("TrainBatch: latent batch size differs from x0");
  }
  for (int r : rIndices) {
    if (r < 0 || r >= schedule.steps()) {
      throw ContractError("TrainBatch: step index out of range");
    }
  }
}

TrainBatch draw_batch(const torch::Tensor& x0, const DiffusionSchedule& schedule, int64_t zDim,
                      torch::Generator& gen) {
  TrainBatch b;
  b.x0 = x0;
  const auto n = x0.size(0);
  auto r = torch::randint(0, schedule.steps(), {n}, gen, torch::kLong);
  auto acc = r.accessor<int64_t, 1>();
  for (int64_t i = 0; i < n; ++i) {
    b.rIndices.push_back(static_cast<int>(acc[i]));
  }
  b.noiseA = torch::randn(x0.sizes(), gen, x0.options());
  b.noiseB = torch::randn(x0.sizes(), gen, x0.options());
  b.z = torch::randn({n, zDim}, gen, x0.options());
  b.posteriorNoise = torch::randn(x0.sizes(), gen, x0.options());
  return b;
}

TrainBatch redraw_latents(const TrainBatch& batch, torch::Generator& gen) {
  TrainBatch b = batch;
  b.z = torch::randn(batch.z.sizes(), gen, batch.z.options());
  b.posteriorNoise = torch::randn(batch.x0.sizes(), gen, batch.x0.options());
  return b;
}

TrainPair real_pair(const DiffusionSchedule& schedule, const TrainBatch& batch) {
  batch.validate(schedule);
  TrainPair p;
  p.xt = forward_diffuse(schedule, batch.x0, batch.rIndices, batch.noiseA);
  std::vector<int> next(batch.rIndices);
  for (auto& r : next) {
    ++r;
  }
  p.xNext = forward_step(schedule, p.xt, next, batch.noiseB);
  p.t = time_tensor(schedule, batch.rIndices, 1);
  return p;
}

torch::Tensor fake_sample(const DenoiserFn& generator, const DiffusionSchedule& schedule, const TrainBatch& batch,
                          const TrainPair& pair) {
  auto x0Tilde = generator(pair.xNext, pair.t, batch.z);
  return sample_posterior(schedule, x0Tilde, pair.xNext, batch.rIndices, batch.posteriorNoise);
}

DiscriminatorLoss discriminator_loss(const DenoiserFn& generator, const CriticFn& critic,
                                     const DiffusionSchedule& schedule, const TrainBatch& batch) {
  const auto pair = real_pair(schedule, batch);
  auto xt = pair.xt.detach().requires_grad_(true);
  auto xNext = pair.xNext.detach();

  DiscriminatorLoss out;
  auto realLogit = critic(xt, xNext, pair.t);
  out.real = F::softplus(-realLogit).mean();

  torch::Tensor grad;
  if (realLogit.requires_grad()) {
    grad = torch::autograd::grad({realLogit.sum()}, {xt}, {}, /*retain_graph=*/true, /*create_graph=*/true,
                                 /*allow_unused=*/true)[0];
  }
  if (grad.defined()) {
    out.penalty = 0.5 * grad.pow(2).flatten(1).sum(1).mean();
  } else {
    out.penalty = torch::zeros({}, realLogit.options());
  }

  torch::Tensor fake;
  {
    torch::NoGradGuard guard;
    fake = fake_sample(generator, schedule, batch, TrainPair{xt.detach(), xNext, pair.t});
  }
  out.fake = F::softplus(critic(fake, xNext, pair.t)).mean();
  out.total = out.real + out.fake + out.penalty;
  return out;
}

torch::Tensor generator_loss(const DenoiserFn& generator, const CriticFn& critic, const DiffusionSchedule& schedule,
                             const TrainBatch& batch) {
  const auto pair = real_pair(schedule, batch);
  auto fake = fake_sample(generator, schedule, batch, pair);
  return F::softplus(-critic(fake, pair.xNext, pair.t)).mean();
}

torch::Tensor l1_loss(const DenoiserFn& generator, const DiffusionSchedule& schedule, const TrainBatch& batch) {
  const auto pair = real_pair(schedule, batch);
  return (generator(pair.xNext, pair.t, batch.z) - batch.x0).abs().mean();
}

DiscriminatorLoss loss_discriminator(const Prior& prior, const TrainBatch& batch) {
  return discriminator_loss(denoiser_of(prior), critic_of(prior), prior.schedule, batch);
}

torch::Tensor loss_generator(const Prior& prior, const TrainBatch& batch) {
  return generator_loss(denoiser_of(prior), critic_of(prior), prior.schedule, batch);
}

double denoising_l1(const Prior& prior, const torch::Tensor& images, int r, uint64_t seed) {
  check_images(images, prior.config.imageSize, "denoising_l1");
  if (r < 1 || r > prior.schedule.steps()) {
    throw ContractError("denoising_l1: step index out of range");
  }
  torch::NoGradGuard guard;
  auto gen = make_generator(seed);
  auto noise = torch::randn(images.sizes(), gen, images.options());
  auto z = torch::randn({images.size(0), prior.config.zDim}, gen, images.options());
  auto xr = forward_diffuse(prior.schedule, images, r, noise);
  return (generate_x0(prior, xr, r, z) - images).abs().mean().item<double>();
}

Prior train(const torch::Tensor& dataset, const MapperConfig& config, const DiffusionSchedule& schedule,
            const TrainOptions& options) {
  auto prior = initialize_prior(config, schedule, options.seed, options.mode);
  continue_training(prior, dataset, config.epochs, options);
  return prior;
}

void continue_training(Prior& prior, const torch::Tensor& dataset, int64_t targetEpochs,
                       const TrainOptions& options) {
  if (!dataset.defined() || dataset.dim() != 4 || dataset.size(0) == 0) {
    throw ConfigError("train: dataset is empty");
  }
  check_images(dataset, prior.config.imageSize, "train");
  if (options.validation.defined()) {
    check_images(options.validation, prior.config.imageSize, "train validation");
  }
  if (prior.meta.epochsCompleted >= targetEpochs) {
    return;
  }
  const auto& cfg = prior.config;
  const auto mode = prior.meta.mode;
  const auto n = dataset.size(0);
  const auto batchSize = std::min<int64_t>(cfg.batchSize, n);
  const auto batches = n / batchSize;

  Adam optG(named_params(*prior.generator), {cfg.learningRate, cfg.adamBeta1, cfg.adamBeta2, 1e-8});
  Adam optD(named_params(*prior.discriminator), {cfg.discLearningRate, cfg.adamBeta1, cfg.adamBeta2, 1e-8});
  if (!prior.meta.generatorOptimizer.empty()) {
    optG.loadState(prior.meta.generatorOptimizer, prior.meta.generatorSteps);
  }
  if (!prior.meta.discriminatorOptimizer.empty()) {
    optD.loadState(prior.meta.discriminatorOptimizer, prior.meta.discriminatorSteps);
  }

  const auto denoiser = denoiser_of(prior);
  const auto critic = critic_of(prior);
  const auto data = dataset.to(torch::kFloat32).contiguous();
  auto& trace = prior.meta.trace;

  for (int64_t epoch = prior.meta.epochsCompleted; epoch < targetEpochs; ++epoch) {
    prior.generator->train();
    prior.discriminator->train();
    auto gen = make_generator(derive_seed(prior.meta.seed, static_cast<uint64_t>(epoch) + 1));
    const auto perm = torch::randperm(n, gen, torch::kLong);
    double sumG = 0, sumD = 0, sumReal = 0, sumFake = 0, sumPen = 0;

    for (int64_t b = 0; b < batches; ++b) {
      const auto idx = perm.slice(0, b * batchSize, (b + 1) * batchSize);
      const auto batch = draw_batch(data.index_select(0, idx), prior.schedule, cfg.zDim, gen);

      if (mode == TrainMode::L1) {
        optG.zeroGrad();
        auto loss = l1_loss(denoiser, prior.schedule, batch);
        const double value = loss.item<double>();
        if (!std::isfinite(value)) {
          throw DivergenceError("training", static_cast<long>(epoch));
        }
        loss.backward();
        optG.step();
        sumG += value;
        continue;
      }

      set_requires_grad(*prior.discriminator, true);
      optD.zeroGrad();
      auto dl = discriminator_loss(denoiser, critic, prior.schedule, batch);
      const double dValue = dl.total.item<double>();
      if (!std::isfinite(dValue)) {
        throw DivergenceError("training", static_cast<long>(epoch));
      }
      dl.total.backward();
      optD.step();
      sumD += dValue;
      sumReal += dl.real.item<double>();
      sumFake += dl.fake.item<double>();
      sumPen += dl.penalty.item<double>();

      set_requires_grad(*prior.discriminator, false);
      optG.zeroGrad();
      auto gl = generator_loss(denoiser, critic, prior.schedule, redraw_latents(batch, gen));
      const double gValue = gl.item<double>();
      if (!std::isfinite(gValue)) {
        throw DivergenceError("training", static_cast<long>(epoch));
      }
      gl.backward();
      optG.step();
      sumG += gValue;
    }
    set_requires_grad(*prior.discriminator, true);

    const auto nb = static_cast<double>(batches);
    trace.generatorLoss.push_back(sumG / nb);
    if (mode == TrainMode::Adversarial) {
      trace.discriminatorLoss.push_back(sumD / nb);
      trace.realTerm.push_back(sumReal / nb);
      trace.fakeTerm.push_back(sumFake / nb);
      trace.penaltyTerm.push_back(sumPen / nb);
    }
    prior.generator->eval();
    prior.discriminator->eval();
    if (options.validation.defined()) {
      trace.validationL1.push_back(denoising_l1(prior, options.validation, 1, derive_seed(prior.meta.seed, 0x7a1)));
    }
    prior.meta.epochsCompleted = epoch + 1;
    prior.meta.generatorOptimizer = optG.state();
    prior.meta.generatorSteps = optG.stepCount();
    if (mode == TrainMode::Adversarial) {
      prior.meta.discriminatorOptimizer = optD.state();
      prior.meta.discriminatorSteps = optD.stepCount();
    }
    if (options.onEpoch) {
      options.onEpoch(prior);
    }
  }
}

// Checkpoint layout: the format line, a little-endian uint64 header length,
// a JSON header, then raw little-endian float32 tensor data in header order.

namespace {

json trace_to_json(const TrainingTrace& t) {
  return json{{"generatorLoss", t.generatorLoss},     {"discriminatorLoss", t.discriminatorLoss},
              {"realTerm", t.realTerm},               {"fakeTerm", t.fakeTerm},
              {"penaltyTerm", t.penaltyTerm},         {"validationL1", t.validationL1}};
}

TrainingTrace trace_from_json(const json& j) {
  TrainingTrace t;
  ObjectReader r(j, "training.trace");
  r.read("generatorLoss", t.generatorLoss);
  r.read("discriminatorLoss", t.discriminatorLoss);
  r.read("realTerm", t.realTerm);
  r.read("fakeTerm", t.fakeTerm);
  r.read("penaltyTerm", t.penaltyTerm);
  r.read("validationL1", t.validationL1);
  r.finish();
  return t;
}

void write_u64(std::ostream& os, uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) {
    buf[i] = static_cast<unsigned char>(v >> (8 * i));
  }
  os.write(reinterpret_cast<const char*>(buf), 8);
}

uint64_t read_u64(std::istream& is) {
  unsigned char buf[8];
  if (!is.read(reinterpret_cast<char*>(buf), 8)) {
    throw DataError("checkpoint truncated");
  }
  uint64_t v = 0;
  for (int i = 7; i >= 0; --i) {
    v = (v << 8) | buf[i];
  }
  return v;
}

void write_floats(std::ostream& os, const torch::Tensor& t) {
  auto c = t.detach().to(torch::kFloat32).contiguous();
  const auto* p = c.data_ptr<float>();
  for (int64_t i = 0; i < c.numel(); ++i) {
    uint32_t bits;
    std::memcpy(&bits, p + i, 4);
    unsigned char b[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                          static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
  }
}

torch::Tensor read_floats(std::istream& is, const std::vector<int64_t>& shape) {
  auto t = torch::empty(shape, torch::kFloat32);
  auto* p = t.data_ptr<float>();
  std::vector<unsigned char> buf(static_cast<size_t>(t.numel()) * 4);
  if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()))) {
    throw DataError("checkpoint truncated in tensor data");
  }
  for (int64_t i = 0; i < t.numel(); ++i) {
    const auto* b = &buf[static_cast<size_t>(i) * 4];
    const uint32_t bits = uint32_t{b[0]} | (uint32_t{b[1]} << 8) | (uint32_t{b[2]} << 16) | (uint32_t{b[3]} << 24);
    std::memcpy(p + i, &bits, 4);
  }
  return t;
}

} // namespace

void save_prior(const Prior& prior, const std::filesystem::path& path) {
  const std::vector<std::pair<std::string, NamedTensors>> groups = {
      {"generator", snapshot_parameters(*prior.generator)},
      {"discriminator", snapshot_parameters(*prior.discriminator)},
      {"generatorOptimizer", prior.meta.generatorOptimizer},
      {"discriminatorOptimizer", prior.meta.discriminatorOptimizer},
  };

  json header;
  header["format"] = kPriorFormat;
  header["config"] = to_json(prior.config);
  header["schedule"] = json{{"T", prior.schedule.totalSteps()},
                            {"k", prior.schedule.stride()},
                            {"betaMin", prior.schedule.betaMin()},
                            {"betaMax", prior.schedule.betaMax()},
                            {"gamma", prior.schedule.gammas()},
                            {"alphaBar", prior.schedule.alphaBars()}};
  header["training"] = json{{"seed", prior.meta.seed},
                            {"mode", to_string(prior.meta.mode)},
                            {"epochsCompleted", prior.meta.epochsCompleted},
                            {"generatorSteps", prior.meta.generatorSteps},
                            {"discriminatorSteps", prior.meta.discriminatorSteps},
                            {"trace", trace_to_json(prior.meta.trace)}};
  json table = json::array();
  for (const auto& [group, tensors] : groups) {
    for (const auto& [name, t] : tensors) {
      table.push_back(json{{"group", group}, {"name", name}, {"shape", t.sizes().vec()}});
    }
  }
  header["tensors"] = table;

  std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) {
    throw DataError("cannot write checkpoint " + path.string());
  }
  const auto text = header.dump();
  os << kPriorFormat << '\n';
  write_u64(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [group, tensors] : groups) {
    for (const auto& [name, t] : tensors) {
      write_floats(os, t);
    }
  }
  if (!os) {
    throw DataError("failed writing checkpoint " + path.string());
  }
}

Prior load_prior(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    throw DataError("cannot open checkpoint " + path.string());
  }
  std::string magic;
  std::getline(is, magic);
  if (magic != kPriorFormat) {
    throw DataError(path.string() + " is not an " + std::string(kPriorFormat) + " checkpoint");
  }
  const auto length = read_u64(is);
  if (length > (uint64_t{1} << 30)) {
    throw DataError("checkpoint header length is implausible");
  }
  std::string text(length, '\0');
  if (!is.read(text.data(), static_cast<std::streamsize>(length))) {
    throw DataError("checkpoint truncated in header");
  }

  json header;
  try {
    header = json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint header is not valid JSON: ") + e.what());
  }

  try {
    const auto config = mapper_config_from_json(header.at("config"), "config");
    const auto& s = header.at("schedule");
    auto schedule = make_schedule(s.at("T").get<int>(), s.at("k").get<int>(), s.at("betaMin").get<double>(),
                                  s.at("betaMax").get<double>());
    const auto storedAlphaBar = s.at("alphaBar").get<std::vector<double>>();
    if (storedAlphaBar.size() != schedule.alphaBars().size()) {
      throw DataError("checkpoint schedule step count mismatch");
    }
    for (size_t i = 0; i < storedAlphaBar.size(); ++i) {
      if (std::abs(storedAlphaBar[i] - schedule.alphaBars()[i]) > 1e-12) {
        throw DataError("checkpoint schedule arrays disagree with their parameters");
      }
    }

    const auto& tr = header.at("training");
    Prior prior = initialize_prior(config, schedule, tr.at("seed").get<uint64_t>(),
                                   train_mode_from_string(tr.at("mode").get<std::string>()));
    prior.meta.epochsCompleted = tr.at("epochsCompleted").get<int64_t>();
    prior.meta.generatorSteps = tr.at("generatorSteps").get<int64_t>();
    prior.meta.discriminatorSteps = tr.at("discriminatorSteps").get<int64_t>();
    prior.meta.trace = trace_from_json(tr.at("trace"));

    std::map<std::string, NamedTensors> groups;
    for (const auto& entry : header.at("tensors")) {
      const auto shape = entry.at("shape").get<std::vector<int64_t>>();
      groups[entry.at("group").get<std::string>()].emplace_back(entry.at("name").get<std::string>(),
                                                                read_floats(is, shape));
    }
    if (is.peek() != std::char_traits<char>::eof()) {
      throw DataError("checkpoint has trailing bytes");
    }
    load_parameters(*prior.generator, groups["generator"]);
    load_parameters(*prior.discriminator, groups["discriminator"]);
    prior.meta.generatorOptimizer = groups["generatorOptimizer"];
    prior.meta.discriminatorOptimizer = groups["discriminatorOptimizer"];
    prior.generator->eval();
    prior.discriminator->eval();
    return prior;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("checkpoint header is malformed: ") + e.what());
  } catch (const ContractError& e) {
    throw DataError(std::string("checkpoint parameters do not match the architecture: ") + e.what());
  }
}

} // namespace adadiff
