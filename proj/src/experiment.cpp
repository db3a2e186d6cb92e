#include "adadiff/experiment.hpp"

#include "adadiff/error.hpp"
#include "adadiff/png.hpp"
#include "adadiff/random.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <thread>

namespace adadiff {

ExperimentConfig ExperimentConfig::fromJson(const json& j) {
  ExperimentConfig c;
  ObjectReader root(j, "config");

  if (root.has("data")) {
    ObjectReader r(root.child("data"), "data");
    r.read("subjects", c.data.subjects);
    r.read("contrasts", c.data.contrasts);
    r.read("imageSize", c.data.imageSize);
    r.read("slicesPerSubject", c.data.slicesPerSubject);
    r.read("seed", c.data.seed);
    r.read("dir", c.data.dir);
    r.finish();
    for (const auto& name : c.data.contrasts) {
      contrast_from_string(name);
    }
  }
  if (root.has("schedule")) {
    ObjectReader r(root.child("schedule"), "schedule");
    r.read("T", c.schedule.totalSteps);
    r.read("k", c.schedule.stride);
    r.read("betaMin", c.schedule.betaMin);
    r.read("betaMax", c.schedule.betaMax);
    r.finish();
  }
  if (root.has("mapper")) {
    c.mapper = mapper_config_from_json(root.child("mapper"), "mapper");
  }
  if (root.has("train")) {
    ObjectReader r(root.child("train"), "train");
    r.read("seed", c.train.seed);
    r.read("maxSlices", c.train.maxSlices);
    r.read("validationSlices", c.train.validationSlices);
    r.finish();
  }
  if (root.has("operator")) {
    ObjectReader r(root.child("operator"), "operator");
    r.read("accel", c.op.accel);
    r.read("maskKind", c.op.maskKind);
    r.read("calibFraction", c.op.calibFraction);
    r.read("coils", c.op.coils);
    r.read("noiseSigma", c.op.noiseSigma);
    r.read("seed", c.op.seed);
    r.finish();
    mask_kind_from_string(c.op.maskKind);
    if (c.op.coils < 1 || c.op.noiseSigma < 0.0 || !(c.op.accel >= 1.0)) {
      throw ConfigError("operator: need coils >= 1, accel >= 1 and noiseSigma >= 0");
    }
  }
  if (root.has("recon")) {
    c.recon = recon_config_from_json(root.child("recon"), "recon");
  }
  if (root.has("eval")) {
    ObjectReader r(root.child("eval"), "eval");
    r.read("split", c.eval.split);
    r.read("maxSlices", c.eval.maxSlices);
    r.read("slicePooled", c.eval.slicePooled);
    r.read("workers", c.eval.workers);
    r.finish();
    split_from_string(c.eval.split);
    if (c.eval.workers < 1) {
      throw ConfigError("eval.workers must be >= 1");
    }
  }
  root.read("outputDir", c.outputDir);
  root.finish();

  if (c.mapper.imageSize != c.data.imageSize) {
    throw ConfigError("mapper.imageSize must equal data.imageSize");
  }
  c.makeSchedule();
  return c;
}

json ExperimentConfig::toJson() const {
  json j;
  j["data"] = json{{"subjects", data.subjects},   {"contrasts", data.contrasts},
                   {"imageSize", data.imageSize}, {"slicesPerSubject", data.slicesPerSubject},
                   {"seed", data.seed},           {"dir", data.dir}};
  j["schedule"] = json{{"T", schedule.totalSteps},
                       {"k", schedule.stride},
                       {"betaMin", schedule.betaMin},
                       {"betaMax", schedule.betaMax}};
  j["mapper"] = to_json(mapper);
  j["train"] = json{{"seed", train.seed}, {"maxSlices", train.maxSlices}, {"validationSlices", train.validationSlices}};
  j["operator"] = json{{"accel", op.accel},   {"maskKind", op.maskKind},     {"calibFraction", op.calibFraction},
                       {"coils", op.coils},   {"noiseSigma", op.noiseSigma}, {"seed", op.seed}};
  j["recon"] = to_json(recon);
  j["eval"] = json{{"split", eval.split},
                   {"maxSlices", eval.maxSlices},
                   {"slicePooled", eval.slicePooled},
                   {"workers", eval.workers}};
  j["outputDir"] = outputDir;
  return j;
}

DiffusionSchedule ExperimentConfig::makeSchedule() const {
  return make_schedule(schedule.totalSteps, schedule.stride, schedule.betaMin, schedule.betaMax);
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not of the form key.path=value");
  }
  const auto key = assignment.substr(0, eq);
  const auto text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const nlohmann::json::exception&) {
    value = text;
  }
  json* node = &doc;
  size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const auto part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) {
      throw ConfigError("override '" + assignment + "' has an empty key segment");
    }
    if (!node->is_object()) {
      throw ConfigError("override '" + key + "' descends into a non-object value");
    }
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) {
      *node = json::object();
    }
    start = dot + 1;
  }
}

json load_config_document(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  json doc = json::object();
  if (!path.empty()) {
    std::ifstream is(path);
    if (!is) {
      throw ConfigError("cannot open config " + path.string());
    }
    try {
      doc = json::parse(is);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path.string() + " is not valid JSON: " + e.what());
    }
  }
  for (const auto& o : overrides) {
    apply_override(doc, o);
  }
  return doc;
}

std::filesystem::path resolve_output(const std::string& path) {
  std::filesystem::path p(path);
  if (p.is_absolute()) {
    return p;
  }
  if (const char* root = std::getenv(kOutputRootEnv); root != nullptr && *root != '\0') {
    return std::filesystem::path(root) / p;
  }
  return p;
}

void echo_config(const ExperimentConfig& cfg, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream os(dir / "config.json", std::ios::trunc);
  os << cfg.toJson().dump(2) << '\n';
  if (!os) {
    throw DataError("cannot write config echo in " + dir.string());
  }
}

std::string to_string(PriorVariant v) {
  switch (v) {
  case PriorVariant::Adversarial:
    return "adversarial";
  case PriorVariant::L1:
    return "l1";
  case PriorVariant::NoZ:
    return "no-z";
  }
  return "?";
}

PriorVariant prior_variant_from_string(const std::string& name) {
  if (name == "adversarial" || name == "adv") {
    return PriorVariant::Adversarial;
  }
  if (name == "l1") {
    return PriorVariant::L1;
  }
  if (name == "no-z" || name == "no_z") {
    return PriorVariant::NoZ;
  }
  throw ConfigError("unknown training variant '" + name + "' (expected adversarial, l1 or no-z)");
}

DatasetManifest run_gen_data(const ExperimentConfig& cfg) {
  std::vector<Contrast> contrasts;
  for (const auto& c : cfg.data.contrasts) {
    contrasts.push_back(contrast_from_string(c));
  }
  const auto root = resolve_output(cfg.data.dir);
  auto m = make_dataset(cfg.data.subjects, contrasts, cfg.data.imageSize, cfg.data.imageSize,
                        cfg.data.slicesPerSubject, cfg.data.seed, root);
  echo_config(cfg, root);
  return m;
}

namespace {

void write_training_csv(const Prior& prior, const std::filesystem::path& path) {
  const auto& t = prior.meta.trace;
  std::ofstream os(path, std::ios::trunc);
  os << "epoch,generator_loss,discriminator_loss,real_term,fake_term,penalty_term,validation_l1\n";
  auto cell = [](const std::vector<double>& v, size_t i) {
    if (i >= v.size()) {
      return std::string();
    }
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.8g", v[i]);
    return std::string(buf);
  };
  for (size_t i = 0; i < t.generatorLoss.size(); ++i) {
    os << i + 1 << ',' << cell(t.generatorLoss, i) << ',' << cell(t.discriminatorLoss, i) << ','
       << cell(t.realTerm, i) << ',' << cell(t.fakeTerm, i) << ',' << cell(t.penaltyTerm, i) << ','
       << cell(t.validationL1, i) << '\n';
  }
}

bool same_architecture(const MapperConfig& a, const MapperConfig& b) {
  auto ja = to_json(a);
  auto jb = to_json(b);
  ja.erase("epochs");
  jb.erase("epochs");
  return ja == jb;
}

} // namespace

Prior run_train(const ExperimentConfig& cfg, PriorVariant variant, const std::filesystem::path& checkpoint,
                const std::optional<std::filesystem::path>& resumeFrom) {
  const auto dataRoot = resolve_output(cfg.data.dir);
  const auto manifest = load_manifest(dataRoot);
  if (manifest.rows != cfg.mapper.imageSize || manifest.cols != cfg.mapper.imageSize) {
    throw ConfigError("dataset image size does not match mapper.imageSize");
  }
  const auto images = load_split(dataRoot, manifest, Split::Train, cfg.train.maxSlices);
  if (images.size(0) == 0) {
    throw ConfigError("train: the training split is empty");
  }
  TrainOptions options;
  options.mode = variant == PriorVariant::L1 ? TrainMode::L1 : TrainMode::Adversarial;
  options.seed = cfg.train.seed;
  if (cfg.train.validationSlices != 0) {
    auto val = load_split(dataRoot, manifest, Split::Val, cfg.train.validationSlices);
    if (val.size(0) > 0) {
      options.validation = val;
    }
  }
  const auto dir = checkpoint.parent_path().empty() ? std::filesystem::path(".") : checkpoint.parent_path();
  std::filesystem::create_directories(dir);
  echo_config(cfg, dir);
  options.onEpoch = [&](const Prior& p) {
    save_prior(p, checkpoint);
    const auto& t = p.meta.trace;
    std::cerr << "epoch " << p.meta.epochsCompleted << "/" << cfg.mapper.epochs << " generator "
              << t.generatorLoss.back();
    if (!t.validationL1.empty()) {
      std::cerr << " val-l1 " << t.validationL1.back();
    }
    std::cerr << '\n';
  };

  auto mapper = cfg.mapper;
  if (variant == PriorVariant::NoZ) {
    mapper.zAblation = true;
  }
  Prior prior;
  if (resumeFrom) {
    prior = load_prior(*resumeFrom);
    if (!same_architecture(prior.config, mapper)) {
      throw ConfigError("resume: checkpoint configuration differs from the requested one");
    }
    if (prior.meta.mode != options.mode) {
      throw ConfigError("resume: checkpoint was trained in a different mode");
    }
    prior.config.epochs = mapper.epochs;
    continue_training(prior, images, mapper.epochs, options);
  } else {
    prior = train(images, mapper, cfg.makeSchedule(), options);
  }
  save_prior(prior, checkpoint);
  write_training_csv(prior, dir / ("training-" + to_string(variant) + ".csv"));
  return prior;
}

ImagingOperator make_slice_operator(const OperatorConfig& op, int64_t size, uint64_t sliceSeed) {
  const auto seed = derive_seed(op.seed, sliceSeed);
  auto mask = make_mask(size, size, op.accel, mask_kind_from_string(op.maskKind), op.calibFraction,
                        derive_seed(seed, 1));
  auto coils = make_coil_maps(size, size, op.coils, derive_seed(seed, 2));
  return ImagingOperator(std::move(mask), std::move(coils));
}

namespace {

std::vector<SliceRef> eval_slices(const ExperimentConfig& cfg, const DatasetManifest& m) {
  auto refs = split_slices(m, split_from_string(cfg.eval.split));
  if (cfg.eval.maxSlices >= 0 && static_cast<int64_t>(refs.size()) > cfg.eval.maxSlices) {
    refs.resize(static_cast<size_t>(cfg.eval.maxSlices));
  }
  if (refs.empty()) {
    throw ConfigError("no slices in split '" + cfg.eval.split + "'");
  }
  return refs;
}

std::string archive_name(const SliceRef& ref) {
  return "sub" + ref.subject + "_" + to_string(ref.entry.contrast) + "_" + std::to_string(ref.entry.slice);
}

json number_or_string(double v) {
  if (std::isfinite(v)) {
    return v;
  }
  return v > 0 ? "inf" : "-inf";
}

void write_archive(const std::filesystem::path& dir, const ExperimentConfig& cfg, const SliceOutcome& o,
                   const ImagingOperator& op) {
  std::filesystem::create_directories(dir);
  write_cfl(dir / "xinit.cfl", o.result.xInit);
  write_cfl(dir / "xfin.cfl", o.result.xFin);
  write_cfl(dir / "reference.cfl", o.reference);
  write_mask_png(dir / "mask.png", op.mask().pattern);
  write_magnitude_png(dir / "init.png", magnitude(o.result.xInit));
  write_magnitude_png(dir / "fin.png", magnitude(o.result.xFin));
  write_magnitude_png(dir / "reference.png", magnitude(o.reference));

  json j;
  j["variant"] = to_string(o.result.variant);
  j["subject"] = o.ref.subject;
  j["contrast"] = to_string(o.ref.entry.contrast);
  j["slice"] = o.ref.entry.slice;
  j["file"] = o.ref.entry.file;
  j["sliceSeed"] = o.ref.entry.seed;
  j["operator"] = json{{"accel", cfg.op.accel},
                       {"maskKind", cfg.op.maskKind},
                       {"coils", cfg.op.coils},
                       {"sampledPoints", op.mask().sampledCount()},
                       {"calibRows", op.mask().calibRows},
                       {"calibCols", op.mask().calibCols}};
  j["recon"] = to_json(cfg.recon);
  j["seeds"] = json{{"rapid", o.result.rapidSeed}, {"adapt", o.result.adaptSeed}};
  j["latentPolicy"] = json{{"rapid", o.result.rapidLatent == RapidLatent::Fresh ? "fresh" : "fixed"},
                           {"adapt", o.result.adaptLatent == AdaptLatent::Fixed ? "fixed" : "resample"}};
  j["counters"] = json{{"dcProjections", o.result.counters.dcProjections},
                       {"reverseSteps", o.result.counters.reverseSteps},
                       {"adaptSteps", o.result.counters.adaptSteps}};
  j["dcLossTrace"] = o.result.dcLossTrace;
  j["metrics"] = json{{"psnrInit", number_or_string(o.psnrInit)},
                      {"psnrFin", number_or_string(o.psnrFin)},
                      {"psnrZeroFilled", number_or_string(o.psnrZeroFilled)},
                      {"ssimInit", o.ssimInit},
                      {"ssimFin", o.ssimFin},
                      {"ssimZeroFilled", o.ssimZeroFilled}};
  std::ofstream os(dir / "result.json", std::ios::trunc);
  os << j.dump(2) << '\n';
  if (!os) {
    throw DataError("cannot write " + (dir / "result.json").string());
  }
}

} // namespace

std::vector<SliceOutcome> run_reconstruct(const ExperimentConfig& cfg, const Prior& prior, ReconVariant variant,
                                          const std::optional<std::filesystem::path>& archiveDir) {
  const auto dataRoot = resolve_output(cfg.data.dir);
  const auto manifest = load_manifest(dataRoot);
  const auto refs = eval_slices(cfg, manifest);
  auto recon = cfg.recon;
  recon.variant = variant;
  if (archiveDir) {
    echo_config(cfg, *archiveDir);
  }

  std::vector<SliceOutcome> out(refs.size());
  auto work = [&](size_t i) {
    const auto& ref = refs[i];
    auto& o = out[i];
    o.ref = ref;
    o.reference = load_slice(dataRoot, manifest, ref.entry);
    const auto op = make_slice_operator(cfg.op, manifest.rows, ref.entry.seed);
    const auto y = simulate_acquisition(o.reference, op, cfg.op.noiseSigma, derive_seed(ref.entry.seed, 0x415e));
    auto sliceCfg = recon;
    sliceCfg.seed = derive_seed(recon.seed, ref.entry.seed);
    o.result = reconstruct(prior, y, op, sliceCfg);
    o.zeroFilled = zero_filled(y, op);
    const auto refMag = magnitude(o.reference);
    o.psnrInit = psnr(refMag, magnitude(o.result.xInit));
    o.psnrFin = psnr(refMag, magnitude(o.result.xFin));
    o.psnrZeroFilled = psnr(refMag, magnitude(o.zeroFilled));
    o.ssimInit = ssim(refMag, magnitude(o.result.xInit));
    o.ssimFin = ssim(refMag, magnitude(o.result.xFin));
    o.ssimZeroFilled = ssim(refMag, magnitude(o.zeroFilled));
    if (archiveDir) {
      write_archive(*archiveDir / archive_name(ref), cfg, o, op);
    }
    std::cerr << to_string(variant) << " " << archive_name(ref) << " psnr " << o.psnrFin << " dB ("
              << o.result.wallTimeSeconds << " s)\n";
  };

  const auto workers = std::max<size_t>(1, std::min<size_t>(static_cast<size_t>(cfg.eval.workers), refs.size()));
  if (workers == 1) {
    for (size_t i = 0; i < refs.size(); ++i) {
      work(i);
    }
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (size_t i = w; i < refs.size(); i += workers) {
            work(i);
          }
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) {
      t.join();
    }
    for (auto& e : errors) {
      if (e) {
        std::rethrow_exception(e);
      }
    }
  }
  return out;
}

MetricReport run_ablate(const ExperimentConfig& cfg, const std::filesystem::path& priorDir,
                        const std::optional<std::filesystem::path>& archiveRoot) {
  auto obtain = [&](PriorVariant v) {
    const auto path = priorDir / ("prior-" + to_string(v) + ".ckpt");
    if (std::filesystem::exists(path)) {
      auto p = load_prior(path);
      if (p.meta.epochsCompleted >= cfg.mapper.epochs) {
        return p;
      }
      return run_train(cfg, v, path, path);
    }
    return run_train(cfg, v, path);
  };

  MetricReport report(cfg.eval.slicePooled);
  auto score = [&](const std::string& method, const std::vector<SliceOutcome>& outcomes) {
    for (const auto& o : outcomes) {
      report.add({method, to_string(o.ref.entry.contrast), o.ref.subject, o.ref.entry.slice, o.psnrFin, o.ssimFin});
    }
  };
  auto archive = [&](const std::string& method) -> std::optional<std::filesystem::path> {
    if (!archiveRoot) {
      return std::nullopt;
    }
    return *archiveRoot / method;
  };

  const auto adversarial = obtain(PriorVariant::Adversarial);
  score("full", run_reconstruct(cfg, adversarial, ReconVariant::Full, archive("full")));
  score("no_adapt", run_reconstruct(cfg, adversarial, ReconVariant::NoAdapt, archive("no_adapt")));
  score("no_train", run_reconstruct(cfg, adversarial, ReconVariant::NoTrain, archive("no_train")));
  const auto l1 = obtain(PriorVariant::L1);
  score("l1", run_reconstruct(cfg, l1, ReconVariant::Full, archive("l1")));
  const auto noZ = obtain(PriorVariant::NoZ);
  score("no_z", run_reconstruct(cfg, noZ, ReconVariant::Full, archive("no_z")));
  return report;
}

MetricReport run_eval(const std::filesystem::path& reconDir, const std::filesystem::path& dataDir,
                      bool slicePooled) {
  const auto manifest = load_manifest(dataDir);
  if (!std::filesystem::is_directory(reconDir)) {
    throw DataError("reconstruction directory " + reconDir.string() + " does not exist");
  }
  std::vector<std::filesystem::path> results;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(reconDir)) {
    if (entry.is_regular_file() && entry.path().filename() == "result.json") {
      results.push_back(entry.path());
    }
  }
  std::sort(results.begin(), results.end());
  if (results.empty()) {
    throw DataError("no result.json archives under " + reconDir.string());
  }

  MetricReport report(slicePooled);
  for (const auto& path : results) {
    std::ifstream is(path);
    json j;
    try {
      j = json::parse(is);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + " is not valid JSON: " + e.what());
    }
    const auto file = j.at("file").get<std::string>();
    std::optional<SliceEntry> entry;
    for (const auto& s : manifest.subjects) {
      for (const auto& e : s.slices) {
        if (e.file == file) {
          entry = e;
        }
      }
    }
    if (!entry) {
      throw DataError(path.string() + " refers to " + file + ", which is not in the dataset");
    }
    const auto reference = magnitude(load_slice(dataDir, manifest, *entry));
    const auto fin = read_cfl(path.parent_path() / "xfin.cfl", manifest.rows, manifest.cols);
    const auto rec = magnitude(fin);
    // Archives of one reconstruct run share a method directory; name rows after it.
    const auto method = path.parent_path().parent_path() == reconDir
                            ? j.at("variant").get<std::string>()
                            : path.parent_path().parent_path().filename().string();
    report.add({method, j.at("contrast").get<std::string>(), j.at("subject").get<std::string>(),
                j.at("slice").get<int64_t>(), psnr(reference, rec), ssim(reference, rec)});
  }
  return report;
}

void write_report(const MetricReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "metrics.csv", std::ios::trunc) << report.toCsv();
  std::ofstream(dir / "summary.csv", std::ios::trunc) << report.summaryCsv();
  std::ofstream(dir / "report.json", std::ios::trunc) << report.toJson().dump(2) << '\n';
}

} // namespace adadiff
