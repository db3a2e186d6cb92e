// Command-line front end: gen-data, train, reconstruct, ablate, eval, mask.

#include "adadiff/error.hpp"
#include "adadiff/experiment.hpp"
#include "adadiff/png.hpp"

#include <CLI11.hpp>
#include <torch/torch.h>

#include <iostream>

namespace {

enum ExitCode { kOk = 0, kOther = 1, kConfig = 2, kData = 3, kDivergence = 4 };

struct Common {
  std::string config;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("-c,--config", c.config, "experiment config (JSON); defaults apply when omitted");
  cmd->add_option("--set", c.overrides, "override a config key, e.g. --set mapper.epochs=10")->take_all();
}

adadiff::ExperimentConfig load(const Common& c) {
  return adadiff::ExperimentConfig::fromJson(adadiff::load_config_document(c.config, c.overrides));
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive adversarial diffusion priors for undersampled MRI on synthetic phantoms"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "intra-op threads (1 keeps outputs byte-reproducible)")->capture_default_str();

  Common genCommon;
  auto* gen = app.add_subcommand("gen-data", "write the phantom dataset");
  add_common(gen, genCommon);

  Common trainCommon;
  std::string variant = "adversarial";
  std::string checkpoint;
  std::string resume;
  auto* train = app.add_subcommand("train", "train a prior");
  add_common(train, trainCommon);
  train->add_option("--variant", variant, "adversarial | l1 | no-z")->capture_default_str();
  train->add_option("-o,--checkpoint", checkpoint, "output checkpoint (default <outputDir>/prior-<variant>.ckpt)");
  train->add_option("--resume", resume, "continue from this checkpoint");

  Common reconCommon;
  std::string reconCheckpoint;
  std::string reconVariant;
  std::string reconOut;
  bool noAdapt = false;
  int reconWorkers = 0;
  auto* recon = app.add_subcommand("reconstruct", "reconstruct evaluation slices");
  add_common(recon, reconCommon);
  recon->add_option("-p,--checkpoint", reconCheckpoint, "prior checkpoint")->required();
  recon->add_option("--variant", reconVariant, "full | no_adapt | no_train (default: recon.variant)");
  recon->add_flag("--no-adapt", noAdapt, "shorthand for --variant no_adapt");
  recon->add_option("-o,--out", reconOut, "archive directory (default <outputDir>/recon/<variant>)");
  recon->add_option("--workers", reconWorkers, "parallel slices (overrides eval.workers)");

  Common ablateCommon;
  std::string priorDir;
  int ablateWorkers = 0;
  auto* ablate = app.add_subcommand("ablate", "compare full, no_adapt, no_train, l1 and no-z variants");
  add_common(ablate, ablateCommon);
  ablate->add_option("--priors", priorDir, "directory holding or receiving prior-*.ckpt (default <outputDir>)");
  ablate->add_option("--workers", ablateWorkers, "parallel slices (overrides eval.workers)");

  std::string evalRecon;
  std::string evalData;
  std::string evalOut;
  bool slicePooled = false;
  auto* eval = app.add_subcommand("eval", "score reconstruction archives");
  eval->add_option("recon", evalRecon, "directory with reconstruction archives")->required();
  eval->add_option("-d,--data", evalData, "dataset directory")->required();
  eval->add_option("-o,--out", evalOut, "report directory (default: the recon directory)");
  eval->add_flag("--slice-pooled", slicePooled, "pool slices instead of averaging per subject first");

  Common maskCommon;
  std::string maskOut = "mask.png";
  uint64_t maskSeed = 0;
  auto* mask = app.add_subcommand("mask", "export a sampling mask preview");
  add_common(mask, maskCommon);
  mask->add_option("-o,--out", maskOut, "PNG path")->capture_default_str();
  mask->add_option("--slice-seed", maskSeed, "slice seed the mask is derived for")->capture_default_str();

  CLI11_PARSE(app, argc, argv);
  torch::set_num_threads(std::max(1, threads));

  try {
    if (*gen) {
      const auto cfg = load(genCommon);
      const auto m = adadiff::run_gen_data(cfg);
      std::cout << "wrote " << m.sliceCount() << " slices to " << adadiff::resolve_output(cfg.data.dir).string()
                << '\n';
    } else if (*train) {
      const auto cfg = load(trainCommon);
      const auto v = adadiff::prior_variant_from_string(variant);
      const auto out = checkpoint.empty()
                           ? adadiff::resolve_output(cfg.outputDir) / ("prior-" + adadiff::to_string(v) + ".ckpt")
                           : std::filesystem::path(checkpoint);
      std::optional<std::filesystem::path> from;
      if (!resume.empty()) {
        from = resume;
      }
      const auto prior = adadiff::run_train(cfg, v, out, from);
      std::cout << "trained " << prior.meta.epochsCompleted << " epochs -> " << out.string() << '\n';
    } else if (*recon) {
      auto cfg = load(reconCommon);
      if (reconWorkers > 0) {
        cfg.eval.workers = reconWorkers;
      }
      auto v = cfg.recon.variant;
      if (!reconVariant.empty()) {
        v = adadiff::recon_variant_from_string(reconVariant);
      }
      if (noAdapt) {
        v = adadiff::ReconVariant::NoAdapt;
      }
      const auto prior = adadiff::load_prior(reconCheckpoint);
      const auto dir = reconOut.empty() ? adadiff::resolve_output(cfg.outputDir) / "recon" / adadiff::to_string(v)
                                        : std::filesystem::path(reconOut);
      const auto outcomes = adadiff::run_reconstruct(cfg, prior, v, dir);
      double mean = 0;
      for (const auto& o : outcomes) {
        mean += o.psnrFin / static_cast<double>(outcomes.size());
      }
      std::cout << "reconstructed " << outcomes.size() << " slices -> " << dir.string() << " (mean PSNR " << mean
                << " dB)\n";
    } else if (*ablate) {
      auto cfg = load(ablateCommon);
      if (ablateWorkers > 0) {
        cfg.eval.workers = ablateWorkers;
      }
      const auto root = adadiff::resolve_output(cfg.outputDir);
      const auto priors = priorDir.empty() ? root : std::filesystem::path(priorDir);
      const auto report = adadiff::run_ablate(cfg, priors, root / "ablate");
      adadiff::write_report(report, root / "ablate");
      std::cout << report.summaryCsv();
    } else if (*eval) {
      const auto report = adadiff::run_eval(evalRecon, evalData, slicePooled);
      adadiff::write_report(report, std::filesystem::path(evalOut.empty() ? evalRecon : evalOut));
      std::cout << report.summaryCsv();
    } else if (*mask) {
      const auto cfg = load(maskCommon);
      const auto op = adadiff::make_slice_operator(cfg.op, cfg.data.imageSize, maskSeed);
      adadiff::write_mask_png(maskOut, op.mask().pattern);
      std::cout << "mask with " << op.mask().sampledCount() << " of " << op.rows() * op.cols()
                << " points -> " << maskOut << '\n';
    }
  } catch (const adadiff::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kConfig;
  } catch (const adadiff::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const adadiff::DivergenceError& e) {
    std::cerr << "numerical divergence: " << e.what() << '\n';
    return kDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kOther;
  }
  return kOk;
}
