#include "adadiff/error.hpp"
#include "adadiff/operator.hpp"
#include "adadiff/random.hpp"
#include "adadiff/recon.hpp"
#include "fixtures.hpp"

#include <doctest.h>

using namespace adadiff;
using adadiff::testing::tiny_config;

namespace {

struct Problem {
  ImagingOperator op;
  torch::Tensor truth; ///< (2, H, W) float32
  torch::Tensor y;
};

Problem make_problem(int64_t n, uint64_t seed) {
  auto gen = make_generator(seed);
  ImagingOperator op(make_mask(n, n, 4.0, MaskKind::VariableDensity2D, 1.0 / 64.0, seed), CoilMaps::unit(n, n));
  auto truth = torch::zeros({2, n, n});
  using torch::indexing::Slice;
  truth.index_put_({0, Slice(n / 4, 3 * n / 4), Slice(n / 4, 3 * n / 4)}, 1.0);
  truth = truth + 0.05 * torch::randn({2, n, n}, gen);
  auto y = op.forward(truth);
  return {std::move(op), truth, y};
}

ReconConfig small_config(int64_t iterations) {
  ReconConfig c;
  c.iterations = iterations;
  c.seed = 77;
  return c;
}

} // namespace

TEST_CASE("oracle denoiser makes rapid diffusion return the truth") {
  const auto p = make_problem(16, 1);
  const auto truth = p.truth;
  const DenoiserFn oracle = [truth](const torch::Tensor& x, const torch::Tensor&, const torch::Tensor&) {
    return truth.unsqueeze(0).expand(x.sizes()).clone();
  };
  const auto s = make_schedule(1000, 125);
  ReconCounters counters;
  const auto out = rapid_diffusion(oracle, s, 4, p.y, p.op, 5, RapidLatent::Fresh, &counters);
  CHECK(torch::equal(out, truth));
  CHECK(counters.dcProjections == 8);
  CHECK(counters.reverseSteps == 8);
}

TEST_CASE("rapid diffusion sees data-consistent inputs at the scheduled times") {
  const auto p = make_problem(16, 2);
  const auto s = make_schedule(1000, 125);
  std::vector<float> times;
  std::vector<double> residuals;
  const auto op = p.op;
  const auto y = p.y;
  const DenoiserFn probe = [&](const torch::Tensor& x, const torch::Tensor& t, const torch::Tensor&) {
    times.push_back(t[0].item<float>());
    residuals.push_back(torch::abs(op.forward(x[0]) - y).max().item<double>());
    return torch::zeros_like(x);
  };
  rapid_diffusion(probe, s, 4, p.y, p.op, 6);
  REQUIRE(times.size() == 8);
  for (size_t i = 0; i < times.size(); ++i) {
    CHECK(times[i] == static_cast<float>(125 * (8 - i)));
    CHECK(residuals[i] < 1e-5);
  }
}

TEST_CASE("fixed rapid latent reuses one draw, fresh latent redraws") {
  const auto p = make_problem(16, 3);
  const auto s = make_schedule(1000, 125);
  for (auto mode : {RapidLatent::Fixed, RapidLatent::Fresh}) {
    std::vector<torch::Tensor> zs;
    const DenoiserFn record = [&](const torch::Tensor& x, const torch::Tensor&, const torch::Tensor& z) {
      zs.push_back(z.clone());
      return torch::zeros_like(x);
    };
    rapid_diffusion(record, s, 4, p.y, p.op, 8, mode);
    REQUIRE(zs.size() == 8);
    CHECK(torch::equal(zs[0], zs[7]) == (mode == RapidLatent::Fixed));
  }
}

TEST_CASE("adaptation with zero iterations evaluates the prior once") {
  const auto p = make_problem(16, 4);
  const auto prior = initialize_prior(tiny_config(), make_schedule(1000, 125), 3);
  const auto res = adapt_prior(prior, p.truth, p.y, p.op, small_config(0));
  CHECK(res.dcLossTrace.empty());
  CHECK(res.counters.adaptSteps == 0);
  CHECK(res.xFin.sizes().vec() == p.truth.sizes().vec());
  CHECK(torch::equal(res.xInit, p.truth));
}

TEST_CASE("adaptation lowers the data-consistency loss and leaves the prior untouched") {
  const auto p = make_problem(16, 5);
  auto prior = initialize_prior(tiny_config(), make_schedule(1000, 125), 3);
  const auto before = snapshot_parameters(*prior.generator);
  auto cfg = small_config(30);
  cfg.keepAdaptedParams = true;
  const auto res = adapt_prior(prior, zero_filled(p.y, p.op), p.y, p.op, cfg);
  REQUIRE(res.dcLossTrace.size() == 30);
  CHECK(res.dcLossTrace.back() < 0.5 * res.dcLossTrace.front());
  CHECK(res.counters.adaptSteps == 30);
  REQUIRE(res.adaptedParams.has_value());
  const auto after = snapshot_parameters(*prior.generator);
  bool unchanged = true;
  bool moved = false;
  for (size_t i = 0; i < before.size(); ++i) {
    unchanged = unchanged && torch::equal(before[i].second, after[i].second);
    moved = moved || !torch::equal(before[i].second, (*res.adaptedParams)[i].second);
  }
  CHECK(unchanged);
  CHECK(moved);
}

TEST_CASE("reconstruction is deterministic per seed") {
  const auto p = make_problem(16, 6);
  const auto prior = initialize_prior(tiny_config(), make_schedule(1000, 125), 3);
  const auto cfg = small_config(5);
  const auto a = reconstruct(prior, p.y, p.op, cfg);
  const auto b = reconstruct(prior, p.y, p.op, cfg);
  CHECK(torch::equal(a.xInit, b.xInit));
  CHECK(torch::equal(a.xFin, b.xFin));
  CHECK(a.dcLossTrace == b.dcLossTrace);
  CHECK(a.counters.dcProjections == 8);
  CHECK(a.counters.adaptSteps == 5);
  auto other = cfg;
  other.seed = 78;
  CHECK_FALSE(torch::equal(reconstruct(prior, p.y, p.op, other).xInit, a.xInit));
}

TEST_CASE("no_adapt variant stops after rapid diffusion") {
  const auto p = make_problem(16, 7);
  const auto prior = initialize_prior(tiny_config(), make_schedule(1000, 125), 3);
  auto cfg = small_config(5);
  cfg.variant = ReconVariant::NoAdapt;
  const auto res = reconstruct(prior, p.y, p.op, cfg);
  CHECK(res.dcLossTrace.empty());
  CHECK(res.counters.adaptSteps == 0);
  CHECK(torch::equal(res.xInit, res.xFin));
  cfg.variant = ReconVariant::Full;
  CHECK(torch::equal(reconstruct(prior, p.y, p.op, cfg).xInit, res.xInit));
}

TEST_CASE("no_train variant ignores trained weights and starts from zero filling") {
  const auto p = make_problem(16, 8);
  const auto s = make_schedule(1000, 125);
  const auto a = initialize_prior(tiny_config(), s, 3);
  const auto b = initialize_prior(tiny_config(), s, 4);
  auto cfg = small_config(3);
  cfg.variant = ReconVariant::NoTrain;
  const auto ra = reconstruct(a, p.y, p.op, cfg);
  const auto rb = reconstruct(b, p.y, p.op, cfg);
  CHECK(torch::equal(ra.xInit, zero_filled(p.y, p.op).to(torch::kFloat32)));
  CHECK(torch::equal(ra.xFin, rb.xFin));
  CHECK(ra.counters.dcProjections == 0);
  CHECK(ra.dcLossTrace.size() == 3);
}

TEST_CASE("reconstruction rejects mismatched inputs") {
  const auto p = make_problem(32, 9);
  const auto prior = initialize_prior(tiny_config(), make_schedule(1000, 125), 3);
  CHECK_THROWS_AS(reconstruct(prior, p.y, p.op, small_config(1)), ConfigError);
  auto bad = small_config(-1);
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  const auto q = make_problem(16, 9);
  CHECK_THROWS_AS(adapt_prior(prior, torch::zeros({2, 8, 8}), q.y, q.op, small_config(1)), ContractError);
}

TEST_CASE("recon config json round trip rejects unknown keys") {
  auto cfg = small_config(12);
  cfg.variant = ReconVariant::NoTrain;
  cfg.adaptLatent = AdaptLatent::Resample;
  CHECK(to_json(recon_config_from_json(to_json(cfg))) == to_json(cfg));
  auto j = to_json(cfg);
  j["lr"] = 0.1;
  CHECK_THROWS_AS(recon_config_from_json(j), ConfigError);
  CHECK_THROWS_AS(recon_variant_from_string("fast"), ConfigError);
}
