#include "adadiff/error.hpp"
#include "adadiff/random.hpp"
#include "adadiff/schedule.hpp"

#include <doctest.h>

#include <cmath>

using namespace adadiff;

namespace {

// Gaussian conditioning of x_t ~ N(sqrt(abar_t) x0, 1 - abar_t) on
// x_{t+k} | x_t ~ N(sqrt(1 - g) x_t, g), written in precision form.
struct ScalarPosterior {
  double mean;
  double variance;
};

ScalarPosterior conditioning_oracle(double abarLow, double g, double x0, double xNext) {
  const double priorVar = 1.0 - abarLow;
  const double precision = 1.0 / priorVar + (1.0 - g) / g;
  const double variance = 1.0 / precision;
  const double mean = variance * (std::sqrt(abarLow) * x0 / priorVar + std::sqrt(1.0 - g) * xNext / g);
  return {mean, variance};
}

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

torch::Tensor scalar(double v) { return torch::full({1}, v, torch::kFloat64); }

} // namespace

TEST_CASE("default schedule has eight strided steps") {
  const auto s = make_schedule(1000, 125);
  CHECK(s.steps() == 8);
  CHECK(s.timeIndex(8) == 1000);
  CHECK(s.alphaBar(0) == 1.0);
  CHECK(s.gamma(0) == 0.0);
}

TEST_CASE("alphaBar is strictly decreasing and ends at exp(-10.05)") {
  const auto s = make_schedule(1000, 125, 0.1, 20.0);
  for (int r = 1; r <= s.steps(); ++r) {
    CHECK(s.alphaBar(r) < s.alphaBar(r - 1));
    CHECK(s.gamma(r) > 0.0);
    CHECK(s.gamma(r) < 1.0);
  }
  CHECK(std::abs(s.alphaBar(8) - std::exp(-10.05)) <= 1e-12);
}

TEST_CASE("gamma and alphaBar telescope") {
  const auto s = make_schedule(1000, 125);
  double prod = 1.0;
  for (int r = 1; r <= s.steps(); ++r) {
    prod *= 1.0 - s.gamma(r);
    CHECK(rel(prod, s.alphaBar(r)) < 1e-12);
  }
}

TEST_CASE("stride one reproduces the continuous curve at every step") {
  const auto s = make_schedule(40, 1, 0.1, 20.0);
  for (int r = 0; r <= 40; ++r) {
    const double tau = r / 40.0;
    CHECK(rel(s.alphaBar(r), std::exp(-0.1 * tau - 0.5 * 19.9 * tau * tau)) < 1e-13);
  }
}

TEST_CASE("invalid schedules are configuration errors") {
  CHECK_THROWS_AS(make_schedule(1000, 128), ConfigError);
  CHECK_THROWS_AS(make_schedule(0, 1), ConfigError);
  CHECK_THROWS_AS(make_schedule(1000, 125, 20.0, 0.1), ConfigError);
  CHECK_THROWS_AS(make_schedule(1000, 125, 0.0, 20.0), ConfigError);
}

TEST_CASE("posterior matches Gaussian conditioning for every adjacent pair") {
  const auto s = make_schedule(1000, 125);
  const double x0 = 0.37;
  const double xNext = -1.21;
  for (int r = 1; r < s.steps(); ++r) {
    const auto oracle = conditioning_oracle(s.alphaBar(r), s.gamma(r + 1), x0, xNext);
    const auto p = posterior_params(s, scalar(x0), scalar(xNext), r);
    CAPTURE(r);
    CHECK(rel(p.mean.item<double>(), oracle.mean) < 1e-10);
    CHECK(rel(p.variance, oracle.variance) < 1e-10);
  }
}

TEST_CASE("posterior at r=0 collapses onto the estimate") {
  const auto s = make_schedule(1000, 125);
  const auto x0 = torch::randn({2, 4, 4}, torch::kFloat64);
  const auto xNext = torch::randn({2, 4, 4}, torch::kFloat64);
  const auto p = posterior_params(s, x0, xNext, 0);
  CHECK(p.variance == 0.0);
  CHECK(torch::equal(p.mean, x0));
  CHECK(torch::equal(sample_posterior(p.mean, p.variance, xNext), x0));
}

TEST_CASE("posterior rejects out-of-range steps") {
  const auto s = make_schedule(1000, 125);
  CHECK_THROWS_AS(posterior_params(s, scalar(0), scalar(0), 8), ContractError);
  CHECK_THROWS_AS(posterior_params(s, scalar(0), scalar(0), -1), ContractError);
  CHECK_THROWS_AS(sample_posterior(scalar(0), -1.0, scalar(0)), ContractError);
}

TEST_CASE("forward diffusion moments match the schedule") {
  const auto s = make_schedule(1000, 125);
  auto gen = make_generator(5);
  const int64_t n = 200000;
  const auto x0 = torch::full({n}, 0.8, torch::kFloat64);
  for (int r : {1, 4, 8}) {
    const auto noise = torch::randn({n}, gen, torch::kFloat64);
    const auto xr = forward_diffuse(s, x0, r, noise);
    const double mean = xr.mean().item<double>();
    const double var = xr.var().item<double>();
    CAPTURE(r);
    CHECK(std::abs(mean - 0.8 * std::sqrt(s.alphaBar(r))) < 5.0 * std::sqrt(1.0 / n));
    CHECK(std::abs(var - (1.0 - s.alphaBar(r))) < 0.02);
  }
}

TEST_CASE("one strided hop composes with diffusion to the next step") {
  const auto s = make_schedule(1000, 125);
  auto gen = make_generator(6);
  const int64_t n = 200000;
  const auto x0 = torch::full({n}, -0.5, torch::kFloat64);
  const auto x3 = forward_diffuse(s, x0, 3, torch::randn({n}, gen, torch::kFloat64));
  const auto x4 = forward_step(s, x3, 4, torch::randn({n}, gen, torch::kFloat64));
  CHECK(std::abs(x4.mean().item<double>() + 0.5 * std::sqrt(s.alphaBar(4))) < 0.01);
  CHECK(std::abs(x4.var().item<double>() - (1.0 - s.alphaBar(4))) < 0.02);
}

TEST_CASE("batched forward diffusion applies one step per element") {
  const auto s = make_schedule(1000, 125);
  const auto x0 = torch::randn({3, 2, 4, 4}, torch::kFloat64);
  const auto noise = torch::randn({3, 2, 4, 4}, torch::kFloat64);
  const std::vector<int> r{1, 5, 8};
  const auto batched = forward_diffuse(s, x0, r, noise);
  for (int64_t i = 0; i < 3; ++i) {
    CHECK(torch::allclose(batched[i], forward_diffuse(s, x0[i], r[static_cast<size_t>(i)], noise[i]), 0, 1e-14));
  }
}
