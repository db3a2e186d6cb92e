#include "adadiff/schedule.hpp"

#include "adadiff/error.hpp"

#include <cmath>
#include <string>

namespace adadiff {

namespace {

void requireSameShape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (!a.sizes().equals(b.sizes())) {
    throw ContractError(std::string(what) + ": shape mismatch");
  }
}

// Per-element scale tensor broadcastable against a batch shaped like `like`.
torch::Tensor batchScale(const std::vector<double>& values, const torch::Tensor& like) {
  std::vector<int64_t> shape(static_cast<size_t>(like.dim()), 1);
  shape[0] = static_cast<int64_t>(values.size());
  auto t = torch::tensor(values, torch::TensorOptions().dtype(torch::kFloat64));
  return t.reshape(shape).to(like.scalar_type());
}

void requireBatch(const std::vector<int>& r, const torch::Tensor& x, const char* what) {
  if (x.dim() < 1 || static_cast<size_t>(x.size(0)) != r.size()) {
    throw ContractError(std::string(what) + ": step list does not match batch size");
  }
}

} // namespace

DiffusionSchedule make_schedule(int totalSteps, int stride, double betaMin, double betaMax) {
  if (totalSteps <= 0 || stride <= 0) {
    throw ConfigError("schedule: T and k must be positive");
  }
  if (totalSteps % stride != 0) {
    throw ConfigError("schedule: T=" + std::to_string(totalSteps) + " is not divisible by k=" +
                      std::to_string(stride));
  }
  if (!(betaMin > 0.0) || !(betaMin < betaMax)) {
    throw ConfigError("schedule: require 0 < betaMin < betaMax");
  }

  DiffusionSchedule s;
  s.total_ = totalSteps;
  s.stride_ = stride;
  s.betaMin_ = betaMin;
  s.betaMax_ = betaMax;

  const int n = totalSteps / stride;
  std::vector<double> exponent(n + 1, 0.0);
  for (int r = 1; r <= n; ++r) {
    const double tau = static_cast<double>(r) * stride / totalSteps;
    exponent[r] = -betaMin * tau - 0.5 * (betaMax - betaMin) * tau * tau;
  }
  s.alphaBar_.resize(n + 1);
  s.gamma_.resize(n + 1);
  s.alphaBar_[0] = 1.0;
  s.gamma_[0] = 0.0;
  for (int r = 1; r <= n; ++r) {
    s.alphaBar_[r] = std::exp(exponent[r]);
    // -expm1 keeps small step variances accurate.
    s.gamma_[r] = -std::expm1(exponent[r] - exponent[r - 1]);
  }
  return s;
}

void DiffusionSchedule::checkIndex(int r, int lo, int hi, const char* what) const {
  if (r < lo || r > hi) {
    throw ContractError(std::string(what) + ": step index " + std::to_string(r) + " outside [" +
                        std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
}

double DiffusionSchedule::gamma(int r) const {
  checkIndex(r, 0, steps(), "gamma");
  return gamma_[r];
}

double DiffusionSchedule::alpha(int r) const {
  checkIndex(r, 0, steps(), "alpha");
  return 1.0 - gamma_[r];
}

double DiffusionSchedule::alphaBar(int r) const {
  checkIndex(r, 0, steps(), "alphaBar");
  return alphaBar_[r];
}

PosteriorCoefficients DiffusionSchedule::posteriorCoefficients(int r) const {
  checkIndex(r, 0, steps() - 1, "posterior");
  const double abLow = alphaBar_[r];
  const double abHigh = alphaBar_[r + 1];
  const double g = gamma_[r + 1];
  const double denom = 1.0 - abHigh;
  PosteriorCoefficients c;
  c.x0Weight = std::sqrt(abLow) * g / denom;
  c.xNextWeight = std::sqrt(1.0 - g) * (1.0 - abLow) / denom;
  c.variance = (1.0 - abLow) / denom * g;
  return c;
}

torch::Tensor forward_diffuse(const DiffusionSchedule& schedule, const torch::Tensor& x0, int r,
                              const torch::Tensor& noise) {
  requireSameShape(x0, noise, "forward_diffuse");
  const double ab = schedule.alphaBar(r);
  if (r == 0) {
    return x0.clone();
  }
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * noise;
}

torch::Tensor forward_step(const DiffusionSchedule& schedule, const torch::Tensor& x, int r,
                           const torch::Tensor& noise) {
  requireSameShape(x, noise, "forward_step");
  if (r < 1) {
    throw ContractError("forward_step: target step must be >= 1");
  }
  const double g = schedule.gamma(r);
  return std::sqrt(1.0 - g) * x + std::sqrt(g) * noise;
}

torch::Tensor forward_diffuse(const DiffusionSchedule& schedule, const torch::Tensor& x0,
                              const std::vector<int>& r, const torch::Tensor& noise) {
  requireSameShape(x0, noise, "forward_diffuse");
  requireBatch(r, x0, "forward_diffuse");
  std::vector<double> signal(r.size()), spread(r.size());
  for (size_t i = 0; i < r.size(); ++i) {
    const double ab = schedule.alphaBar(r[i]);
    signal[i] = std::sqrt(ab);
    spread[i] = std::sqrt(1.0 - ab);
  }
  return batchScale(signal, x0) * x0 + batchScale(spread, x0) * noise;
}

torch::Tensor forward_step(const DiffusionSchedule& schedule, const torch::Tensor& x,
                           const std::vector<int>& r, const torch::Tensor& noise) {
  requireSameShape(x, noise, "forward_step");
  requireBatch(r, x, "forward_step");
  std::vector<double> keep(r.size()), spread(r.size());
  for (size_t i = 0; i < r.size(); ++i) {
    if (r[i] < 1) {
      throw ContractError("forward_step: target step must be >= 1");
    }
    const double g = schedule.gamma(r[i]);
    keep[i] = std::sqrt(1.0 - g);
    spread[i] = std::sqrt(g);
  }
  return batchScale(keep, x) * x + batchScale(spread, x) * noise;
}

Posterior posterior_params(const DiffusionSchedule& schedule, const torch::Tensor& x0Tilde,
                           const torch::Tensor& xNext, int r) {
  requireSameShape(x0Tilde, xNext, "posterior_params");
  const auto c = schedule.posteriorCoefficients(r);
  if (r == 0) {
    // alphaBar[0] = 1: the posterior collapses onto the clean estimate.
    return {x0Tilde.clone(), 0.0};
  }
  return {c.x0Weight * x0Tilde + c.xNextWeight * xNext, c.variance};
}

torch::Tensor sample_posterior(const torch::Tensor& mean, double variance, const torch::Tensor& noise) {
  if (variance < 0.0 || std::isnan(variance)) {
    throw ContractError("sample_posterior: negative variance");
  }
  requireSameShape(mean, noise, "sample_posterior");
  if (variance == 0.0) {
    return mean.clone();
  }
  return mean + std::sqrt(variance) * noise;
}

torch::Tensor sample_posterior(const DiffusionSchedule& schedule, const torch::Tensor& x0Tilde,
                               const torch::Tensor& xNext, const std::vector<int>& r,
                               const torch::Tensor& noise) {
  requireSameShape(x0Tilde, xNext, "sample_posterior");
  requireSameShape(x0Tilde, noise, "sample_posterior");
  requireBatch(r, x0Tilde, "sample_posterior");
  std::vector<double> w0(r.size()), wNext(r.size()), sd(r.size());
  for (size_t i = 0; i < r.size(); ++i) {
    const auto c = schedule.posteriorCoefficients(r[i]);
    if (r[i] == 0) {
      w0[i] = 1.0;
      wNext[i] = 0.0;
      sd[i] = 0.0;
    } else {
      w0[i] = c.x0Weight;
      wNext[i] = c.xNextWeight;
      sd[i] = std::sqrt(c.variance);
    }
  }
  return batchScale(w0, x0Tilde) * x0Tilde + batchScale(wNext, x0Tilde) * xNext +
         batchScale(sd, x0Tilde) * noise;
}

} // namespace adadiff
