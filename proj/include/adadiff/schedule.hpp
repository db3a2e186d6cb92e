#pragma once

#include <torch/torch.h>

#include <vector>

namespace adadiff {

/// Closed-form Gaussian posterior q(x_t | x_{t+k}, x0) written as
/// mean = x0Weight * x0 + xNextWeight * x_{t+k}, with scalar variance.
struct PosteriorCoefficients {
  double x0Weight = 0.0;
  double xNextWeight = 0.0;
  double variance = 0.0;
};

struct Posterior {
  torch::Tensor mean;
  double variance = 0.0;
};

/// Strided variance-preserving noise schedule.
///
/// Strided steps are indexed r = 0..steps(), where r corresponds to the
/// diffusion time t = r * stride. Index 0 is the clean image: gamma(0) = 0,
/// alphaBar(0) = 1. The cumulative signal level follows the continuous
/// variance-preserving curve
///
///   alphaBar(tau) = exp(-betaMin * tau - 0.5 * (betaMax - betaMin) * tau^2),  tau = r * stride / T
///
/// and the per-step variance is gamma(r) = 1 - alphaBar(r) / alphaBar(r - 1).
class DiffusionSchedule {
public:
  static constexpr double kDefaultBetaMin = 0.1;
  static constexpr double kDefaultBetaMax = 20.0;

  DiffusionSchedule() = default;

  int totalSteps() const { return total_; }
  int stride() const { return stride_; }
  int steps() const { return static_cast<int>(alphaBar_.size()) - 1; }
  double betaMin() const { return betaMin_; }
  double betaMax() const { return betaMax_; }

  double gamma(int r) const;
  double alpha(int r) const;
  double alphaBar(int r) const;
  /// Diffusion time index t = r * stride fed to the networks.
  long timeIndex(int r) const { return static_cast<long>(r) * stride_; }

  const std::vector<double>& gammas() const { return gamma_; }
  const std::vector<double>& alphaBars() const { return alphaBar_; }

  /// Posterior coefficients for the lower step r (transition r -> r + 1).
  PosteriorCoefficients posteriorCoefficients(int r) const;

  friend DiffusionSchedule make_schedule(int, int, double, double);

private:
  void checkIndex(int r, int lo, int hi, const char* what) const;

  int total_ = 0;
  int stride_ = 1;
  double betaMin_ = kDefaultBetaMin;
  double betaMax_ = kDefaultBetaMax;
  std::vector<double> gamma_;
  std::vector<double> alphaBar_;
};

/// Throws ConfigError when T is not a multiple of k or betaMin >= betaMax.
DiffusionSchedule make_schedule(int totalSteps, int stride,
                                double betaMin = DiffusionSchedule::kDefaultBetaMin,
                                double betaMax = DiffusionSchedule::kDefaultBetaMax);

/// x_r = sqrt(alphaBar[r]) x0 + sqrt(1 - alphaBar[r]) noise.
torch::Tensor forward_diffuse(const DiffusionSchedule& schedule, const torch::Tensor& x0, int r,
                              const torch::Tensor& noise);

/// One strided hop into step r: sqrt(alpha[r]) x + sqrt(gamma[r]) noise.
torch::Tensor forward_step(const DiffusionSchedule& schedule, const torch::Tensor& x, int r,
                           const torch::Tensor& noise);

/// Batched variants: r holds one step index per leading-dimension element.
torch::Tensor forward_diffuse(const DiffusionSchedule& schedule, const torch::Tensor& x0,
                              const std::vector<int>& r, const torch::Tensor& noise);
torch::Tensor forward_step(const DiffusionSchedule& schedule, const torch::Tensor& x,
                           const std::vector<int>& r, const torch::Tensor& noise);

/// Posterior of x_t given x_{t+k} and a clean-image estimate; r indexes the lower step.
Posterior posterior_params(const DiffusionSchedule& schedule, const torch::Tensor& x0Tilde,
                           const torch::Tensor& xNext, int r);

/// mean + sqrt(var) * noise. Throws ContractError for var < 0.
torch::Tensor sample_posterior(const torch::Tensor& mean, double variance, const torch::Tensor& noise);

/// Batched posterior sample; r indexes the lower step per element.
torch::Tensor sample_posterior(const DiffusionSchedule& schedule, const torch::Tensor& x0Tilde,
                               const torch::Tensor& xNext, const std::vector<int>& r,
                               const torch::Tensor& noise);

} // namespace adadiff
