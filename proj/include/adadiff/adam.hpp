#pragma once

#include <torch/torch.h>

#include <string>
#include <utility>
#include <vector>

namespace adadiff {

/// First-order adaptive-moment optimizer over a fixed, named parameter list.
///
/// Kept local (rather than torch::optim::Adam) so that the moment estimates
/// can be written into checkpoints by name and restored exactly.
class Adam {
public:
  struct Options {
    double learningRate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  Adam(std::vector<std::pair<std::string, torch::Tensor>> params, Options opts);

  void zeroGrad();
  void step();

  int64_t stepCount() const { return step_; }
  const Options& options() const { return opts_; }

  /// Moment tensors keyed "<param>/m" and "<param>/v", plus the step count.
  std::vector<std::pair<std::string, torch::Tensor>> state() const;
  void loadState(const std::vector<std::pair<std::string, torch::Tensor>>& state, int64_t stepCount);

private:
  std::vector<std::pair<std::string, torch::Tensor>> params_;
  std::vector<torch::Tensor> m_, v_;
  Options opts_;
  int64_t step_ = 0;
};

} // namespace adadiff
