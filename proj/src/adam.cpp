#include "adadiff/adam.hpp"

#include "adadiff/error.hpp"

#include <cmath>
#include <unordered_map>

namespace adadiff {

Adam::Adam(std::vector<std::pair<std::string, torch::Tensor>> params, Options opts)
    : params_(std::move(params)), opts_(opts) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (const auto& [name, p] : params_) {
    m_.push_back(torch::zeros_like(p).detach());
    v_.push_back(torch::zeros_like(p).detach());
  }
}

void Adam::zeroGrad() {
  for (auto& [name, p] : params_) {
    if (p.grad().defined()) {
      p.mutable_grad().detach_();
      p.mutable_grad().zero_();
    }
  }
}

void Adam::step() {
  torch::NoGradGuard guard;
  ++step_;
  const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(step_));
  const double stepSize = opts_.learningRate / c1;
  for (size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i].second;
    if (!p.grad().defined()) {
      continue;
    }
    const auto& g = p.grad();
    m_[i].mul_(opts_.beta1).add_(g, 1.0 - opts_.beta1);
    v_[i].mul_(opts_.beta2).addcmul_(g, g, 1.0 - opts_.beta2);
    auto denom = (v_[i] / c2).sqrt_().add_(opts_.eps);
    p.addcdiv_(m_[i], denom, -stepSize);
  }
}

std::vector<std::pair<std::string, torch::Tensor>> Adam::state() const {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  out.reserve(2 * params_.size());
  for (size_t i = 0; i < params_.size(); ++i) {
    out.emplace_back(params_[i].first + "/m", m_[i].clone());
    out.emplace_back(params_[i].first + "/v", v_[i].clone());
  }
  return out;
}

void Adam::loadState(const std::vector<std::pair<std::string, torch::Tensor>>& state, int64_t stepCount) {
  std::unordered_map<std::string, torch::Tensor> byName(state.begin(), state.end());
  for (size_t i = 0; i < params_.size(); ++i) {
    const auto m = byName.find(params_[i].first + "/m");
    const auto v = byName.find(params_[i].first + "/v");
    if (m == byName.end() || v == byName.end()) {
      throw DataError("optimizer state is missing moments for '" + params_[i].first + "'");
    }
    if (!m->second.sizes().equals(m_[i].sizes()) || !v->second.sizes().equals(v_[i].sizes())) {
      throw DataError("optimizer state shape mismatch for '" + params_[i].first + "'");
    }
    m_[i] = m->second.to(m_[i].scalar_type()).clone();
    v_[i] = v->second.to(v_[i].scalar_type()).clone();
  }
  step_ = stepCount;
}

} // namespace adadiff
