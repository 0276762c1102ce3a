#include "refiner/adam.hpp"

#include <cmath>
#include <stdexcept>

#include "refiner/errors.hpp"

namespace refiner {

AdamState::AdamState(const std::vector<ParamRef>& params, AdamConfig config)
    : config_(config) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const ParamRef& p : params) {
    m_.push_back(Tensor::zeros(p.tensor->shape));
    v_.push_back(Tensor::zeros(p.tensor->shape));
  }
}

void AdamState::step(const std::vector<ParamRef>& params,
                     const std::vector<Tensor>& grads) {
  if (params.size() != m_.size() || grads.size() != m_.size()) {
    throw std::invalid_argument("adam step: parameter/gradient count mismatch");
  }
  ++step_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(step_));
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& w = *params[p].tensor;
    const Tensor& g = grads[p];
    if (!w.same_shape(g) || !w.same_shape(m_[p])) {
      throw std::invalid_argument("adam step: shape mismatch for parameter " +
                                  params[p].name);
    }
    if (!g.all_finite()) {
      throw NumericError("non-finite gradient for parameter " + params[p].name);
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g.data[i];
      m_[p].data[i] = config_.beta1 * m_[p].data[i] + (1.0 - config_.beta1) * gi;
      v_[p].data[i] = config_.beta2 * v_[p].data[i] + (1.0 - config_.beta2) * gi * gi;
      const double mhat = m_[p].data[i] / bc1;
      const double vhat = v_[p].data[i] / bc2;
      w.data[i] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
    }
  }
}

}  // namespace refiner
