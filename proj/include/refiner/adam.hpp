#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "refiner/tensor.hpp"

namespace refiner {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Named handle to a trainable tensor owned elsewhere.
struct ParamRef {
  std::string name;
  Tensor* tensor = nullptr;
};

// Bias-corrected ADAM. Moment accumulators mirror the parameter shapes and
// the step counter advances exactly once per step() call.
class AdamState {
 public:
  AdamState(const std::vector<ParamRef>& params, AdamConfig config);

  // In-place update; grads must align with the parameter list used at
  // construction. Throws NumericError naming the parameter if its gradient
  // is non-finite.
  void step(const std::vector<ParamRef>& params,
            const std::vector<Tensor>& grads);

  std::int64_t step_count() const { return step_; }
  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::int64_t step_ = 0;
};

}  // namespace refiner
