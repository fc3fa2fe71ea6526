#pragma once

#include <vector>

#include "trajpred/params.hpp"

namespace trajpred::num {

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Moment accumulators are laid out parallel to the
// parameter store; the step counter is shared by all parameters.
class Adam {
 public:
  Adam(const ParamStore& params, AdamConfig cfg = {});

  // Applies one update in place. Throws NumericError naming the parameter if
  // a gradient is non-finite.
  void step(ParamStore& params, const GradStore& grads);

  long step_count() const { return step_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  long step_ = 0;
};

}  // namespace trajpred::num
