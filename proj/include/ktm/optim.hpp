#pragma once

#include <cstdint>
#include <vector>

#include "ktm/tensor.hpp"

namespace ktm {

struct AdamOptions {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam over a fixed parameter list. Gradients are read, not
// cleared; call zero_grad() afterwards.
class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, AdamOptions options = {});

  void step();
  void zero_grad();

  std::int64_t steps() const { return step_; }
  const AdamOptions& options() const { return options_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> first_moment_;
  std::vector<std::vector<double>> second_moment_;
  AdamOptions options_;
  std::int64_t step_ = 0;
};

}  // namespace ktm
