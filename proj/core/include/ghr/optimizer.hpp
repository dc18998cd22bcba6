#pragma once

#include <vector>

#include "ghr/tensor.hpp"

namespace ghr {

// Adam with decoupled weight decay. Moment state is kept in float64 so
// update order is the only thing float32 rounding depends on.
class AdamW {
 public:
  struct Options {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
  };

  AdamW(std::vector<Tensor> params, Options options);
  // Marks which parameters receive weight decay (same order as params);
  // defaults to decay on rank >= 2 tensors only.
  AdamW(std::vector<Tensor> params, std::vector<bool> decay_mask, Options options);

  void step();
  void zero_grad();
  const Options& options() const { return options_; }

 private:
  std::vector<Tensor> params_;
  std::vector<bool> decay_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  Options options_;
  long t_ = 0;
};

}  // namespace ghr
