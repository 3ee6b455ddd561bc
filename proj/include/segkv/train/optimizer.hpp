// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <memory>
#include <string_view>

#include "segkv/model/params.hpp"
#include "segkv/train/strategies.hpp"

namespace segkv::train {

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual void step(model::AdapterParams& params, const ThetaGrad& grad, double lr) = 0;
};

class Sgd final : public Optimizer {
 public:
  void step(model::AdapterParams& params, const ThetaGrad& grad, double lr) override;
};

// Adam with decoupled weight decay.
class AdamW final : public Optimizer {
 public:
  AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8, double weight_decay = 0.0)
      : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

  void step(model::AdapterParams& params, const ThetaGrad& grad, double lr) override;

 private:
  double beta1_, beta2_, eps_, weight_decay_;
  std::size_t t_ = 0;
  ThetaGrad m_, v_;
};

std::unique_ptr<Optimizer> make_optimizer(std::string_view name, double weight_decay);

// Linear warmup, then cosine decay from base_lr to min_ratio * base_lr.
double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr,
                 std::size_t warmup_steps = 0, double min_ratio = 0.1);

}  // namespace segkv::train
