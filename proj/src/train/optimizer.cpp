// SPDX-License-Identifier: Apache-2.0

#include "segkv/train/optimizer.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace segkv::train {

void Sgd::step(model::AdapterParams& params, const ThetaGrad& grad, double lr) {
  auto values = params.flat();
  std::vector<ad::Buffer> next;
  next.reserve(values.size());
  for (std::size_t p = 0; p < values.size(); ++p) {
    ad::Buffer v(values[p].values().begin(), values[p].values().end());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] -= lr * grad[p][i];
    next.push_back(std::move(v));
  }
  params.assign(next);
}

void AdamW::step(model::AdapterParams& params, const ThetaGrad& grad, double lr) {
  auto values = params.flat();
  if (m_.empty()) {
    m_ = zero_grad(params);
    v_ = zero_grad(params);
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  std::vector<ad::Buffer> next;
  next.reserve(values.size());
  for (std::size_t p = 0; p < values.size(); ++p) {
    ad::Buffer w(values[p].values().begin(), values[p].values().end());
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double g = grad[p][i];
      m_[p][i] = beta1_ * m_[p][i] + (1.0 - beta1_) * g;
      v_[p][i] = beta2_ * v_[p][i] + (1.0 - beta2_) * g * g;
      const double mhat = m_[p][i] / c1, vhat = v_[p][i] / c2;
      w[i] -= lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * w[i]);
    }
    next.push_back(std::move(w));
  }
  params.assign(next);
}

std::unique_ptr<Optimizer> make_optimizer(std::string_view name, double weight_decay) {
  if (name == "sgd") return std::make_unique<Sgd>();
  if (name == "adamw") return std::make_unique<AdamW>(0.9, 0.999, 1e-8, weight_decay);
  throw std::invalid_argument("unknown optimizer '" + std::string(name) + "'");
}

double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr,
                 std::size_t warmup_steps, double min_ratio) {
  if (warmup_steps > 0 && step < warmup_steps) {
    return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  }
  if (total_steps <= warmup_steps) return base_lr;
  const double progress = std::min(
      1.0, static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps));
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  return base_lr * (min_ratio + (1.0 - min_ratio) * cosine);
}

}  // namespace segkv::train
