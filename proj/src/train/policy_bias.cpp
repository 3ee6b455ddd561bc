// SPDX-License-Identifier: Apache-2.0

#include "segkv/train/policy_bias.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace segkv::train {

BiasReport measure_policy_bias(const model::Model& model, std::span<const Segment> segments,
                               const EvictionPolicy& policy, std::size_t trials,
                               std::uint64_t seed) {
  if (trials < 100) {
    throw std::invalid_argument("measure_policy_bias: " + std::to_string(trials) +
                                " trials is too few to be meaningful (need >= 100)");
  }
  BiasReport r;
  r.policy = policy;
  r.trials = trials;
  {
    GradLedger ledger;
    r.dense = train_step_dense(model, segments, ledger);
  }
  r.mean_estimate = zero_grad(model.adapters);
  double cos_sum = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    Rng rng(stream_seed(seed, t));
    GradLedger ledger;
    const auto g = train_step_sparse(model, segments, policy, rng, ledger);
    cos_sum += cosine_similarity(g, r.dense);
    for (std::size_t p = 0; p < g.size(); ++p)
      for (std::size_t i = 0; i < g[p].size(); ++i) r.mean_estimate[p][i] += g[p][i];
  }
  const double inv = 1.0 / static_cast<double>(trials);
  r.mean_error = r.mean_estimate;
  for (std::size_t p = 0; p < r.mean_estimate.size(); ++p)
    for (std::size_t i = 0; i < r.mean_estimate[p].size(); ++i) {
      r.mean_estimate[p][i] *= inv;
      r.mean_error[p][i] = r.mean_estimate[p][i] - r.dense[p][i];
      r.max_abs_bias = std::max(r.max_abs_bias, std::abs(r.mean_error[p][i]));
    }
  r.mean_cosine = cos_sum * inv;
  r.cosine_of_mean = cosine_similarity(r.mean_estimate, r.dense);
  const double dn = grad_norm(r.dense);
  r.relative_bias = dn > 0.0 ? grad_norm(r.mean_error) / dn : 0.0;
  return r;
}

}  // namespace segkv::train
