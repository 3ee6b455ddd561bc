// SPDX-License-Identifier: Apache-2.0
//
// Monte-Carlo comparison of sparse gradient estimates against the dense
// gradient on a configuration small enough for the dense oracle.

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

#include "segkv/model/params.hpp"
#include "segkv/train/strategies.hpp"

namespace segkv::train {

struct BiasReport {
  EvictionPolicy policy;
  std::size_t trials = 0;
  ThetaGrad dense;
  ThetaGrad mean_estimate;
  ThetaGrad mean_error;          // per parameter: mean(estimate) - dense
  double cosine_of_mean = 0.0;   // cos(mean estimate, dense)
  double mean_cosine = 0.0;      // mean over trials of cos(estimate, dense)
  double relative_bias = 0.0;    // |mean error| / |dense|
  double max_abs_bias = 0.0;
};

// Trial t uses Rng(stream_seed(seed, t)). Throws for trials < 100.
BiasReport measure_policy_bias(const model::Model& model, std::span<const Segment> segments,
                               const EvictionPolicy& policy, std::size_t trials,
                               std::uint64_t seed);

}  // namespace segkv::train
