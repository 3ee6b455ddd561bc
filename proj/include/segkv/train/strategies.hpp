// SPDX-License-Identifier: Apache-2.0
//
// Gradient strategies for the segment language-modelling objective
//
//   J = sum_j J_j,   J_j = next-token loss on segment j given the compressed
//                          memories m_1..m_{j-1} of all earlier segments,
//
// with respect to the adapter parameters. Every strategy computes (or, for
// sparse, estimates) the same quantity:
//
//   dense                : one tape, one backward over everything. The oracle.
//   naive_incremental    : per loss J_j, a fresh forward+backward through the
//                          decoder and all j-1 encoders (quadratic encoder work).
//   decoder_incremental  : decoder-only backward per step; gradients reaching
//                          each memory accumulate in its relay node, and each
//                          encoder graph is backpropagated once at the end.
//   sparse               : decoder_incremental with at most S+1 encoder graphs
//                          alive; an eviction policy picks which memories keep
//                          receiving gradient, evicted ones are flushed early
//                          and thereafter stop-gradient.

#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "segkv/instrument/ledger.hpp"
#include "segkv/model/params.hpp"
#include "segkv/util/rng.hpp"

namespace segkv::train {

using Segment = std::vector<int>;
// Gradient buffers aligned with AdapterParams::flat().
using ThetaGrad = std::vector<ad::Buffer>;

ThetaGrad zero_grad(const model::AdapterParams& params);
double max_abs_diff(const ThetaGrad& a, const ThetaGrad& b);
double grad_norm(const ThetaGrad& g);
double cosine_similarity(const ThetaGrad& a, const ThetaGrad& b);
std::vector<double> flatten(const ThetaGrad& g);

enum class Strategy { dense, naive_incremental, decoder_incremental, sparse };
std::string_view to_string(Strategy s);
Strategy parse_strategy(std::string_view name);

struct EvictionPolicy {
  enum class Kind { local_window, random_oracle, reservoir };
  Kind kind = Kind::reservoir;
  std::size_t budget = 3;  // S
};
std::string_view to_string(EvictionPolicy::Kind k);
EvictionPolicy::Kind parse_policy(std::string_view name);

struct GradLedger {
  ThetaGrad theta_grad;
  instrument::PassCounters counters;
  instrument::CacheLedger caches;
  double loss = 0.0;  // sum of segment losses J_j (unscaled)
  // Times each segment's relay was flushed through its encoder graph.
  std::map<std::size_t, std::size_t> flushes;
  // Segment indices (1-based) retained at stream end by the sparse policy.
  std::vector<std::size_t> retained;
};

struct StepOptions {
  double loss_scale = 1.0;
};

ThetaGrad train_step_dense(const model::Model& model, std::span<const Segment> segments,
                           GradLedger& ledger, const StepOptions& opts = {});

ThetaGrad train_step_naive_incremental(const model::Model& model,
                                       std::span<const Segment> segments, GradLedger& ledger,
                                       const StepOptions& opts = {});

ThetaGrad train_step_decoder_incremental(const model::Model& model,
                                         std::span<const Segment> segments, GradLedger& ledger,
                                         const StepOptions& opts = {});

// `rng` drives the policy: one randint per eviction decision for the
// reservoir, a fresh subset per step for the random oracle, unused for the
// local window.
ThetaGrad train_step_sparse(const model::Model& model, std::span<const Segment> segments,
                            const EvictionPolicy& policy, Rng& rng, GradLedger& ledger,
                            const StepOptions& opts = {});

// Dispatch by strategy; `policy` and `rng` are only used by sparse.
ThetaGrad run_strategy(Strategy strategy, const model::Model& model,
                       std::span<const Segment> segments, const EvictionPolicy& policy, Rng& rng,
                       GradLedger& ledger, const StepOptions& opts = {});

}  // namespace segkv::train
