// SPDX-License-Identifier: Apache-2.0
//
// Inference-time state machine: partition the context into full segments,
// compress each into c cache entries per layer, and keep compressing as
// generation fills the live residual up to a full segment.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "segkv/model/params.hpp"
#include "segkv/model/transformer.hpp"

namespace segkv::pipeline {

struct SegmentStream {
  std::vector<std::vector<int>> segments;  // each exactly l tokens
  std::vector<int> residual;               // fewer than l tokens, possibly empty

  // Segments followed by the residual: the original sequence.
  std::vector<int> concatenated() const;
};

// k = floor(n / l) full segments; the remainder becomes the residual.
SegmentStream segment_input(std::span<const int> tokens, std::size_t segment_len);

struct PrefillResult {
  model::KVCache cache;
  std::vector<model::LatentSummary> summaries;  // indices 1..k
};

// Compresses every full segment of `stream`, in order. The residual is left
// untouched.
PrefillResult prefill(const model::Model& model, const SegmentStream& stream);

// Compresses 0 < n < l tokens through the same latent-append path.
model::SegmentKV compress_residual(const model::Model& model, std::span<const int> residual);

struct GenerationState {
  model::KVCache cache;
  std::vector<int> pending;   // live residual, always shorter than l between steps
  std::vector<int> produced;  // generated tokens
  std::size_t segments_compressed = 0;
  std::size_t compression_events = 0;  // compressions fired during generation
  int last_token = -1;                 // most recent context or generated token
};

// Prefills the full segments of `prompt`; the residual becomes `pending`.
GenerationState start_generation(const model::Model& model, std::span<const int> prompt);

struct StepResult {
  int token = 0;
  bool compressed = false;
};

// Greedy step over byte ids. The query is the live residual; right after a
// compression (empty residual) the last token is re-read as a one-token query
// so the new position still has something to attend from.
StepResult generate_step(GenerationState& state, const model::Model& model);

// Greedy argmax over ids [0, limit) of the final row of `logits`.
int greedy_token(const ad::Tensor& logits, std::size_t limit);

}  // namespace segkv::pipeline
