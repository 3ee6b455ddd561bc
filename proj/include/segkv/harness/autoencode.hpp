// SPDX-License-Identifier: Apache-2.0
//
// Auto-encoding task: compress a sequence into the cache, then ask the frozen
// decoder to reproduce it after a <repeat> trigger.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "segkv/autodiff/tensor.hpp"
#include "segkv/model/params.hpp"
#include "segkv/model/transformer.hpp"

namespace segkv::harness {

struct AutoencodeBatch {
  std::vector<std::vector<int>> context;  // full segments, then the residual if any
  std::vector<int> decoder_input;         // <repeat> followed by the original tokens
  std::vector<int> targets;               // original tokens, then -1 for the final row
  std::size_t length = 0;                 // original token count
};

// Throws std::invalid_argument for an empty sequence.
AutoencodeBatch make_autoencode_batch(std::span<const int> tokens, const model::ModelConfig& cfg);

// Cache for the batch context under `adapters`: every full segment plus the
// compressed residual.
model::KVCache autoencode_cache(const model::Model& model, const model::AdapterParams& adapters,
                                const AutoencodeBatch& batch);

// Reconstruction loss; differentiable in `adapters` when they are attached.
ad::Tensor autoencode_loss(const model::Model& model, const model::AdapterParams& adapters,
                           const AutoencodeBatch& batch);

// Gradient of the loss over `batches` (mean) with respect to the adapters.
struct AutoencodeGrad {
  std::vector<ad::Buffer> grad;
  double loss = 0.0;
};
AutoencodeGrad autoencode_gradient(const model::Model& model,
                                   std::span<const AutoencodeBatch> batches);

// Greedy reconstruction: starting from <repeat>, emit `length` byte tokens,
// each conditioned on the compressed context and the tokens emitted so far.
std::vector<int> reconstruct(const model::Model& model, const AutoencodeBatch& batch);

// Fraction of positions where `produced` equals `reference` (over the
// reference length; missing positions count as misses).
double exact_match(std::span<const int> produced, std::span<const int> reference);

// Mean exact-match of greedy reconstructions over `batches`.
double reconstruction_exact_match(const model::Model& model, std::span<const AutoencodeBatch> batches);

}  // namespace segkv::harness
