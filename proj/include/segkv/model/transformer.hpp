// SPDX-License-Identifier: Apache-2.0
//
// Forward paths of the miniature transformer:
//   encoder   : segment tokens + c latent tokens -> per-layer latent hiddens
//   projector : per-layer latent hiddens -> per-layer (K, V) blocks of c rows
//   decoder   : live tokens attending over a KV cache of compressed blocks
//
// All paths run on whatever tape their inputs are attached to. Passing
// adapters attached to a tape makes the result differentiable in them.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "segkv/autodiff/tensor.hpp"
#include "segkv/model/params.hpp"

namespace segkv::model {

// Final hidden states of a segment's latent positions: the segment's summary.
struct LatentSummary {
  std::size_t segment_index = 0;
  Tensor values;  // (c, d)
};

struct EncoderOutput {
  LatentSummary summary;
  std::vector<Tensor> layer_latents;  // one (c, d) block per layer
};

// Per-layer key/value blocks for one compressed segment.
struct SegmentKV {
  std::vector<Tensor> keys;    // L x (c, d)
  std::vector<Tensor> values;  // L x (c, d)

  // keys then values, layer-major; the tensors a decoder reads.
  std::vector<Tensor> flat() const;
  static SegmentKV from_flat(std::span<const Tensor> flat);
};

// Keys/values are stored before rotary encoding; the decoder assigns cache
// row e the absolute position e.
struct KVCache {
  std::vector<Tensor> keys;    // L x (entries, d)
  std::vector<Tensor> values;  // L x (entries, d)
  std::size_t entry_count = 0;

  static KVCache empty(const ModelConfig& cfg);
};

struct DecoderOutput {
  Tensor logits;  // (T, vocab)
  Tensor loss;    // scalar
};

// Encodes 1..l tokens followed by the c latent tokens. Token ids must be
// below the vocabulary size.
EncoderOutput encode_tokens(const Model& model, const AdapterParams& adapters,
                            std::span<const int> tokens);

// encode_tokens restricted to a full segment of exactly l tokens.
EncoderOutput encode_segment(const Model& model, const AdapterParams& adapters,
                             std::span<const int> tokens, std::size_t segment_index = 0);

// Base K/V projections of each layer plus the low-rank projector deltas.
SegmentKV project_kv(const Model& model, const AdapterParams& adapters,
                     std::span<const Tensor> layer_latents);

// Concatenates blocks in order. Blocks must share layer count and width.
KVCache concat_cache(const ModelConfig& cfg, std::span<const SegmentKV> blocks);
KVCache append_cache(const KVCache& cache, const SegmentKV& block);

// Runs the frozen decoder over `tokens` with `cache` occupying the preceding
// positions. `targets` is aligned with `tokens` (negative = not scored).
DecoderOutput decoder_forward(const Model& model, std::span<const int> tokens,
                              const KVCache& cache, std::span<const int> targets);

// Next-token targets for `tokens`: row t predicts tokens[t + 1]; last row unscored.
std::vector<int> next_token_targets(std::span<const int> tokens);

}  // namespace segkv::model
