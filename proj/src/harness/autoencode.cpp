// SPDX-License-Identifier: Apache-2.0

#include "segkv/harness/autoencode.hpp"

#include <stdexcept>

#include "segkv/autodiff/ops.hpp"
#include "segkv/autodiff/tape.hpp"
#include "segkv/pipeline/pipeline.hpp"

namespace segkv::harness {

AutoencodeBatch make_autoencode_batch(std::span<const int> tokens, const model::ModelConfig& cfg) {
  if (tokens.empty()) throw std::invalid_argument("autoencode: empty sequence");
  const auto stream = pipeline::segment_input(tokens, cfg.segment_len);
  AutoencodeBatch b;
  b.context = stream.segments;
  if (!stream.residual.empty()) b.context.push_back(stream.residual);
  b.length = tokens.size();
  b.decoder_input.push_back(cfg.repeat_id());
  b.decoder_input.insert(b.decoder_input.end(), tokens.begin(), tokens.end());
  b.targets.assign(tokens.begin(), tokens.end());
  b.targets.push_back(-1);
  return b;
}

model::KVCache autoencode_cache(const model::Model& model, const model::AdapterParams& adapters,
                                const AutoencodeBatch& batch) {
  std::vector<model::SegmentKV> blocks;
  blocks.reserve(batch.context.size());
  for (const auto& seg : batch.context) {
    const auto enc = model::encode_tokens(model, adapters, seg);
    blocks.push_back(model::project_kv(model, adapters, enc.layer_latents));
  }
  return model::concat_cache(model.config, blocks);
}

ad::Tensor autoencode_loss(const model::Model& model, const model::AdapterParams& adapters,
                           const AutoencodeBatch& batch) {
  const auto cache = autoencode_cache(model, adapters, batch);
  return model::decoder_forward(model, batch.decoder_input, cache, batch.targets).loss;
}

AutoencodeGrad autoencode_gradient(const model::Model& model,
                                   std::span<const AutoencodeBatch> batches) {
  AutoencodeGrad out;
  const double inv = batches.empty() ? 0.0 : 1.0 / static_cast<double>(batches.size());
  for (const auto& p : model.adapters.flat()) out.grad.emplace_back(p.numel(), 0.0);
  for (const auto& b : batches) {
    ad::Tape tape;
    const auto theta = model.adapters.attach(tape);
    const ad::Tensor loss = autoencode_loss(model, theta, b);
    out.loss += loss.item() * inv;
    if (!loss.attached()) continue;
    const auto g = tape.backward(ad::scale(loss, inv), theta.flat());
    for (std::size_t p = 0; p < g.size(); ++p)
      for (std::size_t n = 0; n < g[p].size(); ++n) out.grad[p][n] += g[p][n];
  }
  return out;
}

std::vector<int> reconstruct(const model::Model& model, const AutoencodeBatch& batch) {
  const auto cache = autoencode_cache(model, model.adapters, batch);
  std::vector<int> input = {model.config.repeat_id()};
  std::vector<int> produced;
  produced.reserve(batch.length);
  while (produced.size() < batch.length) {
    const std::vector<int> unscored(input.size(), -1);
    const auto out = model::decoder_forward(model, input, cache, unscored);
    const int tok = pipeline::greedy_token(out.logits, model.config.byte_vocab);
    produced.push_back(tok);
    input.push_back(tok);
  }
  return produced;
}

double exact_match(std::span<const int> produced, std::span<const int> reference) {
  if (reference.empty()) return 1.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < reference.size() && i < produced.size(); ++i)
    if (produced[i] == reference[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(reference.size());
}

double reconstruction_exact_match(const model::Model& model, std::span<const AutoencodeBatch> batches) {
  if (batches.empty()) return 0.0;
  double total = 0.0;
  for (const auto& b : batches) {
    const std::span<const int> reference(b.decoder_input.data() + 1, b.length);
    total += exact_match(reconstruct(model, b), reference);
  }
  return total / static_cast<double>(batches.size());
}

}  // namespace segkv::harness
