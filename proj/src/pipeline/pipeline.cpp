// SPDX-License-Identifier: Apache-2.0

#include "segkv/pipeline/pipeline.hpp"

#include <stdexcept>
#include <string>

namespace segkv::pipeline {

std::vector<int> SegmentStream::concatenated() const {
  std::vector<int> out;
  for (const auto& s : segments) out.insert(out.end(), s.begin(), s.end());
  out.insert(out.end(), residual.begin(), residual.end());
  return out;
}

SegmentStream segment_input(std::span<const int> tokens, std::size_t segment_len) {
  if (segment_len == 0) throw std::invalid_argument("segment_input: segment length must be >= 1");
  SegmentStream s;
  const std::size_t k = tokens.size() / segment_len;
  for (std::size_t i = 0; i < k; ++i) {
    const auto first = tokens.begin() + static_cast<std::ptrdiff_t>(i * segment_len);
    s.segments.emplace_back(first, first + static_cast<std::ptrdiff_t>(segment_len));
  }
  s.residual.assign(tokens.begin() + static_cast<std::ptrdiff_t>(k * segment_len), tokens.end());
  return s;
}

PrefillResult prefill(const model::Model& model, const SegmentStream& stream) {
  PrefillResult r;
  std::vector<model::SegmentKV> blocks;
  blocks.reserve(stream.segments.size());
  for (std::size_t i = 0; i < stream.segments.size(); ++i) {
    auto enc = model::encode_segment(model, model.adapters, stream.segments[i], i + 1);
    blocks.push_back(model::project_kv(model, model.adapters, enc.layer_latents));
    r.summaries.push_back(std::move(enc.summary));
  }
  r.cache = model::concat_cache(model.config, blocks);
  return r;
}

model::SegmentKV compress_residual(const model::Model& model, std::span<const int> residual) {
  if (residual.empty()) throw std::invalid_argument("compress_residual: empty residual");
  if (residual.size() >= model.config.segment_len) {
    throw std::invalid_argument("compress_residual: residual of " + std::to_string(residual.size()) +
                                " tokens is not shorter than the segment length");
  }
  const auto enc = model::encode_tokens(model, model.adapters, residual);
  return model::project_kv(model, model.adapters, enc.layer_latents);
}

GenerationState start_generation(const model::Model& model, std::span<const int> prompt) {
  const auto stream = segment_input(prompt, model.config.segment_len);
  GenerationState st;
  st.cache = prefill(model, stream).cache;
  st.segments_compressed = stream.segments.size();
  st.pending = stream.residual;
  if (!prompt.empty()) st.last_token = prompt.back();
  return st;
}

int greedy_token(const ad::Tensor& logits, std::size_t limit) {
  const std::size_t vocab = logits.cols();
  const std::size_t n = std::min(limit, vocab);
  const double* row = logits.data() + (logits.rows() - 1) * vocab;
  std::size_t best = 0;
  for (std::size_t v = 1; v < n; ++v)
    if (row[v] > row[best]) best = v;
  return static_cast<int>(best);
}

StepResult generate_step(GenerationState& state, const model::Model& model) {
  const auto& cfg = model.config;
  std::vector<int> query = state.pending;
  if (query.empty()) query.push_back(state.last_token >= 0 ? state.last_token : cfg.repeat_id());
  const std::vector<int> unscored(query.size(), -1);
  const auto out = model::decoder_forward(model, query, state.cache, unscored);

  StepResult r;
  r.token = greedy_token(out.logits, cfg.byte_vocab);
  state.pending.push_back(r.token);
  state.produced.push_back(r.token);
  state.last_token = r.token;
  if (state.pending.size() == cfg.segment_len) {
    const auto enc = model::encode_segment(model, model.adapters, state.pending,
                                           state.segments_compressed + 1);
    state.cache = model::append_cache(state.cache,
                                      model::project_kv(model, model.adapters, enc.layer_latents));
    ++state.segments_compressed;
    ++state.compression_events;
    state.pending.clear();
    r.compressed = true;
  }
  return r;
}

}  // namespace segkv::pipeline
