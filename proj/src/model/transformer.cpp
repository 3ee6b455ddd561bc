// SPDX-License-Identifier: Apache-2.0

#include "segkv/model/transformer.hpp"

#include <numeric>
#include <string>

#include "segkv/autodiff/ops.hpp"

namespace segkv::model {

namespace {

using namespace segkv::ad;

std::vector<std::size_t> iota_positions(std::size_t begin, std::size_t count) {
  std::vector<std::size_t> p(count);
  std::iota(p.begin(), p.end(), begin);
  return p;
}

Tensor low_rank(const Tensor& x, const Tensor& a, const Tensor& b, double scale_factor) {
  return ad::scale(matmul(matmul(x, a), b), scale_factor);
}

Tensor mlp(const LayerWeights& w, const Tensor& h) {
  const Tensor n = layer_norm(h, w.ln2_gain, w.ln2_bias);
  return add(matmul(gelu(add(matmul(n, w.w1), w.b1)), w.w2), w.b2);
}

void check_tokens(const ModelConfig& cfg, std::span<const int> tokens, const char* where) {
  for (int t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= cfg.vocab_size()) {
      throw ShapeError(std::string(where) + ": token id " + std::to_string(t) +
                       " out of range for vocabulary of " + std::to_string(cfg.vocab_size()));
    }
  }
}

}  // namespace

std::vector<Tensor> SegmentKV::flat() const {
  std::vector<Tensor> out;
  out.reserve(keys.size() * 2);
  out.insert(out.end(), keys.begin(), keys.end());
  out.insert(out.end(), values.begin(), values.end());
  return out;
}

SegmentKV SegmentKV::from_flat(std::span<const Tensor> flat) {
  if (flat.size() % 2 != 0) throw ShapeError("SegmentKV: odd number of tensors");
  const std::size_t layers = flat.size() / 2;
  SegmentKV kv;
  kv.keys.assign(flat.begin(), flat.begin() + static_cast<std::ptrdiff_t>(layers));
  kv.values.assign(flat.begin() + static_cast<std::ptrdiff_t>(layers), flat.end());
  return kv;
}

KVCache KVCache::empty(const ModelConfig& cfg) {
  KVCache c;
  c.keys.assign(cfg.layers, Tensor::zeros({0, cfg.d_model}));
  c.values.assign(cfg.layers, Tensor::zeros({0, cfg.d_model}));
  return c;
}

EncoderOutput encode_tokens(const Model& model, const AdapterParams& adapters,
                            std::span<const int> tokens) {
  const ModelConfig& cfg = model.config;
  if (tokens.empty()) throw ShapeError("encode: empty token sequence");
  if (tokens.size() > cfg.segment_len) {
    throw ShapeError("encode: " + std::to_string(tokens.size()) + " tokens exceed segment length " +
                     std::to_string(cfg.segment_len));
  }
  check_tokens(cfg, tokens, "encode");
  if (adapters.layers.size() != cfg.layers) throw ShapeError("encode: adapter layer count mismatch");

  const std::size_t n_tok = tokens.size(), c = cfg.latent_count;
  const Tensor parts[] = {embedding(model.base.token_embedding, tokens), adapters.latent_embedding};
  Tensor h = concat(parts, 0);
  const auto positions = iota_positions(0, n_tok + c);

  EncoderOutput out;
  out.layer_latents.reserve(cfg.layers);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const LayerWeights& w = model.base.layers[l];
    const LayerAdapters& a = adapters.layers[l];
    const Tensor x = layer_norm(h, w.ln1_gain, w.ln1_bias);
    Tensor q = add(matmul(x, w.wq), low_rank(x, a.q_a, a.q_b, cfg.adapter_scale));
    Tensor k = matmul(x, w.wk);
    const Tensor v = add(matmul(x, w.wv), low_rank(x, a.v_a, a.v_b, cfg.adapter_scale));
    q = rope(q, cfg.heads, positions, cfg.rope_base);
    k = rope(k, cfg.heads, positions, cfg.rope_base);
    h = add(h, matmul(attention(q, k, v, cfg.heads, 0), w.wo));
    h = add(h, mlp(w, h));
    out.layer_latents.push_back(slice_rows(h, n_tok, c));
  }
  out.summary.values = out.layer_latents.back();
  return out;
}

EncoderOutput encode_segment(const Model& model, const AdapterParams& adapters,
                             std::span<const int> tokens, std::size_t segment_index) {
  if (tokens.size() != model.config.segment_len) {
    throw ShapeError("encode_segment: expected " + std::to_string(model.config.segment_len) +
                     " tokens, got " + std::to_string(tokens.size()));
  }
  EncoderOutput out = encode_tokens(model, adapters, tokens);
  out.summary.segment_index = segment_index;
  return out;
}

SegmentKV project_kv(const Model& model, const AdapterParams& adapters,
                     std::span<const Tensor> layer_latents) {
  const ModelConfig& cfg = model.config;
  if (layer_latents.size() != cfg.layers) {
    throw ShapeError("project_kv: " + std::to_string(layer_latents.size()) +
                     " latent blocks for a " + std::to_string(cfg.layers) + "-layer model");
  }
  SegmentKV kv;
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const LayerWeights& w = model.base.layers[l];
    const LayerAdapters& a = adapters.layers[l];
    const Tensor x = layer_norm(layer_latents[l], w.ln1_gain, w.ln1_bias);
    kv.keys.push_back(add(matmul(x, w.wk), low_rank(x, a.proj_k_a, a.proj_k_b, cfg.adapter_scale)));
    kv.values.push_back(add(matmul(x, w.wv), low_rank(x, a.proj_v_a, a.proj_v_b, cfg.adapter_scale)));
  }
  return kv;
}

KVCache concat_cache(const ModelConfig& cfg, std::span<const SegmentKV> blocks) {
  KVCache cache = KVCache::empty(cfg);
  if (blocks.empty()) return cache;
  const std::size_t rows = blocks.front().keys.empty() ? 0 : blocks.front().keys.front().rows();
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const SegmentKV& kv = blocks[b];
    if (kv.keys.size() != cfg.layers || kv.values.size() != cfg.layers) {
      throw ShapeError("concat_cache: block " + std::to_string(b) + " has " +
                       std::to_string(kv.keys.size()) + " layers, expected " +
                       std::to_string(cfg.layers));
    }
    for (std::size_t l = 0; l < cfg.layers; ++l) {
      const Shape want{rows, cfg.d_model};
      if (kv.keys[l].shape() != want || kv.values[l].shape() != want) {
        throw ShapeError("concat_cache: block " + std::to_string(b) + " layer " + std::to_string(l) +
                         " has shape " + shape_str(kv.keys[l].shape()) + ", expected " +
                         shape_str(want));
      }
    }
  }
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    std::vector<Tensor> ks, vs;
    for (const auto& kv : blocks) {
      ks.push_back(kv.keys[l]);
      vs.push_back(kv.values[l]);
    }
    cache.keys[l] = concat(ks, 0);
    cache.values[l] = concat(vs, 0);
  }
  cache.entry_count = rows * blocks.size();
  return cache;
}

KVCache append_cache(const KVCache& cache, const SegmentKV& block) {
  if (block.keys.size() != cache.keys.size() || block.values.size() != cache.values.size()) {
    throw ShapeError("append_cache: layer count mismatch");
  }
  KVCache out;
  for (std::size_t l = 0; l < cache.keys.size(); ++l) {
    if (block.keys[l].rank() != 2 || block.keys[l].cols() != cache.keys[l].cols() ||
        block.values[l].shape() != block.keys[l].shape()) {
      throw ShapeError("append_cache: block shape " + shape_str(block.keys[l].shape()) +
                       " incompatible with cache " + shape_str(cache.keys[l].shape()));
    }
    const Tensor ks[] = {cache.keys[l], block.keys[l]};
    const Tensor vs[] = {cache.values[l], block.values[l]};
    out.keys.push_back(concat(ks, 0));
    out.values.push_back(concat(vs, 0));
  }
  out.entry_count = cache.entry_count + (block.keys.empty() ? 0 : block.keys.front().rows());
  return out;
}

DecoderOutput decoder_forward(const Model& model, std::span<const int> tokens,
                              const KVCache& cache, std::span<const int> targets) {
  const ModelConfig& cfg = model.config;
  if (tokens.empty()) throw ShapeError("decoder_forward: empty input");
  if (targets.size() != tokens.size()) {
    throw ShapeError("decoder_forward: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(tokens.size()) + " tokens");
  }
  if (cache.keys.size() != cfg.layers || cache.values.size() != cfg.layers) {
    throw ShapeError("decoder_forward: cache layer count mismatch");
  }
  check_tokens(cfg, tokens, "decoder_forward");

  const std::size_t e = cache.entry_count, t_len = tokens.size();
  const auto live_pos = iota_positions(e, t_len);
  const auto all_pos = iota_positions(0, e + t_len);

  Tensor h = embedding(model.base.token_embedding, tokens);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const LayerWeights& w = model.base.layers[l];
    const Tensor x = layer_norm(h, w.ln1_gain, w.ln1_bias);
    const Tensor q = rope(matmul(x, w.wq), cfg.heads, live_pos, cfg.rope_base);
    Tensor k = matmul(x, w.wk);
    Tensor v = matmul(x, w.wv);
    if (e > 0) {
      const Tensor ks[] = {cache.keys[l], k};
      const Tensor vs[] = {cache.values[l], v};
      k = concat(ks, 0);
      v = concat(vs, 0);
    }
    k = rope(k, cfg.heads, all_pos, cfg.rope_base);
    h = add(h, matmul(attention(q, k, v, cfg.heads, e), w.wo));
    h = add(h, mlp(w, h));
  }
  DecoderOutput out;
  out.logits = matmul(layer_norm(h, model.base.final_gain, model.base.final_bias), model.base.w_out);
  out.loss = cross_entropy(out.logits, targets);
  return out;
}

std::vector<int> next_token_targets(std::span<const int> tokens) {
  std::vector<int> t(tokens.size(), -1);
  for (std::size_t i = 0; i + 1 < tokens.size(); ++i) t[i] = tokens[i + 1];
  return t;
}

}  // namespace segkv::model
