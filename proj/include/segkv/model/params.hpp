// SPDX-License-Identifier: Apache-2.0
//
// Frozen base weights and the trainable adapter set. The two are disjoint:
// training only ever produces gradients for AdapterParams.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "segkv/autodiff/tape.hpp"
#include "segkv/autodiff/tensor.hpp"
#include "segkv/model/config.hpp"

namespace segkv::model {

using ad::Tensor;

struct LayerWeights {
  Tensor ln1_gain, ln1_bias;
  Tensor wq, wk, wv, wo;
  Tensor ln2_gain, ln2_bias;
  Tensor w1, b1, w2, b2;
};

struct BaseWeights {
  Tensor token_embedding;  // (vocab, d)
  std::vector<LayerWeights> layers;
  Tensor final_gain, final_bias;
  Tensor w_out;  // (d, vocab)

  template <class F>
  void for_each(F&& f);
  template <class F>
  void for_each(F&& f) const;
};

// Low-rank pairs (A: d x rank, B: rank x d) on the encoder's query and value
// paths and on the projector's key and value maps.
struct LayerAdapters {
  Tensor q_a, q_b;
  Tensor v_a, v_b;
  Tensor proj_k_a, proj_k_b;
  Tensor proj_v_a, proj_v_b;
};

struct AdapterParams {
  Tensor latent_embedding;  // (c, d): one learned embedding per latent slot
  std::vector<LayerAdapters> layers;

  template <class F>
  void for_each(F&& f);
  template <class F>
  void for_each(F&& f) const;

  std::vector<Tensor> flat() const;
  std::vector<std::string> names() const;
  std::size_t numel() const;
  // Copy whose tensors are leaves on `tape`, in flat() order.
  AdapterParams attach(ad::Tape& tape) const;
  // Replaces values in flat() order.
  void assign(const std::vector<ad::Buffer>& values);
};

struct Model {
  ModelConfig config;
  BaseWeights base;
  AdapterParams adapters;
};

Model init_model(const ModelConfig& config, std::uint64_t seed);

// Fresh adapters: A small-normal, B zero, latent embeddings unit-normal.
AdapterParams init_adapters(const ModelConfig& config, std::uint64_t seed);

// ---------------------------------------------------------------------------

template <class F>
void BaseWeights::for_each(F&& f) {
  f(std::string("token_embedding"), token_embedding);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    auto& w = layers[l];
    f(p + "ln1_gain", w.ln1_gain);
    f(p + "ln1_bias", w.ln1_bias);
    f(p + "wq", w.wq);
    f(p + "wk", w.wk);
    f(p + "wv", w.wv);
    f(p + "wo", w.wo);
    f(p + "ln2_gain", w.ln2_gain);
    f(p + "ln2_bias", w.ln2_bias);
    f(p + "w1", w.w1);
    f(p + "b1", w.b1);
    f(p + "w2", w.w2);
    f(p + "b2", w.b2);
  }
  f(std::string("final_gain"), final_gain);
  f(std::string("final_bias"), final_bias);
  f(std::string("w_out"), w_out);
}

template <class F>
void BaseWeights::for_each(F&& f) const {
  const_cast<BaseWeights*>(this)->for_each(
      [&f](const std::string& name, const Tensor& t) { f(name, t); });
}

template <class F>
void AdapterParams::for_each(F&& f) {
  f(std::string("latent_embedding"), latent_embedding);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    auto& a = layers[l];
    f(p + "q_a", a.q_a);
    f(p + "q_b", a.q_b);
    f(p + "v_a", a.v_a);
    f(p + "v_b", a.v_b);
    f(p + "proj_k_a", a.proj_k_a);
    f(p + "proj_k_b", a.proj_k_b);
    f(p + "proj_v_a", a.proj_v_a);
    f(p + "proj_v_b", a.proj_v_b);
  }
}

template <class F>
void AdapterParams::for_each(F&& f) const {
  const_cast<AdapterParams*>(this)->for_each(
      [&f](const std::string& name, const Tensor& t) { f(name, t); });
}

}  // namespace segkv::model
