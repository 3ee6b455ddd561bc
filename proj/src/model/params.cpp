// SPDX-License-Identifier: Apache-2.0

#include "segkv/model/params.hpp"

#include <cmath>

#include "segkv/util/rng.hpp"

namespace segkv::model {

namespace {

Tensor normal(Rng& rng, ad::Shape shape, double stddev) {
  ad::Buffer v(ad::shape_numel(shape));
  for (double& x : v) x = rng.normal() * stddev;
  return Tensor(std::move(shape), std::move(v));
}

}  // namespace

std::vector<Tensor> AdapterParams::flat() const {
  std::vector<Tensor> out;
  for_each([&out](const std::string&, const Tensor& t) { out.push_back(t); });
  return out;
}

std::vector<std::string> AdapterParams::names() const {
  std::vector<std::string> out;
  for_each([&out](const std::string& n, const Tensor&) { out.push_back(n); });
  return out;
}

std::size_t AdapterParams::numel() const {
  std::size_t n = 0;
  for_each([&n](const std::string&, const Tensor& t) { n += t.numel(); });
  return n;
}

AdapterParams AdapterParams::attach(ad::Tape& tape) const {
  AdapterParams out = *this;
  out.for_each([&tape](const std::string&, Tensor& t) { t = tape.variable(t); });
  return out;
}

void AdapterParams::assign(const std::vector<ad::Buffer>& values) {
  std::size_t i = 0;
  for_each([&](const std::string& name, Tensor& t) {
    if (i >= values.size() || values[i].size() != t.numel()) {
      throw ad::ShapeError("adapter assign: size mismatch at " + name);
    }
    t = Tensor(t.shape(), values[i]);
    ++i;
  });
  if (i != values.size()) throw ad::ShapeError("adapter assign: too many buffers");
}

AdapterParams init_adapters(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(stream_seed(seed, 2));
  const std::size_t d = cfg.d_model, r = cfg.adapter_rank;
  const double a_std = 1.0 / std::sqrt(static_cast<double>(d));
  AdapterParams p;
  p.latent_embedding = normal(rng, {cfg.latent_count, d}, 1.0);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    LayerAdapters a;
    a.q_a = normal(rng, {d, r}, a_std);
    a.q_b = Tensor::zeros({r, d});
    a.v_a = normal(rng, {d, r}, a_std);
    a.v_b = Tensor::zeros({r, d});
    a.proj_k_a = normal(rng, {d, r}, a_std);
    a.proj_k_b = Tensor::zeros({r, d});
    a.proj_v_a = normal(rng, {d, r}, a_std);
    a.proj_v_b = Tensor::zeros({r, d});
    p.layers.push_back(std::move(a));
  }
  return p;
}

Model init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(stream_seed(seed, 1));
  const std::size_t d = cfg.d_model, v = cfg.vocab_size(), hidden = cfg.mlp_mult * d;
  const double s_d = 1.0 / std::sqrt(static_cast<double>(d));
  const double s_h = 1.0 / std::sqrt(static_cast<double>(hidden));
  Model m;
  m.config = cfg;
  m.base.token_embedding = normal(rng, {v, d}, 1.0);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    LayerWeights w;
    w.ln1_gain = Tensor::filled({d}, 1.0);
    w.ln1_bias = Tensor::zeros({d});
    w.wq = normal(rng, {d, d}, s_d);
    w.wk = normal(rng, {d, d}, s_d);
    w.wv = normal(rng, {d, d}, s_d);
    w.wo = normal(rng, {d, d}, s_d);
    w.ln2_gain = Tensor::filled({d}, 1.0);
    w.ln2_bias = Tensor::zeros({d});
    w.w1 = normal(rng, {d, hidden}, s_d);
    w.b1 = Tensor::zeros({hidden});
    w.w2 = normal(rng, {hidden, d}, s_h);
    w.b2 = Tensor::zeros({d});
    m.base.layers.push_back(std::move(w));
  }
  m.base.final_gain = Tensor::filled({d}, 1.0);
  m.base.final_bias = Tensor::zeros({d});
  m.base.w_out = normal(rng, {d, v}, cfg.output_init_std);
  m.adapters = init_adapters(cfg, seed);
  return m;
}

}  // namespace segkv::model
