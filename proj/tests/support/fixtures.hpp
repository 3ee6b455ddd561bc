// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "segkv/model/params.hpp"
#include "segkv/train/strategies.hpp"
#include "segkv/util/rng.hpp"

namespace segkv::testing {

struct TinyShape {
  std::size_t layers = 1;
  std::size_t d = 8;
  std::size_t heads = 2;
  std::size_t l = 4;
  std::size_t c = 2;
  std::size_t rank = 2;
};

inline model::ModelConfig tiny_config(const TinyShape& s) {
  model::ModelConfig cfg;
  cfg.layers = s.layers;
  cfg.d_model = s.d;
  cfg.heads = s.heads;
  cfg.segment_len = s.l;
  cfg.latent_count = s.c;
  cfg.adapter_rank = s.rank;
  cfg.max_segments = 64;
  cfg.validate();
  return cfg;
}

// Adapters with every B block randomised, so all of Theta carries gradient.
inline model::Model tiny_model(const TinyShape& s, std::uint64_t seed) {
  model::Model m = model::init_model(tiny_config(s), seed);
  Rng rng(stream_seed(seed, 99));
  std::vector<ad::Buffer> values;
  for (const auto& t : m.adapters.flat()) {
    ad::Buffer b(t.values().begin(), t.values().end());
    for (double& v : b)
      if (v == 0.0) v = 0.3 * rng.normal();
    values.push_back(std::move(b));
  }
  m.adapters.assign(values);
  return m;
}

inline std::vector<train::Segment> random_segments(std::size_t k, std::size_t l, std::uint64_t seed,
                                                   int vocab = 256) {
  Rng rng(stream_seed(seed, 7));
  std::vector<train::Segment> segs(k, train::Segment(l));
  for (auto& s : segs)
    for (int& t : s) t = static_cast<int>(rng.randint(0, static_cast<std::uint64_t>(vocab - 1)));
  return segs;
}

}  // namespace segkv::testing
