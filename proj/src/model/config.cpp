// SPDX-License-Identifier: Apache-2.0

#include "segkv/model/config.hpp"

#include <string>

namespace segkv::model {

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("model config: " + msg); };
  if (layers == 0) fail("layers must be >= 1");
  if (d_model == 0 || heads == 0) fail("d_model and heads must be >= 1");
  if (d_model % heads != 0) {
    fail("d_model " + std::to_string(d_model) + " not divisible by heads " + std::to_string(heads));
  }
  if (head_dim() % 2 != 0) fail("head dimension must be even for rotary encoding");
  if (segment_len == 0 || latent_count == 0) fail("segment_len and latent_count must be >= 1");
  if (segment_len % latent_count != 0) {
    fail("segment_len " + std::to_string(segment_len) + " not divisible by latent_count " +
         std::to_string(latent_count));
  }
  if (adapter_rank == 0) fail("adapter_rank must be >= 1");
  if (max_segments == 0) fail("max_segments must be >= 1");
  if (mlp_mult == 0) fail("mlp_mult must be >= 1");
}

ModelConfig default_config(std::size_t ratio) {
  ModelConfig cfg;
  if (ratio == 0 || cfg.segment_len % ratio != 0) {
    throw ConfigError("model config: ratio " + std::to_string(ratio) + " does not divide segment_len " +
                      std::to_string(cfg.segment_len));
  }
  cfg.latent_count = cfg.segment_len / ratio;
  return cfg;
}

}  // namespace segkv::model
