// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>

namespace segkv::model {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Shapes of the miniature transformer and of the segment compression.
//
// Vocabulary layout: ids [0, byte_vocab) are raw bytes, the next
// `latent_count` ids are the per-slot latent tokens appended to each segment,
// and the final id is the <repeat> trigger.
struct ModelConfig {
  std::size_t layers = 2;
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t byte_vocab = 256;
  std::size_t segment_len = 64;   // l
  std::size_t latent_count = 8;   // c
  std::size_t max_segments = 64;  // k upper bound
  std::size_t adapter_rank = 4;
  double adapter_scale = 1.0;
  std::size_t mlp_mult = 4;
  double rope_base = 10000.0;
  double output_init_std = 0.02;

  std::size_t ratio() const { return segment_len / latent_count; }
  std::size_t head_dim() const { return d_model / heads; }
  std::size_t vocab_size() const { return byte_vocab + latent_count + 1; }
  int latent_id(std::size_t slot) const { return static_cast<int>(byte_vocab + slot); }
  int repeat_id() const { return static_cast<int>(byte_vocab + latent_count); }

  // Throws ConfigError describing the first violated constraint.
  void validate() const;
};

// Desk-scale defaults at a given compression ratio (l = 64).
ModelConfig default_config(std::size_t ratio = 8);

}  // namespace segkv::model
