// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "segkv/model/params.hpp"

namespace segkv::harness {

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PerplexityResult {
  double perplexity = 0.0;
  double mean_loss = 0.0;
  std::size_t scored_tokens = 0;
};

// Scores every full segment after the first. Segment j is predicted
// (next-token, within the segment) from a cache holding the compressed
// previous min(j - 1, context_segments) segments; context_segments = 0 gives
// the no-prefix baseline on the same positions. Throws EvalError unless the
// input holds at least two full segments.
PerplexityResult eval_perplexity(const model::Model& model, std::span<const int> tokens,
                                 std::size_t context_segments);

struct NeedleGrid {
  std::vector<std::size_t> lengths;
  std::vector<double> depths;
  std::vector<std::vector<double>> pass_rate;       // [length][depth], both bytes recalled
  std::vector<std::vector<double>> token_accuracy;  // [length][depth], per passkey byte
};

// Per cell: `trials` passkey contexts, compressed in full (residual
// included), then the marker is fed live and two bytes are decoded greedily.
// Cell (a, b) draws from Rng(stream_seed(seed, a * |depths| + b)).
NeedleGrid eval_needle(const model::Model& model, std::span<const std::size_t> lengths,
                       std::span<const double> depths, std::size_t trials, std::uint64_t seed);

// Rows are lengths, columns depths.
void write_matrix_csv(const std::filesystem::path& path, const NeedleGrid& grid,
                      const std::vector<std::vector<double>>& values);

// Heat map of `values` in [0, 1]: one square per cell, rows = lengths.
void write_heatmap_png(const std::filesystem::path& path, const std::vector<std::vector<double>>& values,
                       std::size_t cell_px = 24);

}  // namespace segkv::harness
