// SPDX-License-Identifier: Apache-2.0
//
// Command bodies shared by the CLI and the acceptance binary. Each command
// truncates <out>/metrics.jsonl and appends one record per event. Random
// streams are derived from the run seed by purpose, so changing one command's
// sampling never shifts another's.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <ostream>
#include <vector>

#include "segkv/harness/autoencode.hpp"
#include "segkv/harness/config.hpp"
#include "segkv/harness/eval.hpp"
#include "segkv/model/params.hpp"
#include "segkv/train/policy_bias.hpp"

namespace segkv::harness {

enum class StreamId : std::uint64_t {
  lm_data = 1,
  policy = 2,
  autoencode_data = 3,
  ppl_data = 4,
  needle = 5,
  bench = 6,
};

Rng stream_rng(const RunConfig& cfg, StreamId id);

// The checkpoint named by the config if any, otherwise a fresh model.
model::Model prepare_model(const RunConfig& cfg);

class DocumentSource {
 public:
  explicit DocumentSource(const DataSettings& settings);
  // `length` tokens. File sources take a random window and throw DataError
  // when the file is shorter than `length`.
  std::vector<int> sample(std::size_t length, Rng& rng) const;

 private:
  DataSettings settings_;
  std::vector<int> corpus_;
};

// The fixed auto-encoding set: `sequences` documents of `sequence_len` tokens.
std::vector<AutoencodeBatch> autoencode_set(const RunConfig& cfg, const model::ModelConfig& mc);

std::filesystem::path metrics_path(const RunConfig& cfg);
std::filesystem::path checkpoint_dir(const RunConfig& cfg);

struct TrainSummary {
  std::size_t steps = 0;
  double first_loss = 0.0;
  double final_loss = 0.0;
  double exact_match = -1.0;  // auto-encoding objective only
};

// Trains `model` in place and saves it to checkpoint_dir(cfg). Progress goes
// to `log` every `log_every` steps (0 = silent).
TrainSummary run_train(const RunConfig& cfg, model::Model& model, std::ostream& log,
                       std::size_t log_every = 0);

double run_eval_ae(const RunConfig& cfg, const model::Model& model);

struct PerplexitySummary {
  double with_context = 0.0;
  double without_context = 0.0;
};
PerplexitySummary run_eval_ppl(const RunConfig& cfg, const model::Model& model);

// Also writes needle_pass.csv, needle_token_acc.csv and needle_pass.png.
NeedleGrid run_eval_needle(const RunConfig& cfg, const model::Model& model);

struct BenchGradSummary {
  std::size_t configurations = 0;
  double max_incremental_error = 0.0;  // decoder-incremental and naive vs dense
  double max_sparse_error = 0.0;       // sparse with S >= k vs dense
  std::vector<train::BiasReport> bias;  // one per policy, in policy order
};
// Equivalence over the run's model config on documents of 2..bench_segments
// segments, then the bias suite at the configured budget.
BenchGradSummary run_bench_grad(const RunConfig& cfg, const model::Model& model);

struct BenchMemRow {
  train::Strategy strategy;
  train::EvictionPolicy::Kind policy;
  std::size_t segments = 0;
  std::size_t encoder_peak = 0;
  std::size_t decoder_peak = 0;
  std::uint64_t encoder_bwd = 0;
  bool law_holds = false;
};
struct BenchMemSummary {
  std::vector<BenchMemRow> rows;
  std::size_t kv_bytes_baseline = 0;  // one entry per token
  std::size_t kv_bytes_r8 = 0;
  std::size_t kv_bytes_r32 = 0;
  bool all_laws_hold = false;
};
BenchMemSummary run_bench_mem(const RunConfig& cfg, const model::Model& model);

}  // namespace segkv::harness
