// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: an INI-style file with sections, see README for the
// full key list. Unknown sections or keys are rejected.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "segkv/model/config.hpp"
#include "segkv/train/strategies.hpp"

namespace segkv::harness {

using model::ConfigError;

enum class Objective { lm, autoencode };
enum class DataSource { periodic, random, passkey, file };

struct OptimSettings {
  std::string name = "adamw";
  double lr = 1e-3;
  double weight_decay = 0.0;
  std::size_t warmup = 0;
};

struct TrainSettings {
  Objective objective = Objective::lm;
  std::size_t steps = 100;
  std::size_t segments_per_step = 8;  // k for the LM objective
  std::size_t batch = 1;              // sequences per auto-encoding step
  OptimSettings optim;
};

struct DataSettings {
  DataSource source = DataSource::periodic;
  std::filesystem::path path;
  std::size_t sequences = 32;     // auto-encoding set size
  std::size_t sequence_len = 64;  // auto-encoding sequence length
  std::size_t period_min = 2;
  std::size_t period_max = 16;
};

struct EvalSettings {
  std::size_t ppl_documents = 8;
  std::size_t ppl_segments = 4;          // segments per perplexity document
  std::size_t ppl_context_segments = 64; // compressed prefix segments; 0 = none
  std::vector<std::size_t> needle_lengths = {128, 256, 512};
  std::vector<double> needle_depths = {0.0, 0.25, 0.5, 0.75, 1.0};
  std::size_t needle_trials = 8;
  std::size_t bias_trials = 200;
  std::size_t bench_segments = 10;
};

struct RunConfig {
  model::ModelConfig model = model::default_config(8);
  train::Strategy strategy = train::Strategy::sparse;
  train::EvictionPolicy policy;
  TrainSettings train;
  DataSettings data;
  EvalSettings eval;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir = "runs/default";
  std::filesystem::path checkpoint;  // optional model to start from
  bool timing = false;

  // Throws ConfigError naming the offending setting.
  void validate() const;
};

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

// Command-line overrides applied after the file.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> strategy;
  std::optional<std::size_t> budget;
  std::optional<std::size_t> ratio;
  std::optional<std::filesystem::path> out_dir;
  std::optional<std::filesystem::path> checkpoint;
};
void apply_overrides(RunConfig& cfg, const Overrides& o);

std::string to_string(Objective o);
std::string to_string(DataSource s);

}  // namespace segkv::harness
