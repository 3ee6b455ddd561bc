// SPDX-License-Identifier: Apache-2.0
//
// JSON-lines run records. Field order is fixed so that identical runs
// serialize to identical bytes; wall-clock fields are emitted only on request
// because they are not reproducible.

#pragma once

#include <cstddef>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "segkv/instrument/ledger.hpp"

namespace segkv::instrument {

struct RunMetrics {
  std::string run;
  std::string strategy;
  std::size_t segments = 0;
  std::size_t budget = 0;
  PassCounters counters;
  std::size_t live_encoder_caches_peak = 0;
  std::size_t live_decoder_caches_peak = 0;
  std::size_t bytes_estimate = 0;      // peak activation bytes held by registered caches
  std::size_t kv_cache_bytes = 0;      // compressed KV-cache footprint
  double grad_norm = 0.0;
  double loss = 0.0;
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();
};

// Copies peaks and bytes out of a ledger.
void fill_from_ledger(RunMetrics& m, const CacheLedger& ledger);

nlohmann::ordered_json report(const RunMetrics& m, bool include_timing = false);

// Appends one compact JSON line.
void append_jsonl(const std::filesystem::path& path, const nlohmann::ordered_json& record);

}  // namespace segkv::instrument
