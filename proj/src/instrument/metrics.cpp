// SPDX-License-Identifier: Apache-2.0

#include "segkv/instrument/metrics.hpp"

#include <fstream>
#include <stdexcept>

namespace segkv::instrument {

void fill_from_ledger(RunMetrics& m, const CacheLedger& ledger) {
  m.live_encoder_caches_peak = ledger.peak(CacheKind::encoder);
  m.live_decoder_caches_peak = ledger.peak(CacheKind::decoder);
  m.bytes_estimate = ledger.peak_bytes();
}

nlohmann::ordered_json report(const RunMetrics& m, bool include_timing) {
  nlohmann::ordered_json j;
  j["run"] = m.run;
  j["strategy"] = m.strategy;
  j["segments"] = m.segments;
  j["budget"] = m.budget;
  j["encoder_fwd"] = m.counters.encoder_fwd;
  j["encoder_bwd"] = m.counters.encoder_bwd;
  j["decoder_fwd"] = m.counters.decoder_fwd;
  j["decoder_bwd"] = m.counters.decoder_bwd;
  j["tokens_processed"] = m.counters.tokens_processed;
  j["live_encoder_caches_peak"] = m.live_encoder_caches_peak;
  j["live_decoder_caches_peak"] = m.live_decoder_caches_peak;
  j["bytes_estimate"] = m.bytes_estimate;
  j["kv_cache_bytes"] = m.kv_cache_bytes;
  j["grad_norm"] = m.grad_norm;
  j["loss"] = m.loss;
  if (!m.extra.empty()) j["extra"] = m.extra;
  if (include_timing) {
    j["elapsed_s"] = m.counters.elapsed_s;
    j["tokens_per_s"] = m.counters.elapsed_s > 0.0
                            ? static_cast<double>(m.counters.tokens_processed) / m.counters.elapsed_s
                            : 0.0;
  }
  return j;
}

void append_jsonl(const std::filesystem::path& path, const nlohmann::ordered_json& record) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::app);
  if (!out) throw std::runtime_error("cannot open metrics file " + path.string());
  out << record.dump() << '\n';
}

}  // namespace segkv::instrument
