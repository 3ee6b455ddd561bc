// SPDX-License-Identifier: Apache-2.0
//
// Activation-cache lifetime accounting and pass counters. Byte figures are
// estimates from tensor shapes and element width, not allocator readings.

#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <stdexcept>

namespace segkv::instrument {

enum class CacheKind { encoder, decoder };

class LedgerError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class CacheLedger;

// Move-only registration; releases on destruction unless already released.
class CacheHandle {
 public:
  CacheHandle() = default;
  CacheHandle(CacheHandle&& other) noexcept;
  CacheHandle& operator=(CacheHandle&& other) noexcept;
  CacheHandle(const CacheHandle&) = delete;
  CacheHandle& operator=(const CacheHandle&) = delete;
  ~CacheHandle();

  void release();
  bool live() const { return ledger_ != nullptr; }
  std::uint64_t id() const { return id_; }

 private:
  friend class CacheLedger;
  CacheHandle(CacheLedger* ledger, std::uint64_t id) : ledger_(ledger), id_(id) {}

  CacheLedger* ledger_ = nullptr;
  std::uint64_t id_ = 0;
};

class CacheLedger {
 public:
  CacheLedger() = default;
  CacheLedger(const CacheLedger&) = delete;
  CacheLedger& operator=(const CacheLedger&) = delete;

  CacheHandle register_cache(CacheKind kind, std::size_t segment, std::size_t bytes = 0);
  // Releases by id; throws LedgerError for an id that is not live.
  void release(std::uint64_t id);

  std::size_t live(CacheKind kind) const;
  std::size_t peak(CacheKind kind) const;
  std::size_t live_bytes() const { return live_bytes_; }
  std::size_t peak_bytes() const { return peak_bytes_; }

 private:
  struct Entry {
    CacheKind kind;
    std::size_t segment;
    std::size_t bytes;
  };

  std::map<std::uint64_t, Entry> live_;
  std::uint64_t next_id_ = 1;
  std::size_t live_encoder_ = 0, live_decoder_ = 0;
  std::size_t peak_encoder_ = 0, peak_decoder_ = 0;
  std::size_t live_bytes_ = 0, peak_bytes_ = 0;
};

struct PassCounters {
  std::uint64_t encoder_fwd = 0;
  std::uint64_t encoder_bwd = 0;
  std::uint64_t decoder_fwd = 0;
  std::uint64_t decoder_bwd = 0;
  std::uint64_t tokens_processed = 0;
  double elapsed_s = 0.0;

  PassCounters& operator+=(const PassCounters& o);
};

// KV-cache footprint: `entries` rows of key and value per layer.
std::size_t kv_cache_bytes(std::size_t entries, std::size_t layers, std::size_t d_model,
                           std::size_t element_bytes = sizeof(double));

}  // namespace segkv::instrument
