// SPDX-License-Identifier: Apache-2.0

#include "segkv/instrument/ledger.hpp"

#include <algorithm>
#include <string>

namespace segkv::instrument {

CacheHandle::CacheHandle(CacheHandle&& other) noexcept
    : ledger_(other.ledger_), id_(other.id_) {
  other.ledger_ = nullptr;
}

CacheHandle& CacheHandle::operator=(CacheHandle&& other) noexcept {
  if (this != &other) {
    if (ledger_) ledger_->release(id_);
    ledger_ = other.ledger_;
    id_ = other.id_;
    other.ledger_ = nullptr;
  }
  return *this;
}

CacheHandle::~CacheHandle() {
  if (ledger_) ledger_->release(id_);
}

void CacheHandle::release() {
  if (!ledger_) throw LedgerError("cache handle released twice");
  CacheLedger* l = ledger_;
  ledger_ = nullptr;
  l->release(id_);
}

CacheHandle CacheLedger::register_cache(CacheKind kind, std::size_t segment, std::size_t bytes) {
  const std::uint64_t id = next_id_++;
  live_.emplace(id, Entry{kind, segment, bytes});
  if (kind == CacheKind::encoder) {
    peak_encoder_ = std::max(peak_encoder_, ++live_encoder_);
  } else {
    peak_decoder_ = std::max(peak_decoder_, ++live_decoder_);
  }
  live_bytes_ += bytes;
  peak_bytes_ = std::max(peak_bytes_, live_bytes_);
  return CacheHandle(this, id);
}

void CacheLedger::release(std::uint64_t id) {
  auto it = live_.find(id);
  if (it == live_.end()) throw LedgerError("release of unregistered cache " + std::to_string(id));
  if (it->second.kind == CacheKind::encoder) {
    --live_encoder_;
  } else {
    --live_decoder_;
  }
  live_bytes_ -= it->second.bytes;
  live_.erase(it);
}

std::size_t CacheLedger::live(CacheKind kind) const {
  return kind == CacheKind::encoder ? live_encoder_ : live_decoder_;
}

std::size_t CacheLedger::peak(CacheKind kind) const {
  return kind == CacheKind::encoder ? peak_encoder_ : peak_decoder_;
}

PassCounters& PassCounters::operator+=(const PassCounters& o) {
  encoder_fwd += o.encoder_fwd;
  encoder_bwd += o.encoder_bwd;
  decoder_fwd += o.decoder_fwd;
  decoder_bwd += o.decoder_bwd;
  tokens_processed += o.tokens_processed;
  elapsed_s += o.elapsed_s;
  return *this;
}

std::size_t kv_cache_bytes(std::size_t entries, std::size_t layers, std::size_t d_model,
                           std::size_t element_bytes) {
  return 2 * entries * layers * d_model * element_bytes;
}

}  // namespace segkv::instrument
