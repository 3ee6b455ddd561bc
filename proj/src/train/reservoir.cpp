// SPDX-License-Identifier: Apache-2.0

#include "segkv/train/reservoir.hpp"

#include <algorithm>
#include <memory>
#include <stdexcept>
#include <string>

namespace segkv::train {

Reservoir::Reservoir(std::size_t capacity, std::uint64_t seed)
    : Reservoir(capacity, [rng = std::make_shared<Rng>(seed)](std::uint64_t lo, std::uint64_t hi) {
        return rng->randint(lo, hi);
      }) {}

Reservoir::Reservoir(std::size_t capacity, Draw draw) : capacity_(capacity), draw_(std::move(draw)) {
  if (capacity_ == 0) throw std::invalid_argument("reservoir: capacity must be >= 1");
  slots_.reserve(capacity_);
}

bool Reservoir::contains(std::size_t segment) const {
  return std::find(slots_.begin(), slots_.end(), segment) != slots_.end();
}

EvictDecision Reservoir::offer(std::size_t incoming) {
  if (incoming != seen_ + 1) {
    throw std::invalid_argument("reservoir: expected segment " + std::to_string(seen_ + 1) +
                                ", got " + std::to_string(incoming));
  }
  seen_ = incoming;
  EvictDecision d;
  if (slots_.size() < capacity_) {
    d.kind = EvictDecision::Kind::admit;
    d.slot = slots_.size();
    slots_.push_back(incoming);
    return d;
  }
  const std::uint64_t j = draw_(1, incoming);
  if (j <= capacity_) {
    d.kind = EvictDecision::Kind::replace;
    d.slot = static_cast<std::size_t>(j - 1);
    d.evicted = slots_[d.slot];
    slots_[d.slot] = incoming;
  } else {
    d.kind = EvictDecision::Kind::discard;
    d.evicted = incoming;
  }
  return d;
}

EvictDecision evict_decide(Reservoir& reservoir, std::size_t incoming) {
  return reservoir.offer(incoming);
}

}  // namespace segkv::train
