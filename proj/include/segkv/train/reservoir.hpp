// SPDX-License-Identifier: Apache-2.0
//
// Budget-S reservoir over segment indices. Segments are offered in stream
// order 1, 2, 3, ...; after i offers the slots hold a uniform random
// min(i, S)-subset of {1..i}.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "segkv/util/rng.hpp"

namespace segkv::train {

struct EvictDecision {
  enum class Kind { admit, replace, discard };
  Kind kind = Kind::admit;
  std::size_t slot = 0;     // 0-based slot written (admit/replace)
  std::size_t evicted = 0;  // segment index displaced (replace) or dropped (discard)
};

class Reservoir {
 public:
  // Inclusive integer draw on [lo, hi].
  using Draw = std::function<std::uint64_t(std::uint64_t lo, std::uint64_t hi)>;

  Reservoir(std::size_t capacity, std::uint64_t seed);
  Reservoir(std::size_t capacity, Draw draw);

  std::size_t capacity() const { return capacity_; }
  std::size_t seen() const { return seen_; }
  std::span<const std::size_t> slots() const { return slots_; }
  bool contains(std::size_t segment) const;

  // Offers segment number `incoming` (must equal seen() + 1) and applies the
  // resulting decision. While not full the segment is admitted without a
  // draw; afterwards exactly one draw j ~ U[1, i] is made and slot j is
  // replaced when j <= S, otherwise the incoming segment is discarded.
  EvictDecision offer(std::size_t incoming);

 private:
  std::size_t capacity_;
  std::size_t seen_ = 0;
  std::vector<std::size_t> slots_;
  Draw draw_;
};

// Spelling used by the training loop.
EvictDecision evict_decide(Reservoir& reservoir, std::size_t incoming);

}  // namespace segkv::train
