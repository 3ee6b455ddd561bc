// SPDX-License-Identifier: Apache-2.0
//
// Byte-level data: file ingestion and the synthetic generators.

#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "segkv/util/rng.hpp"

namespace segkv::harness {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Every byte of the file as an id in [0, 255]. Throws DataError if unreadable.
std::vector<int> ingest_text(const std::filesystem::path& path);

// Inverse of ingest_text. Throws DataError for ids outside [0, 255].
std::string detokenize(std::span<const int> tokens);

std::vector<int> random_bytes(std::size_t length, Rng& rng);

// A random motif of `period` bytes repeated to `length`.
std::vector<int> periodic_sequence(std::size_t length, std::size_t period, Rng& rng);

// Filler text with a two-byte passkey planted after a marker.
struct PasskeySample {
  std::vector<int> context;  // filler with marker + passkey embedded
  std::vector<int> query;    // marker alone; the answer follows it
  std::vector<int> passkey;  // the two bytes to recall
  std::size_t position = 0;  // index of the first passkey byte in `context`
};

// `depth` in [0, 1] places the needle from the start (0) to the end (1) of
// the context. Throws std::invalid_argument when depth is out of range or
// the context is too short to hold the needle.
PasskeySample passkey_sample(std::size_t length, double depth, Rng& rng);

}  // namespace segkv::harness
