// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint layout, one directory per checkpoint:
//   manifest.json : {"format", "version", "config": {...},
//                    "tensors": [{"name", "shape", "offset"}, ...]}
//   params.bin    : every tensor's values as little-endian IEEE-754 doubles,
//                   concatenated in manifest order; "offset" is in bytes.
// Base tensors are named "base.<name>", adapters "adapter.<name>".

#pragma once

#include <filesystem>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "segkv/model/params.hpp"

namespace segkv::model {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

nlohmann::json config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const nlohmann::json& j);

void save_checkpoint(const Model& model, const std::filesystem::path& dir);
Model load_checkpoint(const std::filesystem::path& dir);

}  // namespace segkv::model
