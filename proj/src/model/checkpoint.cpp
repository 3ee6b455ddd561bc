// SPDX-License-Identifier: Apache-2.0

#include "segkv/model/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace segkv::model {

static_assert(std::endian::native == std::endian::little,
              "checkpoint blob is written with native byte order");

nlohmann::json config_to_json(const ModelConfig& cfg) {
  return {{"layers", cfg.layers},
          {"d_model", cfg.d_model},
          {"heads", cfg.heads},
          {"byte_vocab", cfg.byte_vocab},
          {"segment_len", cfg.segment_len},
          {"latent_count", cfg.latent_count},
          {"max_segments", cfg.max_segments},
          {"adapter_rank", cfg.adapter_rank},
          {"adapter_scale", cfg.adapter_scale},
          {"mlp_mult", cfg.mlp_mult},
          {"rope_base", cfg.rope_base},
          {"output_init_std", cfg.output_init_std}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.layers = j.at("layers").get<std::size_t>();
  cfg.d_model = j.at("d_model").get<std::size_t>();
  cfg.heads = j.at("heads").get<std::size_t>();
  cfg.byte_vocab = j.at("byte_vocab").get<std::size_t>();
  cfg.segment_len = j.at("segment_len").get<std::size_t>();
  cfg.latent_count = j.at("latent_count").get<std::size_t>();
  cfg.max_segments = j.at("max_segments").get<std::size_t>();
  cfg.adapter_rank = j.at("adapter_rank").get<std::size_t>();
  cfg.adapter_scale = j.at("adapter_scale").get<double>();
  cfg.mlp_mult = j.at("mlp_mult").get<std::size_t>();
  cfg.rope_base = j.at("rope_base").get<double>();
  cfg.output_init_std = j.at("output_init_std").get<double>();
  cfg.validate();
  return cfg;
}

void save_checkpoint(const Model& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json tensors = nlohmann::json::array();
  std::ofstream blob(dir / "params.bin", std::ios::binary | std::ios::trunc);
  if (!blob) throw CheckpointError("cannot write " + (dir / "params.bin").string());
  std::size_t offset = 0;
  auto emit = [&](const std::string& name, const Tensor& t) {
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    blob.write(reinterpret_cast<const char*>(t.data()),
               static_cast<std::streamsize>(t.numel() * sizeof(double)));
    offset += t.numel() * sizeof(double);
  };
  model.base.for_each([&](const std::string& n, const Tensor& t) { emit("base." + n, t); });
  model.adapters.for_each([&](const std::string& n, const Tensor& t) { emit("adapter." + n, t); });
  if (!blob) throw CheckpointError("write failed for " + (dir / "params.bin").string());

  const nlohmann::json manifest = {{"format", "segkv-checkpoint"},
                                   {"version", 1},
                                   {"config", config_to_json(model.config)},
                                   {"tensors", tensors}};
  std::ofstream mf(dir / "manifest.json", std::ios::trunc);
  if (!mf) throw CheckpointError("cannot write " + (dir / "manifest.json").string());
  mf << manifest.dump(2) << '\n';
}

Model load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw CheckpointError("cannot read " + (dir / "manifest.json").string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(mf);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("malformed manifest: ") + e.what());
  }
  if (manifest.value("format", "") != "segkv-checkpoint" || manifest.value("version", 0) != 1) {
    throw CheckpointError("unsupported checkpoint format in " + dir.string());
  }

  std::ifstream blob(dir / "params.bin", std::ios::binary);
  if (!blob) throw CheckpointError("cannot read " + (dir / "params.bin").string());
  const std::string bytes((std::istreambuf_iterator<char>(blob)), std::istreambuf_iterator<char>());

  std::map<std::string, Tensor> stored;
  for (const auto& entry : manifest.at("tensors")) {
    const auto shape = entry.at("shape").get<ad::Shape>();
    const auto offset = entry.at("offset").get<std::size_t>();
    const std::size_t n = ad::shape_numel(shape);
    if (offset + n * sizeof(double) > bytes.size()) {
      throw CheckpointError("tensor " + entry.at("name").get<std::string>() + " overruns params.bin");
    }
    ad::Buffer values(n);
    std::memcpy(values.data(), bytes.data() + offset, n * sizeof(double));
    stored.emplace(entry.at("name").get<std::string>(), Tensor(shape, std::move(values)));
  }

  // Shapes come from a freshly initialized model of the stored config.
  Model model = init_model(config_from_json(manifest.at("config")), 0);
  auto take = [&stored](const std::string& name, Tensor& t) {
    auto it = stored.find(name);
    if (it == stored.end()) throw CheckpointError("checkpoint missing tensor " + name);
    if (it->second.shape() != t.shape()) {
      throw CheckpointError("tensor " + name + " has shape " + ad::shape_str(it->second.shape()) +
                            ", expected " + ad::shape_str(t.shape()));
    }
    t = it->second;
  };
  model.base.for_each([&](const std::string& n, Tensor& t) { take("base." + n, t); });
  model.adapters.for_each([&](const std::string& n, Tensor& t) { take("adapter." + n, t); });
  return model;
}

}  // namespace segkv::model
