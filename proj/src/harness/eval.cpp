// SPDX-License-Identifier: Apache-2.0

#include "segkv/harness/eval.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>

#include "segkv/harness/data.hpp"
#include "segkv/model/transformer.hpp"
#include "segkv/pipeline/pipeline.hpp"
#include "segkv/util/rng.hpp"

namespace segkv::harness {
namespace {

model::SegmentKV compress(const model::Model& m, std::span<const int> tokens) {
  const auto enc = model::encode_tokens(m, m.adapters, tokens);
  return model::project_kv(m, m.adapters, enc.layer_latents);
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<char>((v >> s) & 0xff));
}

void put_chunk(std::ofstream& f, const char* type, const std::string& data) {
  std::string chunk;
  put_u32(chunk, static_cast<std::uint32_t>(data.size()));
  const std::size_t crc_from = chunk.size();
  chunk.append(type, 4);
  chunk += data;
  const auto* p = reinterpret_cast<const Bytef*>(chunk.data() + crc_from);
  const uLong crc = crc32(0L, p, static_cast<uInt>(chunk.size() - crc_from));
  put_u32(chunk, static_cast<std::uint32_t>(crc));
  f.write(chunk.data(), static_cast<std::streamsize>(chunk.size()));
}

std::array<unsigned char, 3> colour(double v) {
  // Dark blue -> teal -> yellow.
  static constexpr double stops[3][3] = {{20, 20, 90}, {30, 150, 140}, {250, 230, 60}};
  v = std::clamp(v, 0.0, 1.0) * 2.0;
  const int i = std::min(1, static_cast<int>(v));
  const double t = v - i;
  std::array<unsigned char, 3> rgb{};
  for (int c = 0; c < 3; ++c)
    rgb[c] = static_cast<unsigned char>(std::lround(stops[i][c] + t * (stops[i + 1][c] - stops[i][c])));
  return rgb;
}

}  // namespace

PerplexityResult eval_perplexity(const model::Model& model, std::span<const int> tokens,
                                 std::size_t context_segments) {
  const auto stream = pipeline::segment_input(tokens, model.config.segment_len);
  if (stream.segments.size() < 2) {
    throw EvalError("eval_perplexity: need at least two full segments of " +
                    std::to_string(model.config.segment_len) + " tokens, got " +
                    std::to_string(tokens.size()) + " tokens");
  }
  std::vector<model::SegmentKV> blocks;
  for (std::size_t j = 0; j + 1 < stream.segments.size(); ++j)
    blocks.push_back(compress(model, stream.segments[j]));

  double total = 0.0;
  std::size_t scored = 0;
  for (std::size_t j = 1; j < stream.segments.size(); ++j) {
    const std::size_t take = std::min(j, context_segments);
    const auto cache = model::concat_cache(model.config, std::span(blocks).subspan(j - take, take));
    const auto& seg = stream.segments[j];
    const auto targets = model::next_token_targets(seg);
    const std::size_t n = seg.size() - 1;
    total += model::decoder_forward(model, seg, cache, targets).loss.item() * static_cast<double>(n);
    scored += n;
  }
  PerplexityResult r;
  r.scored_tokens = scored;
  r.mean_loss = total / static_cast<double>(scored);
  r.perplexity = std::exp(r.mean_loss);
  return r;
}

NeedleGrid eval_needle(const model::Model& model, std::span<const std::size_t> lengths,
                       std::span<const double> depths, std::size_t trials, std::uint64_t seed) {
  NeedleGrid g;
  g.lengths.assign(lengths.begin(), lengths.end());
  g.depths.assign(depths.begin(), depths.end());
  const std::size_t l = model.config.segment_len;
  for (std::size_t a = 0; a < lengths.size(); ++a) {
    g.pass_rate.emplace_back();
    g.token_accuracy.emplace_back();
    for (std::size_t b = 0; b < depths.size(); ++b) {
      Rng rng(stream_seed(seed, a * depths.size() + b));
      std::size_t pass = 0, hits = 0;
      for (std::size_t t = 0; t < trials; ++t) {
        const auto sample = passkey_sample(lengths[a], depths[b], rng);
        const auto stream = pipeline::segment_input(sample.context, l);
        auto cache = pipeline::prefill(model, stream).cache;
        if (!stream.residual.empty()) cache = model::append_cache(cache, compress(model, stream.residual));
        std::vector<int> live = sample.query;
        std::size_t ok = 0;
        for (int expected : sample.passkey) {
          const std::vector<int> unscored(live.size(), -1);
          const auto out = model::decoder_forward(model, live, cache, unscored);
          const int tok = pipeline::greedy_token(out.logits, model.config.byte_vocab);
          if (tok == expected) ++ok;
          live.push_back(tok);
        }
        hits += ok;
        if (ok == sample.passkey.size()) ++pass;
      }
      const double denom = trials == 0 ? 1.0 : static_cast<double>(trials);
      g.pass_rate.back().push_back(static_cast<double>(pass) / denom);
      g.token_accuracy.back().push_back(static_cast<double>(hits) / (2.0 * denom));
    }
  }
  return g;
}

void write_matrix_csv(const std::filesystem::path& path, const NeedleGrid& grid,
                      const std::vector<std::vector<double>>& values) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw EvalError("cannot write " + path.string());
  f << "length";
  for (double d : grid.depths) f << ',' << d;
  f << '\n' << std::setprecision(6);
  for (std::size_t a = 0; a < grid.lengths.size(); ++a) {
    f << grid.lengths[a];
    for (double v : values[a]) f << ',' << v;
    f << '\n';
  }
}

void write_heatmap_png(const std::filesystem::path& path, const std::vector<std::vector<double>>& values,
                       std::size_t cell_px) {
  const std::size_t rows = values.size(), cols = rows ? values[0].size() : 0;
  if (rows == 0 || cols == 0 || cell_px == 0) throw EvalError("heat map: empty matrix");
  const std::size_t w = cols * cell_px, h = rows * cell_px;
  std::string raw;
  raw.reserve(h * (1 + 3 * w));
  for (std::size_t y = 0; y < h; ++y) {
    raw.push_back(0);  // filter: none
    for (std::size_t x = 0; x < w; ++x) {
      const auto rgb = colour(values[y / cell_px][x / cell_px]);
      raw.append(reinterpret_cast<const char*>(rgb.data()), 3);
    }
  }
  uLongf packed_len = compressBound(static_cast<uLong>(raw.size()));
  std::string packed(packed_len, '\0');
  if (compress2(reinterpret_cast<Bytef*>(packed.data()), &packed_len,
                reinterpret_cast<const Bytef*>(raw.data()), static_cast<uLong>(raw.size()), 9) != Z_OK)
    throw EvalError("heat map: compression failed");
  packed.resize(packed_len);

  std::string ihdr;
  put_u32(ihdr, static_cast<std::uint32_t>(w));
  put_u32(ihdr, static_cast<std::uint32_t>(h));
  ihdr += std::string{8, 2, 0, 0, 0};  // 8-bit RGB, no interlace

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw EvalError("cannot write " + path.string());
  f.write("\x89PNG\r\n\x1a\n", 8);
  put_chunk(f, "IHDR", ihdr);
  put_chunk(f, "IDAT", packed);
  put_chunk(f, "IEND", "");
}

}  // namespace segkv::harness
