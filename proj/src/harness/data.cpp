// SPDX-License-Identifier: Apache-2.0

#include "segkv/harness/data.hpp"

#include <fstream>
#include <iterator>

namespace segkv::harness {
namespace {

constexpr std::string_view kFiller = "The grass is green. The sky is blue. The sun is yellow. ";
constexpr std::string_view kMarker = "KEY=";

}  // namespace

std::vector<int> ingest_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::vector<int> out;
  for (auto it = std::istreambuf_iterator<char>(in); it != std::istreambuf_iterator<char>(); ++it)
    out.push_back(static_cast<unsigned char>(*it));
  if (in.bad()) throw DataError("read error on " + path.string());
  return out;
}

std::string detokenize(std::span<const int> tokens) {
  std::string s;
  s.reserve(tokens.size());
  for (int t : tokens) {
    if (t < 0 || t > 255) throw DataError("detokenize: id " + std::to_string(t) + " is not a byte");
    s.push_back(static_cast<char>(static_cast<unsigned char>(t)));
  }
  return s;
}

std::vector<int> random_bytes(std::size_t length, Rng& rng) {
  std::vector<int> out(length);
  for (int& t : out) t = static_cast<int>(rng.randint(0, 255));
  return out;
}

std::vector<int> periodic_sequence(std::size_t length, std::size_t period, Rng& rng) {
  if (period == 0) throw std::invalid_argument("periodic_sequence: period must be >= 1");
  const auto motif = random_bytes(period, rng);
  std::vector<int> out(length);
  for (std::size_t i = 0; i < length; ++i) out[i] = motif[i % period];
  return out;
}

PasskeySample passkey_sample(std::size_t length, double depth, Rng& rng) {
  if (!(depth >= 0.0 && depth <= 1.0))
    throw std::invalid_argument("passkey_sample: depth must lie in [0, 1]");
  const std::size_t needle = kMarker.size() + 2;
  if (length < needle) throw std::invalid_argument("passkey_sample: context too short for the needle");

  PasskeySample s;
  s.passkey = random_bytes(2, rng);
  const std::size_t room = length - needle;
  const auto start = static_cast<std::size_t>(depth * static_cast<double>(room) + 0.5);
  s.context.reserve(length);
  for (std::size_t i = 0; s.context.size() < start; ++i)
    s.context.push_back(static_cast<unsigned char>(kFiller[i % kFiller.size()]));
  for (char ch : kMarker) s.context.push_back(static_cast<unsigned char>(ch));
  s.position = s.context.size();
  s.context.insert(s.context.end(), s.passkey.begin(), s.passkey.end());
  for (std::size_t i = start; s.context.size() < length; ++i)
    s.context.push_back(static_cast<unsigned char>(kFiller[i % kFiller.size()]));
  for (char ch : kMarker) s.query.push_back(static_cast<unsigned char>(ch));
  return s;
}

}  // namespace segkv::harness
