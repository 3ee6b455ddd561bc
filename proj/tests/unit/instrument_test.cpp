// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "segkv/instrument/metrics.hpp"

namespace segkv::instrument {
namespace {

TEST(LedgerTest, RegisterReleaseRestoresCounts) {
  CacheLedger ledger;
  {
    auto h = ledger.register_cache(CacheKind::encoder, 1, 100);
    EXPECT_EQ(ledger.live(CacheKind::encoder), 1u);
    EXPECT_EQ(ledger.live_bytes(), 100u);
    h.release();
    EXPECT_THROW(h.release(), LedgerError);
  }
  EXPECT_EQ(ledger.live(CacheKind::encoder), 0u);
  EXPECT_EQ(ledger.live_bytes(), 0u);
  EXPECT_EQ(ledger.peak(CacheKind::encoder), 1u);
  EXPECT_EQ(ledger.peak_bytes(), 100u);
  EXPECT_THROW(ledger.release(12345), LedgerError);
}

TEST(LedgerTest, PeakTracksSimultaneousRegistrations) {
  CacheLedger ledger;
  std::vector<CacheHandle> handles;
  for (std::size_t i = 1; i <= 7; ++i) handles.push_back(ledger.register_cache(CacheKind::decoder, i));
  EXPECT_EQ(ledger.peak(CacheKind::decoder), 7u);
  EXPECT_EQ(ledger.peak(CacheKind::encoder), 0u);
  handles.clear();
  EXPECT_EQ(ledger.live(CacheKind::decoder), 0u);
  EXPECT_EQ(ledger.peak(CacheKind::decoder), 7u);
}

TEST(LedgerTest, MovedHandleReleasesOnce) {
  CacheLedger ledger;
  auto a = ledger.register_cache(CacheKind::encoder, 1);
  CacheHandle b = std::move(a);
  EXPECT_FALSE(a.live());
  EXPECT_TRUE(b.live());
  b.release();
  EXPECT_EQ(ledger.live(CacheKind::encoder), 0u);
}

TEST(KvBytesTest, RatioArithmetic) {
  // 4096 tokens, 2 layers, d = 64.
  const std::size_t baseline = kv_cache_bytes(4096, 2, 64);
  EXPECT_EQ(baseline, 2u * 4096u * 2u * 64u * 8u);
  EXPECT_EQ(kv_cache_bytes(4096 / 32, 2, 64) * 32, baseline);
  EXPECT_EQ(kv_cache_bytes(4096 / 8, 2, 64), 4 * kv_cache_bytes(4096 / 32, 2, 64));
}

TEST(ReportTest, EmptyRunIsZeroed) {
  const auto j = report(RunMetrics{});
  for (const char* key : {"encoder_fwd", "encoder_bwd", "decoder_fwd", "decoder_bwd", "tokens_processed",
                          "live_encoder_caches_peak", "live_decoder_caches_peak", "bytes_estimate", "kv_cache_bytes"})
    EXPECT_EQ(j.at(key).get<std::size_t>(), 0u) << key;
  EXPECT_FALSE(j.contains("elapsed_s"));
  EXPECT_TRUE(report(RunMetrics{}, true).contains("tokens_per_s"));
}

TEST(ReportTest, TimingDoesNotLeakIntoDeterministicFields) {
  RunMetrics a, b;
  a.counters.encoder_fwd = b.counters.encoder_fwd = 3;
  a.counters.elapsed_s = 1.0;
  b.counters.elapsed_s = 2.0;
  EXPECT_EQ(report(a).dump(), report(b).dump());
}

TEST(ReportTest, JsonlAppendsLines) {
  const auto path = std::filesystem::temp_directory_path() / "segkv_instrument_test" / "m.jsonl";
  std::filesystem::remove_all(path.parent_path());
  RunMetrics m;
  m.run = "x";
  append_jsonl(path, report(m));
  append_jsonl(path, report(m));
  std::ifstream in(path);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    EXPECT_EQ(nlohmann::json::parse(line).at("run"), "x");
    ++n;
  }
  EXPECT_EQ(n, 2);
  std::filesystem::remove_all(path.parent_path());
}

}  // namespace
}  // namespace segkv::instrument
