// SPDX-License-Identifier: Apache-2.0
//
// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Tolerances and trial counts are fixed below.

#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "grad_check.hpp"
#include "segkv/harness/config.hpp"
#include "segkv/harness/run.hpp"
#include "segkv/instrument/ledger.hpp"
#include "segkv/model/transformer.hpp"
#include "segkv/pipeline/pipeline.hpp"
#include "segkv/train/policy_bias.hpp"
#include "segkv/train/strategies.hpp"

namespace {

using namespace segkv;
using instrument::CacheKind;
using train::EvictionPolicy;
using train::GradLedger;
using Kind = EvictionPolicy::Kind;
namespace fs = std::filesystem;

constexpr double kEquivalenceTol = 1e-9;
constexpr double kFdStep = 1e-5;
constexpr double kFdRelTol = 1e-4;
constexpr double kFdFloor = 1e-6;  // denominator floor for near-zero gradient entries
constexpr std::size_t kFdSamples = 60;
constexpr std::size_t kReservoirTrials = 20000;
constexpr double kReservoirSe = 3.0;
constexpr double kChiSquareP = 0.01;
constexpr std::size_t kBiasTrials = 5000;
constexpr double kExactMatchTarget = 0.95;
constexpr std::size_t kOverfitSteps = 3000;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Shape {
  std::size_t k;
  testing::TinyShape s;
  std::uint64_t seed;
};

// k in 2..6, L in {1,2}, d in {8,16}, c in {1,2}: 40 configurations.
std::vector<Shape> equivalence_grid() {
  std::vector<Shape> out;
  std::uint64_t seed = 100;
  for (std::size_t k = 2; k <= 6; ++k)
    for (std::size_t layers : {1, 2})
      for (std::size_t d : {8, 16})
        for (std::size_t c : {1, 2}) out.push_back({k, {layers, d, 2, 4, c, 2}, seed++});
  return out;
}

Outcome criterion_equivalence() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0, worst_naive = 0.0;
  const auto grid = equivalence_grid();
  for (const auto& g : grid) {
    const auto m = testing::tiny_model(g.s, g.seed);
    const auto segs = testing::random_segments(g.k, g.s.l, g.seed);
    GradLedger dl, il, nl;
    train::train_step_dense(m, segs, dl);
    train::train_step_decoder_incremental(m, segs, il);
    train::train_step_naive_incremental(m, segs, nl);
    worst = std::max(worst, train::max_abs_diff(il.theta_grad, dl.theta_grad));
    worst_naive = std::max(worst_naive, train::max_abs_diff(nl.theta_grad, dl.theta_grad));
  }
  const double secs = seconds_since(t0);
  return {grid.size() >= 20 && worst < kEquivalenceTol && secs < 120.0,
          fmt("%zu configs, max |decoder_incremental - dense| = %.3g (naive %.3g), %.1f s", grid.size(), worst,
              worst_naive, secs)};
}

Outcome criterion_sparse_degeneracy() {
  double worst = 0.0;
  std::size_t runs = 0;
  for (const auto& g : equivalence_grid()) {
    const auto m = testing::tiny_model(g.s, g.seed);
    const auto segs = testing::random_segments(g.k, g.s.l, g.seed);
    GradLedger dl;
    train::train_step_dense(m, segs, dl);
    for (auto kind : {Kind::reservoir, Kind::local_window, Kind::random_oracle}) {
      for (std::size_t budget : {g.k, g.k + 2}) {
        GradLedger sl;
        Rng rng(g.seed);
        train::train_step_sparse(m, segs, {kind, budget}, rng, sl);
        worst = std::max(worst, train::max_abs_diff(sl.theta_grad, dl.theta_grad));
        ++runs;
      }
    }
  }
  return {worst < kEquivalenceTol, fmt("%zu runs (3 policies, S in {k, k+2}), max |sparse - dense| = %.3g", runs, worst)};
}

Outcome criterion_finite_difference() {
  const auto t0 = std::chrono::steady_clock::now();
  const testing::TinyShape shape{2, 8, 2, 4, 2, 2};
  const auto base = testing::tiny_model(shape, 31);
  const auto segs = testing::random_segments(3, shape.l, 31);
  GradLedger dl;
  const auto analytic = train::train_step_dense(base, segs, dl);

  std::vector<ad::Buffer> values;
  for (const auto& t : base.adapters.flat()) values.emplace_back(t.values().begin(), t.values().end());
  auto loss_at = [&](std::size_t p, std::size_t i, double v) {
    auto vals = values;
    vals[p][i] = v;
    auto m = base;
    m.adapters.assign(vals);
    GradLedger l;
    train::train_step_dense(m, segs, l);
    return l.loss;
  };

  Rng rng(32);
  std::size_t total = 0;
  for (const auto& v : values) total += v.size();
  double worst = 0.0;
  std::map<std::size_t, std::size_t> per_tensor;
  for (std::size_t n = 0; n < kFdSamples; ++n) {
    std::size_t flat = rng.randint(0, total - 1), p = 0;
    while (flat >= values[p].size()) flat -= values[p++].size();
    const double x = values[p][flat];
    const double numeric = (loss_at(p, flat, x + kFdStep) - loss_at(p, flat, x - kFdStep)) / (2.0 * kFdStep);
    worst = std::max(worst, testing::rel_err(analytic[p][flat], numeric, kFdFloor));
    ++per_tensor[p];
  }
  const double secs = seconds_since(t0);
  return {worst < kFdRelTol && secs < 60.0,
          fmt("%zu entries over %zu of %zu tensors, max rel err %.3g (h=%g), %.1f s", kFdSamples, per_tensor.size(),
              values.size(), worst, kFdStep, secs)};
}

Outcome criterion_reservoir_statistics() {
  const std::size_t k = 10, S = 3;
  const testing::TinyShape shape{1, 8, 2, 4, 1, 1};
  const auto m = testing::tiny_model(shape, 41);
  const auto segs = testing::random_segments(k, shape.l, 41);
  std::vector<std::size_t> kept(k + 1, 0);
  std::map<std::vector<std::size_t>, std::size_t> subsets;
  for (std::size_t t = 0; t < kReservoirTrials; ++t) {
    Rng rng(stream_seed(42, t));
    GradLedger g;
    train::train_step_sparse(m, segs, {Kind::reservoir, S}, rng, g);
    auto r = g.retained;
    std::sort(r.begin(), r.end());
    for (std::size_t s : r) ++kept[s];
    ++subsets[r];
  }
  const double p = static_cast<double>(S) / static_cast<double>(k);
  const double n = static_cast<double>(kReservoirTrials);
  const double se = std::sqrt(p * (1 - p) / n);
  double worst_z = 0.0;
  for (std::size_t s = 1; s <= k; ++s)
    worst_z = std::max(worst_z, std::abs(static_cast<double>(kept[s]) / n - p) / se);

  // C(10, 3) = 120 equally likely subsets.
  const std::size_t cells = 120;
  const double expected = n / static_cast<double>(cells);
  double chi2 = 0.0;
  for (const auto& [set, count] : subsets) chi2 += std::pow(static_cast<double>(count) - expected, 2) / expected;
  chi2 += static_cast<double>(cells - subsets.size()) * expected;  // unseen subsets
  const boost::math::chi_squared dist(static_cast<double>(cells - 1));
  const double pval = boost::math::cdf(boost::math::complement(dist, chi2));
  const bool sizes_ok = std::all_of(subsets.begin(), subsets.end(), [&](const auto& e) { return e.first.size() == S; });
  return {worst_z <= kReservoirSe && pval > kChiSquareP && subsets.size() <= cells && sizes_ok,
          fmt("k=%zu S=%zu %zu trials: max |freq - 0.3| = %.2f SE, %zu subsets seen, chi2=%.1f df=119 p=%.3f", k, S,
              kReservoirTrials, worst_z, subsets.size(), chi2, pval)};
}

Outcome criterion_memory_law() {
  const testing::TinyShape shape{1, 8, 2, 4, 1, 1};
  const auto m = testing::tiny_model(shape, 51);
  const std::size_t S = 3;
  bool ok = true;
  std::string bad;
  const std::size_t ks[] = {1, 2, 3, 4, 5, 8, 13, 21, 32, 48, 64};
  for (std::size_t k : ks) {
    const auto segs = testing::random_segments(k, shape.l, 51 + k);
    GradLedger dl, il;
    train::train_step_dense(m, segs, dl);
    train::train_step_decoder_incremental(m, segs, il);
    auto check = [&](bool c, const char* what) {
      if (!c) {
        ok = false;
        bad += fmt(" k=%zu:%s", k, what);
      }
    };
    check(dl.caches.peak(CacheKind::encoder) == k, "dense");
    check(il.caches.peak(CacheKind::encoder) == k, "incremental-encoder");
    check(il.caches.peak(CacheKind::decoder) == 1, "incremental-decoder");
    for (auto kind : {Kind::reservoir, Kind::local_window}) {
      GradLedger sl;
      Rng rng(k);
      train::train_step_sparse(m, segs, {kind, S}, rng, sl);
      check(sl.caches.peak(CacheKind::encoder) <= S + 1, "sparse-encoder");
      check(sl.caches.peak(CacheKind::decoder) == 1, "sparse-decoder");
    }
  }
  return {ok, fmt("k in {1..64} (%zu values), S=%zu: sparse <= S+1, incremental == k / 1, dense == k%s", std::size(ks), S,
                  bad.c_str())};
}

Outcome criterion_recomputation_law() {
  const testing::TinyShape shape{1, 8, 2, 4, 1, 1};
  const auto m = testing::tiny_model(shape, 61);
  bool ok = true;
  for (std::size_t k = 2; k <= 10; ++k) {
    const auto segs = testing::random_segments(k, shape.l, 61 + k);
    GradLedger nl, il, sl;
    train::train_step_naive_incremental(m, segs, nl);
    train::train_step_decoder_incremental(m, segs, il);
    Rng rng(k);
    train::train_step_sparse(m, segs, {Kind::reservoir, 2}, rng, sl);
    ok = ok && nl.counters.encoder_bwd == k * (k - 1) / 2 && il.counters.encoder_bwd == k &&
         sl.counters.encoder_bwd == k;
  }
  return {ok, "k=2..10: naive == k(k-1)/2, decoder_incremental == k, sparse == k"};
}

std::size_t cache_bytes(const model::KVCache& c) {
  std::size_t n = 0;
  for (const auto& t : c.keys) n += t.numel();
  for (const auto& t : c.values) n += t.numel();
  return n * sizeof(double);
}

Outcome criterion_compression_bytes() {
  const std::size_t segments = 8;
  Rng rng(71);
  auto c8 = model::default_config(8), c32 = model::default_config(32);
  c8.layers = c32.layers = 1;
  std::vector<int> tokens(segments * c8.segment_len);
  for (int& t : tokens) t = static_cast<int>(rng.randint(0, 255));
  const auto stream = pipeline::segment_input(tokens, c8.segment_len);
  const std::size_t r8 = cache_bytes(pipeline::prefill(model::init_model(c8, 72), stream).cache);
  const std::size_t r32 = cache_bytes(pipeline::prefill(model::init_model(c32, 72), stream).cache);
  // One key and one value row of width d per token per layer.
  const std::size_t baseline = tokens.size() * 2 * c8.d_model * c8.layers * sizeof(double);
  const bool ok = r32 * 32 == baseline && r32 * 4 == r8 &&
                  r32 == instrument::kv_cache_bytes(tokens.size() / 32, c32.layers, c32.d_model);
  return {ok, fmt("%zu tokens: per-token %zu B, r=8 %zu B, r=32 %zu B (1/%g, 1/%g)", tokens.size(), baseline, r8, r32,
                  static_cast<double>(baseline) / static_cast<double>(r32),
                  static_cast<double>(r8) / static_cast<double>(r32))};
}

Outcome criterion_policy_bias() {
  const testing::TinyShape shape{1, 8, 2, 4, 2, 2};
  const auto m = testing::tiny_model(shape, 81);
  const auto segs = testing::random_segments(8, shape.l, 81);
  const auto res = train::measure_policy_bias(m, segs, {Kind::reservoir, 2}, kBiasTrials, 82);
  const auto loc = train::measure_policy_bias(m, segs, {Kind::local_window, 2}, kBiasTrials, 82);
  return {res.cosine_of_mean > loc.cosine_of_mean,
          fmt("k=8 S=2 %zu trials: cos(mean, dense) reservoir %.6f vs local_window %.6f; mean per-trial cos %.6f vs "
              "%.6f; reservoir bias |E[g]-g|/|g| = %.4f (local_window %.4f)",
              kBiasTrials, res.cosine_of_mean, loc.cosine_of_mean, res.mean_cosine, loc.mean_cosine,
              res.relative_bias, loc.relative_bias)};
}

Outcome criterion_autoencode_overfit(const fs::path& scratch) {
  const auto t0 = std::chrono::steady_clock::now();
  harness::RunConfig cfg;
  cfg.model = model::default_config(4);
  cfg.train.objective = harness::Objective::autoencode;
  cfg.train.steps = kOverfitSteps;
  cfg.train.batch = 1;
  cfg.train.optim.lr = 1e-2;
  cfg.train.optim.warmup = kOverfitSteps / 20;
  cfg.data.source = harness::DataSource::random;
  cfg.data.sequences = 32;
  cfg.data.sequence_len = cfg.model.segment_len;
  cfg.seed = 91;
  cfg.out_dir = scratch / "overfit";
  cfg.validate();
  auto m = harness::prepare_model(cfg);
  std::ostringstream log;
  const auto sum = harness::run_train(cfg, m, log);
  const double secs = seconds_since(t0);
  return {sum.exact_match >= kExactMatchTarget && secs < 600.0,
          fmt("32 random sequences of %zu bytes, r=4, %zu steps: exact match %.4f (target %.2f), loss %.3f -> %.3f, "
              "%.0f s",
              cfg.data.sequence_len, kOverfitSteps, sum.exact_match, kExactMatchTarget, sum.first_loss, sum.final_loss,
              secs)};
}

Outcome criterion_generation() {
  bool ok = true;
  std::size_t steps_checked = 0, events = 0;
  for (const auto& [shape, prompt_len, steps] :
       {std::tuple{testing::TinyShape{1, 8, 2, 4, 2, 2}, std::size_t{6}, std::size_t{23}},
        std::tuple{testing::TinyShape{2, 16, 2, 8, 2, 2}, std::size_t{8}, std::size_t{30}},
        std::tuple{testing::TinyShape{1, 8, 2, 4, 4, 2}, std::size_t{3}, std::size_t{17}}}) {
    const auto m = testing::tiny_model(shape, 101);
    const auto prompt = testing::random_segments(1, prompt_len, 102)[0];
    auto st = pipeline::start_generation(m, prompt);
    const std::size_t l = shape.l, c = shape.c;
    for (std::size_t s = 0; s < steps; ++s) {
      const auto r = pipeline::generate_step(st, m);
      const std::size_t tokens = prompt_len + st.produced.size();
      const bool boundary = tokens % l == 0;
      const std::size_t entries = st.cache.keys[0].shape()[0];
      ok = ok && r.compressed == boundary && entries == c * (tokens / l) && st.pending.size() == tokens % l;
      for (const auto& k : st.cache.keys) ok = ok && k.shape()[0] == entries;
      events += r.compressed ? 1 : 0;
      ++steps_checked;
    }
  }
  return {ok, fmt("%zu generation steps over 3 configs, %zu compression events, entries == c*floor(n/l) at every step",
                  steps_checked, events)};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

Outcome criterion_cli_determinism(const fs::path& scratch) {
  struct Run {
    std::string args;
    std::vector<std::string> files;
  };
  const std::string cfg = std::string(" --config ") + SEGKV_TINY_CONFIG;
  const Run runs[] = {
      {"bench-grad --seed 7" + cfg, {"metrics.jsonl"}},
      {"bench-mem --seed 7" + cfg, {"metrics.jsonl"}},
      {"train --seed 7" + cfg, {"metrics.jsonl", "checkpoint/manifest.json", "checkpoint/params.bin"}},
      {"train --seed 7 --strategy decoder_incremental" + cfg, {"metrics.jsonl", "checkpoint/params.bin"}},
  };
  std::size_t compared = 0;
  bool ok = true;
  std::string bad;
  for (std::size_t r = 0; r < std::size(runs); ++r) {
    std::string bytes[2];
    for (int rep = 0; rep < 2; ++rep) {
      const fs::path out = scratch / ("cli" + std::to_string(r) + "_" + std::to_string(rep));
      fs::remove_all(out);
      const std::string cmd =
          std::string(SEGKV_CLI) + " " + runs[r].args + " --out " + out.string() + " > /dev/null 2>&1";
      if (std::system(cmd.c_str()) != 0) {
        ok = false;
        bad += " [" + runs[r].args + " exited nonzero]";
      }
      for (const auto& f : runs[r].files) bytes[rep] += slurp(out / f) + '\0';
    }
    compared += runs[r].files.size();
    if (bytes[0].size() <= runs[r].files.size() || bytes[0] != bytes[1]) {
      ok = false;
      bad += " [" + runs[r].args + " differs]";
    }
  }
  return {ok, fmt("%zu CLI runs twice each, %zu files byte-identical%s", std::size(runs), compared, bad.c_str())};
}

}  // namespace

int main() {
  const fs::path scratch = fs::temp_directory_path() / "segkv_acceptance";
  fs::remove_all(scratch);
  fs::create_directories(scratch);

  const std::pair<const char*, std::function<Outcome()>> criteria[] = {
      {"gradient equivalence", criterion_equivalence},
      {"sparse degeneracy", criterion_sparse_degeneracy},
      {"finite differences", criterion_finite_difference},
      {"reservoir statistics", criterion_reservoir_statistics},
      {"memory law", criterion_memory_law},
      {"recomputation law", criterion_recomputation_law},
      {"compression-ratio bytes", criterion_compression_bytes},
      {"policy bias ordering", criterion_policy_bias},
      {"auto-encoding overfit", [&] { return criterion_autoencode_overfit(scratch); }},
      {"dynamic cache update", criterion_generation},
      {"CLI determinism", [&] { return criterion_cli_determinism(scratch); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < std::size(criteria); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("%s %2zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  std::printf("%d of %zu criteria failed\n", failed, std::size(criteria));
  return failed == 0 ? 0 : 1;
}
