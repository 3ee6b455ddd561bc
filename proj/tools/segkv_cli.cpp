// SPDX-License-Identifier: Apache-2.0
//
// segkv: training, evaluation and benchmark front end.
// Exit codes: 0 ok, 1 task failure, 2 usage or configuration error.

#include <CLI11.hpp>

#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include "segkv/harness/config.hpp"
#include "segkv/harness/data.hpp"
#include "segkv/harness/run.hpp"
#include "segkv/model/checkpoint.hpp"

namespace {

using namespace segkv;

constexpr int kOk = 0, kTaskFailure = 1, kConfigError = 2;
constexpr double kEquivalenceTol = 1e-9;

struct Flags {
  std::string config;
  harness::Overrides overrides;
  bool timing = false;
};

void add_flags(CLI::App& cmd, Flags& f) {
  cmd.add_option("--config", f.config, "Run configuration file")->check(CLI::ExistingFile);
  cmd.add_option("--seed", f.overrides.seed, "Run seed");
  cmd.add_option("--strategy", f.overrides.strategy,
                 "dense | naive_incremental | decoder_incremental | sparse");
  cmd.add_option("--budget", f.overrides.budget, "Sparse budget S");
  cmd.add_option("--ratio", f.overrides.ratio, "Compression ratio l / c");
  cmd.add_option("--out", f.overrides.out_dir, "Output directory");
  cmd.add_option("--checkpoint", f.overrides.checkpoint, "Checkpoint directory to load");
  cmd.add_flag("--timing", f.timing, "Add wall-clock fields to metrics");
}

harness::RunConfig resolve(const Flags& f) {
  harness::RunConfig cfg = f.config.empty() ? harness::RunConfig{} : harness::load_run_config(f.config);
  harness::apply_overrides(cfg, f.overrides);
  if (f.timing) cfg.timing = true;
  cfg.validate();
  return cfg;
}

int cmd_train(const harness::RunConfig& cfg) {
  auto model = harness::prepare_model(cfg);
  const auto sum = harness::run_train(cfg, model, std::cout, std::max<std::size_t>(1, cfg.train.steps / 10));
  std::cout << "final loss " << sum.final_loss << '\n';
  if (sum.exact_match >= 0.0) std::cout << "exact match " << sum.exact_match << '\n';
  std::cout << "checkpoint " << harness::checkpoint_dir(cfg).string() << '\n';
  return kOk;
}

int cmd_eval_ae(const harness::RunConfig& cfg) {
  const auto model = harness::prepare_model(cfg);
  std::cout << "exact match " << harness::run_eval_ae(cfg, model) << '\n';
  return kOk;
}

int cmd_eval_ppl(const harness::RunConfig& cfg) {
  const auto model = harness::prepare_model(cfg);
  const auto s = harness::run_eval_ppl(cfg, model);
  std::cout << "perplexity " << s.with_context << " (no context " << s.without_context << ")\n";
  return kOk;
}

int cmd_eval_needle(const harness::RunConfig& cfg) {
  const auto model = harness::prepare_model(cfg);
  const auto g = harness::run_eval_needle(cfg, model);
  for (std::size_t a = 0; a < g.lengths.size(); ++a) {
    std::cout << "length " << g.lengths[a] << ":";
    for (double v : g.pass_rate[a]) std::cout << ' ' << v;
    std::cout << '\n';
  }
  std::cout << "matrices in " << cfg.out_dir.string() << '\n';
  return kOk;
}

int cmd_bench_grad(const harness::RunConfig& cfg) {
  const auto model = harness::prepare_model(cfg);
  const auto s = harness::run_bench_grad(cfg, model);
  std::cout << "equivalence over " << s.configurations << " documents: incremental " << s.max_incremental_error
            << ", sparse S>=k " << s.max_sparse_error << '\n';
  for (const auto& b : s.bias) {
    std::cout << "bias " << train::to_string(b.policy.kind) << ": cosine_of_mean " << b.cosine_of_mean
              << " mean_cosine " << b.mean_cosine << " relative_bias " << b.relative_bias << '\n';
  }
  const bool ok = s.max_incremental_error < kEquivalenceTol && s.max_sparse_error < kEquivalenceTol;
  if (!ok) std::cerr << "equivalence check failed (tolerance " << kEquivalenceTol << ")\n";
  return ok ? kOk : kTaskFailure;
}

int cmd_bench_mem(const harness::RunConfig& cfg) {
  const auto model = harness::prepare_model(cfg);
  const auto s = harness::run_bench_mem(cfg, model);
  for (const auto& r : s.rows) {
    std::cout << train::to_string(r.strategy);
    if (r.strategy == train::Strategy::sparse) std::cout << '/' << train::to_string(r.policy);
    std::cout << ": encoder peak " << r.encoder_peak << ", decoder peak " << r.decoder_peak
              << ", encoder backward " << r.encoder_bwd << (r.law_holds ? "" : "  LAW VIOLATED") << '\n';
  }
  std::cout << "kv bytes: per-token " << s.kv_bytes_baseline << ", r=8 " << s.kv_bytes_r8 << ", r=32 "
            << s.kv_bytes_r32 << '\n';
  return s.all_laws_hold ? kOk : kTaskFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"segkv: segment compression into latent KV memories"};
  app.require_subcommand(1);
  Flags flags;
  std::optional<int (*)(const harness::RunConfig&)> action;

  const std::pair<const char*, const char*> names[] = {
      {"train", "Train adapters (LM or auto-encoding objective)"},
      {"eval-ae", "Auto-encoding exact match"},
      {"eval-ppl", "Perplexity with and without the compressed prefix"},
      {"eval-needle", "Passkey retrieval grid, CSV and PNG"},
      {"bench-grad", "Gradient equivalence and policy bias suites"},
      {"bench-mem", "Cache accounting across strategies"}};
  int (*const handlers[])(const harness::RunConfig&) = {cmd_train,      cmd_eval_ae,    cmd_eval_ppl,
                                                        cmd_eval_needle, cmd_bench_grad, cmd_bench_mem};
  for (std::size_t i = 0; i < std::size(names); ++i) {
    auto* sub = app.add_subcommand(names[i].first, names[i].second);
    add_flags(*sub, flags);
    sub->callback([&action, h = handlers[i]] { action = h; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfigError;
  }

  harness::RunConfig cfg;
  try {
    cfg = resolve(flags);
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  }
  try {
    return (*action)(cfg);
  } catch (const model::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kTaskFailure;
  }
}
