// SPDX-License-Identifier: Apache-2.0

#include "segkv/harness/run.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "segkv/harness/data.hpp"
#include "segkv/instrument/metrics.hpp"
#include "segkv/model/checkpoint.hpp"
#include "segkv/pipeline/pipeline.hpp"
#include "segkv/train/optimizer.hpp"

namespace segkv::harness {
namespace {

using nlohmann::ordered_json;
using train::EvictionPolicy;
using train::Strategy;

void reset_metrics(const RunConfig& cfg) {
  std::filesystem::create_directories(cfg.out_dir);
  std::ofstream(metrics_path(cfg), std::ios::trunc);
}

void emit(const RunConfig& cfg, const ordered_json& record) {
  instrument::append_jsonl(metrics_path(cfg), record);
}

std::vector<train::Segment> split(const std::vector<int>& doc, std::size_t l) {
  return pipeline::segment_input(doc, l).segments;
}

// kv_cache_bytes is the cache the last segment's decoder reads: k - 1 blocks.
instrument::RunMetrics step_metrics(const std::string& run, const model::ModelConfig& mc, Strategy s,
                                    const EvictionPolicy& p, std::size_t k, const train::GradLedger& g) {
  instrument::RunMetrics m;
  m.run = run;
  m.strategy = std::string(train::to_string(s));
  m.segments = k;
  m.budget = s == Strategy::sparse ? p.budget : 0;
  m.counters = g.counters;
  instrument::fill_from_ledger(m, g.caches);
  m.kv_cache_bytes = instrument::kv_cache_bytes((k - 1) * mc.latent_count, mc.layers, mc.d_model);
  m.grad_norm = train::grad_norm(g.theta_grad);
  m.loss = g.loss;
  return m;
}

std::size_t cache_entries(const model::KVCache& cache) {
  return cache.keys.empty() ? 0 : cache.keys[0].shape()[0];
}

TrainSummary train_lm(const RunConfig& cfg, model::Model& model, std::ostream& log,
                      std::size_t log_every) {
  const auto& ts = cfg.train;
  const std::size_t l = model.config.segment_len, k = ts.segments_per_step;
  DocumentSource source(cfg.data);
  Rng data = stream_rng(cfg, StreamId::lm_data);
  Rng policy = stream_rng(cfg, StreamId::policy);
  auto opt = train::make_optimizer(ts.optim.name, ts.optim.weight_decay);
  TrainSummary sum;
  for (std::size_t step = 0; step < ts.steps; ++step) {
    const auto segs = split(source.sample(k * l, data), l);
    train::GradLedger g;
    train::run_strategy(cfg.strategy, model, segs, cfg.policy, policy, g,
                        {.loss_scale = 1.0 / static_cast<double>(k)});
    const double lr = train::cosine_lr(step, ts.steps, ts.optim.lr, ts.optim.warmup);
    opt->step(model.adapters, g.theta_grad, lr);

    const double loss = g.loss / static_cast<double>(k);
    if (step == 0) sum.first_loss = loss;
    sum.final_loss = loss;
    auto m = step_metrics("train", model.config, cfg.strategy, cfg.policy, k, g);
    m.loss = loss;
    m.extra["step"] = step;
    m.extra["lr"] = lr;
    emit(cfg, instrument::report(m, cfg.timing));
    if (log_every && (step % log_every == 0 || step + 1 == ts.steps))
      log << "step " << step << " loss " << loss << '\n';
  }
  sum.steps = ts.steps;
  return sum;
}

TrainSummary train_autoencode(const RunConfig& cfg, model::Model& model, std::ostream& log,
                              std::size_t log_every) {
  const auto& ts = cfg.train;
  const auto set = autoencode_set(cfg, model.config);
  auto opt = train::make_optimizer(ts.optim.name, ts.optim.weight_decay);
  TrainSummary sum;
  // Batches walk the fixed set cyclically.
  for (std::size_t step = 0; step < ts.steps; ++step) {
    std::vector<AutoencodeBatch> batch;
    for (std::size_t i = 0; i < ts.batch; ++i) batch.push_back(set[(step * ts.batch + i) % set.size()]);
    const auto g = autoencode_gradient(model, batch);
    const double lr = train::cosine_lr(step, ts.steps, ts.optim.lr, ts.optim.warmup);
    opt->step(model.adapters, g.grad, lr);
    if (step == 0) sum.first_loss = g.loss;
    sum.final_loss = g.loss;
    ordered_json r;
    r["run"] = "train";
    r["objective"] = "autoencode";
    r["step"] = step;
    r["lr"] = lr;
    r["loss"] = g.loss;
    r["grad_norm"] = train::grad_norm(g.grad);
    emit(cfg, r);
    if (log_every && (step % log_every == 0 || step + 1 == ts.steps))
      log << "step " << step << " loss " << g.loss << '\n';
  }
  sum.steps = ts.steps;
  sum.exact_match = reconstruction_exact_match(model, set);
  return sum;
}

}  // namespace

Rng stream_rng(const RunConfig& cfg, StreamId id) {
  return Rng(stream_seed(cfg.seed, static_cast<std::uint64_t>(id)));
}

model::Model prepare_model(const RunConfig& cfg) {
  if (cfg.checkpoint.empty()) return model::init_model(cfg.model, cfg.seed);
  return model::load_checkpoint(cfg.checkpoint);
}

DocumentSource::DocumentSource(const DataSettings& settings) : settings_(settings) {
  if (settings_.source == DataSource::file) corpus_ = ingest_text(settings_.path);
}

std::vector<int> DocumentSource::sample(std::size_t length, Rng& rng) const {
  switch (settings_.source) {
    case DataSource::random:
      return random_bytes(length, rng);
    case DataSource::periodic: {
      const std::size_t period = rng.randint(settings_.period_min, settings_.period_max);
      return periodic_sequence(length, period, rng);
    }
    case DataSource::passkey:
      return passkey_sample(length, rng.uniform(), rng).context;
    case DataSource::file: {
      if (corpus_.size() < length) {
        throw DataError("data file " + settings_.path.string() + " holds " + std::to_string(corpus_.size()) +
                        " bytes, need " + std::to_string(length));
      }
      const std::size_t start = rng.randint(0, corpus_.size() - length);
      return {corpus_.begin() + static_cast<std::ptrdiff_t>(start),
              corpus_.begin() + static_cast<std::ptrdiff_t>(start + length)};
    }
  }
  throw DataError("unknown data source");
}

std::vector<AutoencodeBatch> autoencode_set(const RunConfig& cfg, const model::ModelConfig& mc) {
  DocumentSource source(cfg.data);
  Rng rng = stream_rng(cfg, StreamId::autoencode_data);
  std::vector<AutoencodeBatch> set;
  for (std::size_t i = 0; i < cfg.data.sequences; ++i)
    set.push_back(make_autoencode_batch(source.sample(cfg.data.sequence_len, rng), mc));
  return set;
}

std::filesystem::path metrics_path(const RunConfig& cfg) { return cfg.out_dir / "metrics.jsonl"; }
std::filesystem::path checkpoint_dir(const RunConfig& cfg) { return cfg.out_dir / "checkpoint"; }

TrainSummary run_train(const RunConfig& cfg, model::Model& model, std::ostream& log,
                       std::size_t log_every) {
  reset_metrics(cfg);
  auto sum = cfg.train.objective == Objective::lm ? train_lm(cfg, model, log, log_every)
                                                  : train_autoencode(cfg, model, log, log_every);
  ordered_json r;
  r["run"] = "train_summary";
  r["objective"] = to_string(cfg.train.objective);
  r["steps"] = sum.steps;
  r["first_loss"] = sum.first_loss;
  r["final_loss"] = sum.final_loss;
  if (sum.exact_match >= 0.0) r["exact_match"] = sum.exact_match;
  emit(cfg, r);
  model::save_checkpoint(model, checkpoint_dir(cfg));
  return sum;
}

double run_eval_ae(const RunConfig& cfg, const model::Model& model) {
  reset_metrics(cfg);
  const auto set = autoencode_set(cfg, model.config);
  std::vector<double> losses;
  for (const auto& b : set) losses.push_back(autoencode_loss(model, model.adapters, b).item());
  const double em = reconstruction_exact_match(model, set);
  ordered_json r;
  r["run"] = "eval_ae";
  r["sequences"] = set.size();
  r["sequence_len"] = cfg.data.sequence_len;
  r["ratio"] = model.config.ratio();
  r["mean_loss"] = losses.empty() ? 0.0 : std::accumulate(losses.begin(), losses.end(), 0.0) /
                                              static_cast<double>(losses.size());
  r["exact_match"] = em;
  emit(cfg, r);
  return em;
}

PerplexitySummary run_eval_ppl(const RunConfig& cfg, const model::Model& model) {
  reset_metrics(cfg);
  DocumentSource source(cfg.data);
  Rng rng = stream_rng(cfg, StreamId::ppl_data);
  const std::size_t len = cfg.eval.ppl_segments * model.config.segment_len;
  double with = 0.0, without = 0.0;
  std::size_t n = 0;
  for (std::size_t d = 0; d < cfg.eval.ppl_documents; ++d) {
    const auto doc = source.sample(len, rng);
    const auto a = eval_perplexity(model, doc, cfg.eval.ppl_context_segments);
    const auto b = eval_perplexity(model, doc, 0);
    with += a.mean_loss * static_cast<double>(a.scored_tokens);
    without += b.mean_loss * static_cast<double>(b.scored_tokens);
    n += a.scored_tokens;
    ordered_json r;
    r["run"] = "eval_ppl";
    r["document"] = d;
    r["perplexity"] = a.perplexity;
    r["perplexity_no_context"] = b.perplexity;
    emit(cfg, r);
  }
  PerplexitySummary s;
  if (n > 0) {
    s.with_context = std::exp(with / static_cast<double>(n));
    s.without_context = std::exp(without / static_cast<double>(n));
  }
  ordered_json r;
  r["run"] = "eval_ppl_summary";
  r["documents"] = cfg.eval.ppl_documents;
  r["segments"] = cfg.eval.ppl_segments;
  r["context_segments"] = cfg.eval.ppl_context_segments;
  r["ratio"] = model.config.ratio();
  r["perplexity"] = s.with_context;
  r["perplexity_no_context"] = s.without_context;
  emit(cfg, r);
  return s;
}

NeedleGrid run_eval_needle(const RunConfig& cfg, const model::Model& model) {
  reset_metrics(cfg);
  const std::uint64_t seed = stream_seed(cfg.seed, static_cast<std::uint64_t>(StreamId::needle));
  const auto grid =
      eval_needle(model, cfg.eval.needle_lengths, cfg.eval.needle_depths, cfg.eval.needle_trials, seed);
  for (std::size_t a = 0; a < grid.lengths.size(); ++a) {
    for (std::size_t b = 0; b < grid.depths.size(); ++b) {
      ordered_json r;
      r["run"] = "eval_needle";
      r["length"] = grid.lengths[a];
      r["depth"] = grid.depths[b];
      r["trials"] = cfg.eval.needle_trials;
      r["pass_rate"] = grid.pass_rate[a][b];
      r["token_accuracy"] = grid.token_accuracy[a][b];
      emit(cfg, r);
    }
  }
  write_matrix_csv(cfg.out_dir / "needle_pass.csv", grid, grid.pass_rate);
  write_matrix_csv(cfg.out_dir / "needle_token_acc.csv", grid, grid.token_accuracy);
  write_heatmap_png(cfg.out_dir / "needle_pass.png", grid.pass_rate);
  return grid;
}

BenchGradSummary run_bench_grad(const RunConfig& cfg, const model::Model& model) {
  reset_metrics(cfg);
  const std::size_t l = model.config.segment_len, kmax = cfg.eval.bench_segments;
  DocumentSource source(cfg.data);
  Rng rng = stream_rng(cfg, StreamId::bench);
  BenchGradSummary sum;
  for (std::size_t k = 2; k <= kmax; ++k) {
    const auto segs = split(source.sample(k * l, rng), l);
    train::GradLedger dl, nl, il, sl;
    train::train_step_dense(model, segs, dl);
    train::train_step_naive_incremental(model, segs, nl);
    train::train_step_decoder_incremental(model, segs, il);
    Rng unused(0);
    train::train_step_sparse(model, segs, {EvictionPolicy::Kind::reservoir, k}, unused, sl);
    const double inc = std::max(train::max_abs_diff(il.theta_grad, dl.theta_grad),
                                train::max_abs_diff(nl.theta_grad, dl.theta_grad));
    const double sp = train::max_abs_diff(sl.theta_grad, dl.theta_grad);
    sum.max_incremental_error = std::max(sum.max_incremental_error, inc);
    sum.max_sparse_error = std::max(sum.max_sparse_error, sp);
    ++sum.configurations;
    ordered_json r;
    r["run"] = "equivalence";
    r["segments"] = k;
    r["dense_grad_norm"] = train::grad_norm(dl.theta_grad);
    r["naive_vs_dense"] = train::max_abs_diff(nl.theta_grad, dl.theta_grad);
    r["decoder_incremental_vs_dense"] = train::max_abs_diff(il.theta_grad, dl.theta_grad);
    r["sparse_full_budget_vs_dense"] = sp;
    emit(cfg, r);
  }

  const auto segs = split(source.sample(kmax * l, rng), l);
  const std::uint64_t bias_seed = rng.next_u64();
  for (auto kind : {EvictionPolicy::Kind::local_window, EvictionPolicy::Kind::random_oracle,
                    EvictionPolicy::Kind::reservoir}) {
    const EvictionPolicy p{kind, cfg.policy.budget};
    auto rep = train::measure_policy_bias(model, segs, p, cfg.eval.bias_trials, bias_seed);
    ordered_json r;
    r["run"] = "bias";
    r["policy"] = std::string(train::to_string(kind));
    r["budget"] = p.budget;
    r["segments"] = segs.size();
    r["trials"] = rep.trials;
    r["cosine_of_mean"] = rep.cosine_of_mean;
    r["mean_cosine"] = rep.mean_cosine;
    r["relative_bias"] = rep.relative_bias;
    r["max_abs_bias"] = rep.max_abs_bias;
    emit(cfg, r);
    sum.bias.push_back(std::move(rep));
  }
  return sum;
}

BenchMemSummary run_bench_mem(const RunConfig& cfg, const model::Model& model) {
  reset_metrics(cfg);
  const std::size_t l = model.config.segment_len, k = cfg.eval.bench_segments, S = cfg.policy.budget;
  DocumentSource source(cfg.data);
  Rng rng = stream_rng(cfg, StreamId::bench);
  const auto doc = source.sample(k * l, rng);
  const auto segs = split(doc, l);
  BenchMemSummary sum;
  sum.all_laws_hold = true;

  struct Case {
    Strategy s;
    EvictionPolicy::Kind p;
  };
  const Case cases[] = {{Strategy::dense, EvictionPolicy::Kind::reservoir},
                        {Strategy::naive_incremental, EvictionPolicy::Kind::reservoir},
                        {Strategy::decoder_incremental, EvictionPolicy::Kind::reservoir},
                        {Strategy::sparse, EvictionPolicy::Kind::local_window},
                        {Strategy::sparse, EvictionPolicy::Kind::random_oracle},
                        {Strategy::sparse, EvictionPolicy::Kind::reservoir}};
  for (const auto& c : cases) {
    train::GradLedger g;
    Rng policy = stream_rng(cfg, StreamId::policy);
    const EvictionPolicy p{c.p, S};
    train::run_strategy(c.s, model, segs, p, policy, g);
    BenchMemRow row{c.s, c.p, k, g.caches.peak(instrument::CacheKind::encoder),
                    g.caches.peak(instrument::CacheKind::decoder), g.counters.encoder_bwd, false};
    switch (c.s) {
      case Strategy::dense:
        row.law_holds = row.encoder_peak == k && row.encoder_bwd == k;
        break;
      case Strategy::naive_incremental:
        row.law_holds = row.encoder_bwd == k * (k - 1) / 2;
        break;
      case Strategy::decoder_incremental:
        row.law_holds = row.encoder_peak == k && row.decoder_peak == 1 && row.encoder_bwd == k;
        break;
      case Strategy::sparse:
        // The random oracle keeps every graph alive so it can resample.
        row.law_holds = (c.p == EvictionPolicy::Kind::random_oracle ? row.encoder_peak == k
                                                                     : row.encoder_peak <= S + 1) &&
                        row.decoder_peak == 1 && row.encoder_bwd == k;
        break;
    }
    sum.all_laws_hold = sum.all_laws_hold && row.law_holds;
    auto m = step_metrics("bench_mem", model.config, c.s, p, k, g);
    if (c.s == Strategy::sparse) m.extra["policy"] = std::string(train::to_string(c.p));
    m.extra["law_holds"] = row.law_holds;
    emit(cfg, instrument::report(m, cfg.timing));
    sum.rows.push_back(row);
  }

  // KV footprint of the same stream at two ratios against one entry per token.
  const auto& mc = model.config;
  sum.kv_bytes_baseline = instrument::kv_cache_bytes(doc.size(), mc.layers, mc.d_model);
  auto footprint = [&](std::size_t ratio) {
    auto rc = mc;
    rc.latent_count = mc.segment_len / ratio;
    const auto m = model::init_model(rc, cfg.seed);
    const auto cache = pipeline::prefill(m, pipeline::segment_input(doc, l)).cache;
    return instrument::kv_cache_bytes(cache_entries(cache), mc.layers, mc.d_model);
  };
  ordered_json r;
  r["run"] = "kv_bytes";
  r["tokens"] = doc.size();
  r["baseline_bytes"] = sum.kv_bytes_baseline;
  if (l % 32 == 0) {
    sum.kv_bytes_r8 = footprint(8);
    sum.kv_bytes_r32 = footprint(32);
    r["r8_bytes"] = sum.kv_bytes_r8;
    r["r32_bytes"] = sum.kv_bytes_r32;
  }
  emit(cfg, r);
  return sum;
}

}  // namespace segkv::harness
