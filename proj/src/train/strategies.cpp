// SPDX-License-Identifier: Apache-2.0

#include "segkv/train/strategies.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <memory>
#include <numeric>
#include <stdexcept>

#include "segkv/autodiff/ops.hpp"
#include "segkv/autodiff/relay.hpp"
#include "segkv/model/transformer.hpp"
#include "segkv/train/reservoir.hpp"

namespace segkv::train {

using ad::Tensor;
using instrument::CacheKind;
using model::Model;

ThetaGrad zero_grad(const model::AdapterParams& params) {
  ThetaGrad g;
  params.for_each([&g](const std::string&, const Tensor& t) { g.emplace_back(t.numel(), 0.0); });
  return g;
}

double max_abs_diff(const ThetaGrad& a, const ThetaGrad& b) {
  if (a.size() != b.size()) throw std::invalid_argument("max_abs_diff: gradient sets differ in size");
  double m = 0.0;
  for (std::size_t p = 0; p < a.size(); ++p) {
    if (a[p].size() != b[p].size()) throw std::invalid_argument("max_abs_diff: buffer size mismatch");
    for (std::size_t i = 0; i < a[p].size(); ++i) m = std::max(m, std::abs(a[p][i] - b[p][i]));
  }
  return m;
}

double grad_norm(const ThetaGrad& g) {
  double s = 0.0;
  for (const auto& b : g)
    for (double v : b) s += v * v;
  return std::sqrt(s);
}

double cosine_similarity(const ThetaGrad& a, const ThetaGrad& b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine_similarity: size mismatch");
  double dot = 0.0;
  for (std::size_t p = 0; p < a.size(); ++p)
    for (std::size_t i = 0; i < a[p].size(); ++i) dot += a[p][i] * b[p][i];
  const double na = grad_norm(a), nb = grad_norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (na * nb);
}

std::vector<double> flatten(const ThetaGrad& g) {
  std::vector<double> out;
  for (const auto& b : g) out.insert(out.end(), b.begin(), b.end());
  return out;
}

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::dense: return "dense";
    case Strategy::naive_incremental: return "naive_incremental";
    case Strategy::decoder_incremental: return "decoder_incremental";
    case Strategy::sparse: return "sparse";
  }
  return "unknown";
}

Strategy parse_strategy(std::string_view name) {
  for (Strategy s : {Strategy::dense, Strategy::naive_incremental, Strategy::decoder_incremental,
                     Strategy::sparse}) {
    if (to_string(s) == name) return s;
  }
  throw std::invalid_argument("unknown strategy '" + std::string(name) + "'");
}

std::string_view to_string(EvictionPolicy::Kind k) {
  switch (k) {
    case EvictionPolicy::Kind::local_window: return "local_window";
    case EvictionPolicy::Kind::random_oracle: return "random_oracle";
    case EvictionPolicy::Kind::reservoir: return "reservoir";
  }
  return "unknown";
}

EvictionPolicy::Kind parse_policy(std::string_view name) {
  for (auto k : {EvictionPolicy::Kind::local_window, EvictionPolicy::Kind::random_oracle,
                 EvictionPolicy::Kind::reservoir}) {
    if (to_string(k) == name) return k;
  }
  throw std::invalid_argument("unknown eviction policy '" + std::string(name) + "'");
}

namespace {

using Clock = std::chrono::steady_clock;

class StepTimer {
 public:
  explicit StepTimer(instrument::PassCounters& c) : counters_(c), start_(Clock::now()) {}
  ~StepTimer() {
    counters_.elapsed_s += std::chrono::duration<double>(Clock::now() - start_).count();
  }

 private:
  instrument::PassCounters& counters_;
  Clock::time_point start_;
};

// One segment's encoder graph kept alive for a later relay flush.
struct LiveSegment {
  std::size_t index = 0;  // 1-based
  model::AdapterParams theta;  // leaves on the relay's tape
  std::unique_ptr<ad::RelayNode> relay;
  std::vector<Tensor> memory;  // detached K/V blocks, kept for forward context
  instrument::CacheHandle handle;
};

LiveSegment encode_live(const Model& model, const Segment& tokens, std::size_t index,
                        GradLedger& ledger) {
  auto tape = std::make_shared<ad::Tape>();
  LiveSegment s;
  s.index = index;
  s.theta = model.adapters.attach(*tape);
  const auto enc = model::encode_segment(model, s.theta, tokens, index);
  const auto kv = model::project_kv(model, s.theta, enc.layer_latents).flat();
  for (const auto& t : kv) s.memory.push_back(ad::detach(t));
  s.handle = ledger.caches.register_cache(CacheKind::encoder, index,
                                          tape->stored_values() * sizeof(double));
  s.relay = std::make_unique<ad::RelayNode>(std::move(tape), kv);
  ++ledger.counters.encoder_fwd;
  return s;
}

void flush_live(LiveSegment& s, GradLedger& ledger) {
  s.relay->flush(s.theta.flat(), ledger.theta_grad);
  s.relay->release();
  s.theta = {};
  s.handle.release();
  ++ledger.counters.encoder_bwd;
  ++ledger.flushes[s.index];
}

bool pending(const LiveSegment& s) { return !s.relay->flushed(); }

// Decoder forward + decoder-only backward for one segment. Memories flagged
// in `wants_grad` enter as leaves; the rest are constants (stop-gradient).
// Returns, per memory, the gradient of the scaled loss (empty if not wanted).
std::vector<std::vector<ad::Buffer>> decoder_step(const Model& model, const Segment& tokens,
                                                  std::span<const LiveSegment> previous,
                                                  const std::vector<char>& wants_grad,
                                                  GradLedger& ledger, const StepOptions& opts) {
  ad::Tape tape;
  auto handle = ledger.caches.register_cache(CacheKind::decoder, previous.size() + 1);

  std::vector<model::SegmentKV> blocks;
  std::vector<Tensor> leaves;
  std::vector<std::size_t> owner;
  blocks.reserve(previous.size());
  for (std::size_t i = 0; i < previous.size(); ++i) {
    std::vector<Tensor> flat;
    for (const auto& t : previous[i].memory) {
      if (wants_grad[i]) {
        flat.push_back(tape.variable(t));
        leaves.push_back(flat.back());
        owner.push_back(i);
      } else {
        flat.push_back(t);
      }
    }
    blocks.push_back(model::SegmentKV::from_flat(flat));
  }
  const auto cache = model::concat_cache(model.config, blocks);
  const auto targets = model::next_token_targets(tokens);
  const auto out = model::decoder_forward(model, tokens, cache, targets);
  ++ledger.counters.decoder_fwd;
  ledger.counters.tokens_processed += tokens.size();
  ledger.loss += out.loss.item();

  std::vector<std::vector<ad::Buffer>> grads(previous.size());
  ++ledger.counters.decoder_bwd;
  if (!leaves.empty()) {
    const Tensor scaled = ad::scale(out.loss, opts.loss_scale);
    auto g = tape.backward(scaled, leaves);
    for (std::size_t n = 0; n < g.size(); ++n) grads[owner[n]].push_back(std::move(g[n]));
  }
  return grads;
}

void accumulate(std::span<LiveSegment> previous, const std::vector<std::vector<ad::Buffer>>& grads) {
  for (std::size_t i = 0; i < grads.size(); ++i) {
    for (std::size_t slot = 0; slot < grads[i].size(); ++slot) {
      previous[i].relay->accumulate(slot, grads[i][slot]);
    }
  }
}

void check_segments(const Model& model, std::span<const Segment> segments) {
  if (segments.size() > model.config.max_segments) {
    throw std::invalid_argument("training step: " + std::to_string(segments.size()) +
                                " segments exceed max_segments " +
                                std::to_string(model.config.max_segments));
  }
}

}  // namespace

ThetaGrad train_step_dense(const Model& model, std::span<const Segment> segments,
                           GradLedger& ledger, const StepOptions& opts) {
  check_segments(model, segments);
  StepTimer timer(ledger.counters);
  ledger.theta_grad = zero_grad(model.adapters);
  if (segments.empty()) return ledger.theta_grad;

  ad::Tape tape;
  const auto theta = model.adapters.attach(tape);
  std::vector<instrument::CacheHandle> handles;
  std::vector<model::SegmentKV> blocks;
  Tensor total;
  for (std::size_t j = 0; j < segments.size(); ++j) {
    const std::size_t before = tape.stored_values();
    const auto enc = model::encode_segment(model, theta, segments[j], j + 1);
    blocks.push_back(model::project_kv(model, theta, enc.layer_latents));
    ++ledger.counters.encoder_fwd;
    handles.push_back(ledger.caches.register_cache(
        CacheKind::encoder, j + 1, (tape.stored_values() - before) * sizeof(double)));

    const auto cache = model::concat_cache(model.config, std::span(blocks).first(j));
    const auto out = model::decoder_forward(model, segments[j], cache,
                                            model::next_token_targets(segments[j]));
    handles.push_back(ledger.caches.register_cache(CacheKind::decoder, j + 1));
    ++ledger.counters.decoder_fwd;
    ledger.counters.tokens_processed += segments[j].size();
    ledger.loss += out.loss.item();
    total = j == 0 ? out.loss : ad::add(total, out.loss);
  }
  // With one segment no loss reads a memory, so nothing depends on Theta.
  if (total.attached()) ledger.theta_grad = tape.backward(ad::scale(total, opts.loss_scale), theta.flat());
  ledger.counters.decoder_bwd += segments.size();
  ledger.counters.encoder_bwd += segments.size();
  for (std::size_t j = 1; j <= segments.size(); ++j) ++ledger.flushes[j];
  return ledger.theta_grad;
}

ThetaGrad train_step_naive_incremental(const Model& model, std::span<const Segment> segments,
                                       GradLedger& ledger, const StepOptions& opts) {
  check_segments(model, segments);
  StepTimer timer(ledger.counters);
  ledger.theta_grad = zero_grad(model.adapters);
  for (std::size_t j = 0; j < segments.size(); ++j) {
    ad::Tape tape;
    const auto theta = model.adapters.attach(tape);
    std::vector<instrument::CacheHandle> handles;
    std::vector<model::SegmentKV> blocks;
    for (std::size_t i = 0; i < j; ++i) {
      const std::size_t before = tape.stored_values();
      const auto enc = model::encode_segment(model, theta, segments[i], i + 1);
      blocks.push_back(model::project_kv(model, theta, enc.layer_latents));
      ++ledger.counters.encoder_fwd;
      handles.push_back(ledger.caches.register_cache(
          CacheKind::encoder, i + 1, (tape.stored_values() - before) * sizeof(double)));
    }
    const auto cache = model::concat_cache(model.config, blocks);
    const auto out = model::decoder_forward(model, segments[j], cache,
                                            model::next_token_targets(segments[j]));
    auto dec_handle = ledger.caches.register_cache(CacheKind::decoder, j + 1);
    ++ledger.counters.decoder_fwd;
    ledger.counters.tokens_processed += segments[j].size();
    ledger.loss += out.loss.item();

    ++ledger.counters.decoder_bwd;
    if (!out.loss.attached()) continue;  // j == 0: empty cache
    const auto grads = tape.backward(ad::scale(out.loss, opts.loss_scale), theta.flat());
    ledger.counters.encoder_bwd += j;
    for (std::size_t i = 1; i <= j; ++i) ++ledger.flushes[i];
    for (std::size_t p = 0; p < grads.size(); ++p)
      for (std::size_t n = 0; n < grads[p].size(); ++n) ledger.theta_grad[p][n] += grads[p][n];
  }
  return ledger.theta_grad;
}

ThetaGrad train_step_decoder_incremental(const Model& model, std::span<const Segment> segments,
                                         GradLedger& ledger, const StepOptions& opts) {
  check_segments(model, segments);
  StepTimer timer(ledger.counters);
  ledger.theta_grad = zero_grad(model.adapters);
  std::vector<LiveSegment> live;
  live.reserve(segments.size());
  for (std::size_t j = 0; j < segments.size(); ++j) {
    live.push_back(encode_live(model, segments[j], j + 1, ledger));
    const std::span<LiveSegment> previous(live.data(), j);
    const std::vector<char> wants(j, 1);
    accumulate(previous, decoder_step(model, segments[j], previous, wants, ledger, opts));
  }
  for (auto& s : live) flush_live(s, ledger);
  return ledger.theta_grad;
}

ThetaGrad train_step_sparse(const Model& model, std::span<const Segment> segments,
                            const EvictionPolicy& policy, Rng& rng, GradLedger& ledger,
                            const StepOptions& opts) {
  if (policy.budget == 0) throw std::invalid_argument("sparse step: budget must be >= 1");
  check_segments(model, segments);
  StepTimer timer(ledger.counters);
  ledger.theta_grad = zero_grad(model.adapters);
  ledger.retained.clear();

  const std::size_t budget = policy.budget;
  Reservoir reservoir(budget, [&rng](std::uint64_t lo, std::uint64_t hi) { return rng.randint(lo, hi); });
  std::deque<std::size_t> window;  // 0-based positions, oldest first

  std::vector<LiveSegment> live;
  live.reserve(segments.size());
  for (std::size_t i = 0; i < segments.size(); ++i) {
    live.push_back(encode_live(model, segments[i], i + 1, ledger));
    const std::span<LiveSegment> previous(live.data(), i);

    // Memories that J_i backpropagates into.
    std::vector<char> wants(i, 0);
    if (policy.kind == EvictionPolicy::Kind::random_oracle) {
      std::vector<std::size_t> pool(i);
      std::iota(pool.begin(), pool.end(), std::size_t{0});
      const std::size_t take = std::min(budget, i);
      for (std::size_t n = 0; n < take; ++n) {
        const auto pick = static_cast<std::size_t>(rng.randint(n, i - 1));
        std::swap(pool[n], pool[pick]);
        wants[pool[n]] = 1;
      }
    } else {
      for (std::size_t t = 0; t < i; ++t) wants[t] = pending(previous[t]) ? 1 : 0;
    }
    accumulate(previous, decoder_step(model, segments[i], previous, wants, ledger, opts));

    switch (policy.kind) {
      case EvictionPolicy::Kind::reservoir: {
        const auto d = evict_decide(reservoir, i + 1);
        if (d.kind != EvictDecision::Kind::admit) flush_live(live[d.evicted - 1], ledger);
        break;
      }
      case EvictionPolicy::Kind::local_window: {
        if (window.size() == budget) {
          flush_live(live[window.front()], ledger);
          window.pop_front();
        }
        window.push_back(i);
        break;
      }
      case EvictionPolicy::Kind::random_oracle:
        // Every encoder graph stays recoverable; that is what makes it infeasible.
        break;
    }
  }

  if (policy.kind == EvictionPolicy::Kind::reservoir) {
    for (std::size_t seg : reservoir.slots()) {
      ledger.retained.push_back(seg);
      flush_live(live[seg - 1], ledger);
    }
  } else if (policy.kind == EvictionPolicy::Kind::local_window) {
    for (std::size_t pos : window) {
      ledger.retained.push_back(pos + 1);
      flush_live(live[pos], ledger);
    }
  } else {
    for (auto& s : live) {
      ledger.retained.push_back(s.index);
      flush_live(s, ledger);
    }
  }
  return ledger.theta_grad;
}

ThetaGrad run_strategy(Strategy strategy, const Model& model, std::span<const Segment> segments,
                       const EvictionPolicy& policy, Rng& rng, GradLedger& ledger,
                       const StepOptions& opts) {
  switch (strategy) {
    case Strategy::dense: return train_step_dense(model, segments, ledger, opts);
    case Strategy::naive_incremental: return train_step_naive_incremental(model, segments, ledger, opts);
    case Strategy::decoder_incremental:
      return train_step_decoder_incremental(model, segments, ledger, opts);
    case Strategy::sparse: return train_step_sparse(model, segments, policy, rng, ledger, opts);
  }
  throw std::invalid_argument("run_strategy: unknown strategy");
}

}  // namespace segkv::train
