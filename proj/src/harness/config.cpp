// SPDX-License-Identifier: Apache-2.0

#include "segkv/harness/config.hpp"

#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

namespace segkv::harness {
namespace {

namespace pt = boost::property_tree;

const std::map<std::string, std::set<std::string>>& known_keys() {
  static const std::map<std::string, std::set<std::string>> keys = {
      {"run", {"seed", "out", "checkpoint", "timing"}},
      {"model",
       {"layers", "d_model", "heads", "segment_len", "ratio", "max_segments", "adapter_rank",
        "adapter_scale", "rope_base"}},
      {"train",
       {"objective", "strategy", "steps", "segments_per_step", "batch", "optimizer", "lr",
        "weight_decay", "warmup"}},
      {"policy", {"kind", "budget"}},
      {"data", {"source", "path", "sequences", "sequence_len", "period_min", "period_max"}},
      {"eval",
       {"ppl_documents", "ppl_segments", "ppl_context_segments", "needle_lengths", "needle_depths",
        "needle_trials", "bias_trials", "bench_segments"}},
  };
  return keys;
}

template <class T>
T get(const pt::ptree& tree, const std::string& key, T fallback) {
  const auto node = tree.get_child_optional(pt::ptree::path_type(key, '.'));
  if (!node) return fallback;
  if constexpr (std::is_unsigned_v<T>) {
    if (node->data().find('-') != std::string::npos)
      throw ConfigError("config: " + key + " must be non-negative, got '" + node->data() + "'");
  }
  try {
    return node->get_value<T>();
  } catch (const pt::ptree_bad_data&) {
    throw ConfigError("config: bad value '" + node->data() + "' for " + key);
  }
}

template <class T>
std::vector<T> get_list(const pt::ptree& tree, const std::string& key, std::vector<T> fallback) {
  const auto raw = tree.get_optional<std::string>(key);
  if (!raw) return fallback;
  std::vector<T> out;
  std::stringstream ss(*raw);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::stringstream is(item);
    T v{};
    if (!(is >> v)) throw ConfigError("config: bad list item '" + item + "' in " + key);
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("config: empty list for " + key);
  return out;
}

bool parse_bool(const std::string& s, const std::string& key) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("config: bad boolean '" + s + "' for " + key);
}

Objective parse_objective(const std::string& s) {
  if (s == "lm") return Objective::lm;
  if (s == "autoencode") return Objective::autoencode;
  throw ConfigError("config: unknown objective '" + s + "'");
}

DataSource parse_source(const std::string& s) {
  if (s == "periodic") return DataSource::periodic;
  if (s == "random") return DataSource::random;
  if (s == "passkey") return DataSource::passkey;
  if (s == "file") return DataSource::file;
  throw ConfigError("config: unknown data source '" + s + "'");
}

template <class F>
auto rethrow_as_config(F&& f) {
  try {
    return f();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

}  // namespace

std::string to_string(Objective o) { return o == Objective::lm ? "lm" : "autoencode"; }

std::string to_string(DataSource s) {
  switch (s) {
    case DataSource::periodic: return "periodic";
    case DataSource::random: return "random";
    case DataSource::passkey: return "passkey";
    case DataSource::file: return "file";
  }
  return "?";
}

void RunConfig::validate() const {
  model.validate();
  if (strategy == train::Strategy::sparse && policy.budget == 0)
    throw ConfigError("config: sparse strategy requires policy budget >= 1");
  if (train.segments_per_step == 0) throw ConfigError("config: train.segments_per_step must be >= 1");
  if (train.segments_per_step > model.max_segments)
    throw ConfigError("config: train.segments_per_step exceeds model.max_segments");
  if (train.batch == 0) throw ConfigError("config: train.batch must be >= 1");
  if (!(train.optim.lr > 0.0)) throw ConfigError("config: train.lr must be positive");
  if (train.optim.name != "adamw" && train.optim.name != "sgd")
    throw ConfigError("config: train.optimizer must be adamw or sgd");
  if (data.source == DataSource::file && data.path.empty())
    throw ConfigError("config: data.source = file requires data.path");
  if (data.sequences == 0 || data.sequence_len == 0)
    throw ConfigError("config: data.sequences and data.sequence_len must be >= 1");
  if (data.period_min == 0 || data.period_min > data.period_max)
    throw ConfigError("config: need 1 <= data.period_min <= data.period_max");
  for (double d : eval.needle_depths)
    if (!(d >= 0.0 && d <= 1.0)) throw ConfigError("config: needle depths must lie in [0, 1]");
  for (std::size_t n : eval.needle_lengths)
    if (n < 6) throw ConfigError("config: needle lengths must be >= 6");
  if (eval.ppl_segments < 2) throw ConfigError("config: eval.ppl_segments must be >= 2");
  if (eval.bias_trials < 100) throw ConfigError("config: eval.bias_trials must be >= 100");
  if (eval.bench_segments < 2 || eval.bench_segments > model.max_segments)
    throw ConfigError("config: eval.bench_segments must be in [2, model.max_segments]");
}

RunConfig parse_run_config(const std::string& text) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.message() + " at line " + std::to_string(e.line()));
  }
  for (const auto& [section, body] : tree) {
    const auto it = known_keys().find(section);
    if (it == known_keys().end()) throw ConfigError("config: unknown section [" + section + "]");
    if (body.empty()) throw ConfigError("config: '" + section + "' must be a section");
    for (const auto& [key, value] : body)
      if (!it->second.contains(key)) throw ConfigError("config: unknown key " + section + "." + key);
  }

  RunConfig c;
  c.seed = get<std::uint64_t>(tree, "run.seed", c.seed);
  c.out_dir = get<std::string>(tree, "run.out", c.out_dir.string());
  c.checkpoint = get<std::string>(tree, "run.checkpoint", "");
  c.timing = parse_bool(get<std::string>(tree, "run.timing", "false"), "run.timing");

  auto& m = c.model;
  m.layers = get(tree, "model.layers", m.layers);
  m.d_model = get(tree, "model.d_model", m.d_model);
  m.heads = get(tree, "model.heads", m.heads);
  m.segment_len = get(tree, "model.segment_len", m.segment_len);
  const std::size_t ratio = get<std::size_t>(tree, "model.ratio", 8);
  if (ratio == 0 || m.segment_len % ratio != 0)
    throw ConfigError("config: model.ratio must divide model.segment_len");
  m.latent_count = m.segment_len / ratio;
  m.max_segments = get(tree, "model.max_segments", m.max_segments);
  m.adapter_rank = get(tree, "model.adapter_rank", m.adapter_rank);
  m.adapter_scale = get(tree, "model.adapter_scale", m.adapter_scale);
  m.rope_base = get(tree, "model.rope_base", m.rope_base);

  c.train.objective = parse_objective(get<std::string>(tree, "train.objective", "lm"));
  c.strategy = rethrow_as_config([&] { return train::parse_strategy(get<std::string>(tree, "train.strategy", "sparse")); });
  c.train.steps = get(tree, "train.steps", c.train.steps);
  c.train.segments_per_step = get(tree, "train.segments_per_step", c.train.segments_per_step);
  c.train.batch = get(tree, "train.batch", c.train.batch);
  c.train.optim.name = get<std::string>(tree, "train.optimizer", c.train.optim.name);
  c.train.optim.lr = get(tree, "train.lr", c.train.optim.lr);
  c.train.optim.weight_decay = get(tree, "train.weight_decay", c.train.optim.weight_decay);
  c.train.optim.warmup = get(tree, "train.warmup", c.train.optim.warmup);

  c.policy.kind = rethrow_as_config([&] { return train::parse_policy(get<std::string>(tree, "policy.kind", "reservoir")); });
  c.policy.budget = get(tree, "policy.budget", c.policy.budget);

  c.data.source = parse_source(get<std::string>(tree, "data.source", "periodic"));
  c.data.path = get<std::string>(tree, "data.path", "");
  c.data.sequences = get(tree, "data.sequences", c.data.sequences);
  c.data.sequence_len = get(tree, "data.sequence_len", c.data.sequence_len);
  c.data.period_min = get(tree, "data.period_min", c.data.period_min);
  c.data.period_max = get(tree, "data.period_max", c.data.period_max);

  auto& e = c.eval;
  e.ppl_documents = get(tree, "eval.ppl_documents", e.ppl_documents);
  e.ppl_segments = get(tree, "eval.ppl_segments", e.ppl_segments);
  e.ppl_context_segments = get(tree, "eval.ppl_context_segments", e.ppl_context_segments);
  e.needle_lengths = get_list(tree, "eval.needle_lengths", e.needle_lengths);
  e.needle_depths = get_list(tree, "eval.needle_depths", e.needle_depths);
  e.needle_trials = get(tree, "eval.needle_trials", e.needle_trials);
  e.bias_trials = get(tree, "eval.bias_trials", e.bias_trials);
  e.bench_segments = get(tree, "eval.bench_segments", e.bench_segments);

  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

void apply_overrides(RunConfig& cfg, const Overrides& o) {
  if (o.seed) cfg.seed = *o.seed;
  if (o.strategy) cfg.strategy = rethrow_as_config([&] { return train::parse_strategy(*o.strategy); });
  if (o.budget) cfg.policy.budget = *o.budget;
  if (o.ratio) {
    if (*o.ratio == 0 || cfg.model.segment_len % *o.ratio != 0)
      throw ConfigError("config: --ratio must divide the segment length");
    cfg.model.latent_count = cfg.model.segment_len / *o.ratio;
  }
  if (o.out_dir) cfg.out_dir = *o.out_dir;
  if (o.checkpoint) cfg.checkpoint = *o.checkpoint;
  cfg.validate();
}

}  // namespace segkv::harness
