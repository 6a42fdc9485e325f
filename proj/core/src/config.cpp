#include "dept/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace dept {

using nlohmann::json;

namespace {

void reject_unknown(const json& obj, const std::string& where,
                    const std::set<std::string>& allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!allowed.count(it.key()))
      throw ConfigError("unknown key '" + it.key() + "' in " + where);
  }
}

template <class T>
T require(const json& obj, const std::string& where, const std::string& key) {
  if (!obj.contains(key))
    throw ConfigError("missing key '" + key + "' in " + where);
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("bad value for '" + key + "' in " + where);
  }
}

template <class T>
T optional_or(const json& obj, const std::string& where,
              const std::string& key, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("bad value for '" + key + "' in " + where);
  }
}

}  // namespace

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);
  std::stringstream buf;
  buf << f.rdbuf();
  return from_json_text(buf.str());
}

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  reject_unknown(j, "config",
                 {"version", "data_dir", "out_dir", "arch", "vocab", "sources",
                  "ood_sources", "variant", "train", "schedule", "optimizer",
                  "continued", "plasticity"});
  const int version = require<int>(j, "config", "version");
  if (version != 1) throw ConfigError("unsupported config version");

  ExperimentConfig c;
  c.data_dir = require<std::string>(j, "config", "data_dir");
  c.out_dir = require<std::string>(j, "config", "out_dir");

  const json& arch = j.at("arch");
  reject_unknown(arch, "arch",
                 {"num_blocks", "d_model", "num_heads", "expansion_ratio",
                  "seq_len"});
  c.arch.num_blocks = require<std::size_t>(arch, "arch", "num_blocks");
  c.arch.d_model = require<std::size_t>(arch, "arch", "d_model");
  c.arch.num_heads = require<std::size_t>(arch, "arch", "num_heads");
  c.arch.expansion_ratio =
      require<std::size_t>(arch, "arch", "expansion_ratio");
  c.arch.seq_len = require<std::size_t>(arch, "arch", "seq_len");
  c.arch.vocab_size = 258;  // placeholder until the vocab is prepared
  c.arch.validate();

  const json& vocab = j.at("vocab");
  reject_unknown(vocab, "vocab", {"global_size", "spec_opt_source_size"});
  c.vocab_global_size = require<std::size_t>(vocab, "vocab", "global_size");
  c.vocab_spec_opt_size =
      optional_or<std::size_t>(vocab, "vocab", "spec_opt_source_size", 258);

  c.sources = require<std::vector<std::string>>(j, "config", "sources");
  if (c.sources.empty()) throw ConfigError("at least one source required");
  c.ood_sources = optional_or<std::vector<std::string>>(
      j, "config", "ood_sources", {});

  c.train.variant = variant_from_name(require<std::string>(j, "config", "variant"));

  const json& train = j.at("train");
  reject_unknown(train, "train",
                 {"rounds", "local_steps", "sources_per_round", "batch_size",
                  "seed", "tau", "forget_every", "checkpoint_every_rounds"});
  c.train.rounds = require<std::int64_t>(train, "train", "rounds");
  c.train.local_steps = require<std::int64_t>(train, "train", "local_steps");
  c.train.sources_per_round =
      optional_or<std::int64_t>(train, "train", "sources_per_round",
                                static_cast<std::int64_t>(c.sources.size()));
  c.train.batch_size = require<std::int64_t>(train, "train", "batch_size");
  c.train.seed = optional_or<std::uint64_t>(train, "train", "seed", 0);
  c.checkpoint_every_rounds =
      optional_or<std::int64_t>(train, "train", "checkpoint_every_rounds", 0);

  const bool is_std = c.train.variant == Variant::Std;
  const bool is_act = c.train.variant == Variant::Act;
  if (train.contains("tau") && !is_std)
    throw ConfigError("'tau' is only valid for the STD variant");
  if (train.contains("forget_every") && !is_act)
    throw ConfigError("'forget_every' is only valid for the ACT variant");
  if (is_std) c.train.tau = require<double>(train, "train", "tau");
  if (is_act)
    c.train.forget_every = require<std::int64_t>(train, "train", "forget_every");

  const json& sched = j.at("schedule");
  reject_unknown(sched, "schedule",
                 {"peak_lr", "decay_alpha", "warmup_fraction"});
  c.peak_lr = require<double>(sched, "schedule", "peak_lr");
  c.decay_alpha = require<double>(sched, "schedule", "decay_alpha");
  c.warmup_fraction =
      optional_or<double>(sched, "schedule", "warmup_fraction", 0.01);
  if (c.decay_alpha < 0.0 || c.decay_alpha > 1.0)
    throw ConfigError("decay_alpha must lie in [0, 1]");
  if (c.warmup_fraction < 0.0 || c.warmup_fraction >= 1.0)
    throw ConfigError("warmup_fraction must lie in [0, 1)");

  const json& opt = j.at("optimizer");
  reject_unknown(opt, "optimizer",
                 {"beta1", "beta2", "eps", "weight_decay", "clip_norm"});
  c.adam.beta1 = optional_or<double>(opt, "optimizer", "beta1", 0.9);
  c.adam.beta2 = optional_or<double>(opt, "optimizer", "beta2", 0.95);
  c.adam.eps = optional_or<double>(opt, "optimizer", "eps", 1e-8);
  c.adam.weight_decay =
      optional_or<double>(opt, "optimizer", "weight_decay", 0.0);
  c.clip_norm = optional_or<double>(opt, "optimizer", "clip_norm", 1.0);

  if (j.contains("continued")) {
    const json& ct = j.at("continued");
    reject_unknown(ct, "continued",
                   {"fraction", "sampling", "init", "batch_size"});
    c.ct_fraction = require<double>(ct, "continued", "fraction");
    if (c.ct_fraction < 0.0 || c.ct_fraction >= 1.0)
      throw ConfigError("continued.fraction must lie in [0, 1)");
    const std::string sampling =
        optional_or<std::string>(ct, "continued", "sampling", "uniform");
    if (sampling == "uniform")
      c.ct_tau = 0.0;
    else if (sampling == "proportional")
      c.ct_tau = 1.0;
    else
      throw ConfigError("continued.sampling must be uniform or proportional");
    const std::string init =
        optional_or<std::string>(ct, "continued", "init", "random");
    if (init == "random")
      c.ct_init = CtInit::Random;
    else if (init == "pretrained")
      c.ct_init = CtInit::Pretrained;
    else
      throw ConfigError("continued.init must be random or pretrained");
    c.ct_batch_size =
        optional_or<std::int64_t>(ct, "continued", "batch_size", c.train.batch_size);
  } else {
    c.ct_fraction = 0.0;
  }

  if (j.contains("plasticity")) {
    const json& pl = j.at("plasticity");
    reject_unknown(pl, "plasticity", {"target", "steps", "record_every"});
    c.has_plasticity = true;
    c.plasticity_target = require<std::string>(pl, "plasticity", "target");
    c.plasticity_steps = require<std::int64_t>(pl, "plasticity", "steps");
    c.plasticity_record_every =
        optional_or<std::int64_t>(pl, "plasticity", "record_every", 1);
  }

  c.train.validate(c.sources.size());
  return c;
}

CosineSchedule ExperimentConfig::schedule() const {
  CosineSchedule s;
  s.peak_lr = peak_lr;
  s.decay_alpha = decay_alpha;
  s.total_steps = train.total_steps();
  s.warmup_steps = static_cast<std::int64_t>(
      std::llround(warmup_fraction * static_cast<double>(s.total_steps)));
  return s;
}

std::int64_t ExperimentConfig::ct_steps() const {
  return static_cast<std::int64_t>(
      std::llround(ct_fraction * static_cast<double>(train.total_steps())));
}

std::string ExperimentConfig::canonical_semantic_json() const {
  json j;
  j["arch"] = {{"num_blocks", arch.num_blocks},
               {"d_model", arch.d_model},
               {"num_heads", arch.num_heads},
               {"expansion_ratio", arch.expansion_ratio},
               {"seq_len", arch.seq_len}};
  j["vocab"] = {{"global_size", vocab_global_size},
                {"spec_opt_source_size", vocab_spec_opt_size}};
  j["sources"] = sources;
  j["ood_sources"] = ood_sources;
  j["variant"] = variant_name(train.variant);
  j["train"] = {{"rounds", train.rounds},
                {"local_steps", train.local_steps},
                {"sources_per_round", train.sources_per_round},
                {"batch_size", train.batch_size},
                {"seed", train.seed},
                {"tau", train.tau},
                {"forget_every", train.forget_every}};
  j["schedule"] = {{"peak_lr", peak_lr},
                   {"decay_alpha", decay_alpha},
                   {"warmup_fraction", warmup_fraction}};
  j["optimizer"] = {{"beta1", adam.beta1},
                    {"beta2", adam.beta2},
                    {"eps", adam.eps},
                    {"weight_decay", adam.weight_decay},
                    {"clip_norm", clip_norm}};
  j["continued"] = {{"fraction", ct_fraction},
                    {"tau", ct_tau},
                    {"init", ct_init == CtInit::Random ? "random" : "pretrained"},
                    {"batch_size", ct_batch_size}};
  if (has_plasticity) {
    j["plasticity"] = {{"target", plasticity_target},
                       {"steps", plasticity_steps},
                       {"record_every", plasticity_record_every}};
  }
  return j.dump();
}

std::uint64_t ExperimentConfig::config_hash() const {
  return fnv1a64(canonical_semantic_json());
}

void RunManifest::save(const std::string& path) const {
  json j;
  j["config_hash"] = config_hash;
  j["seed"] = seed;
  j["tool_version"] = tool_version;
  j["status"] = status;
  j["artifacts"] = artifacts;
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write manifest: " + path);
  f << j.dump(2) << "\n";
}

RunManifest RunManifest::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot read manifest: " + path);
  json j = json::parse(f);
  RunManifest m;
  m.config_hash = j.at("config_hash").get<std::uint64_t>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.tool_version = j.at("tool_version").get<std::string>();
  m.status = j.at("status").get<std::string>();
  m.artifacts =
      j.at("artifacts").get<std::map<std::string, std::string>>();
  return m;
}

}  // namespace dept
