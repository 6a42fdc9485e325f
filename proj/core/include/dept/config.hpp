#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "dept/dept.hpp"

namespace dept {

inline constexpr const char* kToolVersion = "dept 0.1.0";

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Experiment description: a single versioned JSON file with a strict
// schema; unknown keys are errors.
struct ExperimentConfig {
  std::string data_dir;
  std::string out_dir;

  Architecture arch;  // vocab_size is resolved from the prepared vocab
  std::size_t vocab_global_size = 258;
  std::size_t vocab_spec_opt_size = 258;

  std::vector<std::string> sources;
  std::vector<std::string> ood_sources;

  VariantConfig train;

  double peak_lr = 1e-3;
  double decay_alpha = 0.1;
  double warmup_fraction = 0.01;
  AdamWConfig adam;
  double clip_norm = 1.0;
  std::int64_t checkpoint_every_rounds = 0;

  double ct_fraction = 0.15;
  double ct_tau = 0.0;  // 0 uniform, 1 proportional
  CtInit ct_init = CtInit::Random;
  std::int64_t ct_batch_size = 8;

  bool has_plasticity = false;
  std::string plasticity_target;
  std::int64_t plasticity_steps = 0;
  std::int64_t plasticity_record_every = 1;

  static ExperimentConfig load(const std::string& path);
  static ExperimentConfig from_json_text(const std::string& text);

  CosineSchedule schedule() const;
  std::int64_t ct_steps() const;
  // Stable hash over the semantic fields (paths excluded).
  std::uint64_t config_hash() const;
  std::string canonical_semantic_json() const;

  std::string prepared_dir() const { return out_dir + "/prepared"; }
};

// Written before training starts; the status field is flipped at the end to
// flag complete or partial outputs.
struct RunManifest {
  std::uint64_t config_hash = 0;
  std::uint64_t seed = 0;
  std::string tool_version = kToolVersion;
  std::string status = "running";
  std::map<std::string, std::string> artifacts;

  void save(const std::string& path) const;
  static RunManifest load(const std::string& path);
};

std::uint64_t fnv1a64(const std::string& bytes);

}  // namespace dept
