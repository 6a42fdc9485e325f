#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "dept/config.hpp"
#include "dept/eval.hpp"

namespace dept {

// Artifacts of cmd_prepare as loaded back for training/eval.
struct LoadedExperiment {
  Architecture arch;  // vocab_size resolved to the prepared global vocab
  Vocab global_vocab;
  std::vector<SourceState> sources;
  std::vector<NamedDataset> in_dist_validation;  // global ids, for post-CT
  std::vector<NamedDataset> ood_validation;      // global ids
  std::vector<TokenizedDataset> ct_train;        // global ids, per source
};

// Trains vocabularies, builds trim maps, tokenizes all splits, and persists
// everything under <out_dir>/prepared. Skips the work when the content hash
// of the inputs matches a previous run; returns true when skipped.
bool cmd_prepare(const ExperimentConfig& cfg);

LoadedExperiment load_experiment(const ExperimentConfig& cfg);

// Runs the configured variant, writing metrics.jsonl, checkpoints, and the
// run manifest under out_dir. Returns the run result.
TrainRunResult cmd_train(const ExperimentConfig& cfg, int workers,
                         const std::string& resume_checkpoint = "");

// Analytical cost table for this experiment plus, when a final checkpoint
// exists, the measured-vs-analytical comparison. Writes costs.csv next to
// the text output.
void cmd_costs(const ExperimentConfig& cfg, std::ostream& out);

// The bundled reference-model table (text to `out`, CSV alongside when
// out_dir is non-empty).
void cmd_costs_reference(std::ostream& out, const std::string& out_dir);

// Pre-continued-pretraining report, the continued-pretraining phase itself
// (when configured), and the post-CT report, all under <out_dir>/eval.
void cmd_eval(const ExperimentConfig& cfg, const std::string& checkpoint_path);

// Adaptation curve of the checkpointed body on the configured target.
void cmd_plasticity(const ExperimentConfig& cfg,
                    const std::string& checkpoint_path);

}  // namespace dept
