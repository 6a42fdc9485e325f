#pragma once

#include <string>
#include <vector>

#include "dept/corpus.hpp"
#include "dept/model.hpp"

namespace dept {

class Simulator;

struct DatasetEval {
  double ppl = 0.0;
  double act_norm = 0.0;  // max per-chunk activation norm on the eval data
};

// Full deterministic pass over every sequence, in fixed chunks. The
// activation norm measured here is taken on shared evaluation data, so it
// compares the model across methods without the confound of each method's
// own training batches.
DatasetEval evaluate_dataset(const ModelParams& params,
                             const TokenizedDataset& dataset,
                             std::size_t max_batch = 32);

// exp(mean next-token cross-entropy) over every sequence of the dataset.
double perplexity(const ModelParams& params, const TokenizedDataset& dataset,
                  std::size_t max_batch = 32);

struct EvalEntry {
  std::string source;
  bool ood = false;
  bool available = true;
  double ppl = 0.0;
  double unigram_ce = 0.0;
};

struct EvalReport {
  std::vector<EvalEntry> entries;
  double in_dist_avg = 0.0;
  double ood_avg = 0.0;        // only over available OOD entries
  double all_avg = 0.0;        // in-distribution plus available OOD
  bool ood_available = true;

  void finalize();
  std::string to_csv() const;
  std::string to_markdown() const;
};

struct NamedDataset {
  std::string name;
  TokenizedDataset data;
};

// Per-source validation perplexity through the embeddings each variant
// actually uses, plus OOD perplexity through the global embeddings. SPEC
// variants have no global embedding before continued pre-training, so their
// OOD entries are marked unavailable instead of fabricated.
EvalReport evaluate_all(const Simulator& sim,
                        const std::vector<NamedDataset>& ood_sources);

// Post-continued-pretraining evaluation: one parameter set, every dataset
// tokenized under its vocabulary.
EvalReport evaluate_params(const ModelParams& params,
                           const std::vector<NamedDataset>& in_dist,
                           const std::vector<NamedDataset>& ood);

// Improvement convention of the result tables: (best_baseline - value) /
// best_baseline, in percent.
double improvement_percent(double best_baseline, double value);

struct AdaptationCurve {
  std::vector<std::pair<std::int64_t, double>> points;  // (step, perplexity)
  std::string to_csv() const;
};

struct ContinuedPretrainConfig;

// Continued pre-training in random-embedding mode on the target dataset,
// recording target validation perplexity at step 0, every record_every
// steps, and the final step.
AdaptationCurve plasticity_run(const ModelParams& body,
                               const TokenizedDataset& target_train,
                               const TokenizedDataset& target_val,
                               const ContinuedPretrainConfig& cfg,
                               std::int64_t record_every);

}  // namespace dept
