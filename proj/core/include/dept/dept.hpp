#pragma once

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "dept/checkpoint.hpp"
#include "dept/costs.hpp"
#include "dept/metrics.hpp"
#include "dept/model.hpp"
#include "dept/optim.hpp"

namespace dept {

// Raised when training produces a non-finite loss.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct VariantConfig {
  Variant variant = Variant::Glob;
  std::int64_t rounds = 1;             // T
  std::int64_t local_steps = 1;        // N_local
  std::int64_t sources_per_round = 1;  // |S_t|
  std::int64_t batch_size = 8;
  double tau = 0.0;            // STD sampling temperature
  std::int64_t forget_every = 0;  // ACT reset period
  std::uint64_t seed = 0;

  std::int64_t total_steps() const { return rounds * local_steps; }
  void validate(std::size_t num_sources) const;
};

// Everything one data source owns. Datasets are stored in the id space the
// variant trains in: global ids for GLOB/STD/ACT, trim-local ids for
// TRIM/SPEC, per-source optimized ids for SPEC-OPT.
struct SourceState {
  std::size_t source_id = 0;
  std::string name;
  TokenizedDataset train;
  TokenizedDataset validation;
  std::optional<TrimMap> trim;
  std::size_t embedding_rows = 0;  // |V_k| the source trains against

  // SPEC/SPEC-OPT private state; exists once the source has been selected.
  bool initialized = false;
  Tensor private_phi;
  Tensor private_psi;
  std::optional<AdamWState> private_opt;
};

struct InnerOptStats {
  std::vector<double> losses;
  double max_act_norm = 0.0;
  double last_lr = 0.0;

  double mean_loss() const;
};

// Exactly `steps` AdamW steps on batches drawn uniformly with replacement;
// the learning rate is indexed by the global step count start_step + i and
// gradients are clipped to clip_norm each step. Body and embedding tensors
// carry separate optimizer states so callers can persist one and reset the
// other; passing the same fresh states everywhere reproduces plain AdamW.
InnerOptStats inner_opt(ModelParams& params, const TokenizedDataset& data,
                        const CosineSchedule& schedule,
                        const AdamWConfig& adam, double clip_norm,
                        std::int64_t batch_size, std::int64_t start_step,
                        std::int64_t steps, AdamWState& body_state,
                        AdamWState& emb_state, Rng& rng);

// Deterministic private-embedding draw for a SPEC source; independent of
// the round in which the source is first selected.
std::pair<Tensor, Tensor> spec_initial_embeddings(std::size_t vocab_rows,
                                                  std::size_t d_model,
                                                  std::size_t seq_len,
                                                  std::uint64_t seed,
                                                  std::size_t source_id);

// Re-initialize token and positional embeddings from the init distribution
// with a fresh per-cycle stream; the body and its optimizer state are left
// untouched, embedding moments restart with the cycle.
void act_reset(ModelParams& params, AdamWState& emb_state, std::uint64_t seed,
               std::int64_t cycle);

// One mixed batch for the per-step-synchronized baselines: every sequence
// slot draws its source from `weights`, then a sequence uniformly within
// that source. Fills `slot_sources` (when given) with the drawn source per
// slot.
Batch draw_mixed_batch(const std::vector<const TokenizedDataset*>& sources,
                       const std::vector<double>& weights,
                       std::int64_t batch_size, Rng& rng,
                       std::vector<std::size_t>* slot_sources = nullptr);

struct TrainRunResult {
  ModelParams final_params;
  std::uint64_t uploaded_params = 0;
  std::uint64_t downloaded_params = 0;
  std::uint64_t uploaded_embedding_params = 0;
  double avg_upload_per_worker_step = 0.0;
  bool has_act_best = false;
  ModelParams act_best_params;
  double act_best_ppl = 0.0;
};

// Single-process federation simulator: isolates sources as SourceStates,
// runs selected workers in parallel, and aggregates at a serial barrier.
// Outputs are bit-identical for any worker-pool size.
class Simulator {
 public:
  Simulator(Architecture arch, VariantConfig cfg, CosineSchedule schedule,
            AdamWConfig adam, double clip_norm,
            std::vector<SourceState> sources);

  void set_metrics(MetricsSink* sink) { metrics_ = sink; }
  void set_workers(int workers) { workers_ = workers < 1 ? 1 : workers; }
  void set_checkpoint_dir(const std::string& dir, std::int64_t every_rounds) {
    ckpt_dir_ = dir;
    ckpt_every_ = every_rounds;
  }

  // Runs the configured variant to completion (rounds for DEPT variants,
  // steps for STD/ACT), including the round-0 baseline evaluation.
  TrainRunResult run();

  // One aggregation round of the configured DEPT variant.
  void run_round();

  const ModelParams& global_params() const { return global_; }
  Variant variant() const { return cfg_.variant; }
  const std::vector<SourceState>& sources() const { return sources_; }
  const CommCounter& comm() const { return comm_; }
  std::int64_t round() const { return round_; }
  bool has_act_best() const { return has_act_best_; }
  const ModelParams& act_best() const { return act_best_params_; }

  // Validation perplexity of one source through the embeddings the variant
  // would use (global, trimmed, or private).
  double eval_source(std::size_t source_id) const;

  Checkpoint make_checkpoint() const;
  void restore(const Checkpoint& ckpt);

 private:
  struct WorkerOutput;
  WorkerOutput run_worker(std::size_t source_id) const;
  void run_std();  // STD and ACT step loop
  void emit_eval_records(std::int64_t round, std::int64_t step);
  void maybe_checkpoint();
  ModelParams eval_params_for(const SourceState& src) const;

  Architecture arch_;
  VariantConfig cfg_;
  CosineSchedule schedule_;
  AdamWConfig adam_;
  double clip_norm_ = 1.0;
  std::vector<SourceState> sources_;
  ModelParams global_;
  CommCounter comm_;
  MetricsSink* metrics_ = nullptr;
  int workers_ = 1;
  std::string ckpt_dir_;
  std::int64_t ckpt_every_ = 0;
  std::int64_t round_ = 0;
  std::int64_t step_ = 0;  // STD/ACT progress
  // STD/ACT persistent optimizer state.
  std::optional<AdamWState> std_body_state_, std_emb_state_;
  std::int64_t act_cycle_start_ = 0;
  bool has_act_best_ = false;
  ModelParams act_best_params_;
  double act_best_ppl_ = 0.0;
};

enum class CtInit { Random, Pretrained };

struct ContinuedPretrainConfig {
  std::int64_t steps = 0;  // N_CT
  std::int64_t batch_size = 8;
  double sampling_tau = 0.0;  // 0 uniform, 1 proportional
  CtInit init = CtInit::Random;
  double peak_lr = 1e-3;  // eta_max; the pretrained mode starts from half
  double decay_alpha = 0.1;
  AdamWConfig adam;
  double clip_norm = 1.0;
  std::uint64_t seed = 0;
};

// Multi-phase adaptive pre-training: attach a global embedding matrix to a
// trained body and train everything jointly for N_CT steps. Random mode
// draws fresh embeddings and decays from eta_max; pretrained mode keeps the
// provided embeddings and decays from eta_max/2.
ModelParams continued_pretrain(
    const ModelParams& body, const ModelParams* pretrained,
    const std::vector<TokenizedDataset>& train_sources,
    const ContinuedPretrainConfig& cfg, MetricsSink* metrics = nullptr,
    const std::function<void(std::int64_t, const ModelParams&)>& observer =
        nullptr);

}  // namespace dept
