#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dept/model.hpp"

namespace dept {

enum class Variant { Glob, Trim, Spec, SpecOpt, Std, Act };

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);

// Inputs of the analytical memory/communication ledger. total_params is
// taken as given (body plus global token embeddings) rather than recomputed,
// so published model sizes can be fed in directly.
struct CostInputs {
  double total_params = 0;      // M
  double global_vocab = 0;      // |V|
  double mean_local_vocab = 0;  // mean |V_k|
  double d_model = 0;
  double seq_len = 0;           // L
  double local_steps = 1;       // N_local
  Variant variant = Variant::Std;
};

// STD/GLOB: M. TRIM/SPEC/SPEC-OPT: M - (|V| - mean|V_k|) * d_model.
double memory_cost(const CostInputs& in);

// STD: M. GLOB: M/N_local. TRIM: (M - (|V| - mean|V_k|) d)/N_local.
// SPEC/SPEC-OPT: (M - (|V| + L) d)/N_local.
double comms_cost_per_step(const CostInputs& in);

struct CostReport {
  double memory_params = 0;
  double per_step_comms_params = 0;
  double memory_ratio_vs_std = 1.0;
  double comms_ratio_vs_std = 1.0;
};

CostReport build_cost_report(const CostInputs& in);

// Closed-form parameter count of the transformer body (everything except
// the two embedding matrices); used as a self-consistency check against
// ledger inputs.
std::int64_t body_param_count(const Architecture& arch);
std::int64_t embedding_param_count(const Architecture& arch);

// One row of the bundled reference-model catalog.
struct ReferenceRow {
  std::string family;  // e.g. "multilingual-12"
  Variant method;
  double local_steps;
  double rounds;
  double mean_local_vocab;
  double total_params;   // the family's published STD model size
  double global_vocab;
  double d_model;
  double seq_len;
};

// Catalog of the reference model configurations the ledger is validated
// against (12/24-block multilingual and multi-domain decoder models).
std::vector<ReferenceRow> reference_rows();

std::string format_param_count(double params);  // "0.56M", "1.3B", ...
std::string cost_table_text(const std::vector<ReferenceRow>& rows);
std::string cost_table_csv(const std::vector<ReferenceRow>& rows);

// Running total of what the simulator actually exchanged. Uploads are the
// per-round deltas, downloads the fresh worker copies; the reported per-step
// average is upload-only per participating worker per local step, matching
// the analytical convention of one one-way transfer every N_local steps.
class CommCounter {
 public:
  void on_download(std::uint64_t params, std::uint64_t embedding_params);
  void on_upload(std::uint64_t params, std::uint64_t embedding_params);
  void on_worker_steps(std::uint64_t steps);

  std::uint64_t uploaded_params() const { return uploaded_; }
  std::uint64_t downloaded_params() const { return downloaded_; }
  std::uint64_t uploaded_embedding_params() const { return uploaded_emb_; }
  std::uint64_t downloaded_embedding_params() const { return downloaded_emb_; }
  std::uint64_t uploaded_bytes() const { return uploaded_ * 8; }
  std::uint64_t worker_steps() const { return worker_steps_; }

  double avg_upload_params_per_worker_step() const;

 private:
  std::uint64_t uploaded_ = 0;
  std::uint64_t downloaded_ = 0;
  std::uint64_t uploaded_emb_ = 0;
  std::uint64_t downloaded_emb_ = 0;
  std::uint64_t worker_steps_ = 0;
};

}  // namespace dept
