#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "dept/corpus.hpp"
#include "dept/model.hpp"

namespace dept {

// Error-free float transforms. Deltas are stored as (hi, lo) pairs so that
// hi + lo equals after - before exactly; this makes the single-worker
// aggregation path reproduce the worker's parameters bit for bit, which the
// reduction-equivalence tests require.
namespace eft {

struct Split {
  double hi = 0.0;
  double lo = 0.0;
};

inline Split two_sum(double a, double b) {
  const double s = a + b;
  const double bb = s - a;
  return {s, (a - (s - bb)) + (b - bb)};
}

inline Split two_diff(double a, double b) { return two_sum(a, -b); }

// Sum of three doubles, exact whenever the true sum is representable.
inline double add3(double a, double hi, double lo) {
  const Split x = two_sum(hi, lo);
  const Split s = two_sum(a, x.hi);
  return s.hi + (s.lo + x.lo);
}

}  // namespace eft

struct CosineSchedule {
  double peak_lr = 1e-3;
  double decay_alpha = 0.1;  // terminal lr fraction
  std::int64_t total_steps = 1000;
  std::int64_t warmup_steps = 0;
};

// Linear warmup to peak_lr, then cosine decay to decay_alpha * peak_lr at
// total_steps; clamped to the terminal value beyond the horizon.
double cosine_lr(const CosineSchedule& schedule, std::int64_t step);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct AdamWState {
  ModelParams m, v;
  std::int64_t t = 0;

  static AdamWState zero(const ModelParams& shape) {
    return {zeros_like(shape), zeros_like(shape), 0};
  }
};

enum class ParamFilter { All, BodyOnly, EmbeddingsOnly };

// Scales all gradients so the global L2 norm does not exceed max_norm;
// returns the pre-clip norm.
double clip_grad_norm(GradientSet& grads, double max_norm);

// Decoupled weight decay applied before the bias-corrected Adam update.
// Restricting the filter updates only that tensor group while leaving the
// rest (and their moments) untouched; t advances once per call.
void adamw_step(ModelParams& params, const GradientSet& grads,
                AdamWState& state, double lr, const AdamWConfig& cfg,
                ParamFilter filter = ParamFilter::All);

// One worker's contribution to a round: exact parameter differences in
// global coordinates plus per-row ownership of the token embedding rows.
// SPEC deltas carry the body only.
struct DeltaSet {
  std::size_t source_id = 0;
  ModelParams hi, lo;  // hi + lo == after - before, exactly
  std::vector<std::uint8_t> token_row_owned;
  bool include_token_embeddings = true;
  bool include_positional = true;

  std::uint64_t uploaded_params() const;
  std::uint64_t uploaded_embedding_params() const;
};

// before/after must share shapes; with a trim map the token-embedding delta
// is scattered to global rows (I_k^T phi_k) with ownership only on mapped
// rows, realizing zero-padding for the rest.
DeltaSet compute_delta(const ModelParams& before, const ModelParams& after,
                       const TrimMap* trim = nullptr);

// Body-only delta for variants whose embeddings never leave the source;
// embedding shapes of before/after may differ and are ignored.
DeltaSet compute_body_delta(const ModelParams& before,
                            const ModelParams& after);

// theta, psi: global += mean of deltas. Token embeddings: per-row average
// over the sources owning that row; unowned rows stay bitwise unchanged.
// Deltas are consumed in ascending source-id order with pairwise summation,
// so the result is independent of the caller's ordering.
void outer_apply(ModelParams& global, std::vector<DeltaSet> deltas);

}  // namespace dept
