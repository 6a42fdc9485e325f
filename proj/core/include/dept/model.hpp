#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dept/corpus.hpp"
#include "dept/tensor.hpp"

namespace dept {

struct Architecture {
  std::size_t num_blocks = 1;
  std::size_t d_model = 8;
  std::size_t num_heads = 1;
  std::size_t expansion_ratio = 4;
  std::size_t seq_len = 8;
  std::size_t vocab_size = 258;

  void validate() const;
  std::size_t head_dim() const { return d_model / num_heads; }
};

struct BlockParams {
  Tensor ln1_gain, ln1_bias;        // 1 x d
  Tensor qkv_weight, qkv_bias;      // d x 3d, 1 x 3d
  Tensor out_weight, out_bias;      // d x d, 1 x d
  Tensor ln2_gain, ln2_bias;        // 1 x d
  Tensor ff_in_weight, ff_in_bias;  // d x ed, 1 x ed
  Tensor ff_out_weight, ff_out_bias;  // ed x d, 1 x d
};

// Pre-LN decoder-only transformer. The output head is the token embedding
// matrix itself (tied weights), so logits always span exactly the rows of
// token_embeddings, trimmed or not.
struct ModelParams {
  Architecture arch;
  std::vector<BlockParams> blocks;
  Tensor final_gain, final_bias;  // 1 x d
  Tensor token_embeddings;        // V x d
  Tensor positional_embeddings;   // L x d
};

// Gradients share the parameter layout exactly.
using GradientSet = ModelParams;

enum class TensorGroup { Body, Embedding };

// Visits every parameter tensor in a fixed order with a stable name; the
// order defines checkpoint layout and all deterministic reductions.
template <class Params, class F>
void for_each_tensor(Params&& p, F&& f) {
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    auto& b = p.blocks[i];
    const std::string prefix = "block" + std::to_string(i) + ".";
    f(prefix + "ln1.gain", b.ln1_gain, TensorGroup::Body);
    f(prefix + "ln1.bias", b.ln1_bias, TensorGroup::Body);
    f(prefix + "attn.qkv.w", b.qkv_weight, TensorGroup::Body);
    f(prefix + "attn.qkv.b", b.qkv_bias, TensorGroup::Body);
    f(prefix + "attn.out.w", b.out_weight, TensorGroup::Body);
    f(prefix + "attn.out.b", b.out_bias, TensorGroup::Body);
    f(prefix + "ln2.gain", b.ln2_gain, TensorGroup::Body);
    f(prefix + "ln2.bias", b.ln2_bias, TensorGroup::Body);
    f(prefix + "ff.in.w", b.ff_in_weight, TensorGroup::Body);
    f(prefix + "ff.in.b", b.ff_in_bias, TensorGroup::Body);
    f(prefix + "ff.out.w", b.ff_out_weight, TensorGroup::Body);
    f(prefix + "ff.out.b", b.ff_out_bias, TensorGroup::Body);
  }
  f("final_ln.gain", p.final_gain, TensorGroup::Body);
  f("final_ln.bias", p.final_bias, TensorGroup::Body);
  f("tok_emb", p.token_embeddings, TensorGroup::Embedding);
  f("pos_emb", p.positional_embeddings, TensorGroup::Embedding);
}

// Batch of id sequences, row-major (batch x time).
struct Batch {
  std::size_t batch = 0;
  std::size_t time = 0;
  std::vector<std::uint32_t> ids;

  std::uint32_t id(std::size_t b, std::size_t t) const {
    return ids[b * time + t];
  }
};

Batch make_batch(const TokenizedDataset& data,
                 const std::vector<std::size_t>& indices);

struct BlockTrace {
  Tensor x_in;                    // BT x d
  Tensor ln1_norm;                // BT x d, normalized pre gain/bias
  std::vector<double> ln1_rstd;   // BT
  Tensor qkv;                     // BT x 3d
  std::vector<Tensor> att_probs;  // per head, (B*T) x T softmax rows
  Tensor att_mix;                 // BT x d, heads concatenated
  Tensor x_mid;                   // BT x d, after attention residual
  Tensor ln2_norm;
  std::vector<double> ln2_rstd;
  Tensor ff_pre;  // BT x ed, pre-GELU
  Tensor ff_act;  // BT x ed, post-GELU
};

// Cached activations for one forward pass; consumed exactly once.
struct ForwardTrace {
  Batch batch;
  std::vector<BlockTrace> blocks;
  Tensor final_in;  // BT x d, last block output
  Tensor final_norm;
  std::vector<double> final_rstd;
  Tensor probs;   // BT x V, next-token softmax
  Tensor logits;  // only when requested
  std::vector<double> act_norms;  // per-block output L2
  double loss = 0.0;
  bool consumed = false;
};

struct ForwardResult {
  double loss = 0.0;
  ForwardTrace trace;
};

// Gaussian(0, 0.02) weights and embeddings, zero biases, unit layer-norm
// gains; bit-reproducible for a fixed (arch, seed).
ModelParams init_params(const Architecture& arch, std::uint64_t seed);

ModelParams zeros_like(const ModelParams& p);

// Causal forward pass with mean next-token cross-entropy over all predicted
// positions. Input embedding is tok_emb[id] + pos_emb[position].
ForwardResult forward(const ModelParams& params, const Batch& batch,
                      bool keep_logits = false);

// Exact reverse-mode gradients; the tied embedding gradient accumulates both
// the lookup and the output-head contributions.
GradientSet backward(const ModelParams& params, ForwardTrace& trace,
                     double loss_scale = 1.0);

double param_l2_norm(const ModelParams& params);

// Mean over blocks of the per-block output activation norms.
double activation_l2_norm(const ForwardTrace& trace);

// phi_k = I_k phi: row i of the result is row local_to_global[i] of the
// input embeddings. Body and positional parameters are copied unchanged.
ModelParams slice_token_embeddings(const ModelParams& params,
                                   const TrimMap& trim);

}  // namespace dept
