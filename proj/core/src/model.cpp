#include "dept/model.hpp"

#include <cmath>
#include <stdexcept>

namespace dept {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kInitStd = 0.02;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

double gelu(double x) {
  return 0.5 * x * (1.0 + std::erf(x * 0.7071067811865475244));
}

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * 0.7071067811865475244));
  return cdf + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

// y = gain .* xhat + bias with xhat = (x - mean) * rstd, row-wise.
void layer_norm_forward(const Tensor& x, const Tensor& gain,
                        const Tensor& bias, Tensor& xhat,
                        std::vector<double>& rstd, Tensor& y) {
  const std::size_t n = x.rows, d = x.cols;
  xhat = Tensor(n, d);
  y = Tensor(n, d);
  rstd.assign(n, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    const double* xr = x.row(r);
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += xr[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double c = xr[j] - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + kLnEps);
    rstd[r] = rs;
    double* hr = xhat.row(r);
    double* yr = y.row(r);
    for (std::size_t j = 0; j < d; ++j) {
      hr[j] = (xr[j] - mean) * rs;
      yr[j] = gain.data[j] * hr[j] + bias.data[j];
    }
  }
}

// Backward of layer_norm_forward given dL/dy; accumulates into dgain, dbias
// and adds the input gradient into dx.
void layer_norm_backward(const Tensor& dy, const Tensor& xhat,
                         const std::vector<double>& rstd, const Tensor& gain,
                         Tensor& dgain, Tensor& dbias, Tensor& dx) {
  const std::size_t n = dy.rows, d = dy.cols;
  for (std::size_t r = 0; r < n; ++r) {
    const double* dyr = dy.row(r);
    const double* hr = xhat.row(r);
    double* dxr = dx.row(r);
    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      dgain.data[j] += dyr[j] * hr[j];
      dbias.data[j] += dyr[j];
      const double dxh = dyr[j] * gain.data[j];
      sum_dxhat += dxh;
      sum_dxhat_xhat += dxh * hr[j];
    }
    const double inv_d = 1.0 / static_cast<double>(d);
    for (std::size_t j = 0; j < d; ++j) {
      const double dxh = dyr[j] * gain.data[j];
      dxr[j] +=
          rstd[r] * (dxh - sum_dxhat * inv_d - hr[j] * sum_dxhat_xhat * inv_d);
    }
  }
}

void add_rows_into(const Tensor& src, Tensor& bias_grad) {
  for (std::size_t r = 0; r < src.rows; ++r) {
    const double* s = src.row(r);
    for (std::size_t j = 0; j < src.cols; ++j) bias_grad.data[j] += s[j];
  }
}

Tensor apply_gain_bias(const Tensor& xhat, const Tensor& gain,
                       const Tensor& bias) {
  Tensor y(xhat.rows, xhat.cols);
  for (std::size_t r = 0; r < xhat.rows; ++r) {
    const double* hr = xhat.row(r);
    double* yr = y.row(r);
    for (std::size_t j = 0; j < xhat.cols; ++j)
      yr[j] = gain.data[j] * hr[j] + bias.data[j];
  }
  return y;
}

}  // namespace

void Architecture::validate() const {
  if (num_blocks < 1 || d_model < 1 || num_heads < 1 || expansion_ratio < 1 ||
      seq_len < 1 || vocab_size < 1)
    throw std::runtime_error("architecture counts must be positive");
  if (d_model % num_heads != 0)
    throw std::runtime_error("d_model must be divisible by num_heads");
}

Batch make_batch(const TokenizedDataset& data,
                 const std::vector<std::size_t>& indices) {
  Batch b;
  b.batch = indices.size();
  b.time = data.seq_len;
  b.ids.reserve(b.batch * b.time);
  for (std::size_t i : indices) {
    const auto& s = data.sequences[i];
    b.ids.insert(b.ids.end(), s.begin(), s.end());
  }
  return b;
}

ModelParams init_params(const Architecture& arch, std::uint64_t seed) {
  arch.validate();
  Rng rng = Rng::derive(seed, "init_params");
  const std::size_t d = arch.d_model;
  const std::size_t e = arch.expansion_ratio * d;

  const auto gauss = [&](Tensor& t) {
    for (auto& v : t.data) v = rng.normal(0.0, kInitStd);
  };
  const auto ones = [](Tensor& t) { t.fill(1.0); };

  ModelParams p;
  p.arch = arch;
  p.blocks.resize(arch.num_blocks);
  for (auto& b : p.blocks) {
    b.ln1_gain = Tensor(1, d);
    ones(b.ln1_gain);
    b.ln1_bias = Tensor(1, d);
    b.qkv_weight = Tensor(d, 3 * d);
    gauss(b.qkv_weight);
    b.qkv_bias = Tensor(1, 3 * d);
    b.out_weight = Tensor(d, d);
    gauss(b.out_weight);
    b.out_bias = Tensor(1, d);
    b.ln2_gain = Tensor(1, d);
    ones(b.ln2_gain);
    b.ln2_bias = Tensor(1, d);
    b.ff_in_weight = Tensor(d, e);
    gauss(b.ff_in_weight);
    b.ff_in_bias = Tensor(1, e);
    b.ff_out_weight = Tensor(e, d);
    gauss(b.ff_out_weight);
    b.ff_out_bias = Tensor(1, d);
  }
  p.final_gain = Tensor(1, d);
  ones(p.final_gain);
  p.final_bias = Tensor(1, d);
  p.token_embeddings = Tensor(arch.vocab_size, d);
  gauss(p.token_embeddings);
  p.positional_embeddings = Tensor(arch.seq_len, d);
  gauss(p.positional_embeddings);
  return p;
}

ModelParams zeros_like(const ModelParams& p) {
  ModelParams z = p;
  for_each_tensor(z, [](const std::string&, Tensor& t, TensorGroup) {
    t.fill(0.0);
  });
  return z;
}

ForwardResult forward(const ModelParams& params, const Batch& batch,
                      bool keep_logits) {
  const Architecture& arch = params.arch;
  const std::size_t B = batch.batch, T = batch.time, d = arch.d_model;
  const std::size_t H = arch.num_heads, hd = arch.head_dim();
  const std::size_t V = params.token_embeddings.rows;
  if (T > arch.seq_len)
    throw std::runtime_error("batch longer than model sequence length");
  for (std::uint32_t id : batch.ids)
    if (id >= V) throw std::runtime_error("id out of range");

  ForwardResult res;
  ForwardTrace& tr = res.trace;
  tr.batch = batch;
  tr.blocks.resize(arch.num_blocks);

  const std::size_t BT = B * T;
  Tensor x(BT, d);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < T; ++t) {
      const double* tok = params.token_embeddings.row(batch.id(b, t));
      const double* pos = params.positional_embeddings.row(t);
      double* xr = x.row(b * T + t);
      for (std::size_t j = 0; j < d; ++j) xr[j] = tok[j] + pos[j];
    }
  }

  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  for (std::size_t blk = 0; blk < arch.num_blocks; ++blk) {
    const BlockParams& bp = params.blocks[blk];
    BlockTrace& bt = tr.blocks[blk];
    bt.x_in = x;

    Tensor y1;
    layer_norm_forward(x, bp.ln1_gain, bp.ln1_bias, bt.ln1_norm, bt.ln1_rstd,
                       y1);

    bt.qkv = Tensor(BT, 3 * d);
    for (std::size_t r = 0; r < BT; ++r)
      for (std::size_t j = 0; j < 3 * d; ++j)
        bt.qkv.at(r, j) = bp.qkv_bias.data[j];
    matmul_accumulate(y1, bp.qkv_weight, bt.qkv);

    bt.att_probs.assign(H, Tensor(BT, T));
    bt.att_mix = Tensor(BT, d);
    for (std::size_t h = 0; h < H; ++h) {
      Tensor& probs = bt.att_probs[h];
      const std::size_t qo = h * hd, ko = d + h * hd, vo = 2 * d + h * hd;
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t t = 0; t < T; ++t) {
          const std::size_t rt = b * T + t;
          const double* q = bt.qkv.row(rt) + qo;
          double* prow = probs.row(rt);
          double maxs = -1e300;
          for (std::size_t u = 0; u <= t; ++u) {
            const double* k = bt.qkv.row(b * T + u) + ko;
            double s = 0.0;
            for (std::size_t j = 0; j < hd; ++j) s += q[j] * k[j];
            s *= scale;
            prow[u] = s;
            if (s > maxs) maxs = s;
          }
          double denom = 0.0;
          for (std::size_t u = 0; u <= t; ++u) {
            prow[u] = std::exp(prow[u] - maxs);
            denom += prow[u];
          }
          const double inv = 1.0 / denom;
          for (std::size_t u = 0; u <= t; ++u) prow[u] *= inv;
          double* mix = bt.att_mix.row(rt) + qo;
          for (std::size_t u = 0; u <= t; ++u) {
            const double p = prow[u];
            const double* v = bt.qkv.row(b * T + u) + vo;
            for (std::size_t j = 0; j < hd; ++j) mix[j] += p * v[j];
          }
        }
      }
    }

    bt.x_mid = bt.x_in;
    {
      Tensor att_out(BT, d);
      for (std::size_t r = 0; r < BT; ++r)
        for (std::size_t j = 0; j < d; ++j)
          att_out.at(r, j) = bp.out_bias.data[j];
      matmul_accumulate(bt.att_mix, bp.out_weight, att_out);
      for (std::size_t i = 0; i < BT * d; ++i)
        bt.x_mid.data[i] += att_out.data[i];
    }

    Tensor y2;
    layer_norm_forward(bt.x_mid, bp.ln2_gain, bp.ln2_bias, bt.ln2_norm,
                       bt.ln2_rstd, y2);

    const std::size_t e = arch.expansion_ratio * d;
    bt.ff_pre = Tensor(BT, e);
    for (std::size_t r = 0; r < BT; ++r)
      for (std::size_t j = 0; j < e; ++j)
        bt.ff_pre.at(r, j) = bp.ff_in_bias.data[j];
    matmul_accumulate(y2, bp.ff_in_weight, bt.ff_pre);
    bt.ff_act = Tensor(BT, e);
    for (std::size_t i = 0; i < BT * e; ++i)
      bt.ff_act.data[i] = gelu(bt.ff_pre.data[i]);

    Tensor ff_out(BT, d);
    for (std::size_t r = 0; r < BT; ++r)
      for (std::size_t j = 0; j < d; ++j)
        ff_out.at(r, j) = bp.ff_out_bias.data[j];
    matmul_accumulate(bt.ff_act, bp.ff_out_weight, ff_out);

    x = bt.x_mid;
    for (std::size_t i = 0; i < BT * d; ++i) x.data[i] += ff_out.data[i];
    tr.act_norms.push_back(std::sqrt(squared_l2(x.data)));
  }

  tr.final_in = x;
  Tensor h;
  layer_norm_forward(x, params.final_gain, params.final_bias, tr.final_norm,
                     tr.final_rstd, h);

  // Tied head: logits = h * tok_emb^T.
  Tensor logits(BT, V);
  matmul_nt_accumulate(h, params.token_embeddings, logits);

  tr.probs = Tensor(BT, V);
  double loss = 0.0;
  const std::size_t num_pred = B * (T - 1);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < T; ++t) {
      const std::size_t r = b * T + t;
      const double* lr = logits.row(r);
      double maxl = lr[0];
      for (std::size_t j = 1; j < V; ++j)
        if (lr[j] > maxl) maxl = lr[j];
      double denom = 0.0;
      double* pr = tr.probs.row(r);
      for (std::size_t j = 0; j < V; ++j) {
        pr[j] = std::exp(lr[j] - maxl);
        denom += pr[j];
      }
      const double inv = 1.0 / denom;
      for (std::size_t j = 0; j < V; ++j) pr[j] *= inv;
      if (t + 1 < T) {
        const std::uint32_t target = batch.id(b, t + 1);
        loss += maxl + std::log(denom) - lr[target];
      }
    }
  }
  loss /= static_cast<double>(num_pred);
  tr.loss = loss;
  res.loss = loss;
  if (keep_logits) tr.logits = std::move(logits);
  return res;
}

GradientSet backward(const ModelParams& params, ForwardTrace& trace,
                     double loss_scale) {
  if (trace.consumed) throw std::runtime_error("forward trace already consumed");
  trace.consumed = true;

  const Architecture& arch = params.arch;
  const Batch& batch = trace.batch;
  const std::size_t B = batch.batch, T = batch.time, d = arch.d_model;
  const std::size_t H = arch.num_heads, hd = arch.head_dim();
  const std::size_t V = params.token_embeddings.rows;
  const std::size_t BT = B * T;
  const std::size_t num_pred = B * (T - 1);

  GradientSet g = zeros_like(params);

  // dL/dlogits = (softmax - onehot) / num_pred for predicting rows.
  Tensor dlogits(BT, V);
  const double w = loss_scale / static_cast<double>(num_pred);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t + 1 < T; ++t) {
      const std::size_t r = b * T + t;
      const double* pr = trace.probs.row(r);
      double* dr = dlogits.row(r);
      for (std::size_t j = 0; j < V; ++j) dr[j] = pr[j] * w;
      dr[batch.id(b, t + 1)] -= w;
    }
  }

  // Head: logits = h * phi^T, with h the final layer-norm output.
  Tensor h = apply_gain_bias(trace.final_norm, params.final_gain,
                             params.final_bias);
  Tensor dh(BT, d);
  matmul_accumulate(dlogits, params.token_embeddings, dh);
  matmul_tn_accumulate(dlogits, h, g.token_embeddings);

  Tensor dx(BT, d);
  layer_norm_backward(dh, trace.final_norm, trace.final_rstd,
                      params.final_gain, g.final_gain, g.final_bias, dx);

  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  for (std::size_t blk = arch.num_blocks; blk-- > 0;) {
    const BlockParams& bp = params.blocks[blk];
    BlockTrace& bt = trace.blocks[blk];
    BlockParams& gb = g.blocks[blk];
    const std::size_t e = arch.expansion_ratio * d;

    // Feed-forward branch; dx currently holds dL/d(block output).
    Tensor dff_act(BT, e);
    matmul_nt_accumulate(dx, bp.ff_out_weight, dff_act);
    matmul_tn_accumulate(bt.ff_act, dx, gb.ff_out_weight);
    add_rows_into(dx, gb.ff_out_bias);

    Tensor dff_pre(BT, e);
    for (std::size_t i = 0; i < BT * e; ++i)
      dff_pre.data[i] = dff_act.data[i] * gelu_grad(bt.ff_pre.data[i]);

    Tensor dy2(BT, d);
    matmul_nt_accumulate(dff_pre, bp.ff_in_weight, dy2);
    {
      Tensor y2 = apply_gain_bias(bt.ln2_norm, bp.ln2_gain, bp.ln2_bias);
      matmul_tn_accumulate(y2, dff_pre, gb.ff_in_weight);
    }
    add_rows_into(dff_pre, gb.ff_in_bias);

    // dx_mid = residual passthrough + LN2 path.
    Tensor dx_mid = dx;
    layer_norm_backward(dy2, bt.ln2_norm, bt.ln2_rstd, bp.ln2_gain,
                        gb.ln2_gain, gb.ln2_bias, dx_mid);

    // Attention branch.
    Tensor dmix(BT, d);
    matmul_nt_accumulate(dx_mid, bp.out_weight, dmix);
    matmul_tn_accumulate(bt.att_mix, dx_mid, gb.out_weight);
    add_rows_into(dx_mid, gb.out_bias);

    Tensor dqkv(BT, 3 * d);
    for (std::size_t h_i = 0; h_i < H; ++h_i) {
      const Tensor& probs = bt.att_probs[h_i];
      const std::size_t qo = h_i * hd, ko = d + h_i * hd, vo = 2 * d + h_i * hd;
      std::vector<double> dp(T), ds(T);
      for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t t = 0; t < T; ++t) {
          const std::size_t rt = b * T + t;
          const double* dm = dmix.row(rt) + qo;
          const double* prow = probs.row(rt);
          double dot = 0.0;
          for (std::size_t u = 0; u <= t; ++u) {
            const std::size_t ru = b * T + u;
            const double* v = bt.qkv.row(ru) + vo;
            double acc = 0.0;
            for (std::size_t j = 0; j < hd; ++j) acc += dm[j] * v[j];
            dp[u] = acc;
            dot += acc * prow[u];
            double* dv = dqkv.row(ru) + vo;
            const double p = prow[u];
            for (std::size_t j = 0; j < hd; ++j) dv[j] += p * dm[j];
          }
          const double* q = bt.qkv.row(rt) + qo;
          double* dq = dqkv.row(rt) + qo;
          for (std::size_t u = 0; u <= t; ++u) {
            ds[u] = prow[u] * (dp[u] - dot) * scale;
            const std::size_t ru = b * T + u;
            const double* k = bt.qkv.row(ru) + ko;
            double* dk = dqkv.row(ru) + ko;
            for (std::size_t j = 0; j < hd; ++j) {
              dq[j] += ds[u] * k[j];
              dk[j] += ds[u] * q[j];
            }
          }
        }
      }
    }

    Tensor dy1(BT, d);
    matmul_nt_accumulate(dqkv, bp.qkv_weight, dy1);
    {
      Tensor y1 = apply_gain_bias(bt.ln1_norm, bp.ln1_gain, bp.ln1_bias);
      matmul_tn_accumulate(y1, dqkv, gb.qkv_weight);
    }
    add_rows_into(dqkv, gb.qkv_bias);

    Tensor dx_in = dx_mid;
    layer_norm_backward(dy1, bt.ln1_norm, bt.ln1_rstd, bp.ln1_gain,
                        gb.ln1_gain, gb.ln1_bias, dx_in);
    dx = std::move(dx_in);
  }

  // Embedding gradients: lookup scatter plus positional sums.
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t t = 0; t < T; ++t) {
      const double* dr = dx.row(b * T + t);
      double* dtok = g.token_embeddings.row(batch.id(b, t));
      double* dpos = g.positional_embeddings.row(t);
      for (std::size_t j = 0; j < d; ++j) {
        dtok[j] += dr[j];
        dpos[j] += dr[j];
      }
    }
  }
  return g;
}

double param_l2_norm(const ModelParams& params) {
  double acc = 0.0;
  for_each_tensor(const_cast<ModelParams&>(params),
                  [&](const std::string&, Tensor& t, TensorGroup) {
                    acc += squared_l2(t.data);
                  });
  return std::sqrt(acc);
}

double activation_l2_norm(const ForwardTrace& trace) {
  if (trace.act_norms.empty()) return 0.0;
  double acc = 0.0;
  for (double n : trace.act_norms) acc += n;
  return acc / static_cast<double>(trace.act_norms.size());
}

ModelParams slice_token_embeddings(const ModelParams& params,
                                   const TrimMap& trim) {
  if (trim.global_size != params.token_embeddings.rows)
    throw std::runtime_error("trim map does not match embedding rows");
  ModelParams out = params;
  out.arch.vocab_size = trim.local_size;
  out.token_embeddings = Tensor(trim.local_size, params.arch.d_model);
  for (std::size_t i = 0; i < trim.local_size; ++i) {
    const double* src = params.token_embeddings.row(trim.local_to_global[i]);
    double* dst = out.token_embeddings.row(i);
    for (std::size_t j = 0; j < params.arch.d_model; ++j) dst[j] = src[j];
  }
  return out;
}

}  // namespace dept
