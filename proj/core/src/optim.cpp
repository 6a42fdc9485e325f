#include "dept/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dept {

namespace {

using eft::Split;

Split dd_add(Split a, Split b) {
  Split t = eft::two_sum(a.hi, b.hi);
  const double e = a.lo + b.lo + t.lo;
  const double h = t.hi + e;
  return {h, e - (h - t.hi)};
}

// Pairwise reduction over deltas for one element; the tree shape depends
// only on the delta count, so the result is order-stable.
template <class Get>
Split pairwise(const Get& get, std::size_t lo, std::size_t hi) {
  if (hi - lo == 1) return get(lo);
  const std::size_t mid = lo + (hi - lo) / 2;
  return dd_add(pairwise(get, lo, mid), pairwise(get, mid, hi));
}

double mean_apply(double old_value, Split sum, std::size_t n) {
  if (n == 1) return eft::add3(old_value, sum.hi, sum.lo);
  const double dn = static_cast<double>(n);
  const double mean_hi = sum.hi / dn;
  const double rem = std::fma(-mean_hi, dn, sum.hi);  // exact residual
  const double mean_lo = (rem + sum.lo) / dn;
  return eft::add3(old_value, mean_hi, mean_lo);
}

bool is_phi(const std::string& name) { return name == "tok_emb"; }
bool is_psi(const std::string& name) { return name == "pos_emb"; }

}  // namespace

double cosine_lr(const CosineSchedule& s, std::int64_t step) {
  if (step < 0) throw std::runtime_error("negative schedule step");
  if (step > s.total_steps) step = s.total_steps;
  if (step < s.warmup_steps) {
    return s.peak_lr * static_cast<double>(step) /
           static_cast<double>(s.warmup_steps);
  }
  const double span = static_cast<double>(s.total_steps - s.warmup_steps);
  const double progress =
      span > 0.0 ? static_cast<double>(step - s.warmup_steps) / span : 1.0;
  const double cosine = 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
  return s.peak_lr * (s.decay_alpha + (1.0 - s.decay_alpha) * cosine);
}

double clip_grad_norm(GradientSet& grads, double max_norm) {
  if (max_norm <= 0.0) throw std::runtime_error("max_norm must be positive");
  double acc = 0.0;
  for_each_tensor(grads, [&](const std::string&, Tensor& t, TensorGroup) {
    acc += squared_l2(t.data);
  });
  const double norm = std::sqrt(acc);
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for_each_tensor(grads, [&](const std::string&, Tensor& t, TensorGroup) {
      for (auto& v : t.data) v *= scale;
    });
  }
  return norm;
}

void adamw_step(ModelParams& params, const GradientSet& grads,
                AdamWState& state, double lr, const AdamWConfig& cfg,
                ParamFilter filter) {
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));

  std::vector<Tensor*> pts, gts, mts, vts;
  std::vector<TensorGroup> groups;
  for_each_tensor(params, [&](const std::string&, Tensor& t, TensorGroup g) {
    pts.push_back(&t);
    groups.push_back(g);
  });
  for_each_tensor(const_cast<GradientSet&>(grads),
                  [&](const std::string&, Tensor& t, TensorGroup) {
                    gts.push_back(&t);
                  });
  for_each_tensor(state.m, [&](const std::string&, Tensor& t, TensorGroup) {
    mts.push_back(&t);
  });
  for_each_tensor(state.v, [&](const std::string&, Tensor& t, TensorGroup) {
    vts.push_back(&t);
  });

  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (filter == ParamFilter::BodyOnly && groups[i] != TensorGroup::Body)
      continue;
    if (filter == ParamFilter::EmbeddingsOnly &&
        groups[i] != TensorGroup::Embedding)
      continue;
    Tensor& p = *pts[i];
    const Tensor& g = *gts[i];
    Tensor& m = *mts[i];
    Tensor& v = *vts[i];
    if (!p.same_shape(g) || !p.same_shape(m) || !p.same_shape(v))
      throw std::runtime_error("optimizer shape mismatch");
    const double decay = 1.0 - lr * cfg.weight_decay;
    for (std::size_t j = 0; j < p.data.size(); ++j) {
      p.data[j] *= decay;
      m.data[j] = cfg.beta1 * m.data[j] + (1.0 - cfg.beta1) * g.data[j];
      v.data[j] =
          cfg.beta2 * v.data[j] + (1.0 - cfg.beta2) * g.data[j] * g.data[j];
      const double mhat = m.data[j] / bc1;
      const double vhat = v.data[j] / bc2;
      p.data[j] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

std::uint64_t DeltaSet::uploaded_params() const {
  std::uint64_t body = 0;
  for_each_tensor(const_cast<ModelParams&>(hi),
                  [&](const std::string&, Tensor& t, TensorGroup g) {
                    if (g == TensorGroup::Body) body += t.size();
                  });
  return body + uploaded_embedding_params();
}

std::uint64_t DeltaSet::uploaded_embedding_params() const {
  std::uint64_t emb = 0;
  if (include_positional) emb += hi.positional_embeddings.size();
  if (include_token_embeddings) {
    std::uint64_t rows = 0;
    for (std::uint8_t o : token_row_owned) rows += o;
    emb += rows * hi.token_embeddings.cols;
  }
  return emb;
}

DeltaSet compute_delta(const ModelParams& before, const ModelParams& after,
                       const TrimMap* trim) {
  DeltaSet d;
  d.hi = before;
  d.lo = before;

  std::vector<const Tensor*> bts, ats;
  for_each_tensor(const_cast<ModelParams&>(before),
                  [&](const std::string&, Tensor& t, TensorGroup) {
                    bts.push_back(&t);
                  });
  for_each_tensor(const_cast<ModelParams&>(after),
                  [&](const std::string&, Tensor& t, TensorGroup) {
                    ats.push_back(&t);
                  });
  std::vector<Tensor*> hts, lts;
  std::vector<std::string> names;
  for_each_tensor(d.hi, [&](const std::string& n, Tensor& t, TensorGroup) {
    hts.push_back(&t);
    names.push_back(n);
  });
  for_each_tensor(d.lo, [&](const std::string&, Tensor& t, TensorGroup) {
    lts.push_back(&t);
  });

  for (std::size_t i = 0; i < hts.size(); ++i) {
    const Tensor& b = *bts[i];
    const Tensor& a = *ats[i];
    if (!a.same_shape(b)) throw std::runtime_error("delta shape mismatch");
    if (trim != nullptr && is_phi(names[i])) continue;  // handled below
    Tensor& h = *hts[i];
    Tensor& l = *lts[i];
    for (std::size_t j = 0; j < b.data.size(); ++j) {
      const Split s = eft::two_diff(a.data[j], b.data[j]);
      h.data[j] = s.hi;
      l.data[j] = s.lo;
    }
  }

  const std::size_t d_model = before.arch.d_model;
  if (trim == nullptr) {
    d.token_row_owned.assign(before.token_embeddings.rows, 1);
  } else {
    if (trim->local_size != before.token_embeddings.rows)
      throw std::runtime_error("delta shape mismatch");
    d.hi.arch.vocab_size = trim->global_size;
    d.lo.arch.vocab_size = trim->global_size;
    d.hi.token_embeddings = Tensor(trim->global_size, d_model);
    d.lo.token_embeddings = Tensor(trim->global_size, d_model);
    d.token_row_owned.assign(trim->global_size, 0);
    for (std::size_t i = 0; i < trim->local_size; ++i) {
      const std::size_t g = trim->local_to_global[i];
      d.token_row_owned[g] = 1;
      double* hrow = d.hi.token_embeddings.row(g);
      double* lrow = d.lo.token_embeddings.row(g);
      const double* brow = before.token_embeddings.row(i);
      const double* arow = after.token_embeddings.row(i);
      for (std::size_t j = 0; j < d_model; ++j) {
        const Split s = eft::two_diff(arow[j], brow[j]);
        hrow[j] = s.hi;
        lrow[j] = s.lo;
      }
    }
  }
  return d;
}

DeltaSet compute_body_delta(const ModelParams& before,
                            const ModelParams& after) {
  DeltaSet d;
  d.include_token_embeddings = false;
  d.include_positional = false;
  d.hi = before;
  d.lo = before;
  d.hi.token_embeddings = Tensor();
  d.lo.token_embeddings = Tensor();
  d.hi.positional_embeddings = Tensor();
  d.lo.positional_embeddings = Tensor();

  std::vector<std::pair<const Tensor*, TensorGroup>> bts, ats;
  for_each_tensor(const_cast<ModelParams&>(before),
                  [&](const std::string&, Tensor& t, TensorGroup g) {
                    bts.emplace_back(&t, g);
                  });
  for_each_tensor(const_cast<ModelParams&>(after),
                  [&](const std::string&, Tensor& t, TensorGroup g) {
                    ats.emplace_back(&t, g);
                  });
  std::vector<Tensor*> hts, lts;
  for_each_tensor(d.hi, [&](const std::string&, Tensor& t, TensorGroup) {
    hts.push_back(&t);
  });
  for_each_tensor(d.lo, [&](const std::string&, Tensor& t, TensorGroup) {
    lts.push_back(&t);
  });
  for (std::size_t i = 0; i < hts.size(); ++i) {
    if (bts[i].second != TensorGroup::Body) continue;
    const Tensor& b = *bts[i].first;
    const Tensor& a = *ats[i].first;
    if (!a.same_shape(b)) throw std::runtime_error("delta shape mismatch");
    for (std::size_t j = 0; j < b.data.size(); ++j) {
      const Split s = eft::two_diff(a.data[j], b.data[j]);
      hts[i]->data[j] = s.hi;
      lts[i]->data[j] = s.lo;
    }
  }
  return d;
}

void outer_apply(ModelParams& global, std::vector<DeltaSet> deltas) {
  if (deltas.empty()) throw std::runtime_error("outer_apply needs deltas");
  std::sort(deltas.begin(), deltas.end(),
            [](const DeltaSet& a, const DeltaSet& b) {
              return a.source_id < b.source_id;
            });
  const std::size_t n = deltas.size();

  // Collect parallel tensor views: index 0 is the global model, the rest
  // are the deltas in ascending source order.
  std::vector<Tensor*> gts;
  std::vector<std::string> names;
  std::vector<TensorGroup> groups;
  for_each_tensor(global, [&](const std::string& nm, Tensor& t, TensorGroup g) {
    gts.push_back(&t);
    names.push_back(nm);
    groups.push_back(g);
  });
  std::vector<std::vector<Tensor*>> dh(n), dl(n);
  for (std::size_t k = 0; k < n; ++k) {
    for_each_tensor(deltas[k].hi, [&](const std::string&, Tensor& t,
                                      TensorGroup) { dh[k].push_back(&t); });
    for_each_tensor(deltas[k].lo, [&](const std::string&, Tensor& t,
                                      TensorGroup) { dl[k].push_back(&t); });
  }

  for (std::size_t i = 0; i < gts.size(); ++i) {
    Tensor& g = *gts[i];
    if (is_phi(names[i])) {
      // Zero-padding-ignored row averaging: each row is averaged over the
      // sources that own it; rows owned by nobody stay untouched.
      std::vector<std::size_t> owners;
      for (std::size_t r = 0; r < g.rows; ++r) {
        owners.clear();
        for (std::size_t k = 0; k < n; ++k) {
          if (deltas[k].include_token_embeddings &&
              deltas[k].token_row_owned[r])
            owners.push_back(k);
        }
        if (owners.empty()) continue;
        for (std::size_t c = 0; c < g.cols; ++c) {
          const auto get = [&](std::size_t o) -> Split {
            return {dh[owners[o]][i]->at(r, c), dl[owners[o]][i]->at(r, c)};
          };
          g.at(r, c) =
              mean_apply(g.at(r, c), pairwise(get, 0, owners.size()),
                         owners.size());
        }
      }
      continue;
    }

    std::vector<std::size_t> contributors;
    for (std::size_t k = 0; k < n; ++k) {
      if (is_psi(names[i]) && !deltas[k].include_positional) continue;
      contributors.push_back(k);
    }
    if (contributors.empty()) continue;
    for (std::size_t k : contributors) {
      if (!dh[k][i]->same_shape(g))
        throw std::runtime_error("outer_apply shape mismatch");
    }
    for (std::size_t j = 0; j < g.data.size(); ++j) {
      const auto get = [&](std::size_t o) -> Split {
        return {dh[contributors[o]][i]->data[j],
                dl[contributors[o]][i]->data[j]};
      };
      g.data[j] = mean_apply(g.data[j], pairwise(get, 0, contributors.size()),
                             contributors.size());
    }
  }
}

}  // namespace dept
