#include "dept/dept.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <thread>

#include "dept/eval.hpp"

namespace dept {

namespace {

constexpr double kInitStd = 0.02;

void parallel_for(std::size_t n, int workers,
                  const std::function<void(std::size_t)>& fn) {
  if (n == 0) return;
  const std::size_t pool =
      std::min<std::size_t>(n, workers < 1 ? 1 : static_cast<std::size_t>(workers));
  if (pool <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> threads;
  threads.reserve(pool);
  for (std::size_t w = 0; w < pool; ++w) {
    threads.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) return;
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::uint64_t group_param_count(const ModelParams& p, TensorGroup group) {
  std::uint64_t acc = 0;
  for_each_tensor(const_cast<ModelParams&>(p),
                  [&](const std::string&, Tensor& t, TensorGroup g) {
                    if (g == group) acc += t.size();
                  });
  return acc;
}

}  // namespace

double InnerOptStats::mean_loss() const {
  if (losses.empty()) return 0.0;
  double acc = 0.0;
  for (double l : losses) acc += l;
  return acc / static_cast<double>(losses.size());
}

void VariantConfig::validate(std::size_t num_sources) const {
  if (rounds < 0 || local_steps < 0 || batch_size < 1)
    throw std::runtime_error("invalid round/step/batch configuration");
  if (tau < 0.0) throw std::runtime_error("tau must be non-negative");
  const bool is_round_based = variant != Variant::Std && variant != Variant::Act;
  if (is_round_based &&
      sources_per_round > static_cast<std::int64_t>(num_sources))
    throw std::runtime_error("sources_per_round exceeds source count");
  if (variant == Variant::Act && forget_every < 1)
    throw std::runtime_error("ACT requires forget_every >= 1");
}

InnerOptStats inner_opt(ModelParams& params, const TokenizedDataset& data,
                        const CosineSchedule& schedule,
                        const AdamWConfig& adam, double clip_norm,
                        std::int64_t batch_size, std::int64_t start_step,
                        std::int64_t steps, AdamWState& body_state,
                        AdamWState& emb_state, Rng& rng) {
  if (data.sequences.empty()) throw std::runtime_error("empty dataset");
  if (data.vocab_size != params.token_embeddings.rows)
    throw std::runtime_error("dataset vocab does not match embedding rows");
  InnerOptStats stats;
  std::vector<std::size_t> picks(batch_size);
  for (std::int64_t i = 0; i < steps; ++i) {
    const double lr = cosine_lr(schedule, start_step + i);
    for (auto& p : picks) p = rng.uniform_below(data.sequences.size());
    const Batch batch = make_batch(data, picks);
    ForwardResult res = forward(params, batch);
    if (!std::isfinite(res.loss)) throw NumericError("non-finite loss");
    stats.losses.push_back(res.loss);
    stats.max_act_norm =
        std::max(stats.max_act_norm, activation_l2_norm(res.trace));
    GradientSet grads = backward(params, res.trace);
    clip_grad_norm(grads, clip_norm);
    adamw_step(params, grads, body_state, lr, adam, ParamFilter::BodyOnly);
    adamw_step(params, grads, emb_state, lr, adam,
               ParamFilter::EmbeddingsOnly);
    stats.last_lr = lr;
  }
  return stats;
}

std::pair<Tensor, Tensor> spec_initial_embeddings(std::size_t vocab_rows,
                                                  std::size_t d_model,
                                                  std::size_t seq_len,
                                                  std::uint64_t seed,
                                                  std::size_t source_id) {
  Rng rng = Rng::derive(seed, "spec_init", source_id);
  Tensor phi(vocab_rows, d_model);
  for (auto& v : phi.data) v = rng.normal(0.0, kInitStd);
  Tensor psi(seq_len, d_model);
  for (auto& v : psi.data) v = rng.normal(0.0, kInitStd);
  return {std::move(phi), std::move(psi)};
}

void act_reset(ModelParams& params, AdamWState& emb_state, std::uint64_t seed,
               std::int64_t cycle) {
  Rng rng = Rng::derive(seed, "act_reset", static_cast<std::uint64_t>(cycle));
  for (auto& v : params.token_embeddings.data) v = rng.normal(0.0, kInitStd);
  for (auto& v : params.positional_embeddings.data)
    v = rng.normal(0.0, kInitStd);
  emb_state.m.token_embeddings.fill(0.0);
  emb_state.v.token_embeddings.fill(0.0);
  emb_state.m.positional_embeddings.fill(0.0);
  emb_state.v.positional_embeddings.fill(0.0);
  emb_state.t = 0;
}

Batch draw_mixed_batch(const std::vector<const TokenizedDataset*>& sources,
                       const std::vector<double>& weights,
                       std::int64_t batch_size, Rng& rng,
                       std::vector<std::size_t>* slot_sources) {
  Batch batch;
  batch.batch = static_cast<std::size_t>(batch_size);
  batch.time = sources[0]->seq_len;
  batch.ids.reserve(batch.batch * batch.time);
  for (std::int64_t b = 0; b < batch_size; ++b) {
    const std::size_t k = sample_categorical(weights, rng);
    const std::size_t idx = rng.uniform_below(sources[k]->num_sequences());
    const auto& seq = sources[k]->sequences[idx];
    batch.ids.insert(batch.ids.end(), seq.begin(), seq.end());
    if (slot_sources) slot_sources->push_back(k);
  }
  return batch;
}

struct Simulator::WorkerOutput {
  DeltaSet delta;
  double mean_loss = 0.0;
  double max_act_norm = 0.0;
  double last_lr = 0.0;
  bool has_private = false;
  Tensor new_phi, new_psi;
  AdamWState new_private_opt;
  std::uint64_t download_params = 0;
  std::uint64_t download_embedding_params = 0;
};

Simulator::Simulator(Architecture arch, VariantConfig cfg,
                     CosineSchedule schedule, AdamWConfig adam,
                     double clip_norm, std::vector<SourceState> sources)
    : arch_(arch),
      cfg_(cfg),
      schedule_(schedule),
      adam_(adam),
      clip_norm_(clip_norm),
      sources_(std::move(sources)) {
  arch_.validate();
  cfg_.validate(sources_.size());
  const bool trims_needed =
      cfg_.variant == Variant::Trim || cfg_.variant == Variant::Spec;
  for (auto& src : sources_) {
    if (trims_needed && !src.trim)
      throw std::runtime_error("variant requires a trim map per source");
    if (src.embedding_rows == 0) {
      switch (cfg_.variant) {
        case Variant::Glob:
        case Variant::Std:
        case Variant::Act:
          src.embedding_rows = arch_.vocab_size;
          break;
        case Variant::Trim:
        case Variant::Spec:
          src.embedding_rows = src.trim->local_size;
          break;
        case Variant::SpecOpt:
          src.embedding_rows = src.train.vocab_size;
          break;
      }
    }
    if (src.train.vocab_size != src.embedding_rows)
      throw std::runtime_error("trim/dataset inconsistency");
    if (src.trim && src.trim->global_size != arch_.vocab_size)
      throw std::runtime_error("trim map does not match global vocabulary");
  }
  global_ = init_params(arch_, cfg_.seed);
}

ModelParams Simulator::eval_params_for(const SourceState& src) const {
  switch (cfg_.variant) {
    case Variant::Glob:
    case Variant::Std:
    case Variant::Act:
      return global_;
    case Variant::Trim:
      return slice_token_embeddings(global_, *src.trim);
    case Variant::Spec:
    case Variant::SpecOpt: {
      ModelParams p = global_;
      if (src.initialized) {
        p.token_embeddings = src.private_phi;
        p.positional_embeddings = src.private_psi;
      } else {
        auto [phi, psi] =
            spec_initial_embeddings(src.embedding_rows, arch_.d_model,
                                    arch_.seq_len, cfg_.seed, src.source_id);
        p.token_embeddings = std::move(phi);
        p.positional_embeddings = std::move(psi);
      }
      p.arch.vocab_size = src.embedding_rows;
      return p;
    }
  }
  return global_;
}

double Simulator::eval_source(std::size_t source_id) const {
  const SourceState& src = sources_[source_id];
  return perplexity(eval_params_for(src), src.validation);
}

Simulator::WorkerOutput Simulator::run_worker(std::size_t source_id) const {
  const SourceState& src = sources_[source_id];
  Rng rng = Rng::derive(cfg_.seed, "inner", static_cast<std::uint64_t>(round_),
                        source_id);

  ModelParams start;
  switch (cfg_.variant) {
    case Variant::Glob:
      start = global_;
      break;
    case Variant::Trim:
      start = slice_token_embeddings(global_, *src.trim);
      break;
    case Variant::Spec:
    case Variant::SpecOpt: {
      start = global_;
      if (src.initialized) {
        start.token_embeddings = src.private_phi;
        start.positional_embeddings = src.private_psi;
      } else {
        auto [phi, psi] =
            spec_initial_embeddings(src.embedding_rows, arch_.d_model,
                                    arch_.seq_len, cfg_.seed, src.source_id);
        start.token_embeddings = std::move(phi);
        start.positional_embeddings = std::move(psi);
      }
      start.arch.vocab_size = src.embedding_rows;
      break;
    }
    default:
      throw std::runtime_error("run_worker is for round-based variants");
  }

  ModelParams w = start;
  AdamWState body_state = AdamWState::zero(w);
  AdamWState emb_state = (cfg_.variant == Variant::Spec ||
                          cfg_.variant == Variant::SpecOpt) &&
                                 src.private_opt
                             ? *src.private_opt
                             : AdamWState::zero(w);

  const InnerOptStats stats =
      inner_opt(w, src.train, schedule_, adam_, clip_norm_, cfg_.batch_size,
                round_ * cfg_.local_steps, cfg_.local_steps, body_state,
                emb_state, rng);

  WorkerOutput out;
  out.mean_loss = stats.mean_loss();
  out.max_act_norm = stats.max_act_norm;
  out.last_lr = stats.last_lr;
  const std::uint64_t body_count = group_param_count(start, TensorGroup::Body);
  switch (cfg_.variant) {
    case Variant::Glob:
      out.delta = compute_delta(start, w, nullptr);
      out.download_embedding_params =
          group_param_count(start, TensorGroup::Embedding);
      break;
    case Variant::Trim:
      out.delta = compute_delta(start, w, &*src.trim);
      out.download_embedding_params =
          group_param_count(start, TensorGroup::Embedding);
      break;
    case Variant::Spec:
    case Variant::SpecOpt:
      out.delta = compute_body_delta(start, w);
      out.has_private = true;
      out.new_phi = std::move(w.token_embeddings);
      out.new_psi = std::move(w.positional_embeddings);
      out.new_private_opt = std::move(emb_state);
      out.download_embedding_params = 0;
      break;
    default:
      break;
  }
  out.delta.source_id = source_id;
  out.download_params = body_count + out.download_embedding_params;
  return out;
}

void Simulator::run_round() {
  if (cfg_.variant == Variant::Std || cfg_.variant == Variant::Act)
    throw std::runtime_error("run_round is for round-based variants");
  Rng sample_rng =
      Rng::derive(cfg_.seed, "sample", static_cast<std::uint64_t>(round_));
  const std::vector<std::size_t> selected = sample_sources(
      sources_.size(), static_cast<std::size_t>(cfg_.sources_per_round),
      sample_rng);

  std::vector<WorkerOutput> outs(selected.size());
  parallel_for(selected.size(), workers_,
               [&](std::size_t i) { outs[i] = run_worker(selected[i]); });

  std::vector<DeltaSet> deltas;
  deltas.reserve(outs.size());
  for (std::size_t i = 0; i < selected.size(); ++i) {
    WorkerOutput& o = outs[i];
    comm_.on_download(o.download_params, o.download_embedding_params);
    comm_.on_upload(o.delta.uploaded_params(),
                    o.delta.uploaded_embedding_params());
    comm_.on_worker_steps(static_cast<std::uint64_t>(cfg_.local_steps));
    if (o.has_private) {
      SourceState& src = sources_[selected[i]];
      src.private_phi = std::move(o.new_phi);
      src.private_psi = std::move(o.new_psi);
      src.private_opt = std::move(o.new_private_opt);
      src.initialized = true;
    }
    deltas.push_back(std::move(o.delta));
  }
  outer_apply(global_, std::move(deltas));
  round_ += 1;
  step_ = round_ * cfg_.local_steps;

  if (metrics_) {
    const double pnorm = param_l2_norm(global_);
    for (std::size_t i = 0; i < selected.size(); ++i) {
      MetricsRecord rec;
      rec.phase = "train";
      rec.round = round_;
      rec.step = step_;
      rec.source_id = static_cast<std::int64_t>(selected[i]);
      rec.loss = outs[i].mean_loss;
      rec.param_norm = pnorm;
      rec.act_norm = outs[i].max_act_norm;
      rec.lr = outs[i].last_lr;
      rec.comm_bytes_cum = comm_.uploaded_bytes();
      metrics_->emit(rec);
    }
    emit_eval_records(round_, step_);
  }
  maybe_checkpoint();
}

void Simulator::emit_eval_records(std::int64_t round, std::int64_t step) {
  if (!metrics_) return;
  for (std::size_t k = 0; k < sources_.size(); ++k) {
    const SourceState& src = sources_[k];
    const DatasetEval stats =
        evaluate_dataset(eval_params_for(src), src.validation);
    MetricsRecord rec;
    rec.phase = "eval";
    rec.round = round;
    rec.step = step;
    rec.source_id = static_cast<std::int64_t>(k);
    rec.ppl = stats.ppl;
    rec.act_norm = stats.act_norm;
    rec.comm_bytes_cum = comm_.uploaded_bytes();
    metrics_->emit(rec);
  }
}

void Simulator::maybe_checkpoint() {
  if (ckpt_dir_.empty() || ckpt_every_ <= 0) return;
  const std::int64_t unit =
      (cfg_.variant == Variant::Std || cfg_.variant == Variant::Act)
          ? step_ / cfg_.local_steps
          : round_;
  if (unit > 0 && unit % ckpt_every_ == 0) {
    char name[64];
    std::snprintf(name, sizeof(name), "/ckpt_round_%lld.bin",
                  static_cast<long long>(unit));
    make_checkpoint().save(ckpt_dir_ + name);
  }
}

void Simulator::run_std() {
  const std::int64_t total = cfg_.total_steps();
  if (!std_body_state_) {
    std_body_state_ = AdamWState::zero(global_);
    std_emb_state_ = AdamWState::zero(global_);
  }

  std::vector<std::size_t> sizes;
  for (const auto& src : sources_) sizes.push_back(src.train.num_sequences());
  const double tau = cfg_.variant == Variant::Act ? 0.0 : cfg_.tau;
  const std::vector<double> weights = temperature_weights(sizes, tau);

  // ACT schedules the embedding matrix on its own cosine cycle spanning one
  // forgetting period, restarted at every reset.
  CosineSchedule emb_schedule = schedule_;
  if (cfg_.variant == Variant::Act) {
    emb_schedule.total_steps = cfg_.forget_every;
    emb_schedule.warmup_steps =
        std::min<std::int64_t>(schedule_.warmup_steps, cfg_.forget_every - 1);
  }

  const std::uint64_t model_params =
      group_param_count(global_, TensorGroup::Body) +
      group_param_count(global_, TensorGroup::Embedding);
  const std::uint64_t emb_params =
      group_param_count(global_, TensorGroup::Embedding);

  const auto track_act_best = [&] {
    double acc = 0.0;
    for (std::size_t k = 0; k < sources_.size(); ++k) acc += eval_source(k);
    const double mean_ppl = acc / static_cast<double>(sources_.size());
    if (!has_act_best_ || mean_ppl < act_best_ppl_) {
      has_act_best_ = true;
      act_best_ppl_ = mean_ppl;
      act_best_params_ = global_;
    }
  };

  if (step_ == 0) emit_eval_records(0, 0);

  std::vector<std::size_t> batch_indices(cfg_.batch_size);
  for (; step_ < total;) {
    const std::int64_t s = step_;
    if (cfg_.variant == Variant::Act && s > 0 && s % cfg_.forget_every == 0) {
      track_act_best();
      act_reset(global_, *std_emb_state_, cfg_.seed, s / cfg_.forget_every);
      act_cycle_start_ = s;
    }

    Rng rng = Rng::derive(cfg_.seed, "std_step", static_cast<std::uint64_t>(s));
    std::vector<const TokenizedDataset*> pools;
    pools.reserve(sources_.size());
    for (const auto& src : sources_) pools.push_back(&src.train);
    const Batch batch = draw_mixed_batch(pools, weights, cfg_.batch_size, rng);

    ForwardResult res = forward(global_, batch);
    if (!std::isfinite(res.loss)) throw NumericError("non-finite loss");
    GradientSet grads = backward(global_, res.trace);
    clip_grad_norm(grads, clip_norm_);
    const double lr_body = cosine_lr(schedule_, s);
    const double lr_emb =
        cfg_.variant == Variant::Act
            ? cosine_lr(emb_schedule, s - act_cycle_start_)
            : lr_body;
    adamw_step(global_, grads, *std_body_state_, lr_body, adam_,
               ParamFilter::BodyOnly);
    adamw_step(global_, grads, *std_emb_state_, lr_emb, adam_,
               ParamFilter::EmbeddingsOnly);

    comm_.on_upload(model_params, emb_params);
    comm_.on_worker_steps(1);
    step_ += 1;

    if (metrics_) {
      MetricsRecord rec;
      rec.phase = "train";
      rec.step = s;
      rec.loss = res.loss;
      rec.param_norm = param_l2_norm(global_);
      rec.act_norm = activation_l2_norm(res.trace);
      rec.lr = lr_body;
      rec.comm_bytes_cum = comm_.uploaded_bytes();
      metrics_->emit(rec);
    }
    if (step_ % cfg_.local_steps == 0) {
      emit_eval_records(step_ / cfg_.local_steps, step_);
      round_ = step_ / cfg_.local_steps;
      maybe_checkpoint();
    }
  }
  if (cfg_.variant == Variant::Act) track_act_best();
}

TrainRunResult Simulator::run() {
  if (cfg_.variant == Variant::Std || cfg_.variant == Variant::Act) {
    run_std();
  } else {
    if (round_ == 0) emit_eval_records(0, 0);
    while (round_ < cfg_.rounds) run_round();
  }
  TrainRunResult r;
  r.final_params = global_;
  r.uploaded_params = comm_.uploaded_params();
  r.downloaded_params = comm_.downloaded_params();
  r.uploaded_embedding_params = comm_.uploaded_embedding_params();
  r.avg_upload_per_worker_step = comm_.avg_upload_params_per_worker_step();
  r.has_act_best = has_act_best_;
  if (has_act_best_) {
    r.act_best_params = act_best_params_;
    r.act_best_ppl = act_best_ppl_;
  }
  return r;
}

Checkpoint Simulator::make_checkpoint() const {
  Checkpoint c;
  c.arch = arch_;
  pack_params(c, "model.", global_);
  c.add_scalar("meta.variant", static_cast<double>(static_cast<int>(cfg_.variant)));
  c.add_scalar("meta.round", static_cast<double>(round_));
  c.add_scalar("meta.step", static_cast<double>(step_));
  c.add_scalar("meta.act_cycle_start", static_cast<double>(act_cycle_start_));
  c.add_scalar("meta.comm.uploaded", static_cast<double>(comm_.uploaded_params()));
  c.add_scalar("meta.comm.downloaded",
               static_cast<double>(comm_.downloaded_params()));
  c.add_scalar("meta.comm.uploaded_emb",
               static_cast<double>(comm_.uploaded_embedding_params()));
  c.add_scalar("meta.comm.downloaded_emb",
               static_cast<double>(comm_.downloaded_embedding_params()));
  c.add_scalar("meta.comm.worker_steps",
               static_cast<double>(comm_.worker_steps()));
  if (std_body_state_) {
    // Body and embedding moments share the spec'd opt.* names; the split is
    // reconstructed from the tensor group on load.
    for_each_tensor(const_cast<ModelParams&>(std_body_state_->m),
                    [&](const std::string& n, Tensor& t, TensorGroup g) {
                      if (g == TensorGroup::Body) c.add("opt.m." + n, t);
                    });
    for_each_tensor(const_cast<ModelParams&>(std_body_state_->v),
                    [&](const std::string& n, Tensor& t, TensorGroup g) {
                      if (g == TensorGroup::Body) c.add("opt.v." + n, t);
                    });
    for_each_tensor(const_cast<ModelParams&>(std_emb_state_->m),
                    [&](const std::string& n, Tensor& t, TensorGroup g) {
                      if (g == TensorGroup::Embedding) c.add("opt.m." + n, t);
                    });
    for_each_tensor(const_cast<ModelParams&>(std_emb_state_->v),
                    [&](const std::string& n, Tensor& t, TensorGroup g) {
                      if (g == TensorGroup::Embedding) c.add("opt.v." + n, t);
                    });
    c.add_scalar("opt.t", static_cast<double>(std_body_state_->t));
    c.add_scalar("opt.emb.t", static_cast<double>(std_emb_state_->t));
  }
  for (const auto& src : sources_) {
    if (!src.initialized) continue;
    const std::string p = "src" + std::to_string(src.source_id) + ".";
    c.add(p + "phi", src.private_phi);
    c.add(p + "psi", src.private_psi);
    c.add(p + "opt.m.tok_emb", src.private_opt->m.token_embeddings);
    c.add(p + "opt.v.tok_emb", src.private_opt->v.token_embeddings);
    c.add(p + "opt.m.pos_emb", src.private_opt->m.positional_embeddings);
    c.add(p + "opt.v.pos_emb", src.private_opt->v.positional_embeddings);
    c.add_scalar(p + "opt.t", static_cast<double>(src.private_opt->t));
  }
  if (has_act_best_) {
    pack_params(c, "act_best.", act_best_params_);
    c.add_scalar("meta.act_best_ppl", act_best_ppl_);
  }
  return c;
}

void Simulator::restore(const Checkpoint& c) {
  global_ = unpack_params(c, "model.", arch_);
  round_ = static_cast<std::int64_t>(c.scalar("meta.round"));
  step_ = static_cast<std::int64_t>(c.scalar("meta.step"));
  act_cycle_start_ = static_cast<std::int64_t>(c.scalar("meta.act_cycle_start"));
  CommCounter fresh;
  fresh.on_upload(static_cast<std::uint64_t>(c.scalar("meta.comm.uploaded")),
                  static_cast<std::uint64_t>(c.scalar("meta.comm.uploaded_emb")));
  fresh.on_download(
      static_cast<std::uint64_t>(c.scalar("meta.comm.downloaded")),
      static_cast<std::uint64_t>(c.scalar("meta.comm.downloaded_emb")));
  fresh.on_worker_steps(
      static_cast<std::uint64_t>(c.scalar("meta.comm.worker_steps")));
  comm_ = fresh;
  if (c.has("opt.t")) {
    std_body_state_ = AdamWState::zero(global_);
    std_emb_state_ = AdamWState::zero(global_);
    for_each_tensor(std_body_state_->m,
                    [&](const std::string& n, Tensor& t, TensorGroup g) {
                      if (g == TensorGroup::Body) t = *c.find("opt.m." + n);
                    });
    for_each_tensor(std_body_state_->v,
                    [&](const std::string& n, Tensor& t, TensorGroup g) {
                      if (g == TensorGroup::Body) t = *c.find("opt.v." + n);
                    });
    for_each_tensor(std_emb_state_->m,
                    [&](const std::string& n, Tensor& t, TensorGroup g) {
                      if (g == TensorGroup::Embedding) t = *c.find("opt.m." + n);
                    });
    for_each_tensor(std_emb_state_->v,
                    [&](const std::string& n, Tensor& t, TensorGroup g) {
                      if (g == TensorGroup::Embedding) t = *c.find("opt.v." + n);
                    });
    std_body_state_->t = static_cast<std::int64_t>(c.scalar("opt.t"));
    std_emb_state_->t = static_cast<std::int64_t>(c.scalar("opt.emb.t"));
  }
  for (auto& src : sources_) {
    const std::string p = "src" + std::to_string(src.source_id) + ".";
    if (!c.has(p + "phi")) continue;
    src.initialized = true;
    src.private_phi = *c.find(p + "phi");
    src.private_psi = *c.find(p + "psi");
    ModelParams shape = global_;
    shape.token_embeddings = src.private_phi;
    shape.positional_embeddings = src.private_psi;
    shape.arch.vocab_size = src.embedding_rows;
    AdamWState st = AdamWState::zero(shape);
    st.m.token_embeddings = *c.find(p + "opt.m.tok_emb");
    st.v.token_embeddings = *c.find(p + "opt.v.tok_emb");
    st.m.positional_embeddings = *c.find(p + "opt.m.pos_emb");
    st.v.positional_embeddings = *c.find(p + "opt.v.pos_emb");
    st.t = static_cast<std::int64_t>(c.scalar(p + "opt.t"));
    src.private_opt = std::move(st);
  }
  if (c.has("meta.act_best_ppl")) {
    has_act_best_ = true;
    act_best_ppl_ = c.scalar("meta.act_best_ppl");
    act_best_params_ = unpack_params(c, "act_best.", arch_);
  }
}

ModelParams continued_pretrain(
    const ModelParams& body, const ModelParams* pretrained,
    const std::vector<TokenizedDataset>& train_sources,
    const ContinuedPretrainConfig& cfg, MetricsSink* metrics,
    const std::function<void(std::int64_t, const ModelParams&)>& observer) {
  if (cfg.steps < 1) throw std::runtime_error("continued pre-training needs steps >= 1");
  if (train_sources.empty()) throw std::runtime_error("no training sources");
  const std::size_t vocab = train_sources[0].vocab_size;
  const std::size_t seq_len = train_sources[0].seq_len;
  for (const auto& d : train_sources) {
    if (d.vocab_size != vocab || d.seq_len != seq_len)
      throw std::runtime_error("continued pre-training sources disagree");
  }

  ModelParams p = body;
  p.arch.vocab_size = vocab;
  if (cfg.init == CtInit::Pretrained) {
    if (pretrained == nullptr ||
        pretrained->token_embeddings.rows != vocab ||
        pretrained->positional_embeddings.rows != p.arch.seq_len)
      throw std::runtime_error("pretrained embeddings do not match vocabulary");
    p.token_embeddings = pretrained->token_embeddings;
    p.positional_embeddings = pretrained->positional_embeddings;
  } else {
    Rng rng = Rng::derive(cfg.seed, "ct_init");
    p.token_embeddings = Tensor(vocab, p.arch.d_model);
    for (auto& v : p.token_embeddings.data) v = rng.normal(0.0, kInitStd);
    p.positional_embeddings = Tensor(p.arch.seq_len, p.arch.d_model);
    for (auto& v : p.positional_embeddings.data) v = rng.normal(0.0, kInitStd);
  }

  // Random mode gets a full cycle from eta_max; pretrained starts at half.
  CosineSchedule sched;
  sched.peak_lr =
      cfg.init == CtInit::Pretrained ? cfg.peak_lr / 2.0 : cfg.peak_lr;
  sched.decay_alpha = cfg.decay_alpha;
  sched.total_steps = cfg.steps;
  sched.warmup_steps = 0;

  std::vector<std::size_t> sizes;
  for (const auto& d : train_sources) sizes.push_back(d.num_sequences());
  const std::vector<double> weights = temperature_weights(sizes, cfg.sampling_tau);

  AdamWState body_state = AdamWState::zero(p);
  AdamWState emb_state = AdamWState::zero(p);

  std::vector<const TokenizedDataset*> pools;
  pools.reserve(train_sources.size());
  for (const auto& d : train_sources) pools.push_back(&d);

  if (observer) observer(0, p);
  for (std::int64_t s = 0; s < cfg.steps; ++s) {
    Rng rng = Rng::derive(cfg.seed, "ct_step", static_cast<std::uint64_t>(s));
    const Batch batch = draw_mixed_batch(pools, weights, cfg.batch_size, rng);
    ForwardResult res = forward(p, batch);
    if (!std::isfinite(res.loss)) throw NumericError("non-finite loss");
    GradientSet grads = backward(p, res.trace);
    clip_grad_norm(grads, cfg.clip_norm);
    const double lr = cosine_lr(sched, s);
    adamw_step(p, grads, body_state, lr, cfg.adam, ParamFilter::BodyOnly);
    adamw_step(p, grads, emb_state, lr, cfg.adam, ParamFilter::EmbeddingsOnly);
    if (metrics) {
      MetricsRecord rec;
      rec.phase = "ct";
      rec.step = s;
      rec.loss = res.loss;
      rec.lr = lr;
      rec.act_norm = activation_l2_norm(res.trace);
      metrics->emit(rec);
    }
    if (observer) observer(s + 1, p);
  }
  return p;
}

}  // namespace dept
