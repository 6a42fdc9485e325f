#include <cmath>

#include "dept/costs.hpp"
#include "dept/dept.hpp"
#include "dept/eval.hpp"
#include "doctest.h"
#include "support/synthetic.hpp"

using namespace dept;
using dept::testsupport::synthetic_corpus;

namespace {

struct MiniWorld {
  Architecture arch;
  Vocab global;
  std::vector<SourceState> sources;
  CosineSchedule schedule;
  AdamWConfig adam;
};

// Two small heterogeneous sources; datasets in the id space the variant
// trains in, mirroring what the prepare pipeline produces.
MiniWorld mini_world(Variant variant, std::int64_t total_steps,
                     bool identity_trims = false) {
  const std::vector<std::pair<std::string, std::string>> defs = {
      {"left", "abcdef"}, {"right", "ghijkl"}};
  std::vector<Corpus> trains, vals;
  Corpus united;
  united.source_id = "_union";
  for (const auto& [name, alphabet] : defs) {
    trains.push_back(synthetic_corpus(name, alphabet, 30, 20, 5));
    vals.push_back(synthetic_corpus(name, alphabet, 6, 21, 6));
    united.documents.insert(united.documents.end(),
                            trains.back().documents.begin(),
                            trains.back().documents.end());
  }

  MiniWorld w;
  w.global = train_subword_vocab(united, 280);
  w.arch.num_blocks = 1;
  w.arch.d_model = 16;
  w.arch.num_heads = 2;
  w.arch.expansion_ratio = 4;
  w.arch.seq_len = 16;
  w.arch.vocab_size = w.global.size();
  w.schedule.peak_lr = 2e-3;
  w.schedule.decay_alpha = 0.1;
  w.schedule.total_steps = total_steps;
  w.schedule.warmup_steps = total_steps / 100;
  w.adam.weight_decay = 0.01;

  for (std::size_t k = 0; k < defs.size(); ++k) {
    SourceState src;
    src.source_id = k;
    src.name = defs[k].first;
    const TokenizedDataset train_global =
        tokenize(trains[k], w.global, w.arch.seq_len);
    const TokenizedDataset val_global =
        tokenize(vals[k], w.global, w.arch.seq_len);
    switch (variant) {
      case Variant::Glob:
      case Variant::Std:
      case Variant::Act:
        src.train = train_global;
        src.validation = val_global;
        break;
      case Variant::Trim:
      case Variant::Spec: {
        src.trim = identity_trims
                       ? TrimMap::identity(w.global.size())
                       : build_trim_map(w.global,
                                        local_vocab_subset(w.global, trains[k]));
        src.train = reindex_dataset(train_global, *src.trim, false);
        src.validation = reindex_dataset(val_global, *src.trim, true);
        break;
      }
      case Variant::SpecOpt: {
        const Vocab own = train_subword_vocab(trains[k], 270);
        src.train = tokenize(trains[k], own, w.arch.seq_len);
        src.validation = tokenize(vals[k], own, w.arch.seq_len);
        break;
      }
    }
    w.sources.push_back(std::move(src));
  }
  return w;
}

VariantConfig mini_config(Variant v, std::int64_t rounds,
                          std::int64_t local_steps, std::int64_t selected,
                          std::uint64_t seed) {
  VariantConfig cfg;
  cfg.variant = v;
  cfg.rounds = rounds;
  cfg.local_steps = local_steps;
  cfg.sources_per_round = selected;
  cfg.batch_size = 4;
  cfg.seed = seed;
  if (v == Variant::Act) cfg.forget_every = 10;
  return cfg;
}

bool params_equal(const ModelParams& a, const ModelParams& b) {
  bool eq = true;
  std::vector<const Tensor*> ta, tb;
  for_each_tensor(const_cast<ModelParams&>(a),
                  [&](const std::string&, Tensor& t, TensorGroup) {
                    ta.push_back(&t);
                  });
  for_each_tensor(const_cast<ModelParams&>(b),
                  [&](const std::string&, Tensor& t, TensorGroup) {
                    tb.push_back(&t);
                  });
  for (std::size_t i = 0; i < ta.size(); ++i)
    eq = eq && ta[i]->data == tb[i]->data;
  return eq;
}

}  // namespace

TEST_CASE("inner_opt with zero steps leaves parameters untouched") {
  MiniWorld w = mini_world(Variant::Glob, 10);
  ModelParams p = init_params(w.arch, 1);
  const ModelParams before = p;
  AdamWState body = AdamWState::zero(p);
  AdamWState emb = AdamWState::zero(p);
  Rng rng(1);
  inner_opt(p, w.sources[0].train, w.schedule, w.adam, 1.0, 4, 0, 0, body, emb,
            rng);
  CHECK(params_equal(p, before));
}

TEST_CASE("inner_opt reduces loss on a repetitive corpus") {
  MiniWorld w = mini_world(Variant::Glob, 200);
  ModelParams p = init_params(w.arch, 1);
  AdamWState body = AdamWState::zero(p);
  AdamWState emb = AdamWState::zero(p);
  Rng rng = Rng::derive(1, "inner", 0, 0);
  const InnerOptStats stats = inner_opt(p, w.sources[0].train, w.schedule,
                                        w.adam, 1.0, 4, 0, 200, body, emb, rng);
  CHECK(stats.losses.back() < stats.losses.front());
}

TEST_CASE("inner_opt rejects empty datasets and vocab mismatches") {
  MiniWorld w = mini_world(Variant::Glob, 10);
  ModelParams p = init_params(w.arch, 1);
  AdamWState body = AdamWState::zero(p);
  AdamWState emb = AdamWState::zero(p);
  Rng rng(1);
  TokenizedDataset empty;
  empty.seq_len = w.arch.seq_len;
  empty.vocab_size = w.arch.vocab_size;
  CHECK_THROWS_WITH(inner_opt(p, empty, w.schedule, w.adam, 1.0, 4, 0, 1, body,
                              emb, rng),
                    "empty dataset");
  TokenizedDataset wrong = w.sources[0].train;
  wrong.vocab_size = w.arch.vocab_size + 5;
  CHECK_THROWS(inner_opt(p, wrong, w.schedule, w.adam, 1.0, 4, 0, 1, body, emb,
                         rng));
}

TEST_CASE("GLOB with one source reproduces plain training bitwise") {
  const std::uint64_t seed = 9;
  MiniWorld w = mini_world(Variant::Glob, 20);
  w.sources.resize(1);

  Simulator sim(w.arch, mini_config(Variant::Glob, 2, 10, 1, seed), w.schedule,
                w.adam, 1.0, w.sources);
  sim.run();

  // Plain training: the same inner loop, run sequentially without the
  // round/aggregation machinery, optimizer state reset at the boundary.
  ModelParams plain = init_params(w.arch, seed);
  for (std::int64_t r = 0; r < 2; ++r) {
    AdamWState body = AdamWState::zero(plain);
    AdamWState emb = AdamWState::zero(plain);
    Rng rng = Rng::derive(seed, "inner", static_cast<std::uint64_t>(r), 0);
    inner_opt(plain, w.sources[0].train, w.schedule, w.adam, 1.0, 4, r * 10, 10,
              body, emb, rng);
  }
  CHECK(params_equal(sim.global_params(), plain));
}

TEST_CASE("TRIM with identity trim maps equals GLOB bitwise") {
  const std::uint64_t seed = 11;
  MiniWorld glob = mini_world(Variant::Glob, 20);
  MiniWorld trim = mini_world(Variant::Trim, 20, /*identity_trims=*/true);

  Simulator glob_sim(glob.arch, mini_config(Variant::Glob, 2, 10, 2, seed),
                     glob.schedule, glob.adam, 1.0, glob.sources);
  glob_sim.run();
  Simulator trim_sim(trim.arch, mini_config(Variant::Trim, 2, 10, 2, seed),
                     trim.schedule, trim.adam, 1.0, trim.sources);
  trim_sim.run();
  CHECK(params_equal(glob_sim.global_params(), trim_sim.global_params()));
}

TEST_CASE("TRIM ownership: only rows of selected vocabularies move") {
  const std::uint64_t seed = 13;
  MiniWorld w = mini_world(Variant::Trim, 10);
  const ModelParams before = init_params(w.arch, seed);

  VariantConfig cfg = mini_config(Variant::Trim, 1, 10, 1, seed);
  Simulator sim(w.arch, cfg, w.schedule, w.adam, 1.0, w.sources);
  sim.run_round();

  // Exactly one source trained; rows outside its vocabulary are untouched.
  Rng sample_rng = Rng::derive(seed, "sample", 0);
  const auto selected = sample_sources(2, 1, sample_rng);
  const TrimMap& trim = *w.sources[selected[0]].trim;
  std::vector<bool> owned(w.arch.vocab_size, false);
  for (std::uint32_t g : trim.local_to_global) owned[g] = true;
  const ModelParams& after = sim.global_params();
  std::size_t moved = 0;
  for (std::size_t r = 0; r < w.arch.vocab_size; ++r) {
    bool changed = false;
    for (std::size_t j = 0; j < w.arch.d_model; ++j)
      changed |= after.token_embeddings.at(r, j) !=
                 before.token_embeddings.at(r, j);
    if (!owned[r]) CHECK_FALSE(changed);
    if (changed) ++moved;
  }
  CHECK(moved > 0);
}

TEST_CASE("identical workers yield identical deltas and a symmetric aggregate") {
  MiniWorld w = mini_world(Variant::Glob, 10);
  const ModelParams global = init_params(w.arch, 3);

  const auto train_one = [&](std::uint64_t stream_key) {
    ModelParams p = global;
    AdamWState body = AdamWState::zero(p);
    AdamWState emb = AdamWState::zero(p);
    Rng rng = Rng::derive(stream_key, "inner", 0, 0);
    inner_opt(p, w.sources[0].train, w.schedule, w.adam, 1.0, 4, 0, 10, body,
              emb, rng);
    return p;
  };
  const ModelParams w1 = train_one(77);
  const ModelParams w2 = train_one(77);
  DeltaSet d1 = compute_delta(global, w1);
  d1.source_id = 0;
  DeltaSet d2 = compute_delta(global, w2);
  d2.source_id = 1;
  CHECK(d1.hi.token_embeddings.data == d2.hi.token_embeddings.data);

  ModelParams agg = global;
  outer_apply(agg, {d1, d2});
  CHECK(params_equal(agg, w1));
}

TEST_CASE("SPEC keeps private embeddings local") {
  const std::uint64_t seed = 17;
  MiniWorld w = mini_world(Variant::Spec, 30);
  VariantConfig cfg = mini_config(Variant::Spec, 3, 10, 1, seed);
  Simulator sim(w.arch, cfg, w.schedule, w.adam, 1.0, w.sources);

  sim.run_round();
  // Find the source selected in round 0 and snapshot both.
  Rng sample_rng = Rng::derive(seed, "sample", 0);
  const std::size_t first = sample_sources(2, 1, sample_rng)[0];
  const std::size_t other = 1 - first;
  CHECK(sim.sources()[first].initialized);

  const Tensor phi_first = sim.sources()[first].private_phi;
  const bool other_initialized = sim.sources()[other].initialized;

  // No embedding bytes ever enter aggregation.
  CHECK(sim.comm().uploaded_embedding_params() == 0);
  CHECK(sim.comm().downloaded_embedding_params() == 0);

  sim.run_round();
  Rng sample_rng1 = Rng::derive(seed, "sample", 1);
  const std::size_t second = sample_sources(2, 1, sample_rng1)[0];
  if (second != first) {
    // The unselected source's private state is bitwise unchanged.
    CHECK(sim.sources()[first].private_phi.data == phi_first.data);
    (void)other_initialized;
  }

  // Private embeddings have local-vocabulary shape.
  for (const auto& src : sim.sources()) {
    if (src.initialized)
      CHECK(src.private_phi.rows == src.trim->local_size);
  }
}

TEST_CASE("SPEC-OPT private embeddings match the optimized vocabulary size") {
  MiniWorld w = mini_world(Variant::SpecOpt, 10);
  VariantConfig cfg = mini_config(Variant::SpecOpt, 1, 10, 2, 19);
  Simulator sim(w.arch, cfg, w.schedule, w.adam, 1.0, w.sources);
  sim.run_round();
  for (const auto& src : sim.sources()) {
    REQUIRE(src.initialized);
    CHECK(src.private_phi.rows == src.train.vocab_size);
    CHECK(src.private_psi.rows == w.arch.seq_len);
  }
  CHECK(sim.comm().uploaded_embedding_params() == 0);
}

TEST_CASE("act_reset re-draws embeddings and leaves the body alone") {
  MiniWorld w = mini_world(Variant::Act, 40);
  ModelParams p = init_params(w.arch, 23);
  const ModelParams before = p;
  AdamWState emb = AdamWState::zero(p);
  emb.m.token_embeddings.fill(0.5);
  emb.t = 7;

  act_reset(p, emb, 23, 1);

  CHECK(p.blocks[0].qkv_weight.data == before.blocks[0].qkv_weight.data);
  CHECK(p.final_gain.data == before.final_gain.data);
  CHECK(p.token_embeddings.data != before.token_embeddings.data);
  for (double v : emb.m.token_embeddings.data) CHECK(v == 0.0);
  CHECK(emb.t == 0);

  // Re-initialized values follow the init distribution.
  double mean = 0.0, sq = 0.0;
  const auto& data = p.token_embeddings.data;
  for (double v : data) {
    mean += v;
    sq += v * v;
  }
  mean /= static_cast<double>(data.size());
  const double stddev =
      std::sqrt(sq / static_cast<double>(data.size()) - mean * mean);
  CHECK(std::abs(mean) < 0.002);
  CHECK(stddev == doctest::Approx(0.02).epsilon(0.1));

  // A different cycle draws different values.
  ModelParams p2 = before;
  AdamWState emb2 = AdamWState::zero(p2);
  act_reset(p2, emb2, 23, 2);
  CHECK(p2.token_embeddings.data != p.token_embeddings.data);
}

TEST_CASE("STD and ACT baselines run and emit per-step metrics") {
  for (Variant v : {Variant::Std, Variant::Act}) {
    MiniWorld w = mini_world(v, 20);
    VariantConfig cfg = mini_config(v, 2, 10, 2, 29);
    if (v == Variant::Std) cfg.tau = 0.3;
    Simulator sim(w.arch, cfg, w.schedule, w.adam, 1.0, w.sources);
    MemoryMetricsSink sink;
    sim.set_metrics(&sink);
    const TrainRunResult r = sim.run();
    std::size_t train_records = 0;
    for (const auto& rec : sink.records)
      if (rec.phase == "train") ++train_records;
    CHECK(train_records == 20);
    // Per-step synchronization: measured per-step equals the model size.
    const std::uint64_t m =
        static_cast<std::uint64_t>(body_param_count(w.arch)) +
        static_cast<std::uint64_t>(embedding_param_count(w.arch));
    CHECK(sim.comm().uploaded_params() == 20 * m);
    if (v == Variant::Act) CHECK(r.has_act_best);
  }
}

TEST_CASE("mixed batches follow the temperature distribution") {
  MiniWorld w = mini_world(Variant::Std, 10);
  std::vector<const TokenizedDataset*> pools{&w.sources[0].train,
                                             &w.sources[1].train};
  const std::vector<double> weights = {0.25, 0.75};
  std::vector<std::size_t> counts(2, 0);
  const int steps = 2500;
  const std::int64_t batch = 4;
  for (int s = 0; s < steps; ++s) {
    Rng rng = Rng::derive(31, "std_step", static_cast<std::uint64_t>(s));
    std::vector<std::size_t> slots;
    draw_mixed_batch(pools, weights, batch, rng, &slots);
    for (std::size_t k : slots) ++counts[k];
  }
  const double total = static_cast<double>(steps * batch);
  CHECK(std::abs(counts[0] / total - 0.25) < 0.01);
  CHECK(std::abs(counts[1] / total - 0.75) < 0.01);
}

TEST_CASE("measured per-step comms equal the analytical ledger for GLOB") {
  MiniWorld w = mini_world(Variant::Glob, 20);
  VariantConfig cfg = mini_config(Variant::Glob, 2, 10, 2, 67);
  Simulator sim(w.arch, cfg, w.schedule, w.adam, 1.0, w.sources);
  sim.run();

  CostInputs in;
  in.total_params = static_cast<double>(body_param_count(w.arch)) +
                    static_cast<double>(embedding_param_count(w.arch));
  in.global_vocab = static_cast<double>(w.arch.vocab_size);
  in.mean_local_vocab = in.global_vocab;
  in.d_model = static_cast<double>(w.arch.d_model);
  in.seq_len = static_cast<double>(w.arch.seq_len);
  in.local_steps = static_cast<double>(cfg.local_steps);
  in.variant = Variant::Glob;

  // Exact agreement: uploads are one full model per worker per round.
  CHECK(sim.comm().avg_upload_params_per_worker_step() ==
        comms_cost_per_step(in));
  CHECK(sim.comm().uploaded_params() ==
        static_cast<std::uint64_t>(in.total_params) * 2 * 2);
}

TEST_CASE("simulator output is independent of the worker pool size") {
  const std::uint64_t seed = 37;
  MiniWorld w1 = mini_world(Variant::Glob, 20);
  MiniWorld w2 = mini_world(Variant::Glob, 20);
  VariantConfig cfg = mini_config(Variant::Glob, 2, 10, 2, seed);

  Simulator a(w1.arch, cfg, w1.schedule, w1.adam, 1.0, w1.sources);
  MemoryMetricsSink sa;
  a.set_metrics(&sa);
  a.set_workers(1);
  a.run();

  Simulator b(w2.arch, cfg, w2.schedule, w2.adam, 1.0, w2.sources);
  MemoryMetricsSink sb;
  b.set_metrics(&sb);
  b.set_workers(4);
  b.run();

  CHECK(params_equal(a.global_params(), b.global_params()));
  REQUIRE(sa.records.size() == sb.records.size());
  for (std::size_t i = 0; i < sa.records.size(); ++i)
    CHECK(metrics_record_to_json(sa.records[i]) ==
          metrics_record_to_json(sb.records[i]));
}

TEST_CASE("checkpoint resume reproduces the uninterrupted run") {
  const std::uint64_t seed = 41;
  VariantConfig cfg = mini_config(Variant::Glob, 4, 5, 2, seed);

  MiniWorld w1 = mini_world(Variant::Glob, 20);
  Simulator full(w1.arch, cfg, w1.schedule, w1.adam, 1.0, w1.sources);
  MemoryMetricsSink full_sink;
  full.set_metrics(&full_sink);
  full.run();

  MiniWorld w2 = mini_world(Variant::Glob, 20);
  Simulator first_half(w2.arch, cfg, w2.schedule, w2.adam, 1.0, w2.sources);
  first_half.run_round();
  first_half.run_round();
  const Checkpoint ckpt = first_half.make_checkpoint();

  MiniWorld w3 = mini_world(Variant::Glob, 20);
  Simulator resumed(w3.arch, cfg, w3.schedule, w3.adam, 1.0, w3.sources);
  MemoryMetricsSink resumed_sink;
  resumed.set_metrics(&resumed_sink);
  resumed.restore(ckpt);
  resumed.run();

  CHECK(params_equal(full.global_params(), resumed.global_params()));

  // Records from round 3 onward must match the uninterrupted run.
  std::vector<std::string> full_tail, resumed_tail;
  for (const auto& r : full_sink.records)
    if (r.round >= 3) full_tail.push_back(metrics_record_to_json(r));
  for (const auto& r : resumed_sink.records)
    if (r.round >= 3) resumed_tail.push_back(metrics_record_to_json(r));
  REQUIRE(!full_tail.empty());
  CHECK(full_tail == resumed_tail);
}

TEST_CASE("SPEC checkpoint carries private state through resume") {
  const std::uint64_t seed = 43;
  VariantConfig cfg = mini_config(Variant::Spec, 4, 5, 2, seed);

  MiniWorld w1 = mini_world(Variant::Spec, 20);
  Simulator full(w1.arch, cfg, w1.schedule, w1.adam, 1.0, w1.sources);
  full.run();

  MiniWorld w2 = mini_world(Variant::Spec, 20);
  Simulator half(w2.arch, cfg, w2.schedule, w2.adam, 1.0, w2.sources);
  half.run_round();
  half.run_round();
  const Checkpoint ckpt = half.make_checkpoint();

  MiniWorld w3 = mini_world(Variant::Spec, 20);
  Simulator resumed(w3.arch, cfg, w3.schedule, w3.adam, 1.0, w3.sources);
  resumed.restore(ckpt);
  resumed.run();

  CHECK(params_equal(full.global_params(), resumed.global_params()));
  for (std::size_t k = 0; k < 2; ++k) {
    CHECK(full.sources()[k].initialized == resumed.sources()[k].initialized);
    if (full.sources()[k].initialized)
      CHECK(full.sources()[k].private_phi.data ==
            resumed.sources()[k].private_phi.data);
  }
}

TEST_CASE("continued pre-training honors the step budget and init modes") {
  MiniWorld w = mini_world(Variant::Glob, 20);
  const ModelParams body = init_params(w.arch, 47);

  ContinuedPretrainConfig ct;
  ct.steps = 8;
  ct.batch_size = 4;
  ct.peak_lr = 1e-3;
  ct.seed = 47;

  std::vector<std::int64_t> seen;
  const ModelParams out = continued_pretrain(
      body, nullptr, {w.sources[0].train, w.sources[1].train}, ct, nullptr,
      [&](std::int64_t s, const ModelParams&) { seen.push_back(s); });
  CHECK(seen.front() == 0);
  CHECK(seen.back() == 8);
  CHECK(seen.size() == 9);  // 0..8 inclusive
  CHECK(out.token_embeddings.rows == w.arch.vocab_size);

  // Pretrained mode demands matching shapes.
  ct.init = CtInit::Pretrained;
  ModelParams wrong = body;
  wrong.token_embeddings = Tensor(3, w.arch.d_model);
  CHECK_THROWS(continued_pretrain(body, &wrong, {w.sources[0].train}, ct));
}
