#include <cmath>

#include "dept/dept.hpp"
#include "dept/eval.hpp"
#include "doctest.h"
#include "support/synthetic.hpp"

using namespace dept;
using dept::testsupport::synthetic_corpus;

namespace {

Architecture micro_arch(std::size_t vocab) {
  Architecture a;
  a.num_blocks = 1;
  a.d_model = 8;
  a.num_heads = 2;
  a.expansion_ratio = 2;
  a.seq_len = 8;
  a.vocab_size = vocab;
  return a;
}

TokenizedDataset dataset_of(std::vector<std::vector<std::uint32_t>> seqs,
                            std::size_t vocab) {
  TokenizedDataset d;
  d.seq_len = seqs[0].size();
  d.vocab_size = vocab;
  d.sequences = std::move(seqs);
  return d;
}

}  // namespace

TEST_CASE("perplexity of the uniform model equals the vocabulary size") {
  const Architecture a = micro_arch(20);
  ModelParams p = init_params(a, 1);
  for_each_tensor(p, [](const std::string&, Tensor& t, TensorGroup) {
    t.fill(0.0);
  });
  const TokenizedDataset d =
      dataset_of({{1, 2, 3, 4, 5, 6, 7, 8}, {2, 4, 6, 8, 1, 3, 5, 7}}, 20);
  CHECK(perplexity(p, d) == doctest::Approx(20.0).epsilon(1e-9));
}

TEST_CASE("perplexity of a perfect memorizer is one") {
  const Architecture a = micro_arch(1);
  const ModelParams p = init_params(a, 1);
  const TokenizedDataset d = dataset_of({{0, 0, 0, 0, 0, 0, 0, 0}}, 1);
  CHECK(perplexity(p, d) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("perplexity is exp of the mean forward loss") {
  const Architecture a = micro_arch(20);
  const ModelParams p = init_params(a, 5);
  const TokenizedDataset d =
      dataset_of({{1, 2, 3, 4, 5, 6, 7, 8}, {8, 7, 6, 5, 4, 3, 2, 1}}, 20);
  const Batch batch = make_batch(d, {0, 1});
  const double loss = forward(p, batch).loss;
  CHECK(perplexity(p, d) == doctest::Approx(std::exp(loss)).epsilon(1e-12));
}

TEST_CASE("perplexity rejects vocabulary mismatches") {
  const Architecture a = micro_arch(20);
  const ModelParams p = init_params(a, 5);
  const TokenizedDataset d = dataset_of({{1, 2, 3, 4, 5, 6, 7, 8}}, 30);
  CHECK_THROWS(perplexity(p, d));
}

TEST_CASE("improvement percentage follows the table convention") {
  CHECK(improvement_percent(50.0, 40.0) == doctest::Approx(20.0));
  CHECK(improvement_percent(50.0, 55.0) == doctest::Approx(-10.0));
}

namespace {

struct EvalWorld {
  Architecture arch;
  std::vector<SourceState> sources;
  std::vector<NamedDataset> ood;
  CosineSchedule sched;
  AdamWConfig adam;
};

EvalWorld eval_world(Variant variant) {
  const Corpus left = synthetic_corpus("left", "abcdef", 20, 20, 71);
  const Corpus left_val = synthetic_corpus("left", "abcdef", 5, 21, 72);
  const Corpus right = synthetic_corpus("right", "ghijkl", 20, 20, 71);
  const Corpus right_val = synthetic_corpus("right", "ghijkl", 5, 21, 72);
  const Corpus ood = synthetic_corpus("ood", "mnopqr", 5, 21, 73);

  Corpus united;
  united.source_id = "_union";
  for (const auto& c : {left, right})
    united.documents.insert(united.documents.end(), c.documents.begin(),
                            c.documents.end());
  EvalWorld w;
  const Vocab global = train_subword_vocab(united, 280);
  w.arch = micro_arch(global.size());
  w.arch.d_model = 16;
  w.arch.seq_len = 16;
  w.sched.total_steps = 10;
  w.sched.peak_lr = 1e-3;

  const auto build = [&](std::size_t id, const std::string& name,
                         const Corpus& train, const Corpus& val) {
    SourceState s;
    s.source_id = id;
    s.name = name;
    const TokenizedDataset tg = tokenize(train, global, w.arch.seq_len);
    const TokenizedDataset vg = tokenize(val, global, w.arch.seq_len);
    if (variant == Variant::Spec) {
      s.trim = build_trim_map(global, local_vocab_subset(global, train));
      s.train = reindex_dataset(tg, *s.trim, false);
      s.validation = reindex_dataset(vg, *s.trim, true);
    } else {
      s.train = tg;
      s.validation = vg;
    }
    return s;
  };
  w.sources.push_back(build(0, "left", left, left_val));
  w.sources.push_back(build(1, "right", right, right_val));
  w.ood.push_back({"ood", tokenize(ood, global, w.arch.seq_len)});
  return w;
}

}  // namespace

TEST_CASE("evaluate_all marks OOD unavailable for SPEC before CT") {
  EvalWorld w = eval_world(Variant::Spec);
  VariantConfig cfg;
  cfg.variant = Variant::Spec;
  cfg.rounds = 1;
  cfg.local_steps = 10;
  cfg.sources_per_round = 2;
  cfg.batch_size = 4;
  cfg.seed = 3;
  Simulator sim(w.arch, cfg, w.sched, w.adam, 1.0, w.sources);
  const EvalReport rep = evaluate_all(sim, w.ood);
  REQUIRE(rep.entries.size() == 3);
  CHECK(rep.entries[0].available);
  CHECK(rep.entries[1].available);
  CHECK_FALSE(rep.entries[2].available);
  CHECK_FALSE(rep.ood_available);
  // Unigram-CE column delegates to the corpus module.
  CHECK(rep.entries[2].unigram_ce ==
        doctest::Approx(unigram_cross_entropy(w.ood[0].data)).epsilon(1e-15));
}

TEST_CASE("evaluate_all reports OOD through global embeddings for GLOB") {
  EvalWorld w = eval_world(Variant::Glob);
  VariantConfig cfg;
  cfg.variant = Variant::Glob;
  cfg.rounds = 1;
  cfg.local_steps = 10;
  cfg.sources_per_round = 2;
  cfg.batch_size = 4;
  cfg.seed = 3;
  Simulator sim(w.arch, cfg, w.sched, w.adam, 1.0, w.sources);
  const EvalReport rep = evaluate_all(sim, w.ood);
  REQUIRE(rep.entries.size() == 3);
  for (const auto& e : rep.entries) CHECK(e.available);
  CHECK(rep.entries[2].ood);
  CHECK(rep.in_dist_avg ==
        doctest::Approx((rep.entries[0].ppl + rep.entries[1].ppl) / 2.0));
  // Determinism: a second evaluation is identical.
  const EvalReport rep2 = evaluate_all(sim, w.ood);
  for (std::size_t i = 0; i < rep.entries.size(); ++i)
    CHECK(rep.entries[i].ppl == rep2.entries[i].ppl);
  const std::string csv = rep.to_csv();
  CHECK(csv.find("avg_with_ood") != std::string::npos);
  CHECK(rep.to_markdown().find("| left |") != std::string::npos);
}

TEST_CASE("a trained body adapts at least as well as a fresh one") {
  EvalWorld w = eval_world(Variant::Glob);
  // Train a body on the left source, then adapt both it and a fresh body to
  // the right source from random embeddings on the same budget.
  ModelParams trained = init_params(w.arch, 91);
  {
    AdamWState body = AdamWState::zero(trained);
    AdamWState emb = AdamWState::zero(trained);
    CosineSchedule sched;
    sched.peak_lr = 2e-3;
    sched.total_steps = 150;
    Rng rng = Rng::derive(91, "inner", 0, 0);
    AdamWConfig adam;
    inner_opt(trained, w.sources[0].train, sched, adam, 1.0, 4, 0, 150, body,
              emb, rng);
  }
  const ModelParams fresh = init_params(w.arch, 92);

  ContinuedPretrainConfig ct;
  ct.steps = 40;
  ct.batch_size = 4;
  ct.peak_lr = 2e-3;
  ct.seed = 93;
  const AdaptationCurve a = plasticity_run(trained, w.sources[1].train,
                                           w.sources[1].validation, ct, 10);
  const AdaptationCurve b = plasticity_run(fresh, w.sources[1].train,
                                           w.sources[1].validation, ct, 10);
  CHECK(a.points.back().second <= b.points.back().second);
  // Adaptation makes progress from the random-embedding start in both cases.
  CHECK(a.points.back().second < a.points.front().second);
}

TEST_CASE("plasticity curve records the exact step grid") {
  EvalWorld w = eval_world(Variant::Glob);
  const ModelParams body = init_params(w.arch, 83);
  ContinuedPretrainConfig ct;
  ct.steps = 10;
  ct.batch_size = 4;
  ct.peak_lr = 1e-3;
  ct.seed = 83;
  const AdaptationCurve curve =
      plasticity_run(body, w.sources[0].train, w.sources[0].validation, ct, 4);
  REQUIRE(curve.points.size() == 4);
  CHECK(curve.points[0].first == 0);
  CHECK(curve.points[1].first == 4);
  CHECK(curve.points[2].first == 8);
  CHECK(curve.points[3].first == 10);
  for (const auto& [s, p] : curve.points) CHECK(p >= 1.0);
  CHECK(curve.to_csv().find("step,ppl") == 0);
  CHECK_THROWS(plasticity_run(body, w.sources[0].train,
                              w.sources[0].validation, ct, 11));
}
