#include "dept/eval.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "dept/dept.hpp"

namespace dept {

DatasetEval evaluate_dataset(const ModelParams& params,
                             const TokenizedDataset& dataset,
                             std::size_t max_batch) {
  if (dataset.sequences.empty()) throw std::runtime_error("empty dataset");
  if (dataset.vocab_size != params.token_embeddings.rows)
    throw std::runtime_error("dataset vocab does not match embedding rows");
  double total_loss = 0.0;
  std::size_t total_preds = 0;
  DatasetEval out;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < dataset.sequences.size();
       start += max_batch) {
    const std::size_t end =
        std::min(dataset.sequences.size(), start + max_batch);
    idx.clear();
    for (std::size_t i = start; i < end; ++i) idx.push_back(i);
    const Batch batch = make_batch(dataset, idx);
    const ForwardResult res = forward(params, batch);
    const std::size_t preds = batch.batch * (batch.time - 1);
    total_loss += res.loss * static_cast<double>(preds);
    total_preds += preds;
    out.act_norm = std::max(out.act_norm, activation_l2_norm(res.trace));
  }
  out.ppl = std::exp(total_loss / static_cast<double>(total_preds));
  return out;
}

double perplexity(const ModelParams& params, const TokenizedDataset& dataset,
                  std::size_t max_batch) {
  return evaluate_dataset(params, dataset, max_batch).ppl;
}

void EvalReport::finalize() {
  double in_acc = 0.0, ood_acc = 0.0, all_acc = 0.0;
  std::size_t in_n = 0, ood_n = 0, all_n = 0;
  ood_available = true;
  for (const auto& e : entries) {
    if (!e.available) {
      if (e.ood) ood_available = false;
      continue;
    }
    if (e.ood) {
      ood_acc += e.ppl;
      ++ood_n;
    } else {
      in_acc += e.ppl;
      ++in_n;
    }
    all_acc += e.ppl;
    ++all_n;
  }
  in_dist_avg = in_n ? in_acc / static_cast<double>(in_n) : 0.0;
  ood_avg = ood_n ? ood_acc / static_cast<double>(ood_n) : 0.0;
  all_avg = all_n ? all_acc / static_cast<double>(all_n) : 0.0;
}

std::string EvalReport::to_csv() const {
  std::ostringstream out;
  out << "source,ood,available,ppl,unigram_ce\n";
  for (const auto& e : entries) {
    out << e.source << ',' << (e.ood ? 1 : 0) << ',' << (e.available ? 1 : 0)
        << ',';
    if (e.available) out << e.ppl;
    out << ',' << e.unigram_ce << "\n";
  }
  out << "avg_in_dist,,," << in_dist_avg << ",\n";
  if (ood_available && ood_avg > 0.0) out << "avg_ood,,," << ood_avg << ",\n";
  out << "avg_with_ood,,," << all_avg << ",\n";
  return out.str();
}

std::string EvalReport::to_markdown() const {
  std::ostringstream out;
  out << "| source | ood | ppl | unigram-ce |\n|---|---|---|---|\n";
  for (const auto& e : entries) {
    out << "| " << e.source << " | " << (e.ood ? "yes" : "no") << " | ";
    if (e.available)
      out << e.ppl;
    else
      out << "n/a";
    out << " | " << e.unigram_ce << " |\n";
  }
  out << "| avg (in-dist) | | " << in_dist_avg << " | |\n";
  if (ood_available && ood_avg > 0.0)
    out << "| avg (ood) | | " << ood_avg << " | |\n";
  out << "| avg (with ood) | | " << all_avg << " | |\n";
  return out.str();
}

EvalReport evaluate_all(const Simulator& sim,
                        const std::vector<NamedDataset>& ood_sources) {
  EvalReport rep;
  for (const auto& src : sim.sources()) {
    EvalEntry e;
    e.source = src.name;
    e.ppl = sim.eval_source(src.source_id);
    e.unigram_ce = unigram_cross_entropy(src.validation);
    rep.entries.push_back(std::move(e));
  }
  const bool no_global_embedding =
      sim.variant() == Variant::Spec || sim.variant() == Variant::SpecOpt;
  for (const auto& ood : ood_sources) {
    EvalEntry e;
    e.source = ood.name;
    e.ood = true;
    e.unigram_ce = unigram_cross_entropy(ood.data);
    if (no_global_embedding ||
        ood.data.vocab_size != sim.global_params().token_embeddings.rows) {
      e.available = false;
    } else {
      // TRIM reports OOD through the full aggregated global embeddings.
      e.ppl = perplexity(sim.global_params(), ood.data);
    }
    rep.entries.push_back(std::move(e));
  }
  rep.finalize();
  return rep;
}

EvalReport evaluate_params(const ModelParams& params,
                           const std::vector<NamedDataset>& in_dist,
                           const std::vector<NamedDataset>& ood) {
  EvalReport rep;
  for (const auto& d : in_dist) {
    EvalEntry e;
    e.source = d.name;
    e.ppl = perplexity(params, d.data);
    e.unigram_ce = unigram_cross_entropy(d.data);
    rep.entries.push_back(std::move(e));
  }
  for (const auto& d : ood) {
    EvalEntry e;
    e.source = d.name;
    e.ood = true;
    e.ppl = perplexity(params, d.data);
    e.unigram_ce = unigram_cross_entropy(d.data);
    rep.entries.push_back(std::move(e));
  }
  rep.finalize();
  return rep;
}

double improvement_percent(double best_baseline, double value) {
  return (best_baseline - value) / best_baseline * 100.0;
}

std::string AdaptationCurve::to_csv() const {
  std::ostringstream out;
  out << "step,ppl\n";
  for (const auto& [s, p] : points) out << s << ',' << p << "\n";
  return out.str();
}

AdaptationCurve plasticity_run(const ModelParams& body,
                               const TokenizedDataset& target_train,
                               const TokenizedDataset& target_val,
                               const ContinuedPretrainConfig& cfg,
                               std::int64_t record_every) {
  if (record_every < 1 || cfg.steps < record_every)
    throw std::runtime_error("plasticity needs steps >= record_every >= 1");
  AdaptationCurve curve;
  ContinuedPretrainConfig ct = cfg;
  ct.init = CtInit::Random;
  const std::vector<TokenizedDataset> sources{target_train};
  continued_pretrain(
      body, nullptr, sources, ct, nullptr,
      [&](std::int64_t step, const ModelParams& p) {
        if (step == 0 || step % record_every == 0 || step == ct.steps)
          curve.points.emplace_back(step, perplexity(p, target_val));
      });
  return curve;
}

}  // namespace dept
