#include <benchmark/benchmark.h>

#include "dept/corpus.hpp"

namespace {

dept::Corpus sample_corpus() {
  dept::Corpus c;
  c.source_id = "bench";
  dept::Rng rng(3);
  const std::string alphabet = "abcdefghij ";
  for (int d = 0; d < 50; ++d) {
    std::string doc;
    for (int i = 0; i < 2000; ++i)
      doc.push_back(alphabet[rng.uniform_below(alphabet.size())]);
    c.documents.push_back(std::move(doc));
  }
  return c;
}

void BM_TrainSubwordVocab(benchmark::State& state) {
  const dept::Corpus c = sample_corpus();
  for (auto _ : state) {
    dept::Vocab v = dept::train_subword_vocab(c, 320);
    benchmark::DoNotOptimize(v.size());
  }
}
BENCHMARK(BM_TrainSubwordVocab);

void BM_Tokenize(benchmark::State& state) {
  const dept::Corpus c = sample_corpus();
  const dept::Vocab v = dept::train_subword_vocab(c, 320);
  for (auto _ : state) {
    dept::TokenizedDataset d = dept::tokenize(c, v, 32);
    benchmark::DoNotOptimize(d.num_sequences());
  }
}
BENCHMARK(BM_Tokenize);

}  // namespace
