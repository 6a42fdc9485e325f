#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dept/rng.hpp"

namespace dept {

// One heterogeneous data source: a list of UTF-8 documents for one split.
struct Corpus {
  std::string source_id;
  std::vector<std::string> documents;
};

// Subword vocabulary over raw bytes. Ids are dense:
//   0 = UNK, 1 = BOS, 2..257 = the single-byte tokens, 258.. = merged tokens
// in merge-creation order. Token payloads are byte strings.
class Vocab {
 public:
  static constexpr std::size_t kUnkId = 0;
  static constexpr std::size_t kBosId = 1;
  static constexpr std::size_t kNumSpecials = 2;

  // Base vocabulary: specials plus all 256 byte tokens.
  static Vocab byte_base();

  // Arbitrary token list; tokens[i] becomes id kNumSpecials + i. Used when
  // loading from disk and when deriving sub-vocabularies.
  static Vocab from_tokens(std::vector<std::string> tokens);

  std::size_t size() const { return kNumSpecials + tokens_.size(); }
  bool is_special(std::size_t id) const { return id < kNumSpecials; }

  // Byte payload of a non-special token.
  const std::string& token(std::size_t id) const;

  std::optional<std::size_t> id_of(std::string_view token_bytes) const;

  void append_token(std::string token_bytes);

  // Greedy longest-match over token payloads; bytes with no matching token
  // map to UNK. No BOS is inserted here.
  std::vector<std::uint32_t> encode(std::string_view text) const;

  // Inverse of encode for in-vocab ids; UNK and BOS contribute nothing.
  std::string decode(const std::vector<std::uint32_t>& ids) const;

  void save(const std::string& path) const;
  static Vocab load(const std::string& path);

 private:
  std::vector<std::string> tokens_;  // payloads for ids >= kNumSpecials

  struct TrieNode {
    std::int32_t child[256];
    std::int32_t token_id = -1;
  };
  mutable std::vector<TrieNode> trie_;
  void build_trie() const;
};

// Injective projection between a local vocabulary and the global one:
// local_to_global[i] is the global id of local token i.
struct TrimMap {
  std::size_t global_size = 0;
  std::size_t local_size = 0;
  std::vector<std::uint32_t> local_to_global;

  static TrimMap identity(std::size_t n);

  // Inverse lookup table: global id -> local id, or -1 when the token is
  // outside the local vocabulary.
  std::vector<std::int32_t> inverse() const;

  void save(const std::string& path) const;
  static TrimMap load(const std::string& path);
};

// Fixed-length id sequences; all ids index vocab of size vocab_size.
struct TokenizedDataset {
  std::size_t seq_len = 0;
  std::size_t vocab_size = 0;
  std::vector<std::vector<std::uint32_t>> sequences;

  std::size_t num_sequences() const { return sequences.size(); }

  void save(const std::string& path) const;
  static TokenizedDataset load(const std::string& path);
};

// Deterministic greedy byte-pair merge trainer. Stands in for an external
// subword tokenizer: merges the most frequent adjacent token pair until
// target_size tokens exist or no pair occurs at least twice. Ties break on
// the lexicographically smaller (left bytes, right bytes) pair.
Vocab train_subword_vocab(const Corpus& corpus, std::size_t target_size);

// Projection of `local` into `global`; every local token must exist in
// global (specials always do).
TrimMap build_trim_map(const Vocab& global, const Vocab& local);

// Sub-vocabulary of the global tokens observed when tokenizing `corpus`,
// plus the specials, in global id order.
Vocab local_vocab_subset(const Vocab& global, const Corpus& corpus);

// BOS-prefixed documents, concatenated and chunked into exact seq_len
// windows; the trailing remainder is dropped.
TokenizedDataset tokenize(const Corpus& corpus, const Vocab& vocab,
                          std::size_t seq_len);

// Re-index a global-id dataset into local ids through `trim`. Ids outside
// the local vocabulary map to the local UNK when allow_unk is set and are an
// error otherwise.
TokenizedDataset reindex_dataset(const TokenizedDataset& global_ids,
                                 const TrimMap& trim, bool allow_unk);

// p_k = n_k^tau / sum_j n_j^tau.
std::vector<double> temperature_weights(const std::vector<std::size_t>& sizes,
                                        double tau);

// Uniform sample without replacement, returned sorted ascending.
std::vector<std::size_t> sample_sources(std::size_t num_sources,
                                        std::size_t num_selected, Rng& rng);

// Entropy of the empirical token-frequency distribution, in nats per token.
double unigram_cross_entropy(const TokenizedDataset& dataset);

// Draw one index from a discrete distribution given cumulative weights.
std::size_t sample_categorical(const std::vector<double>& probabilities,
                               Rng& rng);

// Blank-line-separated documents from a UTF-8 text file.
Corpus load_corpus_file(const std::string& path, const std::string& source_id);

}  // namespace dept
