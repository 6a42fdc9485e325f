#include "dept/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

namespace dept {

namespace {

std::string escape_bytes(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  char buf[8];
  for (unsigned char c : s) {
    if (c > 0x20 && c < 0x7f && c != '\\') {
      out.push_back(static_cast<char>(c));
    } else {
      std::snprintf(buf, sizeof(buf), "\\x%02x", c);
      out += buf;
    }
  }
  return out;
}

std::string unescape_bytes(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size();) {
    if (s[i] == '\\' && i + 3 < s.size() && s[i + 1] == 'x') {
      const auto hex = [](char c) -> int {
        if (c >= '0' && c <= '9') return c - '0';
        if (c >= 'a' && c <= 'f') return c - 'a' + 10;
        if (c >= 'A' && c <= 'F') return c - 'A' + 10;
        throw std::runtime_error("bad escape in vocab file");
      };
      out.push_back(static_cast<char>(hex(s[i + 2]) * 16 + hex(s[i + 3])));
      i += 4;
    } else {
      out.push_back(s[i]);
      ++i;
    }
  }
  return out;
}

}  // namespace

Vocab Vocab::byte_base() {
  std::vector<std::string> toks;
  toks.reserve(256);
  for (int b = 0; b < 256; ++b) toks.emplace_back(1, static_cast<char>(b));
  return from_tokens(std::move(toks));
}

Vocab Vocab::from_tokens(std::vector<std::string> tokens) {
  Vocab v;
  v.tokens_ = std::move(tokens);
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
    for (std::size_t j = i + 1; j < v.tokens_.size(); ++j) {
      if (v.tokens_[i] == v.tokens_[j])
        throw std::runtime_error("duplicate token in vocabulary");
    }
  }
  return v;
}

const std::string& Vocab::token(std::size_t id) const {
  if (id < kNumSpecials || id >= size())
    throw std::out_of_range("token id out of range");
  return tokens_[id - kNumSpecials];
}

std::optional<std::size_t> Vocab::id_of(std::string_view token_bytes) const {
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i] == token_bytes) return kNumSpecials + i;
  }
  return std::nullopt;
}

void Vocab::append_token(std::string token_bytes) {
  tokens_.push_back(std::move(token_bytes));
  trie_.clear();
}

void Vocab::build_trie() const {
  trie_.clear();
  trie_.emplace_back();
  std::memset(trie_[0].child, -1, sizeof(trie_[0].child));
  for (std::size_t t = 0; t < tokens_.size(); ++t) {
    std::int32_t node = 0;
    for (unsigned char c : tokens_[t]) {
      if (trie_[node].child[c] < 0) {
        trie_[node].child[c] = static_cast<std::int32_t>(trie_.size());
        trie_.emplace_back();
        std::memset(trie_.back().child, -1, sizeof(trie_.back().child));
      }
      node = trie_[node].child[c];
    }
    trie_[node].token_id = static_cast<std::int32_t>(kNumSpecials + t);
  }
}

std::vector<std::uint32_t> Vocab::encode(std::string_view text) const {
  if (trie_.empty()) build_trie();
  std::vector<std::uint32_t> out;
  out.reserve(text.size() / 2 + 1);
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::int32_t node = 0;
    std::int32_t best = -1;
    std::size_t best_len = 0;
    for (std::size_t i = pos; i < text.size(); ++i) {
      node = trie_[node].child[static_cast<unsigned char>(text[i])];
      if (node < 0) break;
      if (trie_[node].token_id >= 0) {
        best = trie_[node].token_id;
        best_len = i - pos + 1;
      }
    }
    if (best < 0) {
      out.push_back(kUnkId);
      ++pos;
    } else {
      out.push_back(static_cast<std::uint32_t>(best));
      pos += best_len;
    }
  }
  return out;
}

std::string Vocab::decode(const std::vector<std::uint32_t>& ids) const {
  std::string out;
  for (std::uint32_t id : ids) {
    if (id >= kNumSpecials) out += token(id);
  }
  return out;
}

void Vocab::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write vocab file: " + path);
  f << "#vocab v1 size=" << size() << "\n";
  f << "<unk>\n<bos>\n";
  for (const auto& t : tokens_) f << escape_bytes(t) << "\n";
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read vocab file: " + path);
  std::string line;
  if (!std::getline(f, line) || line.rfind("#vocab v1", 0) != 0)
    throw std::runtime_error("bad vocab header in " + path);
  const auto eq = line.find("size=");
  const std::size_t n = std::stoul(line.substr(eq + 5));
  std::vector<std::string> toks;
  std::size_t read = 0;
  while (read < n && std::getline(f, line)) {
    if (read >= kNumSpecials) toks.push_back(unescape_bytes(line));
    ++read;
  }
  if (read != n) throw std::runtime_error("truncated vocab file: " + path);
  return from_tokens(std::move(toks));
}

TrimMap TrimMap::identity(std::size_t n) {
  TrimMap m;
  m.global_size = n;
  m.local_size = n;
  m.local_to_global.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    m.local_to_global[i] = static_cast<std::uint32_t>(i);
  return m;
}

std::vector<std::int32_t> TrimMap::inverse() const {
  std::vector<std::int32_t> inv(global_size, -1);
  for (std::size_t i = 0; i < local_to_global.size(); ++i)
    inv[local_to_global[i]] = static_cast<std::int32_t>(i);
  return inv;
}

void TrimMap::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write trim map: " + path);
  f << "#trimmap v1 local=" << local_size << " global=" << global_size << "\n";
  for (std::uint32_t g : local_to_global) f << g << "\n";
}

TrimMap TrimMap::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read trim map: " + path);
  std::string line;
  if (!std::getline(f, line) || line.rfind("#trimmap v1", 0) != 0)
    throw std::runtime_error("bad trim map header in " + path);
  TrimMap m;
  std::sscanf(line.c_str(), "#trimmap v1 local=%zu global=%zu", &m.local_size,
              &m.global_size);
  m.local_to_global.reserve(m.local_size);
  while (std::getline(f, line)) {
    if (!line.empty()) m.local_to_global.push_back(std::stoul(line));
  }
  if (m.local_to_global.size() != m.local_size)
    throw std::runtime_error("truncated trim map: " + path);
  return m;
}

void TokenizedDataset::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write dataset: " + path);
  f << "dept-toks v1\n";
  const std::uint64_t header[3] = {seq_len, vocab_size, sequences.size()};
  f.write(reinterpret_cast<const char*>(header), sizeof(header));
  for (const auto& s : sequences)
    f.write(reinterpret_cast<const char*>(s.data()),
            static_cast<std::streamsize>(s.size() * sizeof(std::uint32_t)));
}

TokenizedDataset TokenizedDataset::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read dataset: " + path);
  std::string magic;
  std::getline(f, magic);
  if (magic != "dept-toks v1")
    throw std::runtime_error("bad dataset header in " + path);
  std::uint64_t header[3];
  f.read(reinterpret_cast<char*>(header), sizeof(header));
  TokenizedDataset d;
  d.seq_len = header[0];
  d.vocab_size = header[1];
  d.sequences.assign(header[2], std::vector<std::uint32_t>(d.seq_len));
  for (auto& s : d.sequences) {
    f.read(reinterpret_cast<char*>(s.data()),
           static_cast<std::streamsize>(d.seq_len * sizeof(std::uint32_t)));
    for (std::uint32_t id : s)
      if (id >= d.vocab_size)
        throw std::runtime_error("dataset id out of range in " + path);
  }
  if (!f) throw std::runtime_error("truncated dataset: " + path);
  return d;
}

Vocab train_subword_vocab(const Corpus& corpus, std::size_t target_size) {
  if (corpus.documents.empty()) throw std::runtime_error("empty corpus");
  std::size_t total_bytes = 0;
  for (const auto& d : corpus.documents) total_bytes += d.size();
  if (total_bytes == 0) throw std::runtime_error("empty corpus");
  if (target_size < 258)
    throw std::runtime_error("target_size must be at least 258");

  Vocab vocab = Vocab::byte_base();

  // Working symbol streams, one per document, starting at byte granularity.
  std::vector<std::vector<std::uint32_t>> streams;
  streams.reserve(corpus.documents.size());
  for (const auto& d : corpus.documents) {
    std::vector<std::uint32_t> s;
    s.reserve(d.size());
    for (unsigned char c : d)
      s.push_back(static_cast<std::uint32_t>(Vocab::kNumSpecials + c));
    streams.push_back(std::move(s));
  }

  while (vocab.size() < target_size) {
    // Adjacent-pair counts over all documents.
    std::map<std::pair<std::uint32_t, std::uint32_t>, std::size_t> counts;
    for (const auto& s : streams) {
      for (std::size_t i = 0; i + 1 < s.size(); ++i)
        ++counts[{s[i], s[i + 1]}];
    }
    std::size_t best_count = 0;
    std::pair<std::uint32_t, std::uint32_t> best{0, 0};
    std::pair<std::string_view, std::string_view> best_bytes;
    for (const auto& [pair, count] : counts) {
      if (count < 2) continue;
      std::pair<std::string_view, std::string_view> bytes{
          vocab.token(pair.first), vocab.token(pair.second)};
      if (count > best_count ||
          (count == best_count && bytes < best_bytes)) {
        best_count = count;
        best = pair;
        best_bytes = bytes;
      }
    }
    if (best_count < 2) break;  // nothing left worth merging

    const std::uint32_t merged_id = static_cast<std::uint32_t>(vocab.size());
    vocab.append_token(std::string(vocab.token(best.first)) +
                       std::string(vocab.token(best.second)));

    for (auto& s : streams) {
      std::size_t w = 0;
      for (std::size_t i = 0; i < s.size();) {
        if (i + 1 < s.size() && s[i] == best.first && s[i + 1] == best.second) {
          s[w++] = merged_id;
          i += 2;
        } else {
          s[w++] = s[i++];
        }
      }
      s.resize(w);
    }
  }
  return vocab;
}

TrimMap build_trim_map(const Vocab& global, const Vocab& local) {
  TrimMap m;
  m.global_size = global.size();
  m.local_size = local.size();
  m.local_to_global.reserve(local.size());
  m.local_to_global.push_back(Vocab::kUnkId);
  m.local_to_global.push_back(Vocab::kBosId);
  for (std::size_t i = Vocab::kNumSpecials; i < local.size(); ++i) {
    const auto gid = global.id_of(local.token(i));
    if (!gid) throw std::runtime_error("out-of-vocabulary local token");
    m.local_to_global.push_back(static_cast<std::uint32_t>(*gid));
  }
  return m;
}

Vocab local_vocab_subset(const Vocab& global, const Corpus& corpus) {
  std::set<std::uint32_t> seen;
  for (const auto& doc : corpus.documents) {
    for (std::uint32_t id : global.encode(doc)) seen.insert(id);
  }
  std::vector<std::string> toks;
  for (std::uint32_t id : seen) {
    if (id >= Vocab::kNumSpecials) toks.push_back(global.token(id));
  }
  return Vocab::from_tokens(std::move(toks));
}

TokenizedDataset tokenize(const Corpus& corpus, const Vocab& vocab,
                          std::size_t seq_len) {
  if (seq_len < 2) throw std::runtime_error("seq_len must be at least 2");
  std::vector<std::uint32_t> stream;
  for (const auto& doc : corpus.documents) {
    stream.push_back(Vocab::kBosId);
    const auto ids = vocab.encode(doc);
    stream.insert(stream.end(), ids.begin(), ids.end());
  }
  TokenizedDataset d;
  d.seq_len = seq_len;
  d.vocab_size = vocab.size();
  const std::size_t n = stream.size() / seq_len;
  d.sequences.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    d.sequences.emplace_back(stream.begin() + i * seq_len,
                             stream.begin() + (i + 1) * seq_len);
  }
  return d;
}

TokenizedDataset reindex_dataset(const TokenizedDataset& global_ids,
                                 const TrimMap& trim, bool allow_unk) {
  if (global_ids.vocab_size != trim.global_size)
    throw std::runtime_error("trim/dataset inconsistency");
  const auto inv = trim.inverse();
  TokenizedDataset out;
  out.seq_len = global_ids.seq_len;
  out.vocab_size = trim.local_size;
  out.sequences.reserve(global_ids.sequences.size());
  for (const auto& s : global_ids.sequences) {
    std::vector<std::uint32_t> local(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
      const std::int32_t l = inv[s[i]];
      if (l < 0) {
        if (!allow_unk) throw std::runtime_error("trim/dataset inconsistency");
        local[i] = Vocab::kUnkId;
      } else {
        local[i] = static_cast<std::uint32_t>(l);
      }
    }
    out.sequences.push_back(std::move(local));
  }
  return out;
}

std::vector<double> temperature_weights(const std::vector<std::size_t>& sizes,
                                        double tau) {
  if (sizes.empty()) throw std::runtime_error("no source sizes");
  if (tau < 0.0) throw std::runtime_error("tau must be non-negative");
  std::vector<double> w(sizes.size());
  double total = 0.0;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (sizes[i] == 0) throw std::runtime_error("source size must be positive");
    w[i] = std::pow(static_cast<double>(sizes[i]), tau);
    total += w[i];
  }
  for (auto& x : w) x /= total;
  return w;
}

std::vector<std::size_t> sample_sources(std::size_t num_sources,
                                        std::size_t num_selected, Rng& rng) {
  if (num_selected > num_sources)
    throw std::runtime_error("cannot select more sources than exist");
  std::vector<std::size_t> idx(num_sources);
  std::iota(idx.begin(), idx.end(), 0);
  for (std::size_t i = 0; i < num_selected; ++i) {
    const std::size_t j = i + rng.uniform_below(num_sources - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(num_selected);
  std::sort(idx.begin(), idx.end());
  return idx;
}

double unigram_cross_entropy(const TokenizedDataset& dataset) {
  if (dataset.sequences.empty()) throw std::runtime_error("empty dataset");
  std::map<std::uint32_t, std::size_t> counts;
  std::size_t total = 0;
  for (const auto& s : dataset.sequences) {
    for (std::uint32_t id : s) ++counts[id];
    total += s.size();
  }
  double h = 0.0;
  for (const auto& [id, c] : counts) {
    const double q = static_cast<double>(c) / static_cast<double>(total);
    h -= q * std::log(q);
  }
  return h;
}

std::size_t sample_categorical(const std::vector<double>& probabilities,
                               Rng& rng) {
  const double u = rng.uniform_real();
  double acc = 0.0;
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    acc += probabilities[i];
    if (u < acc) return i;
  }
  return probabilities.size() - 1;
}

Corpus load_corpus_file(const std::string& path,
                        const std::string& source_id) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("missing corpus file: " + path);
  Corpus c;
  c.source_id = source_id;
  std::string line, doc;
  const auto flush = [&] {
    if (!doc.empty()) c.documents.push_back(std::move(doc));
    doc.clear();
  };
  while (std::getline(f, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) {
      flush();
    } else {
      if (!doc.empty()) doc.push_back('\n');
      doc += line;
    }
  }
  flush();
  return c;
}

}  // namespace dept
