#include "cwb/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include "cwb/error.hpp"
#include "cwb/numerics.hpp"

namespace cwb {

namespace {

const std::vector<std::string> kReserved = {"[PAD]", "[CLS]", "[UNK]"};

bool is_blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) {
    return std::isspace(c) != 0;
  });
}

// Cumulative Zipf weights over ranks 0..n-1.
class ZipfSampler {
 public:
  ZipfSampler(std::size_t n, double exponent) : cumulative_(n) {
    double total = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      total += 1.0 / std::pow(static_cast<double>(r + 1), exponent);
      cumulative_[r] = total;
    }
  }

  std::size_t operator()(Rng& rng) const {
    const double u = rng.uniform() * cumulative_.back();
    auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    return std::min<std::size_t>(it - cumulative_.begin(),
                                 cumulative_.size() - 1);
  }

 private:
  std::vector<double> cumulative_;
};

}  // namespace

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens) {
  tokens_ = kReserved;
  tokens_.insert(tokens_.end(), std::make_move_iterator(tokens.begin()),
                 std::make_move_iterator(tokens.end()));
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<std::int32_t>(i)).second) {
      throw Error(ErrorKind::kInput, "duplicate vocabulary token '" +
                                         tokens_[i] + "'");
    }
  }
}

std::int32_t Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnkId : it->second;
}

const std::string& Vocabulary::token(std::int32_t id) const {
  return tokens_.at(static_cast<std::size_t>(id));
}

std::vector<std::string> load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorKind::kIo, "cannot read corpus " + path.string());
  }
  std::vector<std::string> sentences;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!is_blank(line)) sentences.push_back(line);
  }
  if (sentences.empty()) {
    throw Error(ErrorKind::kEmptyCorpus,
                "no usable lines in corpus " + path.string());
  }
  return sentences;
}

std::vector<std::string> split_tokens(std::string_view sentence) {
  std::vector<std::string> tokens;
  std::string current;
  for (char ch : sentence) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      if (!current.empty()) tokens.push_back(std::move(current));
      current.clear();
    } else {
      current.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

Vocabulary build_vocab(std::span<const std::string> sentences,
                       std::size_t max_size) {
  if (max_size <= kReservedTokens) {
    throw Error(ErrorKind::kConfig, "vocabulary size cap must exceed 3");
  }
  std::map<std::string, std::size_t> counts;
  for (const auto& sentence : sentences) {
    for (auto& token : split_tokens(sentence)) {
      if (std::find(kReserved.begin(), kReserved.end(), token) !=
          kReserved.end()) {
        continue;
      }
      ++counts[token];
    }
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(),
                                                          counts.end());
  // counts is already lexicographic; a stable sort keeps that as tie order.
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) {
                     return a.second > b.second;
                   });
  const std::size_t keep =
      std::min(ranked.size(), max_size - kReservedTokens);
  std::vector<std::string> tokens;
  tokens.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) tokens.push_back(ranked[i].first);
  return Vocabulary(std::move(tokens));
}

void save_vocab(const Vocabulary& vocab, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path.string());
  for (std::size_t i = kReservedTokens; i < vocab.size(); ++i) {
    out << vocab.tokens()[i] << '\n';
  }
  if (!out) throw Error(ErrorKind::kIo, "write failed for " + path.string());
}

Vocabulary load_vocab(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::kIo, "cannot read vocabulary " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) tokens.push_back(line);
  }
  return Vocabulary(std::move(tokens));
}

TokenizedSentence tokenize(std::string_view sentence, const Vocabulary& vocab,
                           std::size_t max_seq_len) {
  if (max_seq_len < 2) {
    throw Error(ErrorKind::kConfig, "max_seq_len must be at least 2");
  }
  TokenizedSentence out;
  out.ids.push_back(kClsId);
  for (const auto& token : split_tokens(sentence)) {
    if (out.ids.size() == max_seq_len) break;
    out.ids.push_back(vocab.id(token));
  }
  return out;
}

std::vector<TokenizedSentence> tokenize_all(
    std::span<const std::string> sentences, const Vocabulary& vocab,
    std::size_t max_seq_len) {
  std::vector<TokenizedSentence> out;
  out.reserve(sentences.size());
  for (const auto& s : sentences) out.push_back(tokenize(s, vocab, max_seq_len));
  return out;
}

SentenceBatch make_batch(std::span<const TokenizedSentence> sentences) {
  if (sentences.empty()) {
    throw Error(ErrorKind::kInput, "a batch needs at least one sentence");
  }
  SentenceBatch batch;
  batch.batch = sentences.size();
  for (const auto& s : sentences) batch.width = std::max(batch.width, s.length());
  batch.ids.assign(batch.batch * batch.width, kPadId);
  batch.mask.assign(batch.batch * batch.width, 0);
  for (std::size_t b = 0; b < sentences.size(); ++b) {
    const auto& ids = sentences[b].ids;
    for (std::size_t t = 0; t < ids.size(); ++t) {
      batch.ids[b * batch.width + t] = ids[t];
      batch.mask[b * batch.width + t] = 1;
    }
  }
  return batch;
}

std::vector<std::size_t> sample_indices(std::size_t corpus_size,
                                        std::size_t batch_size,
                                        std::uint64_t seed) {
  if (corpus_size == 0) {
    throw Error(ErrorKind::kEmptyCorpus, "cannot sample from an empty corpus");
  }
  if (batch_size == 0 || batch_size > corpus_size) {
    throw Error(ErrorKind::kSampling,
                "batch size " + std::to_string(batch_size) +
                    " not in [1, corpus size " + std::to_string(corpus_size) +
                    "]");
  }
  // Partial Fisher-Yates.
  std::vector<std::size_t> order(corpus_size);
  for (std::size_t i = 0; i < corpus_size; ++i) order[i] = i;
  Rng rng(seed);
  for (std::size_t i = 0; i < batch_size; ++i) {
    const std::size_t j = i + rng.below(corpus_size - i);
    std::swap(order[i], order[j]);
  }
  order.resize(batch_size);
  return order;
}

SentenceBatch sample_batch(std::span<const TokenizedSentence> corpus,
                           std::size_t batch_size, std::uint64_t seed) {
  const auto indices = sample_indices(corpus.size(), batch_size, seed);
  std::vector<TokenizedSentence> picked;
  picked.reserve(indices.size());
  for (std::size_t i : indices) picked.push_back(corpus[i]);
  return make_batch(picked);
}

std::vector<std::string> generate_synthetic_corpus(
    const SyntheticCorpusOptions& options, std::uint64_t seed) {
  if (options.n_words == 0 || options.min_length == 0 ||
      options.min_length > options.max_length) {
    throw Error(ErrorKind::kConfig, "invalid synthetic corpus options");
  }
  ZipfSampler zipf(options.n_words, options.zipf_exponent);
  Rng rng(seed);
  std::vector<std::string> sentences;
  sentences.reserve(options.n_sentences);
  const std::size_t span = options.max_length - options.min_length + 1;
  for (std::size_t s = 0; s < options.n_sentences; ++s) {
    const std::size_t length = options.min_length + rng.below(span);
    std::string sentence;
    for (std::size_t t = 0; t < length; ++t) {
      if (t > 0) sentence.push_back(' ');
      sentence += "w" + std::to_string(zipf(rng));
    }
    sentences.push_back(std::move(sentence));
  }
  return sentences;
}

StsDataset generate_synthetic_sts(const Vocabulary& vocab, std::size_t n_pairs,
                                  std::uint64_t seed) {
  constexpr std::size_t kLengths[] = {5, 10, 15};
  constexpr std::size_t kBuckets = 6;  // p = 0, 0.2, ..., 1
  if (n_pairs < 10) {
    throw Error(ErrorKind::kConfig, "synthetic STS needs at least 10 pairs");
  }
  const std::size_t n_words = vocab.size() - kReservedTokens;
  if (n_words < 2 * kLengths[2]) {
    throw Error(ErrorKind::kInput,
                "vocabulary too small for synthetic STS (need 30 words)");
  }
  ZipfSampler zipf(n_words, kZipfExponent);
  Rng rng(seed);
  auto word = [&](std::size_t rank) {
    return vocab.token(static_cast<std::int32_t>(rank + kReservedTokens));
  };
  auto join = [&](const std::vector<std::size_t>& ranks) {
    std::string out;
    for (std::size_t i = 0; i < ranks.size(); ++i) {
      if (i > 0) out.push_back(' ');
      out += word(ranks[i]);
    }
    return out;
  };

  StsSubset subset{"synthetic", {}};
  subset.pairs.reserve(n_pairs);
  for (std::size_t n = 0; n < n_pairs; ++n) {
    const std::size_t length = kLengths[rng.below(3)];
    const std::size_t bucket = rng.below(kBuckets);
    const std::size_t replaced = length * bucket / (kBuckets - 1);

    std::vector<std::size_t> base(length);
    for (auto& r : base) r = zipf(rng);
    const std::set<std::size_t> present(base.begin(), base.end());

    std::vector<std::size_t> positions(length);
    for (std::size_t i = 0; i < length; ++i) positions[i] = i;
    for (std::size_t i = 0; i < replaced; ++i) {
      std::swap(positions[i], positions[i + rng.below(length - i)]);
    }
    std::vector<std::size_t> other = base;
    for (std::size_t i = 0; i < replaced; ++i) {
      std::size_t r = zipf(rng);
      while (present.count(r) != 0) r = zipf(rng);
      other[positions[i]] = r;
    }
    // 5 * (1 - p) with p = bucket / 5.
    const auto gold = static_cast<double>(kBuckets - 1 - bucket);
    subset.pairs.push_back({join(base), join(other), gold});
  }
  StsDataset dataset;
  dataset.name = "synthetic";
  dataset.subsets.push_back(std::move(subset));
  return dataset;
}

}  // namespace cwb
