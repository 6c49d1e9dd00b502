#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "cwb/sts_data.hpp"

namespace cwb {

inline constexpr std::int32_t kPadId = 0;
inline constexpr std::int32_t kClsId = 1;
inline constexpr std::int32_t kUnkId = 2;
inline constexpr std::size_t kReservedTokens = 3;

class Vocabulary {
 public:
  // Only the reserved tokens.
  Vocabulary();
  // `tokens` lists the non-reserved tokens in id order starting at 3.
  explicit Vocabulary(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  // Returns kUnkId for unknown tokens.
  std::int32_t id(std::string_view token) const;
  const std::string& token(std::int32_t id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> index_;
};

struct TokenizedSentence {
  std::vector<std::int32_t> ids;  // ids[0] == kClsId
  std::size_t length() const { return ids.size(); }
};

// Row-major batch x width grid padded with kPadId; mask is 1 on real tokens.
struct SentenceBatch {
  std::size_t batch = 0;
  std::size_t width = 0;
  std::vector<std::int32_t> ids;
  std::vector<std::uint8_t> mask;

  std::int32_t id(std::size_t row, std::size_t col) const {
    return ids[row * width + col];
  }
  bool real(std::size_t row, std::size_t col) const {
    return mask[row * width + col] != 0;
  }
};

// One sentence per line; blank lines (including whitespace-only) dropped.
std::vector<std::string> load_corpus(const std::filesystem::path& path);

// Lowercased whitespace split.
std::vector<std::string> split_tokens(std::string_view sentence);

// Frequency-ranked vocabulary, ties broken lexicographically, capped at
// max_size entries including the three reserved ids.
Vocabulary build_vocab(std::span<const std::string> sentences,
                       std::size_t max_size);

void save_vocab(const Vocabulary& vocab, const std::filesystem::path& path);
Vocabulary load_vocab(const std::filesystem::path& path);

TokenizedSentence tokenize(std::string_view sentence, const Vocabulary& vocab,
                           std::size_t max_seq_len);
std::vector<TokenizedSentence> tokenize_all(
    std::span<const std::string> sentences, const Vocabulary& vocab,
    std::size_t max_seq_len);

// Pads to the longest sentence given.
SentenceBatch make_batch(std::span<const TokenizedSentence> sentences);

// Uniform sample without replacement, deterministic in `seed`.
SentenceBatch sample_batch(std::span<const TokenizedSentence> corpus,
                           std::size_t batch_size, std::uint64_t seed);
// The corpus indices sample_batch would draw.
std::vector<std::size_t> sample_indices(std::size_t corpus_size,
                                        std::size_t batch_size,
                                        std::uint64_t seed);

// Synthetic data. Word ranks follow a Zipf law so that a few very frequent
// words appear in most sentences, as in natural text.
struct SyntheticCorpusOptions {
  std::size_t n_sentences = 64;
  std::size_t n_words = 400;
  std::size_t min_length = 5;
  std::size_t max_length = 15;
  double zipf_exponent = 1.0;
};

std::vector<std::string> generate_synthetic_corpus(
    const SyntheticCorpusOptions& options, std::uint64_t seed);

inline constexpr double kZipfExponent = 1.0;

// Pairs sharing a controlled fraction of tokens. A base sentence of 5, 10 or
// 15 vocabulary tokens (Zipf over vocabulary rank) has a fraction p of its
// positions replaced by tokens absent from it, p uniform over
// {0, 0.2, ..., 1}; gold = 5 * (1 - p). One subset named "synthetic".
StsDataset generate_synthetic_sts(const Vocabulary& vocab, std::size_t n_pairs,
                                  std::uint64_t seed);

}  // namespace cwb
