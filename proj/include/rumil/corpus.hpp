#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "rumil/textnorm.hpp"

namespace rumil::corpus {

using TokenId = std::int32_t;

inline constexpr TokenId kPad = 0;
inline constexpr TokenId kUnk = 1;
inline constexpr TokenId kBos = 2;
inline constexpr TokenId kEos = 3;
inline constexpr TokenId kNumSpecials = 4;

inline constexpr int kNumClasses = 3;
inline constexpr std::array<std::string_view, kNumClasses> kLabelNames = {"negative", "neutral",
                                                                         "positive"};

/// Returns the class id for a label name, or -1.
int label_id(std::string_view name) noexcept;

/// Token <-> id mapping. Ids 0..3 are PAD, UNK, BOS, EOS; retained tokens
/// follow in descending count order with lexical tie-break.
class Vocabulary {
 public:
  Vocabulary();

  /// Thresholds `counts` at `min_count`. Throws EmptyVocabulary when no
  /// token survives.
  static Vocabulary from_counts(const std::unordered_map<std::string, std::int64_t>& counts,
                                std::int64_t min_count);

  std::size_t size() const noexcept { return tokens_.size(); }
  /// Number of non-special tokens.
  std::size_t word_count() const noexcept { return tokens_.size() - kNumSpecials; }

  const std::string& token(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::int64_t count(TokenId id) const { return counts_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }
  const std::vector<std::int64_t>& counts() const noexcept { return counts_; }
  std::int64_t min_count() const noexcept { return min_count_; }

  /// Id of `token`, or UNK.
  TokenId id(std::string_view token) const;
  bool contains(std::string_view token) const;

  std::vector<TokenId> encode(std::span<const std::string> tokens) const;

  /// `token<TAB>count` per non-special token, in id order.
  void save(const std::filesystem::path& path) const;
  std::string to_text() const;
  static Vocabulary load(const std::filesystem::path& path);
  static Vocabulary parse(std::string_view text);

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.tokens_ == b.tokens_ && a.counts_ == b.counts_;
  }

 private:
  void push(std::string token, std::int64_t count);

  std::vector<std::string> tokens_;
  std::vector<std::int64_t> counts_;
  std::unordered_map<std::string, TokenId> index_;
  std::int64_t min_count_ = 1;
};

/// Counts tokens across documents.
std::unordered_map<std::string, std::int64_t> count_tokens(
    std::span<const std::vector<std::string>> documents);

Vocabulary build_vocab(std::span<const std::vector<std::string>> documents, std::int64_t min_count);

/// Reads a corpus (one document per line) and normalizes every line.
std::vector<std::vector<std::string>> read_corpus(std::istream& in, const textnorm::RuleSet& rules);
std::vector<std::vector<std::string>> read_corpus(const std::filesystem::path& path,
                                                  const textnorm::RuleSet& rules);

/// Labeled sequences, right-padded with PAD (or truncated) to max_len.
struct LabeledDataset {
  std::vector<std::vector<TokenId>> sequences;
  std::vector<int> labels;
  std::size_t max_len = 64;

  std::size_t size() const noexcept { return labels.size(); }
  bool empty() const noexcept { return labels.empty(); }
  LabeledDataset subset(std::span<const std::size_t> indices) const;
};

inline constexpr std::size_t kDefaultMaxLen = 64;

/// Pads with PAD or truncates to exactly max_len.
std::vector<TokenId> pad_to(std::vector<TokenId> ids, std::size_t max_len);

/// One raw `text<TAB>label` row.
struct LabeledRow {
  std::string text;
  int label = 0;
};

/// Parses TSV rows. Throws BadRow on wrong column count and BadLabel on an
/// unknown label; the message carries the 1-based line number.
std::vector<LabeledRow> read_labeled_rows(std::istream& in);
std::vector<LabeledRow> read_labeled_rows(const std::filesystem::path& path);

LabeledDataset encode_rows(std::span<const LabeledRow> rows, const Vocabulary& vocab,
                           std::size_t max_len, const textnorm::RuleSet& rules);

LabeledDataset load_labeled_tsv(const std::filesystem::path& path, const Vocabulary& vocab,
                                std::size_t max_len, const textnorm::RuleSet& rules);

struct SplitSpec {
  double train_frac = 0.6;
  double val_frac = 0.1;
  double test_frac = 0.3;
  std::uint64_t seed = 0;

  /// Throws Usage unless fractions are non-negative and sum to 1 within 1e-9.
  void validate() const;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

/// Per-class shuffle then largest-remainder allocation, so each class's
/// part sizes are within one instance of its exact proportional share.
/// Index lists come back sorted.
SplitIndices stratified_split_indices(std::span<const int> labels, const SplitSpec& spec);

struct DatasetSplit {
  LabeledDataset train;
  LabeledDataset val;
  LabeledDataset test;
};

DatasetSplit stratified_split(const LabeledDataset& dataset, const SplitSpec& spec);

}  // namespace rumil::corpus
