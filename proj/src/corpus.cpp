#include "rumil/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "rumil/common.hpp"

namespace rumil::corpus {
namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string_view chomp(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  return line;
}

}  // namespace

int label_id(std::string_view name) noexcept {
  for (int i = 0; i < kNumClasses; ++i) {
    if (kLabelNames[static_cast<std::size_t>(i)] == name) return i;
  }
  return -1;
}

Vocabulary::Vocabulary() {
  for (const char* s : {"<pad>", "<unk>", "<bos>", "<eos>"}) push(s, 0);
}

void Vocabulary::push(std::string token, std::int64_t count) {
  index_.emplace(token, static_cast<TokenId>(tokens_.size()));
  tokens_.push_back(std::move(token));
  counts_.push_back(count);
}

Vocabulary Vocabulary::from_counts(const std::unordered_map<std::string, std::int64_t>& counts,
                                   std::int64_t min_count) {
  std::vector<std::pair<std::string, std::int64_t>> kept;
  for (const auto& [token, n] : counts) {
    if (n >= min_count) kept.emplace_back(token, n);
  }
  if (kept.empty()) {
    throw Error(ErrorCode::empty_vocabulary,
                "no token reaches min_count " + std::to_string(min_count));
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  Vocabulary vocab;
  vocab.min_count_ = min_count;
  for (auto& [token, n] : kept) vocab.push(std::move(token), n);
  return vocab;
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.find(std::string(token)) != index_.end();
}

std::vector<TokenId> Vocabulary::encode(std::span<const std::string> tokens) const {
  std::vector<TokenId> ids;
  ids.reserve(tokens.size());
  for (const auto& t : tokens) ids.push_back(id(t));
  return ids;
}

std::string Vocabulary::to_text() const {
  std::string out;
  for (std::size_t i = kNumSpecials; i < tokens_.size(); ++i) {
    out += tokens_[i];
    out += '\t';
    out += std::to_string(counts_[i]);
    out += '\n';
  }
  return out;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
  out << to_text();
}

Vocabulary Vocabulary::parse(std::string_view text) {
  Vocabulary vocab;
  std::int64_t lowest = 0;
  std::size_t line_no = 0;
  for (std::string_view line : split(text, '\n')) {
    ++line_no;
    line = chomp(line);
    if (line.empty()) continue;
    const auto fields = split(line, '\t');
    if (fields.size() != 2 || fields[0].empty()) {
      throw Error(ErrorCode::bad_row, "vocabulary line " + std::to_string(line_no));
    }
    std::int64_t n = 0;
    try {
      n = std::stoll(std::string(fields[1]));
    } catch (const std::exception&) {
      throw Error(ErrorCode::bad_row, "vocabulary line " + std::to_string(line_no) + ": bad count");
    }
    if (vocab.contains(fields[0])) {
      throw Error(ErrorCode::bad_row,
                  "vocabulary line " + std::to_string(line_no) + ": duplicate token");
    }
    vocab.push(std::string(fields[0]), n);
    lowest = lowest == 0 ? n : std::min(lowest, n);
  }
  if (vocab.word_count() == 0) throw Error(ErrorCode::empty_vocabulary, "vocabulary file is empty");
  vocab.min_count_ = std::max<std::int64_t>(lowest, 1);
  return vocab;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) { return parse(read_file(path)); }

std::unordered_map<std::string, std::int64_t> count_tokens(
    std::span<const std::vector<std::string>> documents) {
  std::unordered_map<std::string, std::int64_t> counts;
  for (const auto& doc : documents) {
    for (const auto& t : doc) ++counts[t];
  }
  return counts;
}

Vocabulary build_vocab(std::span<const std::vector<std::string>> documents,
                       std::int64_t min_count) {
  return Vocabulary::from_counts(count_tokens(documents), min_count);
}

std::vector<std::vector<std::string>> read_corpus(std::istream& in,
                                                  const textnorm::RuleSet& rules) {
  std::vector<std::vector<std::string>> docs;
  std::string line;
  while (std::getline(in, line)) {
    auto tokens = textnorm::normalize_document(line, rules);
    if (!tokens.empty()) docs.push_back(std::move(tokens));
  }
  return docs;
}

std::vector<std::vector<std::string>> read_corpus(const std::filesystem::path& path,
                                                  const textnorm::RuleSet& rules) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
  return read_corpus(in, rules);
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices) const {
  LabeledDataset out;
  out.max_len = max_len;
  for (auto i : indices) {
    out.sequences.push_back(sequences.at(i));
    out.labels.push_back(labels.at(i));
  }
  return out;
}

std::vector<TokenId> pad_to(std::vector<TokenId> ids, std::size_t max_len) {
  ids.resize(max_len, kPad);
  return ids;
}

std::vector<LabeledRow> read_labeled_rows(std::istream& in) {
  std::vector<LabeledRow> rows;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string_view line = chomp(raw);
    if (line.empty()) continue;
    const auto fields = split(line, '\t');
    if (fields.size() != 2) {
      throw Error(ErrorCode::bad_row, "line " + std::to_string(line_no) + ": expected 2 columns, got " +
                                          std::to_string(fields.size()));
    }
    const int label = label_id(fields[1]);
    if (label < 0) {
      throw Error(ErrorCode::bad_label,
                  "line " + std::to_string(line_no) + ": '" + std::string(fields[1]) + "'");
    }
    rows.push_back({std::string(fields[0]), label});
  }
  return rows;
}

std::vector<LabeledRow> read_labeled_rows(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
  return read_labeled_rows(in);
}

LabeledDataset encode_rows(std::span<const LabeledRow> rows, const Vocabulary& vocab,
                           std::size_t max_len, const textnorm::RuleSet& rules) {
  LabeledDataset ds;
  ds.max_len = max_len;
  for (const auto& row : rows) {
    const auto tokens = textnorm::normalize_document(row.text, rules);
    ds.sequences.push_back(pad_to(vocab.encode(tokens), max_len));
    ds.labels.push_back(row.label);
  }
  return ds;
}

LabeledDataset load_labeled_tsv(const std::filesystem::path& path, const Vocabulary& vocab,
                                std::size_t max_len, const textnorm::RuleSet& rules) {
  const auto rows = read_labeled_rows(path);
  return encode_rows(rows, vocab, max_len, rules);
}

void SplitSpec::validate() const {
  if (train_frac < 0 || val_frac < 0 || test_frac < 0 ||
      std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-9) {
    throw Error(ErrorCode::usage, "split fractions must be non-negative and sum to 1");
  }
}

SplitIndices stratified_split_indices(std::span<const int> labels, const SplitSpec& spec) {
  spec.validate();
  if (labels.empty()) throw Error(ErrorCode::empty_split, "cannot split an empty dataset");
  const std::array<double, 3> fracs = {spec.train_frac, spec.val_frac, spec.test_frac};
  Rng rng(spec.seed);
  SplitIndices out;
  std::array<std::vector<std::size_t>*, 3> parts = {&out.train, &out.val, &out.test};

  for (int c = 0; c < kNumClasses; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] == c) members.push_back(i);
    }
    if (members.empty()) continue;
    rng.shuffle(std::span(members));

    const auto n = static_cast<double>(members.size());
    std::array<std::size_t, 3> sizes{};
    std::array<double, 3> remainder{};
    std::size_t assigned = 0;
    for (std::size_t k = 0; k < 3; ++k) {
      const double share = n * fracs[k];
      sizes[k] = static_cast<std::size_t>(std::floor(share + 1e-9));
      remainder[k] = share - static_cast<double>(sizes[k]);
      assigned += sizes[k];
    }
    std::array<std::size_t, 3> order = {0, 1, 2};
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
    for (std::size_t k = 0; assigned < members.size(); ++k, ++assigned) ++sizes[order[k % 3]];

    std::size_t pos = 0;
    for (std::size_t k = 0; k < 3; ++k) {
      if (fracs[k] > 0 && sizes[k] == 0) {
        throw Error(ErrorCode::degenerate_split,
                    "class '" + std::string(kLabelNames[static_cast<std::size_t>(c)]) + "' has " +
                        std::to_string(members.size()) + " instance(s); a part would be empty");
      }
      parts[k]->insert(parts[k]->end(), members.begin() + static_cast<std::ptrdiff_t>(pos),
                       members.begin() + static_cast<std::ptrdiff_t>(pos + sizes[k]));
      pos += sizes[k];
    }
  }
  for (auto* p : parts) std::sort(p->begin(), p->end());
  return out;
}

DatasetSplit stratified_split(const LabeledDataset& dataset, const SplitSpec& spec) {
  const auto idx = stratified_split_indices(dataset.labels, spec);
  return {dataset.subset(idx.train), dataset.subset(idx.val), dataset.subset(idx.test)};
}

}  // namespace rumil::corpus
