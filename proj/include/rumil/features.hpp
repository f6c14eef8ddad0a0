#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "rumil/corpus.hpp"

namespace rumil::features {

/// Sparse feature vector with strictly ascending indices.
struct SparseVector {
  std::size_t dim = 0;
  std::vector<std::uint32_t> index;
  std::vector<double> value;

  std::size_t nnz() const noexcept { return index.size(); }
  double norm() const noexcept;
  std::vector<double> to_dense() const;
};

SparseVector from_dense(std::span<const double> dense);

/// Raw term counts over ids [0, vocab_size). PAD ids are ignored.
SparseVector count_vector(std::span<const corpus::TokenId> ids, std::size_t vocab_size);

struct TfidfModel {
  std::size_t num_docs = 0;
  std::vector<std::int64_t> df;
  /// ln((1 + N) / (1 + df)) + 1
  std::vector<double> idf;

  std::size_t dim() const noexcept { return idf.size(); }
};

/// Document frequencies count each id once per document. Throws
/// EmptyCorpus when `documents` is empty.
TfidfModel fit_tfidf(std::span<const std::vector<corpus::TokenId>> documents, std::size_t vocab_size);

/// count * idf per id, scaled to unit L2 norm (an all-zero vector stays zero).
SparseVector transform_tfidf(std::span<const corpus::TokenId> document, const TfidfModel& model);

}  // namespace rumil::features
