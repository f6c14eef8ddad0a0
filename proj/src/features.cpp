#include "rumil/features.hpp"

#include <cmath>
#include <map>

#include "rumil/common.hpp"

namespace rumil::features {

double SparseVector::norm() const noexcept { return l2_norm(value); }

std::vector<double> SparseVector::to_dense() const {
  std::vector<double> out(dim, 0.0);
  for (std::size_t k = 0; k < index.size(); ++k) out[index[k]] = value[k];
  return out;
}

SparseVector from_dense(std::span<const double> dense) {
  SparseVector v;
  v.dim = dense.size();
  for (std::size_t i = 0; i < dense.size(); ++i) {
    if (dense[i] != 0.0) {
      v.index.push_back(static_cast<std::uint32_t>(i));
      v.value.push_back(dense[i]);
    }
  }
  return v;
}

SparseVector count_vector(std::span<const corpus::TokenId> ids, std::size_t vocab_size) {
  std::map<std::uint32_t, double> counts;
  for (auto id : ids) {
    if (id == corpus::kPad) continue;
    if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) {
      throw Error(ErrorCode::dim_mismatch, "token id " + std::to_string(id) + " outside vocabulary");
    }
    counts[static_cast<std::uint32_t>(id)] += 1.0;
  }
  SparseVector v;
  v.dim = vocab_size;
  for (const auto& [i, c] : counts) {
    v.index.push_back(i);
    v.value.push_back(c);
  }
  return v;
}

TfidfModel fit_tfidf(std::span<const std::vector<corpus::TokenId>> documents, std::size_t vocab_size) {
  if (documents.empty()) throw Error(ErrorCode::empty_corpus, "tf-idf needs at least one document");
  TfidfModel model;
  model.num_docs = documents.size();
  model.df.assign(vocab_size, 0);
  for (const auto& doc : documents) {
    for (auto i : count_vector(doc, vocab_size).index) ++model.df[i];
  }
  const double n = static_cast<double>(model.num_docs);
  model.idf.reserve(vocab_size);
  for (auto df : model.df) model.idf.push_back(std::log((1.0 + n) / (1.0 + static_cast<double>(df))) + 1.0);
  return model;
}

SparseVector transform_tfidf(std::span<const corpus::TokenId> document, const TfidfModel& model) {
  SparseVector v = count_vector(document, model.dim());
  for (std::size_t k = 0; k < v.nnz(); ++k) v.value[k] *= model.idf[v.index[k]];
  const double n = v.norm();
  if (n > 0.0) {
    for (auto& x : v.value) x /= n;
  }
  return v;
}

}  // namespace rumil::features
