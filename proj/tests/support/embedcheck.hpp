#pragma once

#include "fixtures.hpp"
#include "rumil/embed.hpp"

namespace embedcheck {

struct Separation {
  double intra = 0.0;
  double inter = 0.0;
};

inline rumil::embed::EmbeddingMatrix train(rumil::embed::Method method, const fixtures::TwoTopicCorpus& corpus,
                                          std::size_t dim, int epochs, std::uint64_t seed) {
  using namespace rumil;
  const auto vocab = corpus::build_vocab(corpus.sentences, 5);
  const auto encoded = embed::encode_corpus(corpus.sentences, vocab);
  if (method == embed::Method::glove) {
    embed::GloveConfig cfg;
    cfg.dim = dim;
    cfg.epochs = epochs;
    cfg.seed = seed;
    const auto cooc = embed::build_cooc(encoded, vocab.word_count(), cfg.window);
    return embed::train_glove(cooc, embed::vocab_words(vocab), cfg).matrix;
  }
  embed::SgnsConfig cfg;
  cfg.dim = dim;
  cfg.epochs = epochs;
  cfg.seed = seed;
  return method == embed::Method::w2v ? embed::train_cbow(encoded, vocab, cfg).matrix
                                      : embed::train_fasttext(encoded, vocab, cfg).matrix;
}

inline Separation separation(const rumil::embed::EmbeddingMatrix& m, const fixtures::TwoTopicCorpus& corpus) {
  std::vector<std::vector<double>> a, b;
  for (const auto& w : corpus.topic_a) a.push_back(*m.vector(w));
  for (const auto& w : corpus.topic_b) b.push_back(*m.vector(w));
  double intra = 0.0, inter = 0.0;
  std::size_t n_intra = 0, n_inter = 0;
  for (const auto* group : {&a, &b}) {
    for (std::size_t i = 0; i < group->size(); ++i) {
      for (std::size_t j = i + 1; j < group->size(); ++j) {
        intra += rumil::cosine((*group)[i], (*group)[j]);
        ++n_intra;
      }
    }
  }
  for (const auto& x : a) {
    for (const auto& y : b) {
      inter += rumil::cosine(x, y);
      ++n_inter;
    }
  }
  return {intra / static_cast<double>(n_intra), inter / static_cast<double>(n_inter)};
}

}  // namespace embedcheck
