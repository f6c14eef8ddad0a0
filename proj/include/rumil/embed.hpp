#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "rumil/common.hpp"
#include "rumil/corpus.hpp"

namespace rumil::embed {

enum class Method { w2v, fasttext, glove };

std::string_view method_name(Method m) noexcept;
/// Throws Usage for anything but "w2v", "fasttext" or "glove".
Method parse_method(std::string_view name);

/// Character n-gram vectors for subword-aware lookup. Only buckets reached
/// by some training word are stored; every other bucket is the zero vector.
struct SubwordTable {
  std::uint32_t buckets = 1u << 21;
  int min_n = 3;
  int max_n = 6;
  std::vector<std::uint32_t> bucket_ids;  // sorted
  Matrix vectors;                         // bucket_ids.size() x dim

  /// Row of `bucket` in `vectors`, if stored.
  std::optional<std::size_t> row_of(std::uint32_t bucket) const;
};

/// Word vectors plus training metadata. `input` holds the raw per-word
/// vectors; for fasttext the usable representation also averages in the
/// word's n-gram vectors (see `vector`).
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;
  EmbeddingMatrix(Method method, std::size_t dim, std::size_t window,
                  std::vector<std::string> tokens, Matrix input, Matrix output = {},
                  std::optional<SubwordTable> subword = std::nullopt);

  Method method() const noexcept { return method_; }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t window() const noexcept { return window_; }
  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }
  const Matrix& input() const noexcept { return input_; }
  const Matrix& output() const noexcept { return output_; }
  const std::optional<SubwordTable>& subword() const noexcept { return subword_; }
  Matrix& mutable_input() noexcept { return input_; }

  std::optional<std::size_t> find(std::string_view token) const;

  /// Representation of `token`: the (subword-averaged) row for known
  /// tokens, the n-gram average for fasttext OOV tokens, nullopt otherwise.
  std::optional<std::vector<double>> vector(std::string_view token) const;

  /// All rows in their usable representation.
  Matrix composed() const;

 private:
  std::vector<double> compose_row(std::size_t row) const;

  Method method_ = Method::w2v;
  std::size_t dim_ = 0;
  std::size_t window_ = 0;
  std::vector<std::string> tokens_;
  Matrix input_;
  Matrix output_;
  std::optional<SubwordTable> subword_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Corpus encoded as embedding row indices (vocabulary id minus the
/// specials). Out-of-vocabulary tokens are dropped.
using EncodedCorpus = std::vector<std::vector<std::uint32_t>>;

EncodedCorpus encode_corpus(std::span<const std::vector<std::string>> documents,
                            const corpus::Vocabulary& vocab);

/// Non-special tokens of `vocab`, in id order.
std::vector<std::string> vocab_words(const corpus::Vocabulary& vocab);
std::vector<std::int64_t> vocab_word_counts(const corpus::Vocabulary& vocab);

/// Draws word rows with probability proportional to count^power.
class NegativeSampler {
 public:
  explicit NegativeSampler(std::span<const std::int64_t> counts, double power = 0.75);

  std::uint32_t sample(Rng& rng) const;
  std::span<const double> probabilities() const noexcept { return probs_; }

 private:
  std::vector<double> probs_;
  std::vector<double> cumulative_;
};

struct SgnsConfig {
  std::size_t dim = 200;
  std::size_t window = 10;
  int epochs = 20;
  int negatives = 5;
  double lr = 0.025;
  std::uint64_t seed = 1;
  /// More than one worker switches to unsynchronized (hogwild) updates.
  int threads = 1;
  // fasttext only
  int min_n = 3;
  int max_n = 6;
  std::uint32_t buckets = 1u << 21;
};

struct GloveConfig {
  std::size_t dim = 200;
  std::size_t window = 15;
  int epochs = 20;
  double lr = 0.05;
  double x_max = 100.0;
  double alpha = 0.75;
  std::uint64_t seed = 1;
  int threads = 1;
};

struct TrainedEmbedding {
  EmbeddingMatrix matrix;
  /// Mean per-example loss of each epoch.
  std::vector<double> epoch_loss;
};

/// CBOW with negative sampling: the mean of the context input vectors
/// predicts the center word.
TrainedEmbedding train_cbow(const EncodedCorpus& corpus, const corpus::Vocabulary& vocab,
                            const SgnsConfig& config);

/// Skip-gram whose center representation averages the word vector with its
/// character n-gram vectors.
TrainedEmbedding train_fasttext(const EncodedCorpus& corpus, const corpus::Vocabulary& vocab,
                                const SgnsConfig& config);

/// N-grams of `<word>` with length in [min_n, max_n], counted in code
/// points, in order of length then position. The bracketed word itself is
/// included when its length falls in range.
std::vector<std::string> char_ngrams(std::string_view word, int min_n, int max_n);

std::uint32_t fnv1a32(std::string_view bytes) noexcept;

struct CoocEntry {
  std::uint32_t row;
  std::uint32_t col;
  double value;
};

/// Distance-weighted co-occurrence counts, sorted by (row, col).
struct CoocMatrix {
  std::size_t vocab_size = 0;
  std::size_t window = 0;
  std::vector<CoocEntry> entries;

  std::optional<double> at(std::uint32_t row, std::uint32_t col) const;
};

CoocMatrix build_cooc(const EncodedCorpus& corpus, std::size_t vocab_size, std::size_t window);

double glove_weight(double x, double x_max, double alpha);

TrainedEmbedding train_glove(const CoocMatrix& cooc, std::vector<std::string> tokens,
                             const GloveConfig& config);

/// Mean of the vectors of resolvable tokens; zero vector if none resolve.
std::vector<double> doc_embed(std::span<const std::string> tokens, const EmbeddingMatrix& matrix);

struct Neighbor {
  std::string token;
  double cosine;
};

/// Exact cosine ranking, descending, ties broken lexically. Tokens in
/// `exclude` are skipped.
std::vector<Neighbor> nearest(std::span<const double> query, const EmbeddingMatrix& matrix,
                              std::size_t k, std::span<const std::string> exclude = {});

/// Text format: `V dim` header, then `token f1 ... f_dim`. Fasttext also
/// writes `<path>.buckets` with header `buckets dim min_n max_n`.
void save_embeddings(const EmbeddingMatrix& matrix, const std::filesystem::path& path);

/// Method is fasttext when the bucket sidecar exists, else `method`.
EmbeddingMatrix load_embeddings(const std::filesystem::path& path, Method method = Method::w2v);

std::filesystem::path bucket_sidecar(const std::filesystem::path& path);

/// Exact loss and gradient kernels shared by the trainers, exposed so they
/// can be checked against finite differences.
namespace kernels {

/// -sum_k [y_k log s(h.o_k) + (1-y_k) log s(-h.o_k)], h = mean of the
/// context rows of `input`.
double cbow_loss(const Matrix& input, const Matrix& output, std::span<const std::uint32_t> context,
                 std::span<const std::uint32_t> targets, std::span<const int> labels);

/// Adds the gradient of `cbow_loss` into grad_input / grad_output.
void cbow_gradient(const Matrix& input, const Matrix& output,
                   std::span<const std::uint32_t> context, std::span<const std::uint32_t> targets,
                   std::span<const int> labels, Matrix& grad_input, Matrix& grad_output);

/// One SGD update of the CBOW objective. Returns the pre-update loss.
/// Stores sigmoid(score) - label for each target in `score_grads` if given.
double cbow_step(Matrix& input, Matrix& output, std::span<const std::uint32_t> context,
                 std::span<const std::uint32_t> targets, std::span<const int> labels, double lr,
                 std::vector<double>* score_grads = nullptr);

/// f(X) (w.w~ + b + b~ - ln X)^2 for a single entry.
double glove_entry_loss(std::span<const double> w, std::span<const double> w_ctx, double b,
                        double b_ctx, double x, double x_max, double alpha);

struct GloveEntryGradient {
  std::vector<double> w;
  std::vector<double> w_ctx;
  double b = 0.0;
  double b_ctx = 0.0;
};

GloveEntryGradient glove_entry_gradient(std::span<const double> w, std::span<const double> w_ctx,
                                        double b, double b_ctx, double x, double x_max,
                                        double alpha);

}  // namespace kernels

}  // namespace rumil::embed
