#include "rumil/embed.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

namespace rumil::embed {
namespace {

// Element access for training kernels. With Shared = true every load and
// store goes through a relaxed atomic_ref, which gives hogwild semantics
// (lost updates allowed) without a data race.
template <bool Shared>
struct Cell {
  static double get(const double* p) noexcept {
    if constexpr (Shared) {
      return std::atomic_ref<double>(*const_cast<double*>(p)).load(std::memory_order_relaxed);
    } else {
      return *p;
    }
  }
  static void add(double* p, double v) noexcept {
    if constexpr (Shared) {
      std::atomic_ref<double> ref(*p);
      ref.store(ref.load(std::memory_order_relaxed) + v, std::memory_order_relaxed);
    } else {
      *p += v;
    }
  }
};

double log_sigmoid(double x) noexcept {
  return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x));
}

// Negative-sampling update against `out` for hidden vector h. Accumulates
// -dL/dh into neu1e and returns the loss. Output rows are updated in place
// using their pre-update values for neu1e.
template <bool Shared>
double ns_update(std::span<const double> h, double* out, std::size_t dim,
                 std::span<const std::uint32_t> targets, std::span<const int> labels, double lr,
                 std::span<double> neu1e, std::vector<double>* score_grads) {
  double loss = 0.0;
  for (std::size_t k = 0; k < targets.size(); ++k) {
    double* o = out + static_cast<std::size_t>(targets[k]) * dim;
    double score = 0.0;
    for (std::size_t i = 0; i < dim; ++i) score += h[i] * Cell<Shared>::get(o + i);
    const double label = labels[k];
    loss -= label > 0 ? log_sigmoid(score) : log_sigmoid(-score);
    const double g = label - sigmoid(score);
    if (score_grads != nullptr) score_grads->push_back(-g);
    for (std::size_t i = 0; i < dim; ++i) neu1e[i] += g * Cell<Shared>::get(o + i);
    for (std::size_t i = 0; i < dim; ++i) Cell<Shared>::add(o + i, lr * g * h[i]);
  }
  return loss;
}

template <bool Shared>
double cbow_step_impl(double* in, double* out, std::size_t dim,
                      std::span<const std::uint32_t> context,
                      std::span<const std::uint32_t> targets, std::span<const int> labels,
                      double lr, std::vector<double>& h, std::vector<double>& neu1e,
                      std::vector<double>* score_grads) {
  h.assign(dim, 0.0);
  neu1e.assign(dim, 0.0);
  const double inv = 1.0 / static_cast<double>(context.size());
  for (auto c : context) {
    const double* row = in + static_cast<std::size_t>(c) * dim;
    for (std::size_t i = 0; i < dim; ++i) h[i] += Cell<Shared>::get(row + i);
  }
  for (auto& v : h) v *= inv;
  const double loss = ns_update<Shared>(h, out, dim, targets, labels, lr, neu1e, score_grads);
  for (auto c : context) {
    double* row = in + static_cast<std::size_t>(c) * dim;
    for (std::size_t i = 0; i < dim; ++i) Cell<Shared>::add(row + i, lr * neu1e[i] * inv);
  }
  return loss;
}

void init_uniform(Matrix& m, Rng& rng, double half_width) {
  for (auto& v : m.flat()) v = rng.uniform(-half_width, half_width);
}

std::uint64_t worker_seed(std::uint64_t seed, int worker) {
  // splitmix64 of (seed, worker)
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(worker + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::size_t token_total(const EncodedCorpus& corpus) {
  std::size_t n = 0;
  for (const auto& d : corpus) n += d.size();
  return n;
}

struct LossTally {
  double loss = 0.0;
  std::size_t examples = 0;
};

// Runs `epochs` passes over `corpus`, calling the body per document with the
// worker's generator and the linearly decayed learning rate. A single worker
// visits documents in order using main_rng; several workers each take a
// contiguous shard with their own generator.

template <class Body>
std::vector<double> run_sgd_epochs(const EncodedCorpus& corpus, int epochs, int threads,
                                   std::uint64_t seed, Rng& main_rng, double lr0, Body&& body) {
  const std::size_t total = token_total(corpus) * static_cast<std::size_t>(std::max(epochs, 0));
  std::atomic<std::size_t> processed{0};
  auto lr_at = [&](std::size_t done) {
    const double progress = total == 0 ? 0.0 : static_cast<double>(done) / static_cast<double>(total);
    return lr0 * std::max(1.0 - 0.99 * progress, 0.01);
  };

  std::vector<double> history;
  const int workers = std::max(1, std::min<int>(threads, static_cast<int>(corpus.size())));
  std::vector<Rng> rngs;
  for (int w = 0; w < workers; ++w) rngs.emplace_back(worker_seed(seed, w));

  for (int epoch = 0; epoch < epochs; ++epoch) {
    if (workers == 1) {
      LossTally tally;
      std::size_t done = processed.load();
      for (const auto& doc : corpus) {
        const auto t = body.template operator()<false>(doc, main_rng, lr_at(done));
        tally.loss += t.loss;
        tally.examples += t.examples;
        done += doc.size();
      }
      processed = done;
      history.push_back(tally.examples ? tally.loss / static_cast<double>(tally.examples) : 0.0);
      continue;
    }
    std::vector<LossTally> tallies(static_cast<std::size_t>(workers));
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        const std::size_t begin = corpus.size() * static_cast<std::size_t>(w) / static_cast<std::size_t>(workers);
        const std::size_t end = corpus.size() * static_cast<std::size_t>(w + 1) / static_cast<std::size_t>(workers);
        auto& tally = tallies[static_cast<std::size_t>(w)];
        for (std::size_t d = begin; d < end; ++d) {
          const auto t = body.template operator()<true>(corpus[d], rngs[static_cast<std::size_t>(w)],
                                                        lr_at(processed.load(std::memory_order_relaxed)));
          tally.loss += t.loss;
          tally.examples += t.examples;
          processed.fetch_add(corpus[d].size(), std::memory_order_relaxed);
        }
      });
    }
    for (auto& t : pool) t.join();
    LossTally sum;
    for (const auto& t : tallies) {
      sum.loss += t.loss;
      sum.examples += t.examples;
    }
    history.push_back(sum.examples ? sum.loss / static_cast<double>(sum.examples) : 0.0);
  }
  return history;
}

void require_tokens(const EncodedCorpus& corpus) {
  if (token_total(corpus) == 0) throw Error(ErrorCode::empty_corpus, "corpus has no in-vocabulary tokens");
}

void append_negatives(const NegativeSampler& sampler, Rng& rng, int negatives, std::uint32_t positive,
                      std::vector<std::uint32_t>& targets, std::vector<int>& labels) {
  for (int n = 0; n < negatives; ++n) {
    const auto s = sampler.sample(rng);
    if (s == positive) continue;
    targets.push_back(s);
    labels.push_back(0);
  }
}

std::vector<std::size_t> utf8_starts(std::string_view s) {
  std::vector<std::size_t> starts;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if ((static_cast<unsigned char>(s[i]) & 0xC0) != 0x80) starts.push_back(i);
  }
  starts.push_back(s.size());
  return starts;
}

std::vector<std::uint32_t> ngram_buckets(std::string_view word, const SubwordTable& table) {
  std::vector<std::uint32_t> out;
  for (const auto& g : char_ngrams(word, table.min_n, table.max_n)) {
    out.push_back(fnv1a32(g) % table.buckets);
  }
  return out;
}

std::string read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::vector<std::string_view> fields_of(std::string_view line) {
  std::vector<std::string_view> out;
  for (auto f : split(line, ' ')) {
    if (!f.empty()) out.push_back(f);
  }
  return out;
}

std::size_t parse_size(std::string_view s, const char* what) {
  std::size_t v = 0;
  try {
    std::size_t used = 0;
    v = std::stoull(std::string(s), &used);
    if (used != s.size()) throw std::invalid_argument(what);
  } catch (const std::exception&) {
    throw Error(ErrorCode::bad_header, std::string("bad ") + what + ": '" + std::string(s) + "'");
  }
  return v;
}

struct CbowBody {
  Matrix& input;
  Matrix& output;
  const NegativeSampler& sampler;
  std::ptrdiff_t window;
  int negatives;

  template <bool Shared>
  LossTally operator()(const std::vector<std::uint32_t>& doc, Rng& r, double lr) const {
    LossTally tally;
    std::vector<std::uint32_t> context, targets;
    std::vector<int> labels;
    std::vector<double> h, neu1e;
    const auto n = static_cast<std::ptrdiff_t>(doc.size());
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      context.clear();
      for (std::ptrdiff_t j = std::max<std::ptrdiff_t>(0, i - window); j <= std::min(n - 1, i + window); ++j) {
        if (j != i) context.push_back(doc[static_cast<std::size_t>(j)]);
      }
      if (context.empty()) continue;
      const auto center = doc[static_cast<std::size_t>(i)];
      targets.assign(1, center);
      labels.assign(1, 1);
      append_negatives(sampler, r, negatives, center, targets, labels);
      tally.loss += cbow_step_impl<Shared>(input.data(), output.data(), input.cols(), context, targets,
                                           labels, lr, h, neu1e, nullptr);
      ++tally.examples;
    }
    return tally;
  }
};

struct FasttextBody {
  Matrix& input;
  Matrix& output;
  Matrix& subvec;
  const std::vector<std::vector<std::uint32_t>>& word_rows;
  const NegativeSampler& sampler;
  std::ptrdiff_t window;
  int negatives;

  template <bool Shared>
  LossTally operator()(const std::vector<std::uint32_t>& doc, Rng& r, double lr) const {
    using C = Cell<Shared>;
    const std::size_t dim = input.cols();
    LossTally tally;
    std::vector<std::uint32_t> targets;
    std::vector<int> labels;
    std::vector<double> h(dim), neu1e(dim);
    const auto n = static_cast<std::ptrdiff_t>(doc.size());
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      const auto center = doc[static_cast<std::size_t>(i)];
      const auto& rows = word_rows[center];
      const double inv = 1.0 / static_cast<double>(1 + rows.size());
      for (std::ptrdiff_t j = std::max<std::ptrdiff_t>(0, i - window); j <= std::min(n - 1, i + window); ++j) {
        if (j == i) continue;
        std::fill(h.begin(), h.end(), 0.0);
        std::fill(neu1e.begin(), neu1e.end(), 0.0);
        const double* wrow = input.data() + center * dim;
        for (std::size_t k = 0; k < dim; ++k) h[k] += C::get(wrow + k);
        for (auto sr : rows) {
          const double* srow = subvec.data() + sr * dim;
          for (std::size_t k = 0; k < dim; ++k) h[k] += C::get(srow + k);
        }
        for (auto& v : h) v *= inv;
        const auto ctx = doc[static_cast<std::size_t>(j)];
        targets.assign(1, ctx);
        labels.assign(1, 1);
        append_negatives(sampler, r, negatives, ctx, targets, labels);
        tally.loss += ns_update<Shared>(h, output.data(), dim, targets, labels, lr, neu1e, nullptr);
        ++tally.examples;
        double* wmut = input.data() + center * dim;
        for (std::size_t k = 0; k < dim; ++k) C::add(wmut + k, lr * neu1e[k] * inv);
        for (auto sr : rows) {
          double* srow = subvec.data() + sr * dim;
          for (std::size_t k = 0; k < dim; ++k) C::add(srow + k, lr * neu1e[k] * inv);
        }
      }
    }
    return tally;
  }
};

}  // namespace

std::string_view method_name(Method m) noexcept {
  switch (m) {
    case Method::w2v: return "w2v";
    case Method::fasttext: return "fasttext";
    case Method::glove: return "glove";
  }
  return "w2v";
}

Method parse_method(std::string_view name) {
  if (name == "w2v") return Method::w2v;
  if (name == "fasttext") return Method::fasttext;
  if (name == "glove") return Method::glove;
  throw Error(ErrorCode::usage, "unknown embedding method '" + std::string(name) + "'");
}

std::optional<std::size_t> SubwordTable::row_of(std::uint32_t bucket) const {
  auto it = std::lower_bound(bucket_ids.begin(), bucket_ids.end(), bucket);
  if (it == bucket_ids.end() || *it != bucket) return std::nullopt;
  return static_cast<std::size_t>(it - bucket_ids.begin());
}

EmbeddingMatrix::EmbeddingMatrix(Method method, std::size_t dim, std::size_t window,
                                 std::vector<std::string> tokens, Matrix input, Matrix output,
                                 std::optional<SubwordTable> subword)
    : method_(method),
      dim_(dim),
      window_(window),
      tokens_(std::move(tokens)),
      input_(std::move(input)),
      output_(std::move(output)),
      subword_(std::move(subword)) {
  if (input_.rows() != tokens_.size() || (input_.cols() != dim_ && !tokens_.empty())) {
    throw Error(ErrorCode::dim_mismatch, "embedding rows do not match tokens/dim");
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], i);
}

std::optional<std::size_t> EmbeddingMatrix::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::vector<double> EmbeddingMatrix::compose_row(std::size_t row) const {
  std::vector<double> v(input_.row(row).begin(), input_.row(row).end());
  if (!subword_) return v;
  const auto buckets = ngram_buckets(tokens_[row], *subword_);
  for (auto b : buckets) {
    if (auto r = subword_->row_of(b)) {
      const auto src = subword_->vectors.row(*r);
      for (std::size_t i = 0; i < dim_; ++i) v[i] += src[i];
    }
  }
  const double inv = 1.0 / static_cast<double>(1 + buckets.size());
  for (auto& x : v) x *= inv;
  return v;
}

std::optional<std::vector<double>> EmbeddingMatrix::vector(std::string_view token) const {
  if (auto row = find(token)) return compose_row(*row);
  if (!subword_) return std::nullopt;
  const auto buckets = ngram_buckets(token, *subword_);
  if (buckets.empty()) return std::nullopt;
  std::vector<double> v(dim_, 0.0);
  for (auto b : buckets) {
    if (auto r = subword_->row_of(b)) {
      const auto src = subword_->vectors.row(*r);
      for (std::size_t i = 0; i < dim_; ++i) v[i] += src[i];
    }
  }
  for (auto& x : v) x /= static_cast<double>(buckets.size());
  return v;
}

Matrix EmbeddingMatrix::composed() const {
  if (!subword_) return input_;
  Matrix out(tokens_.size(), dim_);
  for (std::size_t r = 0; r < tokens_.size(); ++r) {
    const auto v = compose_row(r);
    std::copy(v.begin(), v.end(), out.row(r).begin());
  }
  return out;
}

EncodedCorpus encode_corpus(std::span<const std::vector<std::string>> documents,
                            const corpus::Vocabulary& vocab) {
  EncodedCorpus out;
  out.reserve(documents.size());
  for (const auto& doc : documents) {
    std::vector<std::uint32_t> rows;
    for (const auto& t : doc) {
      const auto id = vocab.id(t);
      if (id >= corpus::kNumSpecials) rows.push_back(static_cast<std::uint32_t>(id - corpus::kNumSpecials));
    }
    if (!rows.empty()) out.push_back(std::move(rows));
  }
  return out;
}

std::vector<std::string> vocab_words(const corpus::Vocabulary& vocab) {
  return {vocab.tokens().begin() + corpus::kNumSpecials, vocab.tokens().end()};
}

std::vector<std::int64_t> vocab_word_counts(const corpus::Vocabulary& vocab) {
  return {vocab.counts().begin() + corpus::kNumSpecials, vocab.counts().end()};
}

NegativeSampler::NegativeSampler(std::span<const std::int64_t> counts, double power) {
  probs_.reserve(counts.size());
  double total = 0.0;
  for (auto c : counts) {
    probs_.push_back(std::pow(static_cast<double>(std::max<std::int64_t>(c, 0)), power));
    total += probs_.back();
  }
  if (total <= 0.0) throw Error(ErrorCode::empty_vocabulary, "negative sampler needs a positive count");
  double acc = 0.0;
  for (auto& p : probs_) {
    p /= total;
    acc += p;
    cumulative_.push_back(acc);
  }
  cumulative_.back() = 1.0;
}

std::uint32_t NegativeSampler::sample(Rng& rng) const {
  const double u = rng.uniform();
  auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
  if (it == cumulative_.end()) --it;
  return static_cast<std::uint32_t>(it - cumulative_.begin());
}

TrainedEmbedding train_cbow(const EncodedCorpus& corpus, const corpus::Vocabulary& vocab,
                            const SgnsConfig& config) {
  if (config.window < 1 || config.dim == 0) throw Error(ErrorCode::usage, "window and dim must be positive");
  require_tokens(corpus);
  const auto words = vocab_words(vocab);
  const auto counts = vocab_word_counts(vocab);
  const std::size_t dim = config.dim;
  Rng rng(config.seed);
  Matrix input(words.size(), dim);
  Matrix output(words.size(), dim, 0.0);
  init_uniform(input, rng, 0.5 / static_cast<double>(dim));
  const NegativeSampler sampler(counts);
  const auto window = static_cast<std::ptrdiff_t>(config.window);

CbowBody body{input, output, sampler, window, config.negatives};

  auto history = run_sgd_epochs(corpus, config.epochs, config.threads, config.seed, rng, config.lr, body);
  return {EmbeddingMatrix(Method::w2v, dim, config.window, words, std::move(input), std::move(output)),
          std::move(history)};
}

std::vector<std::string> char_ngrams(std::string_view word, int min_n, int max_n) {
  const std::string bracketed = "<" + std::string(word) + ">";
  const auto starts = utf8_starts(bracketed);
  const auto length = static_cast<int>(starts.size()) - 1;
  std::vector<std::string> out;
  for (int n = std::max(min_n, 1); n <= max_n; ++n) {
    for (int s = 0; s + n <= length; ++s) {
      const auto a = starts[static_cast<std::size_t>(s)];
      const auto b = starts[static_cast<std::size_t>(s + n)];
      out.push_back(bracketed.substr(a, b - a));
    }
  }
  return out;
}

std::uint32_t fnv1a32(std::string_view bytes) noexcept {
  std::uint32_t h = 2166136261u;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 16777619u;
  }
  return h;
}

TrainedEmbedding train_fasttext(const EncodedCorpus& corpus, const corpus::Vocabulary& vocab,
                                const SgnsConfig& config) {
  if (config.min_n < 1 || config.min_n > config.max_n) throw Error(ErrorCode::usage, "need 1 <= min_n <= max_n");
  if (config.window < 1 || config.dim == 0 || config.buckets == 0) {
    throw Error(ErrorCode::usage, "window, dim and buckets must be positive");
  }
  require_tokens(corpus);
  const auto words = vocab_words(vocab);
  const auto counts = vocab_word_counts(vocab);
  const std::size_t dim = config.dim;

  SubwordTable table;
  table.buckets = config.buckets;
  table.min_n = config.min_n;
  table.max_n = config.max_n;
  std::vector<std::vector<std::uint32_t>> word_buckets;
  for (const auto& w : words) {
    word_buckets.push_back(ngram_buckets(w, table));
    table.bucket_ids.insert(table.bucket_ids.end(), word_buckets.back().begin(), word_buckets.back().end());
  }
  std::sort(table.bucket_ids.begin(), table.bucket_ids.end());
  table.bucket_ids.erase(std::unique(table.bucket_ids.begin(), table.bucket_ids.end()), table.bucket_ids.end());
  table.vectors = Matrix(table.bucket_ids.size(), dim, 0.0);
  std::vector<std::vector<std::uint32_t>> word_rows;
  for (const auto& wb : word_buckets) {
    std::vector<std::uint32_t> rows;
    for (auto b : wb) rows.push_back(static_cast<std::uint32_t>(*table.row_of(b)));
    word_rows.push_back(std::move(rows));
  }

  Rng rng(config.seed);
  Matrix input(words.size(), dim);
  Matrix output(words.size(), dim, 0.0);
  init_uniform(input, rng, 0.5 / static_cast<double>(dim));
  const NegativeSampler sampler(counts);

FasttextBody body{input, output, table.vectors, word_rows, sampler, static_cast<std::ptrdiff_t>(config.window),
         config.negatives};

  auto history = run_sgd_epochs(corpus, config.epochs, config.threads, config.seed, rng, config.lr, body);
  return {EmbeddingMatrix(Method::fasttext, dim, config.window, words, std::move(input), std::move(output),
                          std::move(table)),
          std::move(history)};
}

std::optional<double> CoocMatrix::at(std::uint32_t row, std::uint32_t col) const {
  auto it = std::lower_bound(entries.begin(), entries.end(), std::pair(row, col),
                             [](const CoocEntry& e, const std::pair<std::uint32_t, std::uint32_t>& k) {
                               return std::pair(e.row, e.col) < k;
                             });
  if (it == entries.end() || it->row != row || it->col != col) return std::nullopt;
  return it->value;
}

CoocMatrix build_cooc(const EncodedCorpus& corpus, std::size_t vocab_size, std::size_t window) {
  if (window < 1) throw Error(ErrorCode::usage, "window must be >= 1");
  require_tokens(corpus);
  std::map<std::pair<std::uint32_t, std::uint32_t>, double> acc;
  for (const auto& doc : corpus) {
    for (std::size_t i = 0; i < doc.size(); ++i) {
      for (std::size_t j = i + 1; j < doc.size() && j - i <= window; ++j) {
        const double w = 1.0 / static_cast<double>(j - i);
        acc[{doc[i], doc[j]}] += w;
        acc[{doc[j], doc[i]}] += w;
      }
    }
  }
  CoocMatrix m;
  m.vocab_size = vocab_size;
  m.window = window;
  m.entries.reserve(acc.size());
  for (const auto& [key, value] : acc) m.entries.push_back({key.first, key.second, value});
  return m;
}

double glove_weight(double x, double x_max, double alpha) {
  return x < x_max ? std::pow(x / x_max, alpha) : 1.0;
}

namespace kernels {

double cbow_loss(const Matrix& input, const Matrix& output, std::span<const std::uint32_t> context,
                 std::span<const std::uint32_t> targets, std::span<const int> labels) {
  const std::size_t dim = input.cols();
  std::vector<double> h(dim, 0.0);
  for (auto c : context) {
    for (std::size_t i = 0; i < dim; ++i) h[i] += input(c, i);
  }
  for (auto& v : h) v /= static_cast<double>(context.size());
  double loss = 0.0;
  for (std::size_t k = 0; k < targets.size(); ++k) {
    const double s = dot(h, output.row(targets[k]));
    loss -= labels[k] > 0 ? log_sigmoid(s) : log_sigmoid(-s);
  }
  return loss;
}

void cbow_gradient(const Matrix& input, const Matrix& output,
                   std::span<const std::uint32_t> context, std::span<const std::uint32_t> targets,
                   std::span<const int> labels, Matrix& grad_input, Matrix& grad_output) {
  const std::size_t dim = input.cols();
  std::vector<double> h(dim, 0.0), gh(dim, 0.0);
  const double inv = 1.0 / static_cast<double>(context.size());
  for (auto c : context) {
    for (std::size_t i = 0; i < dim; ++i) h[i] += input(c, i) * inv;
  }
  for (std::size_t k = 0; k < targets.size(); ++k) {
    const auto o = output.row(targets[k]);
    const double d = sigmoid(dot(h, o)) - labels[k];
    for (std::size_t i = 0; i < dim; ++i) {
      gh[i] += d * o[i];
      grad_output(targets[k], i) += d * h[i];
    }
  }
  for (auto c : context) {
    for (std::size_t i = 0; i < dim; ++i) grad_input(c, i) += gh[i] * inv;
  }
}

double cbow_step(Matrix& input, Matrix& output, std::span<const std::uint32_t> context,
                 std::span<const std::uint32_t> targets, std::span<const int> labels, double lr,
                 std::vector<double>* score_grads) {
  std::vector<double> h, neu1e;
  return cbow_step_impl<false>(input.data(), output.data(), input.cols(), context, targets, labels, lr, h,
                               neu1e, score_grads);
}

double glove_entry_loss(std::span<const double> w, std::span<const double> w_ctx, double b,
                        double b_ctx, double x, double x_max, double alpha) {
  const double diff = dot(w, w_ctx) + b + b_ctx - std::log(x);
  return glove_weight(x, x_max, alpha) * diff * diff;
}

GloveEntryGradient glove_entry_gradient(std::span<const double> w, std::span<const double> w_ctx,
                                        double b, double b_ctx, double x, double x_max,
                                        double alpha) {
  const double diff = dot(w, w_ctx) + b + b_ctx - std::log(x);
  const double g = 2.0 * glove_weight(x, x_max, alpha) * diff;
  GloveEntryGradient out;
  for (std::size_t i = 0; i < w.size(); ++i) {
    out.w.push_back(g * w_ctx[i]);
    out.w_ctx.push_back(g * w[i]);
  }
  out.b = g;
  out.b_ctx = g;
  return out;
}

}  // namespace kernels

TrainedEmbedding train_glove(const CoocMatrix& cooc, std::vector<std::string> tokens,
                             const GloveConfig& config) {
  if (cooc.entries.empty()) throw Error(ErrorCode::empty_cooc, "co-occurrence matrix has no entries");
  if (config.dim == 0) throw Error(ErrorCode::usage, "dim must be positive");
  if (tokens.size() != cooc.vocab_size) throw Error(ErrorCode::dim_mismatch, "token count != cooc vocab size");
  const std::size_t V = cooc.vocab_size;
  const std::size_t dim = config.dim;
  Rng rng(config.seed);
  Matrix w(V, dim), wc(V, dim), b(V, 1), bc(V, 1);
  const double half = 0.5 / static_cast<double>(dim);
  for (Matrix* m : {&w, &wc, &b, &bc}) init_uniform(*m, rng, half);
  // AdaGrad accumulators start at 1 so the first step is bounded by lr.
  Matrix gw(V, dim, 1.0), gwc(V, dim, 1.0), gb(V, 1, 1.0), gbc(V, 1, 1.0);

  std::vector<std::size_t> order(cooc.entries.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  auto process = [&]<bool Shared>(std::size_t begin, std::size_t end) {
    using C = Cell<Shared>;
    double loss = 0.0;
    std::vector<double> wi(dim), wj(dim);
    for (std::size_t n = begin; n < end; ++n) {
      const auto& e = cooc.entries[order[n]];
      double* pw = w.data() + e.row * dim;
      double* pc = wc.data() + e.col * dim;
      double diff = C::get(b.data() + e.row) + C::get(bc.data() + e.col) - std::log(e.value);
      for (std::size_t k = 0; k < dim; ++k) {
        wi[k] = C::get(pw + k);
        wj[k] = C::get(pc + k);
        diff += wi[k] * wj[k];
      }
      const double f = glove_weight(e.value, config.x_max, config.alpha);
      loss += f * diff * diff;
      const double g = 2.0 * f * diff;
      if (!std::isfinite(g)) continue;
      for (std::size_t k = 0; k < dim; ++k) {
        const double g1 = g * wj[k];
        const double g2 = g * wi[k];
        C::add(gw.data() + e.row * dim + k, g1 * g1);
        C::add(gwc.data() + e.col * dim + k, g2 * g2);
        C::add(pw + k, -config.lr * g1 / std::sqrt(C::get(gw.data() + e.row * dim + k)));
        C::add(pc + k, -config.lr * g2 / std::sqrt(C::get(gwc.data() + e.col * dim + k)));
      }
      C::add(gb.data() + e.row, g * g);
      C::add(gbc.data() + e.col, g * g);
      C::add(b.data() + e.row, -config.lr * g / std::sqrt(C::get(gb.data() + e.row)));
      C::add(bc.data() + e.col, -config.lr * g / std::sqrt(C::get(gbc.data() + e.col)));
    }
    return loss;
  };

  std::vector<double> history;
  const int workers = std::max(1, std::min<int>(config.threads, static_cast<int>(order.size())));
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(std::span(order));
    double loss = 0.0;
    if (workers == 1) {
      loss = process.template operator()<false>(0, order.size());
    } else {
      std::vector<double> parts(static_cast<std::size_t>(workers), 0.0);
      std::vector<std::thread> pool;
      for (int t = 0; t < workers; ++t) {
        pool.emplace_back([&, t] {
          const auto s = static_cast<std::size_t>(t);
          const auto nw = static_cast<std::size_t>(workers);
          parts[s] = process.template operator()<true>(order.size() * s / nw, order.size() * (s + 1) / nw);
        });
      }
      for (auto& th : pool) th.join();
      for (double p : parts) loss += p;
    }
    history.push_back(loss / static_cast<double>(order.size()));
  }

  Matrix averaged(V, dim);
  for (std::size_t i = 0; i < averaged.size(); ++i) {
    averaged.data()[i] = 0.5 * (w.data()[i] + wc.data()[i]);
  }
  return {EmbeddingMatrix(Method::glove, dim, cooc.window, std::move(tokens), std::move(averaged), std::move(wc)),
          std::move(history)};
}

std::vector<double> doc_embed(std::span<const std::string> tokens, const EmbeddingMatrix& matrix) {
  std::vector<double> sum(matrix.dim(), 0.0);
  std::size_t used = 0;
  for (const auto& t : tokens) {
    const auto v = matrix.vector(t);
    if (!v) continue;
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += (*v)[i];
    ++used;
  }
  if (used > 0) {
    for (auto& x : sum) x /= static_cast<double>(used);
  }
  return sum;
}

std::vector<Neighbor> nearest(std::span<const double> query, const EmbeddingMatrix& matrix,
                              std::size_t k, std::span<const std::string> exclude) {
  if (k < 1) throw Error(ErrorCode::usage, "k must be >= 1");
  if (query.size() != matrix.dim()) throw Error(ErrorCode::dim_mismatch, "query dimension differs from matrix");
  if (l2_norm(query) == 0.0) throw Error(ErrorCode::zero_query, "query vector is zero");
  const Matrix rows = matrix.composed();
  std::vector<Neighbor> all;
  for (std::size_t r = 0; r < matrix.size(); ++r) {
    const auto& tok = matrix.tokens()[r];
    if (std::find(exclude.begin(), exclude.end(), tok) != exclude.end()) continue;
    all.push_back({tok, cosine(query, rows.row(r))});
  }
  const std::size_t take = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(take), all.end(),
                    [](const Neighbor& a, const Neighbor& b) {
                      return a.cosine != b.cosine ? a.cosine > b.cosine : a.token < b.token;
                    });
  all.resize(take);
  return all;
}

std::filesystem::path bucket_sidecar(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".buckets");
}

void save_embeddings(const EmbeddingMatrix& matrix, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
  out << matrix.size() << ' ' << matrix.dim() << '\n';
  for (std::size_t r = 0; r < matrix.size(); ++r) {
    out << matrix.tokens()[r];
    for (double v : matrix.input().row(r)) out << ' ' << format_double(v, 8);
    out << '\n';
  }
  if (!out) throw Error(ErrorCode::io, "write failed for " + path.string());
  const auto sidecar = bucket_sidecar(path);
  if (!matrix.subword()) {
    std::filesystem::remove(sidecar);
    return;
  }
  const auto& sw = *matrix.subword();
  std::ofstream side(sidecar, std::ios::binary);
  if (!side) throw Error(ErrorCode::io, "cannot write " + sidecar.string());
  side << sw.buckets << ' ' << matrix.dim() << ' ' << sw.min_n << ' ' << sw.max_n << '\n';
  for (std::size_t r = 0; r < sw.bucket_ids.size(); ++r) {
    side << sw.bucket_ids[r];
    for (double v : sw.vectors.row(r)) side << ' ' << format_double(v, 8);
    side << '\n';
  }
}

EmbeddingMatrix load_embeddings(const std::filesystem::path& path, Method method) {
  const std::string text = read_all(path);
  auto lines = split(text, '\n');
  if (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty()) throw Error(ErrorCode::bad_header, path.string() + ": missing header");
  const auto header = fields_of(lines[0]);
  if (header.size() != 2) throw Error(ErrorCode::bad_header, path.string() + ": header must be 'V dim'");
  const std::size_t V = parse_size(header[0], "vocabulary size");
  const std::size_t dim = parse_size(header[1], "dimension");
  if (dim == 0) throw Error(ErrorCode::bad_header, "dimension must be positive");
  if (lines.size() - 1 != V) {
    throw Error(ErrorCode::bad_header, path.string() + ": header declares " + std::to_string(V) + " rows, found " +
                                           std::to_string(lines.size() - 1));
  }
  std::vector<std::string> tokens;
  Matrix input(V, dim);
  for (std::size_t r = 0; r < V; ++r) {
    std::string_view line = lines[r + 1];
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    const auto f = fields_of(line);
    if (f.size() != dim + 1) {
      throw Error(ErrorCode::dim_mismatch, "line " + std::to_string(r + 2) + ": expected " + std::to_string(dim) +
                                               " values, got " + std::to_string(f.empty() ? 0 : f.size() - 1));
    }
    tokens.emplace_back(f[0]);
    for (std::size_t i = 0; i < dim; ++i) {
      try {
        input(r, i) = parse_double(f[i + 1]);
      } catch (const Error&) {
        throw Error(ErrorCode::dim_mismatch, "line " + std::to_string(r + 2) + ": bad value");
      }
    }
  }

  std::optional<SubwordTable> subword;
  const auto sidecar = bucket_sidecar(path);
  if (std::filesystem::exists(sidecar)) {
    method = Method::fasttext;
    const std::string side = read_all(sidecar);
    auto slines = split(side, '\n');
    if (!slines.empty() && slines.back().empty()) slines.pop_back();
    if (slines.empty()) throw Error(ErrorCode::bad_header, sidecar.string() + ": missing header");
    const auto h = fields_of(slines[0]);
    if (h.size() != 4) throw Error(ErrorCode::bad_header, sidecar.string() + ": header must be 'buckets dim min_n max_n'");
    SubwordTable table;
    table.buckets = static_cast<std::uint32_t>(parse_size(h[0], "bucket count"));
    if (parse_size(h[1], "dimension") != dim) throw Error(ErrorCode::dim_mismatch, "bucket file dimension differs");
    table.min_n = static_cast<int>(parse_size(h[2], "min_n"));
    table.max_n = static_cast<int>(parse_size(h[3], "max_n"));
    if (table.buckets == 0 || table.min_n < 1 || table.min_n > table.max_n) {
      throw Error(ErrorCode::bad_header, sidecar.string() + ": invalid subword parameters");
    }
    table.vectors = Matrix(slines.size() - 1, dim);
    for (std::size_t r = 1; r < slines.size(); ++r) {
      const auto f = fields_of(slines[r]);
      if (f.size() != dim + 1) {
        throw Error(ErrorCode::dim_mismatch, sidecar.string() + " line " + std::to_string(r + 1));
      }
      table.bucket_ids.push_back(static_cast<std::uint32_t>(parse_size(f[0], "bucket id")));
      for (std::size_t i = 0; i < dim; ++i) table.vectors(r - 1, i) = parse_double(f[i + 1]);
    }
    if (!std::is_sorted(table.bucket_ids.begin(), table.bucket_ids.end())) {
      throw Error(ErrorCode::bad_header, sidecar.string() + ": bucket ids must be ascending");
    }
    subword = std::move(table);
  } else if (method == Method::fasttext) {
    throw Error(ErrorCode::io, "fasttext embeddings need " + sidecar.string());
  }
  return EmbeddingMatrix(method, dim, 0, std::move(tokens), std::move(input), {}, std::move(subword));
}

}  // namespace rumil::embed
