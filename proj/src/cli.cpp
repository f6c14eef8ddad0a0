#include "rumil/cli.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "rumil/corpus.hpp"
#include "rumil/features.hpp"
#include "rumil/net.hpp"
#include "rumil/shallow.hpp"
#include "rumil/textnorm.hpp"

namespace rumil::cli {

using nlohmann::json;

// ---------------------------------------------------------------------------
// RunConfig

std::size_t RunConfig::effective_window() const {
  if (window) return *window;
  return method == "glove" ? 15 : 10;
}

int RunConfig::effective_epochs() const {
  if (epochs) return *epochs;
  if (subcommand == "train") return arch == "hybrid" ? 50 : 300;
  return 20;
}

double RunConfig::effective_lr() const {
  if (lr) return *lr;
  if (subcommand == "train") {
    if (arch == "lr") return 0.1;
    return 0.01;
  }
  return method == "glove" ? 0.05 : 0.025;
}

std::uint64_t RunConfig::effective_seed() const { return seed.value_or(1); }

embed::SgnsConfig RunConfig::sgns_config() const {
  embed::SgnsConfig c;
  c.dim = dim;
  c.window = effective_window();
  c.epochs = effective_epochs();
  c.negatives = negatives;
  c.lr = effective_lr();
  c.seed = effective_seed();
  c.threads = threads;
  c.min_n = min_n;
  c.max_n = max_n;
  c.buckets = buckets;
  return c;
}

embed::GloveConfig RunConfig::glove_config() const {
  embed::GloveConfig c;
  c.dim = dim;
  c.window = effective_window();
  c.epochs = effective_epochs();
  c.lr = effective_lr();
  c.x_max = x_max;
  c.alpha = alpha;
  c.seed = effective_seed();
  c.threads = threads;
  return c;
}

train::FitConfig RunConfig::fit_config() const {
  train::FitConfig c;
  c.epochs = effective_epochs();
  c.patience = patience;
  c.batch_size = batch;
  c.lr = effective_lr();
  c.clip_norm = clip;
  c.seed = effective_seed();
  return c;
}

corpus::SplitSpec RunConfig::split_spec() const {
  return {train_frac, val_frac, test_frac, effective_seed()};
}

// ---------------------------------------------------------------------------
// Command-line definition

namespace {

template <class T>
std::string shown(const T& v) {
  if constexpr (std::is_floating_point_v<T>) {
    return format_double(v);
  } else if constexpr (std::is_convertible_v<T, std::string>) {
    return std::string(v);
  } else {
    return std::to_string(v);
  }
}

template <class T>
std::string with_default(const std::string& text, const T& v) {
  return text + " (default: " + shown(v) + ")";
}

const std::vector<std::string> kMethods = {"w2v", "fasttext", "glove"};
const std::vector<std::string> kArchs = {"hybrid", "nb", "lr", "svm"};

struct Parser {
  RunConfig& cfg;
  RunConfig defaults;
  CLI::App app{"Roman Urdu sentiment toolkit: normalization, embeddings and classifiers", "rumil"};

  std::size_t window = 0;
  int epochs = 0;
  double lr = 0.0;
  std::uint64_t seed = 0;
  std::vector<CLI::Option*> window_opts, epochs_opts, lr_opts, seed_opts;

  explicit Parser(RunConfig& c) : cfg(c) { build(); }

  void input(CLI::App* s, const std::string& what) {
    s->add_option("-i,--input", cfg.input, what + " (default: standard input)");
  }
  CLI::Option* output(CLI::App* s, const std::string& what) {
    return s->add_option("-o,--output", cfg.output, what);
  }
  void rules(CLI::App* s) {
    s->add_option("--rules", cfg.rules, "rewrite rule file (default: bundled Roman Urdu rules)");
  }
  void min_count(CLI::App* s) {
    s->add_option("--min-count", cfg.min_count, with_default("drop tokens rarer than this", defaults.min_count));
  }
  void seed_flag(CLI::App* s) {
    seed_opts.push_back(
        s->add_option("--seed", seed, "random seed (default: $" + std::string(kSeedEnv) + ", else 1)"));
  }
  void method(CLI::App* s) {
    s->add_option("--method", cfg.method, with_default("embedding method: w2v|fasttext|glove", defaults.method))
        ->check(CLI::IsMember(kMethods));
  }

  void build() {
    app.require_subcommand(1);
    app.set_config("--config", "", "read options from a TOML/INI file; command-line flags take precedence");
    app.set_help_all_flag("--help-all", "print help for every subcommand");

    auto* norm = app.add_subcommand("normalize", "normalize raw text, one line in, one line out");
    input(norm, "raw text");
    output(norm, "normalized text (default: standard output)");
    rules(norm);

    auto* voc = app.add_subcommand("vocab", "build a vocabulary from a raw corpus");
    input(voc, "raw corpus, one document per line");
    output(voc, "vocabulary file (default: standard output)");
    rules(voc);
    min_count(voc);

    auto* emb = app.add_subcommand("embed", "train word embeddings on a raw corpus");
    input(emb, "raw corpus, one document per line");
    output(emb, "embedding file")->required();
    rules(emb);
    emb->add_option("--vocab", cfg.vocab, "existing vocabulary file (default: built from the corpus)");
    method(emb);
    emb->add_option("--dim", cfg.dim, with_default("vector dimension", defaults.dim));
    window_opts.push_back(emb->add_option("--window", window,
                                          "context window (default: 10 for w2v and fasttext, 15 for glove)"));
    epochs_opts.push_back(emb->add_option("--epochs", epochs, "training epochs (default: 20)"));
    min_count(emb);
    lr_opts.push_back(emb->add_option("--lr", lr, "initial learning rate (default: 0.025 for w2v and fasttext, 0.05 for glove)"));
    seed_flag(emb);
    emb->add_option("--threads", cfg.threads, with_default("worker threads; more than 1 is non-deterministic", defaults.threads));
    emb->add_option("--negatives", cfg.negatives, with_default("negative samples per pair", defaults.negatives));
    emb->add_option("--min-n", cfg.min_n, with_default("shortest fasttext character n-gram", defaults.min_n));
    emb->add_option("--max-n", cfg.max_n, with_default("longest fasttext character n-gram", defaults.max_n));
    emb->add_option("--buckets", cfg.buckets, with_default("fasttext n-gram hash buckets", defaults.buckets));
    emb->add_option("--x-max", cfg.x_max, with_default("glove weighting cutoff", defaults.x_max));
    emb->add_option("--alpha", cfg.alpha, with_default("glove weighting exponent", defaults.alpha));

    auto* near = app.add_subcommand("nearest", "list the nearest neighbours of a token");
    near->add_option("-e,--embeddings", cfg.embeddings, "embedding file")->required();
    method(near);
    near->add_option("-q,--query", cfg.query, "query token (normalized with the bundled rules)")->required();
    near->add_option("-k,--k", cfg.k, with_default("number of neighbours", defaults.k));

    auto* spl = app.add_subcommand("split", "stratified train/validation/test split of a labeled TSV");
    input(spl, "labeled TSV");
    output(spl, "output directory for train.tsv, val.tsv and test.tsv")->required();
    spl->add_option("--train-frac", cfg.train_frac, with_default("training share", defaults.train_frac));
    spl->add_option("--val-frac", cfg.val_frac, with_default("validation share", defaults.val_frac));
    spl->add_option("--test-frac", cfg.test_frac, with_default("test share", defaults.test_frac));
    seed_flag(spl);

    auto* tr = app.add_subcommand("train", "train a classifier");
    tr->add_option("--train", cfg.train_path, "training TSV")->required();
    tr->add_option("--val", cfg.val_path, "validation TSV (required for --arch hybrid)");
    output(tr, "model file")->required();
    rules(tr);
    tr->add_option("--vocab", cfg.vocab, "vocabulary file (default: built from the training set)");
    min_count(tr);
    tr->add_option("--max-len", cfg.max_len, with_default("sequence length after padding", defaults.max_len));
    tr->add_option("--arch", cfg.arch, with_default("classifier: hybrid|nb|lr|svm", defaults.arch))
        ->check(CLI::IsMember(kArchs));
    tr->add_option("--w2v", cfg.w2v, "word2vec embedding file (hybrid)");
    tr->add_option("--fasttext", cfg.fasttext, "fasttext embedding file (hybrid)");
    tr->add_option("--glove", cfg.glove, "glove embedding file (hybrid)");
    tr->add_option("--features", cfg.features, with_default("lr/svm features: tfidf|w2v|fasttext|glove", defaults.features))
        ->check(CLI::IsMember({"tfidf", "w2v", "fasttext", "glove"}));
    tr->add_option("--embeddings", cfg.embeddings, "embedding file for --features w2v|fasttext|glove");
    tr->add_option("--static-mode", cfg.static_mode, with_default("embedding tables: all (static) | mixed (static+non-static)", defaults.static_mode))
        ->check(CLI::IsMember({"all", "mixed"}));
    tr->add_option("--bigru", cfg.bigru, with_default("Bi-GRU layer: on|off", defaults.bigru))
        ->check(CLI::IsMember({"on", "off"}));
    tr->add_option("--hidden", cfg.hidden, with_default("channel GRU hidden size", defaults.hidden));
    tr->add_option("--bigru-hidden", cfg.bigru_hidden, with_default("Bi-GRU hidden size per direction", defaults.bigru_hidden));
    epochs_opts.push_back(tr->add_option("--epochs", epochs, "epoch cap (default: 50 for hybrid, 300 for lr and svm)"));
    tr->add_option("--patience", cfg.patience, with_default("early-stopping patience", defaults.patience));
    tr->add_option("--batch", cfg.batch, with_default("mini-batch size", defaults.batch));
    lr_opts.push_back(tr->add_option("--lr", lr, "learning rate (default: 0.01 for hybrid, 0.1 for lr, 0.01 for svm)"));
    tr->add_option("--clip", cfg.clip, with_default("gradient global-norm clip, 0 disables", defaults.clip));
    seed_flag(tr);
    tr->add_option("--history", cfg.history, "per-epoch history TSV");
    tr->add_option("--nb-alpha", cfg.nb_alpha, with_default("naive Bayes smoothing", defaults.nb_alpha));
    tr->add_option("--l2", cfg.l2, with_default("logistic regression L2 weight", defaults.l2));
    tr->add_option("--c", cfg.svm_c, with_default("SVM regularization constant", defaults.svm_c));

    auto* ev = app.add_subcommand("eval", "evaluate a model on a labeled TSV");
    ev->add_option("-m,--model", cfg.model, "model file")->required();
    ev->add_option("--test", cfg.test_path, "labeled TSV")->required();
    ev->add_option("--averaging", cfg.averaging, with_default("precision/recall/F1 averaging: macro|weighted", defaults.averaging))
        ->check(CLI::IsMember({"macro", "weighted"}));
    ev->add_option("--report-kv", cfg.report_kv, "also write key=value metrics to this file");

    auto* pr = app.add_subcommand("predict", "label text lines with a trained model");
    pr->add_option("-m,--model", cfg.model, "model file")->required();
    input(pr, "text, one instance per line");
    output(pr, "labels (default: standard output)");
  }

  static bool given(const std::vector<CLI::Option*>& opts) {
    for (auto* o : opts) {
      if (o->count() > 0) return true;
    }
    return false;
  }

  void finish(const std::optional<std::string>& env_seed) {
    for (auto* s : app.get_subcommands()) cfg.subcommand = s->get_name();
    if (given(window_opts)) cfg.window = window;
    if (given(epochs_opts)) cfg.epochs = epochs;
    if (given(lr_opts)) cfg.lr = lr;
    if (given(seed_opts)) {
      cfg.seed = seed;
    } else if (env_seed && !env_seed->empty()) {
      std::uint64_t v = 0;
      auto [p, ec] = std::from_chars(env_seed->data(), env_seed->data() + env_seed->size(), v);
      if (ec != std::errc() || p != env_seed->data() + env_seed->size()) {
        throw Error(ErrorCode::usage, std::string(kSeedEnv) + " is not an unsigned integer: " + *env_seed);
      }
      cfg.seed = v;
    }
    if (cfg.dim == 0) throw Error(ErrorCode::usage, "--dim must be positive");
    if (cfg.window && *cfg.window == 0) throw Error(ErrorCode::usage, "--window must be positive");
    if (cfg.epochs && *cfg.epochs <= 0) throw Error(ErrorCode::usage, "--epochs must be positive");
    if (cfg.batch == 0) throw Error(ErrorCode::usage, "--batch must be positive");
    if (cfg.max_len == 0) throw Error(ErrorCode::usage, "--max-len must be positive");
    if (cfg.k == 0) throw Error(ErrorCode::usage, "--k must be positive");
    if (cfg.threads < 1) throw Error(ErrorCode::usage, "--threads must be at least 1");
    if (cfg.min_n < 1 || cfg.min_n > cfg.max_n) throw Error(ErrorCode::usage, "need 1 <= --min-n <= --max-n");
    if (cfg.buckets == 0) throw Error(ErrorCode::usage, "--buckets must be positive");
    if (cfg.patience < 1) throw Error(ErrorCode::usage, "--patience must be at least 1");
    if (cfg.subcommand == "split") cfg.split_spec().validate();
  }
};

}  // namespace

std::optional<RunConfig> parse_command_line(const std::vector<std::string>& args, std::ostream& out,
                                            std::optional<std::string> env_seed) {
  RunConfig cfg;
  Parser p(cfg);
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    p.app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    CLI::App* target = &p.app;
    for (auto* s : p.app.get_subcommands()) target = s;
    out << target->help();
    return std::nullopt;
  } catch (const CLI::CallForAllHelp&) {
    out << p.app.help("", CLI::AppFormatMode::All);
    return std::nullopt;
  } catch (const CLI::ParseError& e) {
    throw Error(ErrorCode::usage, e.what());
  }
  p.finish(env_seed);
  return cfg;
}

std::string help_text(const std::string& subcommand) {
  RunConfig cfg;
  Parser p(cfg);
  if (subcommand.empty()) return p.app.help();
  return p.app.get_subcommand(subcommand)->help();
}

// ---------------------------------------------------------------------------
// Commands

namespace {

struct Streams {
  std::istream& in;
  std::ostream& out;
  std::ostream& err;
};

textnorm::RuleSet load_rules(const RunConfig& cfg) {
  return cfg.rules.empty() ? textnorm::builtin_rules() : textnorm::RuleSet::load(cfg.rules);
}

template <class F>
void with_input(const RunConfig& cfg, std::istream& fallback, F&& f) {
  if (cfg.input.empty() || cfg.input == "-") {
    f(fallback);
    return;
  }
  std::ifstream in(cfg.input);
  if (!in) throw Error(ErrorCode::io, "cannot open " + cfg.input);
  f(in);
}

template <class F>
void with_output(const std::string& path, std::ostream& fallback, F&& f) {
  if (path.empty() || path == "-") {
    f(fallback);
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path);
  f(out);
  if (!out) throw Error(ErrorCode::io, "write failed for " + path);
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int cmd_normalize(const RunConfig& cfg, Streams io) {
  const auto rules = load_rules(cfg);
  with_input(cfg, io.in, [&](std::istream& in) {
    with_output(cfg.output, io.out, [&](std::ostream& out) {
      std::string line;
      while (std::getline(in, line)) out << textnorm::normalize_line(line, rules) << '\n';
    });
  });
  return 0;
}

int cmd_vocab(const RunConfig& cfg, Streams io) {
  const auto rules = load_rules(cfg);
  std::vector<std::vector<std::string>> docs;
  with_input(cfg, io.in, [&](std::istream& in) { docs = corpus::read_corpus(in, rules); });
  const auto vocab = corpus::build_vocab(docs, cfg.min_count);
  with_output(cfg.output, io.out, [&](std::ostream& out) { out << vocab.to_text(); });
  io.err << "vocabulary: " << vocab.word_count() << " tokens (min-count " << cfg.min_count << ")\n";
  return 0;
}

int cmd_embed(const RunConfig& cfg, Streams io) {
  const auto rules = load_rules(cfg);
  std::vector<std::vector<std::string>> docs;
  with_input(cfg, io.in, [&](std::istream& in) { docs = corpus::read_corpus(in, rules); });
  const auto vocab = cfg.vocab.empty() ? corpus::build_vocab(docs, cfg.min_count) : corpus::Vocabulary::load(cfg.vocab);
  const auto encoded = embed::encode_corpus(docs, vocab);
  const auto method = embed::parse_method(cfg.method);
  embed::TrainedEmbedding trained;
  switch (method) {
    case embed::Method::w2v:
      trained = embed::train_cbow(encoded, vocab, cfg.sgns_config());
      break;
    case embed::Method::fasttext:
      trained = embed::train_fasttext(encoded, vocab, cfg.sgns_config());
      break;
    case embed::Method::glove: {
      const auto cooc = embed::build_cooc(encoded, vocab.word_count(), cfg.effective_window());
      trained = embed::train_glove(cooc, embed::vocab_words(vocab), cfg.glove_config());
      break;
    }
  }
  for (std::size_t e = 0; e < trained.epoch_loss.size(); ++e) {
    io.err << "epoch " << e + 1 << " loss " << format_double(trained.epoch_loss[e], 8) << '\n';
  }
  embed::save_embeddings(trained.matrix, cfg.output);
  return 0;
}

int cmd_nearest(const RunConfig& cfg, Streams io) {
  const auto matrix = embed::load_embeddings(cfg.embeddings, embed::parse_method(cfg.method));
  const auto tokens = textnorm::normalize_document(cfg.query, textnorm::builtin_rules());
  const std::string query = tokens.size() == 1 ? tokens[0] : cfg.query;
  auto v = matrix.vector(query);
  if (!v) throw Error(ErrorCode::zero_query, "no vector for '" + query + "'");
  const std::string exclude[] = {query};
  char buf[64];
  for (const auto& n : embed::nearest(*v, matrix, cfg.k, exclude)) {
    std::snprintf(buf, sizeof buf, "%.6f", n.cosine);
    io.out << n.token << '\t' << buf << '\n';
  }
  return 0;
}

int cmd_split(const RunConfig& cfg, Streams io) {
  std::vector<corpus::LabeledRow> rows;
  with_input(cfg, io.in, [&](std::istream& in) { rows = corpus::read_labeled_rows(in); });
  std::vector<int> labels;
  for (const auto& r : rows) labels.push_back(r.label);
  const auto parts = corpus::stratified_split_indices(labels, cfg.split_spec());
  const std::filesystem::path dir(cfg.output);
  std::filesystem::create_directories(dir);
  const std::pair<const char*, const std::vector<std::size_t>*> files[] = {
      {"train.tsv", &parts.train}, {"val.tsv", &parts.val}, {"test.tsv", &parts.test}};
  for (const auto& [name, idx] : files) {
    with_output((dir / name).string(), io.out, [&](std::ostream& out) {
      for (auto i : *idx) out << rows[i].text << '\t' << corpus::kLabelNames[static_cast<std::size_t>(rows[i].label)] << '\n';
    });
    io.err << name << ": " << idx->size() << " rows\n";
  }
  return 0;
}

// Shallow bundles ------------------------------------------------------------

struct ShallowPipeline {
  shallow::ShallowModel model;
  corpus::Vocabulary vocab;
  textnorm::RuleSet rules;
  std::string rules_text;
  std::string features;  // counts | tfidf | w2v | fasttext | glove
  features::TfidfModel tfidf;
  std::string embeddings;
  std::optional<embed::EmbeddingMatrix> matrix;

  features::SparseVector featurize(std::span<const std::string> tokens) const {
    if (matrix) return features::from_dense(embed::doc_embed(tokens, *matrix));
    const auto ids = vocab.encode(tokens);
    if (features == "tfidf") return features::transform_tfidf(ids, tfidf);
    return features::count_vector(ids, vocab.size());
  }

  json to_json() const {
    json j;
    j["format"] = "rumil-shallow-bundle";
    j["version"] = 1;
    j["model"] = json::parse(shallow::to_json(model));
    j["vocabulary"] = vocab.to_text();
    j["rules"] = rules_text;
    j["features"] = features;
    if (features == "tfidf") {
      j["tfidf"] = {{"num_docs", tfidf.num_docs}, {"df", tfidf.df}};
    }
    if (matrix) j["embeddings"] = embeddings;
    return j;
  }

  static ShallowPipeline from_json(const json& j) {
    if (j.at("format") != "rumil-shallow-bundle") throw Error(ErrorCode::bad_header, "not a rumil model file");
    ShallowPipeline p;
    p.model = shallow::from_json(j.at("model").dump());
    p.vocab = corpus::Vocabulary::parse(j.at("vocabulary").get<std::string>());
    p.rules_text = j.at("rules").get<std::string>();
    p.rules = textnorm::RuleSet::parse(p.rules_text);
    p.features = j.at("features").get<std::string>();
    if (p.features == "tfidf") {
      p.tfidf.num_docs = j.at("tfidf").at("num_docs").get<std::size_t>();
      p.tfidf.df = j.at("tfidf").at("df").get<std::vector<std::int64_t>>();
      const double n = static_cast<double>(p.tfidf.num_docs);
      for (auto df : p.tfidf.df) p.tfidf.idf.push_back(std::log((1.0 + n) / (1.0 + static_cast<double>(df))) + 1.0);
    } else if (p.features != "counts") {
      p.embeddings = j.at("embeddings").get<std::string>();
      p.matrix = embed::load_embeddings(p.embeddings, embed::parse_method(p.features));
    }
    return p;
  }
};

corpus::Vocabulary training_vocab(const RunConfig& cfg, std::span<const corpus::LabeledRow> rows,
                                  const textnorm::RuleSet& rules) {
  if (!cfg.vocab.empty()) return corpus::Vocabulary::load(cfg.vocab);
  std::vector<std::vector<std::string>> docs;
  for (const auto& r : rows) docs.push_back(textnorm::normalize_document(r.text, rules));
  return corpus::build_vocab(docs, cfg.min_count);
}

int train_shallow(const RunConfig& cfg, Streams io, const std::vector<corpus::LabeledRow>& rows,
                  const textnorm::RuleSet& rules) {
  ShallowPipeline p;
  p.vocab = training_vocab(cfg, rows, rules);
  p.rules_text = rules.to_text();
  const auto kind = shallow::parse_kind(cfg.arch);
  p.features = kind == shallow::Kind::nb ? "counts" : cfg.features;
  if (p.features != "counts" && p.features != "tfidf") {
    if (cfg.embeddings.empty()) throw Error(ErrorCode::usage, "--features " + p.features + " needs --embeddings");
    p.embeddings = std::filesystem::absolute(cfg.embeddings).string();
    p.matrix = embed::load_embeddings(p.embeddings, embed::parse_method(p.features));
  }
  std::vector<std::vector<std::string>> tokens;
  std::vector<std::vector<corpus::TokenId>> ids;
  std::vector<int> labels;
  for (const auto& r : rows) {
    tokens.push_back(textnorm::normalize_document(r.text, rules));
    ids.push_back(p.vocab.encode(tokens.back()));
    labels.push_back(r.label);
  }
  if (p.features == "tfidf") p.tfidf = features::fit_tfidf(ids, p.vocab.size());
  std::vector<features::SparseVector> x;
  for (const auto& t : tokens) x.push_back(p.featurize(t));

  std::vector<double> history;
  switch (kind) {
    case shallow::Kind::nb:
      p.model = shallow::nb_fit(x, labels, {cfg.nb_alpha});
      break;
    case shallow::Kind::lr: {
      auto fit = shallow::lr_fit(x, labels, {cfg.l2, cfg.effective_lr(), cfg.effective_epochs()});
      p.model = std::move(fit.model);
      history = std::move(fit.loss_history);
      break;
    }
    case shallow::Kind::svm: {
      auto fit = shallow::svm_fit(x, labels, {cfg.svm_c, cfg.effective_lr(), cfg.effective_epochs(), cfg.effective_seed()});
      p.model = std::move(fit.model);
      history = std::move(fit.loss_history);
      break;
    }
  }
  if (!history.empty()) {
    io.err << "loss " << format_double(history.front(), 8) << " -> " << format_double(history.back(), 8) << '\n';
  }
  if (!cfg.history.empty()) {
    with_output(cfg.history, io.out, [&](std::ostream& out) {
      for (std::size_t e = 0; e < history.size(); ++e) out << e + 1 << '\t' << format_double(history[e]) << '\n';
    });
  }
  with_output(cfg.output, io.out, [&](std::ostream& out) { out << p.to_json().dump(1) << '\n'; });
  return 0;
}

corpus::LabeledDataset drop_all_pad(const corpus::LabeledDataset& data, const std::string& what, std::ostream& err) {
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (net::sequence_length(data.sequences[i]) > 0) keep.push_back(i);
  }
  if (keep.size() != data.size()) {
    err << "warning: skipped " << data.size() - keep.size() << " " << what << " rows with no tokens\n";
  }
  return data.subset(keep);
}

int train_hybrid(const RunConfig& cfg, Streams io, const std::vector<corpus::LabeledRow>& rows,
                 const textnorm::RuleSet& rules) {
  if (cfg.val_path.empty()) throw Error(ErrorCode::usage, "--arch hybrid needs --val");
  if (cfg.w2v.empty() || cfg.fasttext.empty() || cfg.glove.empty()) {
    throw Error(ErrorCode::usage, "--arch hybrid needs --w2v, --fasttext and --glove embedding files");
  }
  const auto vocab = training_vocab(cfg, rows, rules);
  const auto val_rows = corpus::read_labeled_rows(std::filesystem::path(cfg.val_path));
  const auto train_set = drop_all_pad(corpus::encode_rows(rows, vocab, cfg.max_len, rules), "training", io.err);
  const auto val_set = drop_all_pad(corpus::encode_rows(val_rows, vocab, cfg.max_len, rules), "validation", io.err);

  const std::string paths[net::kChannels] = {cfg.w2v, cfg.fasttext, cfg.glove};
  std::array<Matrix, net::kChannels> tables;
  for (std::size_t ch = 0; ch < net::kChannels; ++ch) {
    const auto m = embed::load_embeddings(paths[ch], net::kChannelSources[ch]);
    tables[ch] = net::embedding_table(m, vocab, cfg.effective_seed() + 101 * (ch + 1));
  }
  net::ModelConfig mc;
  mc.static_mode = net::parse_static_mode(cfg.static_mode);
  mc.use_bigru = cfg.bigru == "on";
  mc.hidden = cfg.hidden;
  mc.bigru_hidden = cfg.bigru_hidden;
  auto model = net::make_hybrid(mc, std::move(tables), cfg.effective_seed());

  train::FitHooks hooks;
  hooks.log = [&](const std::string& line) { io.err << line << '\n'; };
  auto result = train::fit(std::move(model), train_set, val_set, cfg.fit_config(), hooks);
  io.err << "best epoch " << result.best_epoch << " val_loss " << format_double(result.best_val_loss, 8)
         << (result.early_stopped ? " (early stop)" : "") << '\n';
  if (!cfg.history.empty()) train::write_history(result.history, cfg.history);
  net::save_checkpoint({std::move(result.best), vocab, rules.to_text(), cfg.max_len}, cfg.output);
  return 0;
}

int cmd_train(const RunConfig& cfg, Streams io) {
  const auto rules = load_rules(cfg);
  const auto rows = corpus::read_labeled_rows(std::filesystem::path(cfg.train_path));
  if (rows.empty()) throw Error(ErrorCode::empty_split, "training file has no rows");
  if (cfg.arch == "hybrid") return train_hybrid(cfg, io, rows, rules);
  return train_shallow(cfg, io, rows, rules);
}

// Loaded models ---------------------------------------------------------------

struct Prediction {
  int label = 0;
  bool all_pad = false;
};

struct LoadedModel {
  std::optional<net::Checkpoint> hybrid;
  std::optional<ShallowPipeline> shallow;
  textnorm::RuleSet rules;

  Prediction predict(std::string_view text) const {
    const auto tokens = textnorm::normalize_document(text, rules);
    if (shallow) return {shallow::shallow_predict(shallow->model, shallow->featurize(tokens)), tokens.empty()};
    const auto ids = corpus::pad_to(hybrid->vocab.encode(tokens), hybrid->max_len);
    if (net::sequence_length(ids) == 0) return {train::argmax(net::bias_only_probs(hybrid->model)), true};
    const std::vector<std::vector<corpus::TokenId>> batch{ids};
    return {train::argmax(net::model_forward(hybrid->model, batch).row(0)), false};
  }
};

LoadedModel load_model(const std::string& path) {
  LoadedModel m;
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw Error(ErrorCode::io, "cannot open " + path);
  char head[8] = {};
  probe.read(head, sizeof head);
  if (probe.gcount() == 8 && std::string_view(head, 8) == "RUMILCK1") {
    m.hybrid = net::load_checkpoint(path);
    m.rules = textnorm::RuleSet::parse(m.hybrid->rules_text);
    return m;
  }
  json j;
  try {
    j = json::parse(read_file(path));
    m.shallow = ShallowPipeline::from_json(j);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::bad_header, path + " is not a rumil model: " + e.what());
  }
  m.rules = m.shallow->rules;
  return m;
}

int cmd_eval(const RunConfig& cfg, Streams io) {
  const auto model = load_model(cfg.model);
  const auto averaging = train::parse_averaging(cfg.averaging);
  train::EvaluationReport report;
  if (model.hybrid) {
    const auto data = corpus::load_labeled_tsv(cfg.test_path, model.hybrid->vocab, model.hybrid->max_len, model.rules);
    report = train::evaluate(model.hybrid->model, data, averaging);
  } else {
    const auto rows = corpus::read_labeled_rows(std::filesystem::path(cfg.test_path));
    std::vector<int> truth, pred;
    for (const auto& r : rows) {
      truth.push_back(r.label);
      pred.push_back(model.predict(r.text).label);
    }
    report = train::evaluate(truth, pred, averaging);
  }
  io.out << train::format_report(report);
  if (!cfg.report_kv.empty()) {
    with_output(cfg.report_kv, io.out, [&](std::ostream& out) { out << train::format_report_kv(report); });
  }
  return 0;
}

int cmd_predict(const RunConfig& cfg, Streams io) {
  const auto model = load_model(cfg.model);
  with_input(cfg, io.in, [&](std::istream& in) {
    with_output(cfg.output, io.out, [&](std::ostream& out) {
      std::string line;
      std::size_t n = 0;
      while (std::getline(in, line)) {
        ++n;
        const auto p = model.predict(line);
        out << corpus::kLabelNames[static_cast<std::size_t>(p.label)];
        if (p.all_pad) {
          out << "\tall-pad";
          io.err << "warning: line " << n << " has no tokens; label comes from the output bias alone\n";
        }
        out << '\n';
      }
    });
  });
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
  std::optional<RunConfig> cfg;
  try {
    const char* env = std::getenv(kSeedEnv);
    cfg = parse_command_line(args, out, env ? std::optional<std::string>(env) : std::nullopt);
    if (!cfg) return 0;
    const Streams io{in, out, err};
    const std::string& sub = cfg->subcommand;
    if (sub == "normalize") return cmd_normalize(*cfg, io);
    if (sub == "vocab") return cmd_vocab(*cfg, io);
    if (sub == "embed") return cmd_embed(*cfg, io);
    if (sub == "nearest") return cmd_nearest(*cfg, io);
    if (sub == "split") return cmd_split(*cfg, io);
    if (sub == "train") return cmd_train(*cfg, io);
    if (sub == "eval") return cmd_eval(*cfg, io);
    if (sub == "predict") return cmd_predict(*cfg, io);
    throw Error(ErrorCode::usage, "unknown subcommand " + sub);
  } catch (const Error& e) {
    err << "rumil: " << e.what() << '\n';
    if (e.code() == ErrorCode::usage) err << "run 'rumil --help' for usage\n";
    return e.code() == ErrorCode::usage ? 1 : 2;
  } catch (const std::exception& e) {
    err << "rumil: " << e.what() << '\n';
    return 2;
  }
}

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cin, std::cout, std::cerr);
}

}  // namespace rumil::cli
