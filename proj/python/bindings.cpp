#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <optional>
#include <sstream>

#include "rumil/cli.hpp"
#include "rumil/corpus.hpp"
#include "rumil/embed.hpp"
#include "rumil/features.hpp"
#include "rumil/net.hpp"
#include "rumil/shallow.hpp"
#include "rumil/textnorm.hpp"
#include "rumil/train.hpp"

namespace py = pybind11;
using namespace rumil;

namespace {

using Docs = std::vector<std::vector<std::string>>;

textnorm::RuleSet rules_of(const std::optional<std::string>& text) {
  return text ? textnorm::RuleSet::parse(*text) : textnorm::builtin_rules();
}

Docs normalize_all(const std::vector<std::string>& texts, const textnorm::RuleSet& rules) {
  Docs docs;
  docs.reserve(texts.size());
  for (const auto& t : texts) docs.push_back(textnorm::normalize_document(t, rules));
  return docs;
}

py::array_t<double> to_numpy(const Matrix& m) {
  py::array_t<double> out({m.rows(), m.cols()});
  std::copy(m.flat().begin(), m.flat().end(), out.mutable_data());
  return out;
}

// TF-IDF baseline over normalized text.
struct Shallow {
  shallow::ShallowModel model;
  corpus::Vocabulary vocab;
  features::TfidfModel tfidf;
  textnorm::RuleSet rules;

  features::SparseVector featurize(const std::string& text) const {
    const auto ids = vocab.encode(textnorm::normalize_document(text, rules));
    return model.kind == shallow::Kind::nb ? features::count_vector(ids, vocab.size())
                                           : features::transform_tfidf(ids, tfidf);
  }
  std::vector<int> predict(const std::vector<std::string>& texts) const {
    std::vector<int> out;
    for (const auto& t : texts) out.push_back(shallow::shallow_predict(model, featurize(t)));
    return out;
  }
};

Shallow fit_shallow(const std::vector<std::string>& texts, const std::vector<int>& labels, const std::string& kind,
                    std::int64_t min_count, const std::optional<std::string>& rules_text, double alpha, double l2,
                    double c, std::optional<int> epochs, std::optional<double> lr, std::uint64_t seed) {
  Shallow s;
  s.rules = rules_of(rules_text);
  const auto docs = normalize_all(texts, s.rules);
  s.vocab = corpus::build_vocab(docs, min_count);
  std::vector<std::vector<corpus::TokenId>> ids;
  for (const auto& d : docs) ids.push_back(s.vocab.encode(d));
  s.tfidf = features::fit_tfidf(ids, s.vocab.size());
  const auto k = shallow::parse_kind(kind);
  std::vector<features::SparseVector> x;
  for (const auto& d : ids) {
    x.push_back(k == shallow::Kind::nb ? features::count_vector(d, s.vocab.size()) : features::transform_tfidf(d, s.tfidf));
  }
  if (k == shallow::Kind::nb) {
    s.model = shallow::nb_fit(x, labels, {alpha});
  } else if (k == shallow::Kind::lr) {
    shallow::LrConfig cfg;
    cfg.l2 = l2;
    if (epochs) cfg.epochs = *epochs;
    if (lr) cfg.lr = *lr;
    s.model = shallow::lr_fit(x, labels, cfg).model;
  } else {
    shallow::SvmConfig cfg;
    cfg.c = c;
    cfg.seed = seed;
    if (epochs) cfg.epochs = *epochs;
    if (lr) cfg.lr = *lr;
    s.model = shallow::svm_fit(x, labels, cfg).model;
  }
  return s;
}

struct Hybrid {
  net::Checkpoint ck;
  textnorm::RuleSet rules;

  explicit Hybrid(const std::filesystem::path& path) : ck(net::load_checkpoint(path)) {
    rules = textnorm::RuleSet::parse(ck.rules_text);
  }
  // Lines without tokens fall back to the output bias, as the CLI does.
  std::vector<int> predict(const std::vector<std::string>& texts) const {
    std::vector<int> out;
    for (const auto& t : texts) {
      const auto ids = corpus::pad_to(ck.vocab.encode(textnorm::normalize_document(t, rules)), ck.max_len);
      if (net::sequence_length(ids) == 0) {
        out.push_back(train::argmax(net::bias_only_probs(ck.model)));
      } else {
        const std::vector<std::vector<corpus::TokenId>> batch = {ids};
        out.push_back(train::predict_labels(ck.model, batch).front());
      }
    }
    return out;
  }
  py::array_t<double> probabilities(const std::vector<std::string>& texts) const {
    std::vector<std::vector<corpus::TokenId>> batch;
    for (const auto& t : texts) {
      batch.push_back(corpus::pad_to(ck.vocab.encode(textnorm::normalize_document(t, rules)), ck.max_len));
    }
    return to_numpy(net::model_forward(ck.model, batch));
  }
};

py::dict report_dict(const train::EvaluationReport& r) {
  py::dict d;
  d["count"] = r.count;
  d["averaging"] = std::string(train::averaging_name(r.averaging));
  d["accuracy"] = r.accuracy;
  d["precision"] = r.macro_precision;
  d["recall"] = r.macro_recall;
  d["f1"] = r.macro_f1;
  d["per_class_precision"] = std::vector<double>(r.precision.begin(), r.precision.end());
  d["per_class_recall"] = std::vector<double>(r.recall.begin(), r.recall.end());
  d["per_class_f1"] = std::vector<double>(r.f1.begin(), r.f1.end());
  std::vector<std::vector<std::size_t>> confusion;
  for (const auto& row : r.confusion) confusion.emplace_back(row.begin(), row.end());
  d["confusion"] = confusion;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Roman Urdu sentiment toolkit";
  static py::exception<Error> rumil_error(m, "RumilError", PyExc_ValueError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::set_error(rumil_error, e.what());
    }
  });

  m.attr("BUILTIN_RULES") = std::string(textnorm::builtin_rules_text());
  m.attr("LABELS") = std::vector<std::string>(corpus::kLabelNames.begin(), corpus::kLabelNames.end());

  m.def("tokenize", [](const std::string& s) { return textnorm::tokenize(s); });
  m.def("collapse_stress", [](const std::string& s) { return textnorm::collapse_stress(s); });
  m.def(
      "normalize", [](const std::string& s, const std::optional<std::string>& rules) {
        return textnorm::normalize_line(s, rules_of(rules));
      },
      py::arg("text"), py::arg("rules") = py::none());
  m.def(
      "normalize_tokens", [](const std::string& s, const std::optional<std::string>& rules) {
        return textnorm::normalize_document(s, rules_of(rules));
      },
      py::arg("text"), py::arg("rules") = py::none());

  py::class_<corpus::Vocabulary>(m, "Vocabulary")
      .def_static("load", &corpus::Vocabulary::load)
      .def("save", &corpus::Vocabulary::save)
      .def("__len__", &corpus::Vocabulary::size)
      .def("__contains__", [](const corpus::Vocabulary& v, const std::string& t) { return v.contains(t); })
      .def("id", [](const corpus::Vocabulary& v, const std::string& t) { return v.id(t); })
      .def("encode", [](const corpus::Vocabulary& v, const std::vector<std::string>& t) { return v.encode(t); })
      .def_property_readonly("tokens", &corpus::Vocabulary::tokens)
      .def_property_readonly("counts", &corpus::Vocabulary::counts)
      .def("__eq__", [](const corpus::Vocabulary& a, const corpus::Vocabulary& b) { return a == b; });

  m.def(
      "build_vocab", [](const Docs& docs, std::int64_t min_count) { return corpus::build_vocab(docs, min_count); },
      py::arg("documents"), py::arg("min_count") = 5);

  py::class_<embed::EmbeddingMatrix>(m, "Embeddings")
      .def_property_readonly("method", [](const embed::EmbeddingMatrix& e) { return std::string(embed::method_name(e.method())); })
      .def_property_readonly("dim", &embed::EmbeddingMatrix::dim)
      .def_property_readonly("window", &embed::EmbeddingMatrix::window)
      .def_property_readonly("tokens", &embed::EmbeddingMatrix::tokens)
      .def("__len__", &embed::EmbeddingMatrix::size)
      .def("vector", [](const embed::EmbeddingMatrix& e, const std::string& t) { return e.vector(t); })
      .def("vectors", [](const embed::EmbeddingMatrix& e) { return to_numpy(e.composed()); })
      .def(
          "nearest",
          [](const embed::EmbeddingMatrix& e, const std::string& token, std::size_t k) {
            const auto v = e.vector(token);
            if (!v) throw Error(ErrorCode::zero_query, "no vector for '" + token + "'");
            const std::vector<std::string> exclude = {token};
            std::vector<std::pair<std::string, double>> out;
            for (const auto& n : embed::nearest(*v, e, k, exclude)) out.emplace_back(n.token, n.cosine);
            return out;
          },
          py::arg("token"), py::arg("k") = 10)
      .def("save", [](const embed::EmbeddingMatrix& e, const std::filesystem::path& p) { embed::save_embeddings(e, p); });

  m.def(
      "load_embeddings",
      [](const std::filesystem::path& p, const std::string& method) {
        return embed::load_embeddings(p, embed::parse_method(method));
      },
      py::arg("path"), py::arg("method") = "w2v");

  m.def(
      "train_embeddings",
      [](const Docs& docs, const std::string& method, std::size_t dim, std::optional<std::size_t> window, int epochs,
         std::int64_t min_count, std::optional<double> lr, std::uint64_t seed, std::uint32_t buckets) {
        const auto meth = embed::parse_method(method);
        const auto vocab = corpus::build_vocab(docs, min_count);
        const auto encoded = embed::encode_corpus(docs, vocab);
        embed::TrainedEmbedding t;
        {
          py::gil_scoped_release release;
          if (meth == embed::Method::glove) {
            embed::GloveConfig cfg;
            cfg.dim = dim;
            cfg.epochs = epochs;
            cfg.seed = seed;
            if (window) cfg.window = *window;
            if (lr) cfg.lr = *lr;
            t = embed::train_glove(embed::build_cooc(encoded, vocab.word_count(), cfg.window), embed::vocab_words(vocab), cfg);
          } else {
            embed::SgnsConfig cfg;
            cfg.dim = dim;
            cfg.epochs = epochs;
            cfg.seed = seed;
            cfg.buckets = buckets;
            if (window) cfg.window = *window;
            if (lr) cfg.lr = *lr;
            t = meth == embed::Method::w2v ? embed::train_cbow(encoded, vocab, cfg) : embed::train_fasttext(encoded, vocab, cfg);
          }
        }
        return py::make_tuple(t.matrix, t.epoch_loss);
      },
      py::arg("documents"), py::arg("method") = "w2v", py::arg("dim") = 200, py::arg("window") = py::none(),
      py::arg("epochs") = 20, py::arg("min_count") = 5, py::arg("lr") = py::none(), py::arg("seed") = 1,
      py::arg("buckets") = 1u << 21);

  py::class_<Shallow>(m, "ShallowModel")
      .def_property_readonly("kind", [](const Shallow& s) { return std::string(shallow::kind_name(s.model.kind)); })
      .def_property_readonly("vocabulary", [](const Shallow& s) { return s.vocab; })
      .def("predict", &Shallow::predict)
      .def("weights", [](const Shallow& s) { return to_numpy(s.model.weights); });

  m.def("fit_shallow", &fit_shallow, py::arg("texts"), py::arg("labels"), py::arg("kind") = "lr",
        py::arg("min_count") = 1, py::arg("rules") = py::none(), py::arg("alpha") = 1.0, py::arg("l2") = 1e-4,
        py::arg("c") = 1.0, py::arg("epochs") = py::none(), py::arg("lr") = py::none(), py::arg("seed") = 1);

  py::class_<Hybrid>(m, "HybridModel")
      .def(py::init<const std::filesystem::path&>(), py::arg("checkpoint"))
      .def_property_readonly("max_len", [](const Hybrid& h) { return h.ck.max_len; })
      .def_property_readonly("vocabulary", [](const Hybrid& h) { return h.ck.vocab; })
      .def_property_readonly("static_mode", [](const Hybrid& h) { return std::string(net::static_mode_name(h.ck.model.config.static_mode)); })
      .def_property_readonly("bigru", [](const Hybrid& h) { return h.ck.model.config.use_bigru; })
      .def("tensor_names", [](const Hybrid& h) {
        std::vector<std::string> names;
        for (const auto& t : net::tensor_inventory(h.ck.model)) names.push_back(t.name);
        return names;
      })
      .def("predict", &Hybrid::predict)
      .def("probabilities", &Hybrid::probabilities);

  m.def(
      "evaluate",
      [](const std::vector<int>& truth, const std::vector<int>& pred, const std::string& averaging) {
        return report_dict(train::evaluate(truth, pred, train::parse_averaging(averaging)));
      },
      py::arg("y_true"), py::arg("y_pred"), py::arg("averaging") = "macro");

  m.def(
      "stratified_split",
      [](const std::vector<int>& labels, double train_frac, double val_frac, double test_frac, std::uint64_t seed) {
        const auto s = corpus::stratified_split_indices(labels, {train_frac, val_frac, test_frac, seed});
        return py::make_tuple(s.train, s.val, s.test);
      },
      py::arg("labels"), py::arg("train") = 0.6, py::arg("val") = 0.1, py::arg("test") = 0.3, py::arg("seed") = 1);

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args, const std::string& input) {
        std::istringstream in(input);
        std::ostringstream out, err;
        int code;
        {
          py::gil_scoped_release release;
          code = cli::run(args, in, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), py::arg("stdin") = "");
}
