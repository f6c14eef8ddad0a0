#include "rumil/shallow.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace rumil::shallow {
namespace {

constexpr int kClasses = corpus::kNumClasses;

void check_inputs(std::span<const features::SparseVector> x, std::span<const int> labels) {
  if (x.empty()) throw Error(ErrorCode::empty_split, "no training instances");
  if (x.size() != labels.size()) throw Error(ErrorCode::dim_mismatch, "feature/label count mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i].dim != x[0].dim) throw Error(ErrorCode::dim_mismatch, "feature vectors differ in dimension");
    if (labels[i] < 0 || labels[i] >= kClasses) throw Error(ErrorCode::bad_label, "label out of range");
  }
}

double sparse_dot(std::span<const double> w, const features::SparseVector& x) {
  double s = 0.0;
  for (std::size_t k = 0; k < x.nnz(); ++k) s += w[x.index[k]] * x.value[k];
  return s;
}

std::array<double, kClasses> softmax3(const std::array<double, kClasses>& z) {
  const double m = std::max({z[0], z[1], z[2]});
  std::array<double, kClasses> p{};
  double sum = 0.0;
  for (int c = 0; c < kClasses; ++c) sum += p[c] = std::exp(z[c] - m);
  for (auto& v : p) v /= sum;
  return p;
}

}  // namespace

std::string_view kind_name(Kind k) noexcept {
  switch (k) {
    case Kind::nb: return "nb";
    case Kind::lr: return "lr";
    case Kind::svm: return "svm";
  }
  return "lr";
}

Kind parse_kind(std::string_view name) {
  if (name == "nb") return Kind::nb;
  if (name == "lr") return Kind::lr;
  if (name == "svm") return Kind::svm;
  throw Error(ErrorCode::usage, "unknown shallow classifier '" + std::string(name) + "'");
}

ShallowModel ShallowModel::zeros(Kind kind, std::size_t dim) {
  return {kind, dim, Matrix(kClasses, dim, 0.0), std::vector<double>(kClasses, 0.0)};
}

ShallowModel nb_fit(std::span<const features::SparseVector> counts, std::span<const int> labels,
                    const NbConfig& config) {
  if (!(config.alpha > 0)) throw Error(ErrorCode::usage, "alpha must be > 0");
  check_inputs(counts, labels);
  const std::size_t dim = counts[0].dim;
  ShallowModel model = ShallowModel::zeros(Kind::nb, dim);
  std::array<double, kClasses> docs{};
  for (std::size_t i = 0; i < counts.size(); ++i) {
    const int c = labels[i];
    docs[static_cast<std::size_t>(c)] += 1.0;
    for (std::size_t k = 0; k < counts[i].nnz(); ++k) {
      model.weights(static_cast<std::size_t>(c), counts[i].index[k]) += counts[i].value[k];
    }
  }
  for (int c = 0; c < kClasses; ++c) {
    const auto cu = static_cast<std::size_t>(c);
    if (docs[cu] == 0.0) {
      throw Error(ErrorCode::missing_class,
                  "no training instance of class '" + std::string(corpus::kLabelNames[cu]) + "'");
    }
    model.bias[cu] = std::log(docs[cu] / static_cast<double>(counts.size()));
    double total = 0.0;
    for (double v : model.weights.row(cu)) total += v;
    const double denom = total + config.alpha * static_cast<double>(dim);
    for (auto& v : model.weights.row(cu)) v = std::log((v + config.alpha) / denom);
  }
  return model;
}

LrObjective lr_objective(const ShallowModel& model, std::span<const features::SparseVector> x,
                         std::span<const int> labels, double l2) {
  LrObjective out{0.0, Matrix(kClasses, model.dim, 0.0), std::vector<double>(kClasses, 0.0)};
  const double inv_n = 1.0 / static_cast<double>(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto p = softmax3(scores(model, x[i]));
    const auto y = static_cast<std::size_t>(labels[i]);
    out.loss -= std::log(std::max(p[y], 1e-300)) * inv_n;
    for (std::size_t c = 0; c < kClasses; ++c) {
      const double d = (p[c] - (c == y ? 1.0 : 0.0)) * inv_n;
      out.grad_bias[c] += d;
      for (std::size_t k = 0; k < x[i].nnz(); ++k) out.grad_weights(c, x[i].index[k]) += d * x[i].value[k];
    }
  }
  double sq = 0.0;
  for (std::size_t j = 0; j < model.weights.size(); ++j) {
    const double w = model.weights.data()[j];
    sq += w * w;
    out.grad_weights.data()[j] += l2 * w;
  }
  out.loss += 0.5 * l2 * sq;
  return out;
}

FitResult lr_fit(std::span<const features::SparseVector> x, std::span<const int> labels,
                 const LrConfig& config, const ShallowModel* init) {
  if (config.l2 < 0) throw Error(ErrorCode::usage, "l2 must be >= 0");
  check_inputs(x, labels);
  FitResult result{init ? *init : ShallowModel::zeros(Kind::lr, x[0].dim), {}};
  result.model.kind = Kind::lr;
  if (result.model.dim != x[0].dim) throw Error(ErrorCode::dim_mismatch, "initial model dimension differs");
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto obj = lr_objective(result.model, x, labels, config.l2);
    if (!std::isfinite(obj.loss)) {
      throw Error(ErrorCode::non_finite_loss, "loss diverged at epoch " + std::to_string(epoch + 1) +
                                                  "; lower the learning rate");
    }
    result.loss_history.push_back(obj.loss);
    for (std::size_t j = 0; j < result.model.weights.size(); ++j) {
      result.model.weights.data()[j] -= config.lr * obj.grad_weights.data()[j];
    }
    for (std::size_t c = 0; c < kClasses; ++c) result.model.bias[c] -= config.lr * obj.grad_bias[c];
  }
  return result;
}

double svm_objective(const ShallowModel& model, std::span<const features::SparseVector> x,
                     std::span<const int> labels, double c) {
  const double n = static_cast<double>(x.size());
  const double lambda = 1.0 / (c * n);
  double total = 0.0;
  for (std::size_t k = 0; k < kClasses; ++k) {
    total += 0.5 * lambda * dot(model.weights.row(k), model.weights.row(k));
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto s = scores(model, x[i]);
    for (std::size_t k = 0; k < kClasses; ++k) {
      const double y = static_cast<std::size_t>(labels[i]) == k ? 1.0 : -1.0;
      total += std::max(0.0, 1.0 - y * s[k]) / n;
    }
  }
  return total;
}

FitResult svm_fit(std::span<const features::SparseVector> x, std::span<const int> labels,
                  const SvmConfig& config) {
  if (!(config.c > 0)) throw Error(ErrorCode::usage, "c must be > 0");
  check_inputs(x, labels);
  const std::size_t dim = x[0].dim;
  const double lambda = 1.0 / (config.c * static_cast<double>(x.size()));
  const double shrink = 1.0 - config.lr * lambda;
  if (!(shrink > 0)) throw Error(ErrorCode::usage, "lr * lambda must be < 1");

  // w_c = scale[c] * v_c keeps the per-step shrink O(1).
  Matrix v(kClasses, dim, 0.0);
  std::array<double, kClasses> scale{1.0, 1.0, 1.0};
  std::vector<double> bias(kClasses, 0.0);
  std::vector<std::size_t> order(x.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(config.seed);
  FitResult result{ShallowModel::zeros(Kind::svm, dim), {}};

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(std::span(order));
    for (auto i : order) {
      for (std::size_t c = 0; c < kClasses; ++c) {
        const double y = static_cast<std::size_t>(labels[i]) == c ? 1.0 : -1.0;
        const double margin = y * (scale[c] * sparse_dot(v.row(c), x[i]) + bias[c]);
        scale[c] *= shrink;
        if (margin < 1.0) {
          const double step = config.lr * y / scale[c];
          for (std::size_t k = 0; k < x[i].nnz(); ++k) v(c, x[i].index[k]) += step * x[i].value[k];
          bias[c] += config.lr * y;
        }
        if (scale[c] < 1e-9) {
          for (auto& w : v.row(c)) w *= scale[c];
          scale[c] = 1.0;
        }
      }
    }
    for (std::size_t c = 0; c < kClasses; ++c) {
      for (std::size_t j = 0; j < dim; ++j) result.model.weights(c, j) = scale[c] * v(c, j);
    }
    result.model.bias = bias;
    const double obj = svm_objective(result.model, x, labels, config.c);
    if (!std::isfinite(obj)) {
      throw Error(ErrorCode::non_finite_loss, "hinge objective diverged at epoch " + std::to_string(epoch + 1));
    }
    result.loss_history.push_back(obj);
  }
  return result;
}

std::array<double, corpus::kNumClasses> scores(const ShallowModel& model, const features::SparseVector& x) {
  std::array<double, kClasses> s{};
  for (std::size_t c = 0; c < kClasses; ++c) s[c] = sparse_dot(model.weights.row(c), x) + model.bias[c];
  return s;
}

int shallow_predict(const ShallowModel& model, const features::SparseVector& x) {
  if (x.dim != model.dim) {
    throw Error(ErrorCode::dim_mismatch, "feature dimension " + std::to_string(x.dim) + " != model dimension " +
                                             std::to_string(model.dim));
  }
  const auto s = scores(model, x);
  int best = 0;
  for (int c = 1; c < kClasses; ++c) {
    if (s[static_cast<std::size_t>(c)] > s[static_cast<std::size_t>(best)]) best = c;
  }
  return best;
}

std::string to_json(const ShallowModel& model) {
  nlohmann::json j;
  j["format"] = "rumil-shallow";
  j["version"] = 1;
  j["kind"] = std::string(kind_name(model.kind));
  j["classes"] = std::vector<std::string>(corpus::kLabelNames.begin(), corpus::kLabelNames.end());
  j["dim"] = model.dim;
  auto rows = nlohmann::json::array();
  for (std::size_t c = 0; c < kClasses; ++c) {
    rows.push_back(std::vector<double>(model.weights.row(c).begin(), model.weights.row(c).end()));
  }
  j["weights"] = std::move(rows);
  j["bias"] = model.bias;
  return j.dump();
}

ShallowModel from_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format") != "rumil-shallow") throw Error(ErrorCode::bad_header, "not a shallow model file");
    ShallowModel m = ShallowModel::zeros(parse_kind(j.at("kind").get<std::string>()), j.at("dim").get<std::size_t>());
    const auto& rows = j.at("weights");
    if (rows.size() != kClasses) throw Error(ErrorCode::dim_mismatch, "expected 3 weight rows");
    for (std::size_t c = 0; c < kClasses; ++c) {
      const auto row = rows[c].get<std::vector<double>>();
      if (row.size() != m.dim) throw Error(ErrorCode::dim_mismatch, "weight row length differs from dim");
      std::copy(row.begin(), row.end(), m.weights.row(c).begin());
    }
    m.bias = j.at("bias").get<std::vector<double>>();
    if (m.bias.size() != kClasses) throw Error(ErrorCode::dim_mismatch, "expected 3 biases");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::bad_header, std::string("malformed shallow model: ") + e.what());
  }
}

void save_shallow(const ShallowModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
  out << to_json(model) << '\n';
}

ShallowModel load_shallow(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str());
}

}  // namespace rumil::shallow
