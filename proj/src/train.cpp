#include "rumil/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace rumil::train {

RmspropState::RmspropState(const RmspropConfig& cfg, std::span<Matrix* const> params) : config(cfg) {
  acc.reserve(params.size());
  for (const Matrix* p : params) acc.emplace_back(p->rows(), p->cols());
}

void rmsprop_step(RmspropState& state, std::span<Matrix* const> params, std::span<Matrix* const> grads) {
  if (params.size() != grads.size() || params.size() != state.acc.size()) {
    throw Error(ErrorCode::dim_mismatch, "optimizer state, parameters and gradients differ in count");
  }
  const auto& c = state.config;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k]->flat();
    auto g = grads[k]->flat();
    auto a = state.acc[k].flat();
    if (p.size() != g.size() || p.size() != a.size()) {
      throw Error(ErrorCode::dim_mismatch, "gradient shape differs from its parameter");
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      a[i] = c.rho * a[i] + (1.0 - c.rho) * g[i] * g[i];
      p[i] -= c.lr * g[i] / (std::sqrt(a[i]) + c.eps);
    }
  }
}

bool EarlyStopState::observe(int epoch, double val_loss) {
  if (val_loss < best_val_loss) {
    best_val_loss = val_loss;
    best_epoch = epoch;
    epochs_since_improve = 0;
    return true;
  }
  ++epochs_since_improve;
  return false;
}

int argmax(std::span<const double> probs) noexcept {
  int best = 0;
  for (std::size_t c = 1; c < probs.size(); ++c) {
    if (probs[c] > probs[static_cast<std::size_t>(best)]) best = static_cast<int>(c);
  }
  return best;
}

std::vector<int> predict_labels(const net::HybridModel& model,
                                std::span<const std::vector<corpus::TokenId>> sequences, std::size_t batch_size) {
  std::vector<int> out;
  out.reserve(sequences.size());
  for (std::size_t begin = 0; begin < sequences.size(); begin += batch_size) {
    const auto chunk = sequences.subspan(begin, std::min(batch_size, sequences.size() - begin));
    const Matrix probs = net::model_forward(model, chunk);
    for (std::size_t i = 0; i < chunk.size(); ++i) out.push_back(argmax(probs.row(i)));
  }
  return out;
}

LossAccuracy loss_and_accuracy(const net::HybridModel& model, const corpus::LabeledDataset& data,
                               std::size_t batch_size) {
  if (data.empty()) throw Error(ErrorCode::empty_split, "cannot score an empty split");
  const std::span<const std::vector<corpus::TokenId>> seqs = data.sequences;
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
    const std::size_t n = std::min(batch_size, data.size() - begin);
    const Matrix probs = net::model_forward(model, seqs.subspan(begin, n));
    for (std::size_t i = 0; i < n; ++i) {
      const int y = data.labels[begin + i];
      loss += net::cross_entropy(probs.row(i), y);
      if (argmax(probs.row(i)) == y) ++correct;
    }
  }
  const double n = static_cast<double>(data.size());
  return {loss / n, static_cast<double>(correct) / n};
}

FitResult fit(net::HybridModel model, const corpus::LabeledDataset& train, const corpus::LabeledDataset& val,
              const FitConfig& config, const FitHooks& hooks) {
  if (train.empty()) throw Error(ErrorCode::empty_split, "training split is empty");
  if (val.empty()) throw Error(ErrorCode::empty_split, "validation split is empty");
  if (config.batch_size == 0) throw Error(ErrorCode::usage, "batch size must be positive");

  const auto params = net::trainable_tensors(model);
  net::HybridGradients grads = net::HybridGradients::zeros_like(model);
  const auto grad_tensors = grads.tensors();
  RmspropState opt({config.lr, config.rho, config.eps}, params);
  EarlyStopState stop{config.patience};
  Rng rng(config.seed);

  FitResult result;
  result.best = model;
  std::vector<std::size_t> order(train.size());
  std::vector<std::vector<corpus::TokenId>> batch;
  std::vector<int> labels;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(order));
    double train_loss = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t n = std::min(config.batch_size, order.size() - begin);
      batch.clear();
      labels.clear();
      for (std::size_t k = begin; k < begin + n; ++k) {
        batch.push_back(train.sequences[order[k]]);
        labels.push_back(train.labels[order[k]]);
      }
      const auto forward = net::forward_batch(model, batch, true);
      grads.clear();
      const double loss = net::model_backward(model, forward, labels, grads);
      if (!std::isfinite(loss)) {
        throw Error(ErrorCode::non_finite_loss, "training loss became non-finite at epoch " + std::to_string(epoch));
      }
      train_loss += loss * static_cast<double>(n);
      if (config.clip_norm > 0.0) {
        const double norm = grads.global_norm();
        if (norm > config.clip_norm) grads.scale(config.clip_norm / norm);
      }
      rmsprop_step(opt, params, grad_tensors);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = train_loss / static_cast<double>(train.size());
    const auto scored = loss_and_accuracy(model, val);
    rec.val_loss = hooks.val_loss ? hooks.val_loss(epoch, scored.loss) : scored.loss;
    rec.val_accuracy = scored.accuracy;
    result.history.push_back(rec);
    result.epochs_run = epoch;

    if (stop.observe(epoch, rec.val_loss)) result.best = model;
    if (hooks.log) {
      char line[160];
      std::snprintf(line, sizeof line, "epoch %d train_loss %.6f val_loss %.6f val_acc %.4f%s", epoch,
                    rec.train_loss, rec.val_loss, rec.val_accuracy, stop.best_epoch == epoch ? " *" : "");
      hooks.log(line);
    }
    const bool hook_stop = hooks.on_epoch_end && hooks.on_epoch_end(model, rec);
    if (stop.should_stop()) {
      result.early_stopped = true;
      break;
    }
    if (hook_stop) break;
  }
  result.best_epoch = stop.best_epoch;
  result.best_val_loss = stop.best_val_loss;
  return result;
}

// ---------------------------------------------------------------------------

std::string_view averaging_name(Averaging a) noexcept { return a == Averaging::macro ? "macro" : "weighted"; }

Averaging parse_averaging(std::string_view name) {
  if (name == "macro") return Averaging::macro;
  if (name == "weighted") return Averaging::weighted;
  throw Error(ErrorCode::usage, "unknown averaging '" + std::string(name) + "' (expected macro|weighted)");
}

namespace {
double ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }
}  // namespace

EvaluationReport evaluate(std::span<const int> y_true, std::span<const int> y_pred, Averaging averaging) {
  if (y_true.size() != y_pred.size()) throw Error(ErrorCode::dim_mismatch, "truth and prediction lengths differ");
  if (y_true.empty()) throw Error(ErrorCode::empty_split, "cannot evaluate an empty set");
  constexpr std::size_t K = corpus::kNumClasses;
  EvaluationReport r;
  r.averaging = averaging;
  r.count = y_true.size();
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    for (int v : {y_true[i], y_pred[i]}) {
      if (v < 0 || v >= static_cast<int>(K)) throw Error(ErrorCode::bad_label, "label id " + std::to_string(v));
    }
    ++r.confusion[static_cast<std::size_t>(y_true[i])][static_cast<std::size_t>(y_pred[i])];
  }
  std::size_t diag = 0;
  for (std::size_t c = 0; c < K; ++c) {
    diag += r.confusion[c][c];
    double predicted = 0.0, actual = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      predicted += static_cast<double>(r.confusion[k][c]);
      actual += static_cast<double>(r.confusion[c][k]);
    }
    const double tp = static_cast<double>(r.confusion[c][c]);
    r.support[c] = static_cast<std::size_t>(actual);
    r.precision[c] = ratio(tp, predicted);
    r.recall[c] = ratio(tp, actual);
    r.f1[c] = ratio(2.0 * r.precision[c] * r.recall[c], r.precision[c] + r.recall[c]);
  }
  const double n = static_cast<double>(r.count);
  r.accuracy = static_cast<double>(diag) / n;
  for (std::size_t c = 0; c < K; ++c) {
    const double w = averaging == Averaging::macro ? 1.0 : static_cast<double>(r.support[c]);
    r.macro_precision += w * r.precision[c];
    r.macro_recall += w * r.recall[c];
    r.macro_f1 += w * r.f1[c];
  }
  const double denom = averaging == Averaging::macro ? static_cast<double>(K) : n;
  r.macro_precision /= denom;
  r.macro_recall /= denom;
  r.macro_f1 /= denom;
  return r;
}

EvaluationReport evaluate(const net::HybridModel& model, const corpus::LabeledDataset& test, Averaging averaging) {
  if (test.empty()) throw Error(ErrorCode::empty_split, "test split is empty");
  return evaluate(test.labels, predict_labels(model, test.sequences), averaging);
}

std::string format_report(const EvaluationReport& r) {
  std::ostringstream out;
  char buf[128];
  out << "class       precision  recall     f1         support\n";
  for (std::size_t c = 0; c < corpus::kNumClasses; ++c) {
    std::snprintf(buf, sizeof buf, "%-10s  %-9.4f  %-9.4f  %-9.4f  %zu\n", std::string(corpus::kLabelNames[c]).c_str(),
                  r.precision[c], r.recall[c], r.f1[c], r.support[c]);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "%-10s  %-9.4f  %-9.4f  %-9.4f  %zu\n",
                std::string(averaging_name(r.averaging)).c_str(), r.macro_precision, r.macro_recall, r.macro_f1,
                r.count);
  out << buf;
  std::snprintf(buf, sizeof buf, "accuracy    %.4f\n", r.accuracy);
  out << buf << "\nconfusion (rows true, cols predicted)\n";
  for (std::size_t t = 0; t < corpus::kNumClasses; ++t) {
    std::snprintf(buf, sizeof buf, "%-10s", std::string(corpus::kLabelNames[t]).c_str());
    out << buf;
    for (std::size_t p = 0; p < corpus::kNumClasses; ++p) out << ' ' << r.confusion[t][p];
    out << '\n';
  }
  return out.str();
}

std::string format_report_kv(const EvaluationReport& r) {
  std::ostringstream out;
  out << "count=" << r.count << '\n'
      << "averaging=" << averaging_name(r.averaging) << '\n'
      << "accuracy=" << format_double(r.accuracy) << '\n'
      << "precision=" << format_double(r.macro_precision) << '\n'
      << "recall=" << format_double(r.macro_recall) << '\n'
      << "f1=" << format_double(r.macro_f1) << '\n';
  for (std::size_t c = 0; c < corpus::kNumClasses; ++c) {
    const std::string name(corpus::kLabelNames[c]);
    out << "precision." << name << '=' << format_double(r.precision[c]) << '\n'
        << "recall." << name << '=' << format_double(r.recall[c]) << '\n'
        << "f1." << name << '=' << format_double(r.f1[c]) << '\n'
        << "support." << name << '=' << r.support[c] << '\n';
  }
  for (std::size_t t = 0; t < corpus::kNumClasses; ++t) {
    for (std::size_t p = 0; p < corpus::kNumClasses; ++p) {
      out << "confusion." << corpus::kLabelNames[t] << '.' << corpus::kLabelNames[p] << '=' << r.confusion[t][p]
          << '\n';
    }
  }
  return out.str();
}

std::string format_history(std::span<const EpochRecord> history) {
  std::ostringstream out;
  for (const auto& h : history) {
    out << h.epoch << '\t' << format_double(h.train_loss) << '\t' << format_double(h.val_loss) << '\t'
        << format_double(h.val_accuracy) << '\n';
  }
  return out.str();
}

void write_history(std::span<const EpochRecord> history, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
  out << format_history(history);
}

}  // namespace rumil::train
