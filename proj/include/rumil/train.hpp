#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "rumil/common.hpp"
#include "rumil/corpus.hpp"
#include "rumil/net.hpp"

namespace rumil::train {

// ---------------------------------------------------------------------------
// Optimizer

struct RmspropConfig {
  double lr = 0.01;
  double rho = 0.9;
  double eps = 1e-7;
};

/// Squared-gradient accumulators, one per parameter tensor.
struct RmspropState {
  RmspropConfig config;
  std::vector<Matrix> acc;

  RmspropState() = default;
  RmspropState(const RmspropConfig& config, std::span<Matrix* const> params);
};

/// acc <- rho*acc + (1-rho)*g^2;  param <- param - lr*g/(sqrt(acc) + eps)
void rmsprop_step(RmspropState& state, std::span<Matrix* const> params, std::span<Matrix* const> grads);

// ---------------------------------------------------------------------------
// Early stopping

struct EarlyStopState {
  int patience = 5;
  double best_val_loss = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  int epochs_since_improve = 0;

  /// Records an epoch's validation loss; true on strict improvement.
  bool observe(int epoch, double val_loss);
  bool should_stop() const noexcept { return epochs_since_improve >= patience; }
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct FitConfig {
  int epochs = 50;
  int patience = 5;
  std::size_t batch_size = 32;
  double lr = 0.01;
  double rho = 0.9;
  double eps = 1e-7;
  double clip_norm = 5.0;  // <= 0 disables clipping
  std::uint64_t seed = 1;
};

struct FitHooks {
  /// Replaces the computed validation loss of an epoch (1-based).
  std::function<double(int epoch, double computed)> val_loss;
  /// Called after each epoch with the current (not best) model; returning
  /// true ends training.
  std::function<bool(const net::HybridModel&, const EpochRecord&)> on_epoch_end;
  /// Per-epoch log line sink.
  std::function<void(const std::string&)> log;
};

struct FitResult {
  net::HybridModel best;
  int best_epoch = 0;
  double best_val_loss = 0.0;
  int epochs_run = 0;
  bool early_stopped = false;
  std::vector<EpochRecord> history;
};

/// RMSprop over shuffled mini-batches with global-norm clipping; keeps the
/// snapshot with the lowest validation loss. Throws EmptySplit.
FitResult fit(net::HybridModel model, const corpus::LabeledDataset& train, const corpus::LabeledDataset& val,
              const FitConfig& config = {}, const FitHooks& hooks = {});

/// Mean cross-entropy and accuracy over a dataset, in batches.
struct LossAccuracy {
  double loss = 0.0;
  double accuracy = 0.0;
};
LossAccuracy loss_and_accuracy(const net::HybridModel& model, const corpus::LabeledDataset& data,
                               std::size_t batch_size = 256);

/// argmax class per sequence, ties to the lowest id. Throws AllPadSequence.
std::vector<int> predict_labels(const net::HybridModel& model,
                                std::span<const std::vector<corpus::TokenId>> sequences,
                                std::size_t batch_size = 256);
int argmax(std::span<const double> probs) noexcept;

// ---------------------------------------------------------------------------
// Evaluation

enum class Averaging { macro, weighted };
std::string_view averaging_name(Averaging a) noexcept;
Averaging parse_averaging(std::string_view name);

struct EvaluationReport {
  std::array<std::array<std::size_t, corpus::kNumClasses>, corpus::kNumClasses> confusion{};  // [true][pred]
  std::array<double, corpus::kNumClasses> precision{}, recall{}, f1{};
  std::array<std::size_t, corpus::kNumClasses> support{};
  Averaging averaging = Averaging::macro;
  std::size_t count = 0;
  double accuracy = 0.0;
  double macro_precision = 0.0;  // averaged per `averaging`
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
};

/// Throws EmptySplit on empty input, BadLabel on ids outside 0..2.
EvaluationReport evaluate(std::span<const int> y_true, std::span<const int> y_pred,
                          Averaging averaging = Averaging::macro);
EvaluationReport evaluate(const net::HybridModel& model, const corpus::LabeledDataset& test,
                          Averaging averaging = Averaging::macro);

std::string format_report(const EvaluationReport& report);
std::string format_report_kv(const EvaluationReport& report);

/// `epoch<TAB>train_loss<TAB>val_loss<TAB>val_accuracy` per line.
std::string format_history(std::span<const EpochRecord> history);
void write_history(std::span<const EpochRecord> history, const std::filesystem::path& path);

}  // namespace rumil::train
