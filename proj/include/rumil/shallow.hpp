#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rumil/common.hpp"
#include "rumil/corpus.hpp"
#include "rumil/features.hpp"

namespace rumil::shallow {

enum class Kind { nb, lr, svm };

std::string_view kind_name(Kind k) noexcept;
Kind parse_kind(std::string_view name);

/// All three baselines score linearly: score_c = weights[c] . x + bias[c].
/// For NB, weights hold per-class log-likelihoods and bias the log-priors.
struct ShallowModel {
  Kind kind = Kind::lr;
  std::size_t dim = 0;
  Matrix weights;             // kNumClasses x dim
  std::vector<double> bias;   // kNumClasses

  static ShallowModel zeros(Kind kind, std::size_t dim);
};

struct FitResult {
  ShallowModel model;
  std::vector<double> loss_history;
};

struct NbConfig {
  double alpha = 1.0;
};

struct LrConfig {
  double l2 = 1e-4;
  double lr = 0.1;
  int epochs = 300;
};

struct SvmConfig {
  double c = 1.0;
  double lr = 0.01;
  int epochs = 300;
  std::uint64_t seed = 1;
};

/// Multinomial NB with Laplace smoothing over count vectors. Throws
/// MissingClass when a class has no instance.
ShallowModel nb_fit(std::span<const features::SparseVector> counts, std::span<const int> labels,
                    const NbConfig& config = {});

/// Full-batch gradient descent on mean softmax cross-entropy plus
/// (l2/2)||W||^2, starting from `init` or zeros. loss_history[e] is the
/// objective before epoch e's update.
FitResult lr_fit(std::span<const features::SparseVector> x, std::span<const int> labels,
                 const LrConfig& config = {}, const ShallowModel* init = nullptr);

/// One-vs-rest linear SVM trained by SGD on
///   sum_c [ lambda/2 ||w_c||^2 + mean_i max(0, 1 - y_ic (w_c.x_i + b_c)) ],
/// lambda = 1 / (c * n). loss_history[e] is the objective after epoch e.
FitResult svm_fit(std::span<const features::SparseVector> x, std::span<const int> labels,
                  const SvmConfig& config = {});

struct LrObjective {
  double loss = 0.0;
  Matrix grad_weights;
  std::vector<double> grad_bias;
};

LrObjective lr_objective(const ShallowModel& model, std::span<const features::SparseVector> x,
                         std::span<const int> labels, double l2);

double svm_objective(const ShallowModel& model, std::span<const features::SparseVector> x,
                     std::span<const int> labels, double c);

std::array<double, corpus::kNumClasses> scores(const ShallowModel& model, const features::SparseVector& x);

/// argmax score, ties to the lowest class id. Throws DimMismatch.
int shallow_predict(const ShallowModel& model, const features::SparseVector& x);

void save_shallow(const ShallowModel& model, const std::filesystem::path& path);
ShallowModel load_shallow(const std::filesystem::path& path);

std::string to_json(const ShallowModel& model);
ShallowModel from_json(std::string_view text);

}  // namespace rumil::shallow
