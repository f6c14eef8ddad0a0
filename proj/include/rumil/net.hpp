#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rumil/common.hpp"
#include "rumil/corpus.hpp"
#include "rumil/embed.hpp"

namespace rumil::net {

// ---------------------------------------------------------------------------
// GRU

/// Gated recurrent unit with gates packed row-wise as [update; reset;
/// candidate]:
///   z  = s(Wz x + Uz h + bz)
///   r  = s(Wr x + Ur h + br)
///   h~ = tanh(Wh x + Uh (r * h) + bh)
///   h' = (1 - z) * h + z * h~
struct GruCell {
  Matrix W;  // 3H x d
  Matrix U;  // 3H x H
  Matrix b;  // 3H x 1
  bool trainable = true;

  std::size_t input_dim() const noexcept { return W.cols(); }
  std::size_t hidden() const noexcept { return U.cols(); }

  /// Glorot-uniform W and U, zero biases.
  static GruCell glorot(std::size_t input_dim, std::size_t hidden, Rng& rng);
  static GruCell zeros(std::size_t input_dim, std::size_t hidden);
};

struct GruGates {
  std::vector<double> z, r, candidate, h;
};

/// One step; returns the gates along with the new state.
GruGates gru_step_gates(const GruCell& cell, std::span<const double> x, std::span<const double> h_prev);
std::vector<double> gru_step(const GruCell& cell, std::span<const double> x, std::span<const double> h_prev);

enum class Direction { forward, backward };

struct GruRun {
  Matrix outputs;          // T x H
  std::vector<bool> mask;  // true for valid (non-PAD) steps
};

/// Runs over the T rows of `inputs` from a zero state. Steps at index >=
/// `length` are treated as padding: they are computed, flagged false in
/// the mask, and never feed valid steps (a backward run starts its valid
/// chain at step length-1).
GruRun run_gru(const GruCell& cell, const Matrix& inputs, std::size_t length, Direction direction);

// ---------------------------------------------------------------------------
// Hybrid model

inline constexpr std::size_t kChannels = 3;
inline constexpr std::array<embed::Method, kChannels> kChannelSources = {
    embed::Method::w2v, embed::Method::fasttext, embed::Method::glove};

enum class Side { left, center, right };
inline constexpr std::array<Side, 3> kSides = {Side::left, Side::center, Side::right};
std::string_view side_name(Side s) noexcept;

enum class StaticMode { all_static, static_plus_nonstatic };
std::string_view static_mode_name(StaticMode m) noexcept;
/// Accepts "all"/"all_static" and "mixed"/"static_plus_nonstatic".
StaticMode parse_static_mode(std::string_view name);

struct ModelConfig {
  StaticMode static_mode = StaticMode::static_plus_nonstatic;
  bool use_bigru = true;
  std::size_t hidden = 64;
  std::size_t bigru_hidden = 64;
};

/// One embedding source feeding three GRUs. The left and center sides
/// always read the frozen table; the right side reads `tuned` when the
/// model is static+non-static and the frozen table otherwise.
struct Channel {
  embed::Method source = embed::Method::w2v;
  Matrix frozen;  // V x d
  Matrix tuned;   // V x d, empty in all-static mode
  std::array<GruCell, 3> gru;  // indexed by Side

  const Matrix& table(Side side) const noexcept;
  bool table_trainable(Side side) const noexcept { return side == Side::right && !tuned.empty(); }
};

struct HybridModel {
  ModelConfig config;
  std::array<Channel, kChannels> channels;
  GruCell bigru_forward;   // empty unless config.use_bigru
  GruCell bigru_backward;  // empty unless config.use_bigru
  Matrix dense_w;          // 3 x P
  Matrix dense_b;          // 3 x 1

  std::size_t vocab_size() const noexcept { return channels[0].frozen.rows(); }
  /// 9H: concatenated per-step channel outputs.
  std::size_t unified_dim() const noexcept;
  /// Width of the pooled vector: 2H' with the Bi-GRU, 9H without.
  std::size_t pooled_dim() const noexcept;
};

/// Builds a model over pre-trained tables (one per channel, all V rows).
/// The tuned right tables start as copies of the frozen ones.
HybridModel make_hybrid(const ModelConfig& config, std::array<Matrix, kChannels> tables, std::uint64_t seed);

/// Copies `matrix` rows into a V x dim table aligned with `vocab`. Tokens the
/// matrix cannot resolve (specials, OOV) get small seeded uniform rows.
Matrix embedding_table(const embed::EmbeddingMatrix& matrix, const corpus::Vocabulary& vocab, std::uint64_t seed);

struct TensorInfo {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  bool trainable = false;
  /// Name of the tensor whose storage this entry aliases, if any.
  std::string storage;
};

/// Every parameter tensor of the architecture, including the nine
/// embedding tables (frozen sides alias their channel's frozen storage).
std::vector<TensorInfo> tensor_inventory(const HybridModel& model);

/// Trainable tensors in a fixed order shared with HybridGradients::tensors.
std::vector<Matrix*> trainable_tensors(HybridModel& model);
std::vector<std::string> trainable_names(const HybridModel& model);

struct GruGrad {
  Matrix W, U, b;
};

struct HybridGradients {
  std::array<std::array<GruGrad, 3>, kChannels> gru;
  std::array<Matrix, kChannels> tuned;  // empty where the table is frozen
  GruGrad bigru_forward, bigru_backward;
  Matrix dense_w, dense_b;

  static HybridGradients zeros_like(const HybridModel& model);
  std::vector<Matrix*> tensors();
  void clear();
  double global_norm();
  void scale(double factor);
};

// Per-example forward trace, kept for the backward pass.
struct GruTrace {
  Matrix x, h, z, r, c;
  Direction direction = Direction::forward;
};

struct ExampleTrace {
  std::size_t length = 0;
  std::array<std::array<std::vector<corpus::TokenId>, 3>, kChannels> stream_ids;
  std::array<std::array<GruTrace, 3>, kChannels> channel;
  Matrix unified;  // L x 9H
  GruTrace bigru_f, bigru_b;
  Matrix sequence;  // L x P, the pooled-over sequence
  std::vector<double> pooled;
  std::vector<std::size_t> argmax;
  std::vector<double> probs;
};

struct BatchForward {
  Matrix probs;  // B x 3
  std::vector<ExampleTrace> traces;
};

/// Number of leading non-PAD ids.
std::size_t sequence_length(std::span<const corpus::TokenId> ids) noexcept;

/// Context streams for the valid prefix of `ids`: left = previous id (BOS
/// first), center = the ids, right = next id (EOS after the last valid id).
std::array<std::vector<corpus::TokenId>, 3> context_streams(std::span<const corpus::TokenId> ids);

/// Throws AllPadSequence for an example without a valid step.
BatchForward forward_batch(const HybridModel& model, std::span<const std::vector<corpus::TokenId>> batch,
                           bool keep_traces = true);

/// Class probabilities, one row per sequence.
Matrix model_forward(const HybridModel& model, std::span<const std::vector<corpus::TokenId>> batch);

/// Softmax of the dense bias alone: the output for an empty pooled vector.
std::vector<double> bias_only_probs(const HybridModel& model);

/// Adds d(mean cross-entropy)/d(param) for the batch into `grads` and
/// returns the mean loss.
double model_backward(const HybridModel& model, const BatchForward& forward, std::span<const int> labels,
                      HybridGradients& grads);

/// Mean cross-entropy of the batch.
double batch_loss(const HybridModel& model, std::span<const std::vector<corpus::TokenId>> batch,
                  std::span<const int> labels);

std::vector<double> softmax(std::span<const double> logits);
/// -ln(max(p_label, 1e-12))
double cross_entropy(std::span<const double> probs, int label);

// ---------------------------------------------------------------------------
// Checkpoints

struct Checkpoint {
  HybridModel model;
  corpus::Vocabulary vocab;
  std::string rules_text;
  std::size_t max_len = corpus::kDefaultMaxLen;
};

/// Binary file: magic, JSON header (config, vocabulary, rules, tensor
/// directory), then little-endian float64 tensor data.
void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace rumil::net
