#include "rumil/net.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

namespace rumil::net {
namespace {

constexpr std::size_t kClasses = corpus::kNumClasses;

// out += M x
void matvec_add(const Matrix& m, std::span<const double> x, std::span<double> out, std::size_t row0 = 0,
                std::size_t rows = std::size_t(-1)) {
  if (rows == std::size_t(-1)) rows = m.rows() - row0;
  for (std::size_t i = 0; i < rows; ++i) out[i] += dot(m.row(row0 + i), x);
}

// out += M[row0:row0+len]^T v
void matTvec_add(const Matrix& m, std::span<const double> v, std::span<double> out, std::size_t row0) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double s = v[i];
    if (s == 0.0) continue;
    const auto r = m.row(row0 + i);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += s * r[j];
  }
}

// G[row0 + i, :] += a[i] * b
void outer_add(Matrix& g, std::span<const double> a, std::span<const double> b, std::size_t row0) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double s = a[i];
    if (s == 0.0) continue;
    auto r = g.row(row0 + i);
    for (std::size_t j = 0; j < b.size(); ++j) r[j] += s * b[j];
  }
}

void glorot_fill(Matrix& m, double fan_in, double fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  for (auto& v : m.flat()) v = rng.uniform(-limit, limit);
}

// Writes one GRU step into z, r, c, h (each H long).
void step_into(const GruCell& cell, std::span<const double> x, std::span<const double> hp, std::span<double> z,
               std::span<double> r, std::span<double> c, std::span<double> h) {
  const std::size_t H = cell.hidden();
  std::vector<double> rh(H);
  for (std::size_t j = 0; j < H; ++j) {
    z[j] = sigmoid(dot(cell.W.row(j), x) + dot(cell.U.row(j), hp) + cell.b(j, 0));
    r[j] = sigmoid(dot(cell.W.row(H + j), x) + dot(cell.U.row(H + j), hp) + cell.b(H + j, 0));
  }
  for (std::size_t j = 0; j < H; ++j) rh[j] = r[j] * hp[j];
  for (std::size_t j = 0; j < H; ++j) {
    c[j] = std::tanh(dot(cell.W.row(2 * H + j), x) + dot(cell.U.row(2 * H + j), rh) + cell.b(2 * H + j, 0));
    h[j] = (1.0 - z[j]) * hp[j] + z[j] * c[j];
  }
}

GruTrace trace_gru(const GruCell& cell, Matrix x, Direction dir) {
  const std::size_t L = x.rows();
  const std::size_t H = cell.hidden();
  GruTrace tr{std::move(x), Matrix(L, H), Matrix(L, H), Matrix(L, H), Matrix(L, H), dir};
  const std::vector<double> zero(H, 0.0);
  for (std::size_t s = 0; s < L; ++s) {
    const std::size_t t = dir == Direction::forward ? s : L - 1 - s;
    std::span<const double> hp = zero;
    if (s > 0) hp = tr.h.row(dir == Direction::forward ? t - 1 : t + 1);
    step_into(cell, tr.x.row(t), hp, tr.z.row(t), tr.r.row(t), tr.c.row(t), tr.h.row(t));
  }
  return tr;
}

// Backpropagation through time. dH holds dLoss/dh_t from above for every
// step; returns dLoss/dx_t and accumulates parameter gradients.
Matrix backprop_gru(const GruCell& cell, const GruTrace& tr, const Matrix& dH, GruGrad& grad) {
  const std::size_t L = tr.x.rows();
  const std::size_t H = cell.hidden();
  const bool fwd = tr.direction == Direction::forward;
  Matrix dX(L, cell.input_dim());
  std::vector<double> carry(H, 0.0), dh(H), hp(H), da(3 * H), drh(H), rh(H), dhp(H);
  for (std::size_t s = L; s-- > 0;) {
    const std::size_t t = fwd ? s : L - 1 - s;
    const bool has_prev = s > 0;
    const std::size_t pt = fwd ? t - 1 : t + 1;
    for (std::size_t j = 0; j < H; ++j) {
      dh[j] = dH(t, j) + carry[j];
      hp[j] = has_prev ? tr.h(pt, j) : 0.0;
    }
    const auto z = tr.z.row(t);
    const auto r = tr.r.row(t);
    const auto c = tr.c.row(t);
    for (std::size_t j = 0; j < H; ++j) {
      const double dc = dh[j] * z[j];
      const double dz = dh[j] * (c[j] - hp[j]);
      dhp[j] = dh[j] * (1.0 - z[j]);
      da[2 * H + j] = dc * (1.0 - c[j] * c[j]);
      da[j] = dz * z[j] * (1.0 - z[j]);
      rh[j] = r[j] * hp[j];
    }
    std::fill(drh.begin(), drh.end(), 0.0);
    matTvec_add(cell.U, std::span<const double>(da).subspan(2 * H, H), drh, 2 * H);
    for (std::size_t j = 0; j < H; ++j) {
      const double dr = drh[j] * hp[j];
      dhp[j] += drh[j] * r[j];
      da[H + j] = dr * r[j] * (1.0 - r[j]);
    }
    outer_add(grad.W, da, tr.x.row(t), 0);
    for (std::size_t j = 0; j < 3 * H; ++j) grad.b(j, 0) += da[j];
    if (has_prev) {
      outer_add(grad.U, std::span<const double>(da).subspan(0, 2 * H), hp, 0);
      outer_add(grad.U, std::span<const double>(da).subspan(2 * H, H), rh, 2 * H);
      matTvec_add(cell.U, std::span<const double>(da).subspan(0, 2 * H), dhp, 0);
    }
    matTvec_add(cell.W, da, dX.row(t), 0);
    carry.assign(dhp.begin(), dhp.end());
  }
  return dX;
}

GruGrad grad_like(const GruCell& cell) {
  return {Matrix(cell.W.rows(), cell.W.cols()), Matrix(cell.U.rows(), cell.U.cols()),
          Matrix(cell.b.rows(), cell.b.cols())};
}

Matrix gather_rows(const Matrix& table, std::span<const corpus::TokenId> ids) {
  Matrix out(ids.size(), table.cols());
  for (std::size_t t = 0; t < ids.size(); ++t) {
    const auto src = table.row(static_cast<std::size_t>(ids[t]));
    std::copy(src.begin(), src.end(), out.row(t).begin());
  }
  return out;
}

Matrix columns(const Matrix& m, std::size_t col0, std::size_t width) {
  Matrix out(m.rows(), width);
  for (std::size_t t = 0; t < m.rows(); ++t) {
    for (std::size_t j = 0; j < width; ++j) out(t, j) = m(t, col0 + j);
  }
  return out;
}

void put_columns(Matrix& dst, const Matrix& src, std::size_t col0) {
  for (std::size_t t = 0; t < src.rows(); ++t) {
    for (std::size_t j = 0; j < src.cols(); ++j) dst(t, col0 + j) = src(t, j);
  }
}

void add_columns(Matrix& dst, const Matrix& src, std::size_t col0) {
  for (std::size_t t = 0; t < src.rows(); ++t) {
    for (std::size_t j = 0; j < src.cols(); ++j) dst(t, col0 + j) += src(t, j);
  }
}

ExampleTrace forward_example(const HybridModel& model, std::span<const corpus::TokenId> ids) {
  ExampleTrace ex;
  ex.length = sequence_length(ids);
  if (ex.length == 0) throw Error(ErrorCode::all_pad_sequence, "sequence has no non-PAD token");
  const std::size_t L = ex.length;
  const std::size_t H = model.config.hidden;
  const auto streams = context_streams(ids.first(L));
  ex.unified = Matrix(L, model.unified_dim());
  for (std::size_t ch = 0; ch < kChannels; ++ch) {
    const Channel& channel = model.channels[ch];
    for (std::size_t s = 0; s < 3; ++s) {
      const Side side = kSides[s];
      for (auto id : streams[s]) {
        if (id < 0 || static_cast<std::size_t>(id) >= model.vocab_size()) {
          throw Error(ErrorCode::dim_mismatch, "token id " + std::to_string(id) + " outside model vocabulary");
        }
      }
      ex.stream_ids[ch][s] = streams[s];
      ex.channel[ch][s] = trace_gru(channel.gru[s], gather_rows(channel.table(side), streams[s]),
                                    side == Side::right ? Direction::backward : Direction::forward);
      put_columns(ex.unified, ex.channel[ch][s].h, (ch * 3 + s) * H);
    }
  }
  if (model.config.use_bigru) {
    const std::size_t H2 = model.config.bigru_hidden;
    ex.bigru_f = trace_gru(model.bigru_forward, ex.unified, Direction::forward);
    ex.bigru_b = trace_gru(model.bigru_backward, ex.unified, Direction::backward);
    ex.sequence = Matrix(L, 2 * H2);
    put_columns(ex.sequence, ex.bigru_f.h, 0);
    put_columns(ex.sequence, ex.bigru_b.h, H2);
  } else {
    ex.sequence = ex.unified;
  }
  const std::size_t P = ex.sequence.cols();
  ex.pooled.assign(P, -std::numeric_limits<double>::infinity());
  ex.argmax.assign(P, 0);
  for (std::size_t t = 0; t < L; ++t) {
    for (std::size_t j = 0; j < P; ++j) {
      if (ex.sequence(t, j) > ex.pooled[j]) {
        ex.pooled[j] = ex.sequence(t, j);
        ex.argmax[j] = t;
      }
    }
  }
  std::vector<double> logits(kClasses, 0.0);
  for (std::size_t c = 0; c < kClasses; ++c) logits[c] = model.dense_b(c, 0);
  matvec_add(model.dense_w, ex.pooled, logits);
  ex.probs = softmax(logits);
  return ex;
}

void backward_example(const HybridModel& model, const ExampleTrace& ex, int label, double weight,
                      HybridGradients& grads) {
  const std::size_t L = ex.length;
  const std::size_t P = ex.pooled.size();
  const std::size_t H = model.config.hidden;
  std::vector<double> dlogits(kClasses);
  for (std::size_t c = 0; c < kClasses; ++c) {
    dlogits[c] = (ex.probs[c] - (static_cast<int>(c) == label ? 1.0 : 0.0)) * weight;
  }
  outer_add(grads.dense_w, dlogits, ex.pooled, 0);
  for (std::size_t c = 0; c < kClasses; ++c) grads.dense_b(c, 0) += dlogits[c];
  std::vector<double> dpooled(P, 0.0);
  matTvec_add(model.dense_w, dlogits, dpooled, 0);

  Matrix dseq(L, P);
  for (std::size_t j = 0; j < P; ++j) dseq(ex.argmax[j], j) = dpooled[j];

  Matrix dunified;
  if (model.config.use_bigru) {
    const std::size_t H2 = model.config.bigru_hidden;
    dunified = backprop_gru(model.bigru_forward, ex.bigru_f, columns(dseq, 0, H2), grads.bigru_forward);
    const Matrix db = backprop_gru(model.bigru_backward, ex.bigru_b, columns(dseq, H2, H2), grads.bigru_backward);
    add_columns(dunified, db, 0);
  } else {
    dunified = std::move(dseq);
  }

  for (std::size_t ch = 0; ch < kChannels; ++ch) {
    const Channel& channel = model.channels[ch];
    for (std::size_t s = 0; s < 3; ++s) {
      const Matrix dX = backprop_gru(channel.gru[s], ex.channel[ch][s], columns(dunified, (ch * 3 + s) * H, H),
                                     grads.gru[ch][s]);
      if (!channel.table_trainable(kSides[s])) continue;
      Matrix& tg = grads.tuned[ch];
      const auto& ids = ex.stream_ids[ch][s];
      for (std::size_t t = 0; t < ids.size(); ++t) {
        auto row = tg.row(static_cast<std::size_t>(ids[t]));
        const auto src = dX.row(t);
        for (std::size_t j = 0; j < row.size(); ++j) row[j] += src[j];
      }
    }
  }
}

std::vector<std::pair<std::string, Matrix*>> named_storage(HybridModel& model) {
  std::vector<std::pair<std::string, Matrix*>> out;
  for (std::size_t ch = 0; ch < kChannels; ++ch) {
    Channel& c = model.channels[ch];
    const std::string base = "channel." + std::string(embed::method_name(c.source));
    out.emplace_back(base + ".frozen", &c.frozen);
    if (!c.tuned.empty()) out.emplace_back(base + ".tuned", &c.tuned);
    for (std::size_t s = 0; s < 3; ++s) {
      const std::string g = base + ".gru." + std::string(side_name(kSides[s]));
      out.emplace_back(g + ".W", &c.gru[s].W);
      out.emplace_back(g + ".U", &c.gru[s].U);
      out.emplace_back(g + ".b", &c.gru[s].b);
    }
  }
  if (model.config.use_bigru) {
    for (auto [name, cell] : {std::pair{"bigru.forward", &model.bigru_forward},
                              std::pair{"bigru.backward", &model.bigru_backward}}) {
      out.emplace_back(std::string(name) + ".W", &cell->W);
      out.emplace_back(std::string(name) + ".U", &cell->U);
      out.emplace_back(std::string(name) + ".b", &cell->b);
    }
  }
  out.emplace_back("dense.W", &model.dense_w);
  out.emplace_back("dense.b", &model.dense_b);
  return out;
}

constexpr char kMagic[8] = {'R', 'U', 'M', 'I', 'L', 'C', 'K', '1'};

void write_u64(std::ostream& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    const int c = in.get();
    if (c == EOF) throw Error(ErrorCode::bad_header, "truncated checkpoint");
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}

}  // namespace

// ---------------------------------------------------------------------------

GruCell GruCell::glorot(std::size_t input_dim, std::size_t hidden, Rng& rng) {
  GruCell cell = zeros(input_dim, hidden);
  glorot_fill(cell.W, static_cast<double>(input_dim), static_cast<double>(3 * hidden), rng);
  glorot_fill(cell.U, static_cast<double>(hidden), static_cast<double>(3 * hidden), rng);
  return cell;
}

GruCell GruCell::zeros(std::size_t input_dim, std::size_t hidden) {
  return {Matrix(3 * hidden, input_dim), Matrix(3 * hidden, hidden), Matrix(3 * hidden, 1), true};
}

GruGates gru_step_gates(const GruCell& cell, std::span<const double> x, std::span<const double> h_prev) {
  if (x.size() != cell.input_dim() || h_prev.size() != cell.hidden()) {
    throw Error(ErrorCode::dim_mismatch, "gru_step input shapes do not match the cell");
  }
  const std::size_t H = cell.hidden();
  GruGates g{std::vector<double>(H), std::vector<double>(H), std::vector<double>(H), std::vector<double>(H)};
  step_into(cell, x, h_prev, g.z, g.r, g.candidate, g.h);
  return g;
}

std::vector<double> gru_step(const GruCell& cell, std::span<const double> x, std::span<const double> h_prev) {
  return gru_step_gates(cell, x, h_prev).h;
}

GruRun run_gru(const GruCell& cell, const Matrix& inputs, std::size_t length, Direction direction) {
  const std::size_t T = inputs.rows();
  length = std::min(length, T);
  GruRun run{Matrix(T, cell.hidden()), std::vector<bool>(T, false)};
  for (std::size_t t = 0; t < length; ++t) run.mask[t] = true;
  auto segment = [&](std::size_t begin, std::size_t end) {
    Matrix x(end - begin, inputs.cols());
    for (std::size_t t = begin; t < end; ++t) {
      std::copy(inputs.row(t).begin(), inputs.row(t).end(), x.row(t - begin).begin());
    }
    const auto tr = trace_gru(cell, std::move(x), direction);
    for (std::size_t t = begin; t < end; ++t) {
      std::copy(tr.h.row(t - begin).begin(), tr.h.row(t - begin).end(), run.outputs.row(t).begin());
    }
  };
  if (direction == Direction::forward) {
    segment(0, T);
  } else {
    segment(0, length);
    if (length < T) segment(length, T);
  }
  return run;
}

std::string_view side_name(Side s) noexcept {
  switch (s) {
    case Side::left: return "left";
    case Side::center: return "center";
    case Side::right: return "right";
  }
  return "left";
}

std::string_view static_mode_name(StaticMode m) noexcept {
  return m == StaticMode::all_static ? "all" : "mixed";
}

StaticMode parse_static_mode(std::string_view name) {
  if (name == "all" || name == "all_static" || name == "static") return StaticMode::all_static;
  if (name == "mixed" || name == "static_plus_nonstatic") return StaticMode::static_plus_nonstatic;
  throw Error(ErrorCode::usage, "unknown static mode '" + std::string(name) + "' (expected all|mixed)");
}

const Matrix& Channel::table(Side side) const noexcept {
  return table_trainable(side) ? tuned : frozen;
}

std::size_t HybridModel::unified_dim() const noexcept { return kChannels * 3 * config.hidden; }

std::size_t HybridModel::pooled_dim() const noexcept {
  return config.use_bigru ? 2 * config.bigru_hidden : unified_dim();
}

HybridModel make_hybrid(const ModelConfig& config, std::array<Matrix, kChannels> tables, std::uint64_t seed) {
  if (config.hidden == 0 || (config.use_bigru && config.bigru_hidden == 0)) {
    throw Error(ErrorCode::usage, "hidden sizes must be positive");
  }
  const std::size_t V = tables[0].rows();
  if (V <= static_cast<std::size_t>(corpus::kNumSpecials)) {
    throw Error(ErrorCode::empty_vocabulary, "embedding tables need rows beyond the specials");
  }
  HybridModel model;
  model.config = config;
  Rng rng(seed);
  for (std::size_t ch = 0; ch < kChannels; ++ch) {
    if (tables[ch].rows() != V || tables[ch].cols() == 0) {
      throw Error(ErrorCode::dim_mismatch, "embedding tables must share the vocabulary size");
    }
    Channel& c = model.channels[ch];
    c.source = kChannelSources[ch];
    c.frozen = std::move(tables[ch]);
    if (config.static_mode == StaticMode::static_plus_nonstatic) c.tuned = c.frozen;
    for (auto& g : c.gru) g = GruCell::glorot(c.frozen.cols(), config.hidden, rng);
    c.gru[0].trainable = c.gru[1].trainable = c.gru[2].trainable = true;
  }
  if (config.use_bigru) {
    model.bigru_forward = GruCell::glorot(model.unified_dim(), config.bigru_hidden, rng);
    model.bigru_backward = GruCell::glorot(model.unified_dim(), config.bigru_hidden, rng);
  }
  model.dense_w = Matrix(kClasses, model.pooled_dim());
  glorot_fill(model.dense_w, static_cast<double>(model.pooled_dim()), static_cast<double>(kClasses), rng);
  model.dense_b = Matrix(kClasses, 1);
  return model;
}

Matrix embedding_table(const embed::EmbeddingMatrix& matrix, const corpus::Vocabulary& vocab, std::uint64_t seed) {
  Matrix table(vocab.size(), matrix.dim());
  Rng rng(seed);
  for (std::size_t id = 0; id < vocab.size(); ++id) {
    std::optional<std::vector<double>> v;
    if (id >= static_cast<std::size_t>(corpus::kNumSpecials)) v = matrix.vector(vocab.tokens()[id]);
    auto row = table.row(id);
    for (std::size_t j = 0; j < row.size(); ++j) {
      const double noise = rng.uniform(-0.05, 0.05);
      row[j] = v ? (*v)[j] : noise;
    }
  }
  return table;
}

std::vector<TensorInfo> tensor_inventory(const HybridModel& model) {
  std::vector<TensorInfo> out;
  auto& mut = const_cast<HybridModel&>(model);
  for (std::size_t ch = 0; ch < kChannels; ++ch) {
    const Channel& c = model.channels[ch];
    const std::string base = "channel." + std::string(embed::method_name(c.source));
    for (Side side : kSides) {
      const bool tr = c.table_trainable(side);
      const Matrix& t = c.table(side);
      out.push_back({base + ".table." + std::string(side_name(side)), t.rows(), t.cols(), tr,
                     base + (tr ? ".tuned" : ".frozen")});
    }
  }
  for (auto& [name, m] : named_storage(mut)) {
    if (name.ends_with(".frozen") || name.ends_with(".tuned")) continue;
    out.push_back({name, m->rows(), m->cols(), true, name});
  }
  return out;
}

std::vector<Matrix*> trainable_tensors(HybridModel& model) {
  std::vector<Matrix*> out;
  for (auto& [name, m] : named_storage(model)) {
    if (!name.ends_with(".frozen")) out.push_back(m);
  }
  return out;
}

std::vector<std::string> trainable_names(const HybridModel& model) {
  std::vector<std::string> out;
  for (auto& [name, m] : named_storage(const_cast<HybridModel&>(model))) {
    if (!name.ends_with(".frozen")) out.push_back(name);
  }
  return out;
}

HybridGradients HybridGradients::zeros_like(const HybridModel& model) {
  HybridGradients g;
  for (std::size_t ch = 0; ch < kChannels; ++ch) {
    const Channel& c = model.channels[ch];
    for (std::size_t s = 0; s < 3; ++s) g.gru[ch][s] = grad_like(c.gru[s]);
    if (!c.tuned.empty()) g.tuned[ch] = Matrix(c.tuned.rows(), c.tuned.cols());
  }
  if (model.config.use_bigru) {
    g.bigru_forward = grad_like(model.bigru_forward);
    g.bigru_backward = grad_like(model.bigru_backward);
  }
  g.dense_w = Matrix(model.dense_w.rows(), model.dense_w.cols());
  g.dense_b = Matrix(model.dense_b.rows(), model.dense_b.cols());
  return g;
}

std::vector<Matrix*> HybridGradients::tensors() {
  std::vector<Matrix*> out;
  for (std::size_t ch = 0; ch < kChannels; ++ch) {
    if (!tuned[ch].empty()) out.push_back(&tuned[ch]);
    for (auto& g : gru[ch]) {
      out.push_back(&g.W);
      out.push_back(&g.U);
      out.push_back(&g.b);
    }
  }
  for (GruGrad* g : {&bigru_forward, &bigru_backward}) {
    if (g->W.empty()) continue;
    out.push_back(&g->W);
    out.push_back(&g->U);
    out.push_back(&g->b);
  }
  out.push_back(&dense_w);
  out.push_back(&dense_b);
  return out;
}

void HybridGradients::clear() {
  for (Matrix* m : tensors()) m->fill(0.0);
}

double HybridGradients::global_norm() {
  double sq = 0.0;
  for (Matrix* m : tensors()) sq += dot(m->flat(), m->flat());
  return std::sqrt(sq);
}

void HybridGradients::scale(double factor) {
  for (Matrix* m : tensors()) {
    for (auto& v : m->flat()) v *= factor;
  }
}

std::size_t sequence_length(std::span<const corpus::TokenId> ids) noexcept {
  std::size_t n = 0;
  while (n < ids.size() && ids[n] != corpus::kPad) ++n;
  return n;
}

std::array<std::vector<corpus::TokenId>, 3> context_streams(std::span<const corpus::TokenId> ids) {
  const std::size_t L = sequence_length(ids);
  std::array<std::vector<corpus::TokenId>, 3> s;
  for (std::size_t t = 0; t < L; ++t) {
    s[0].push_back(t == 0 ? corpus::kBos : ids[t - 1]);
    s[1].push_back(ids[t]);
    s[2].push_back(t + 1 == L ? corpus::kEos : ids[t + 1]);
  }
  return s;
}

BatchForward forward_batch(const HybridModel& model, std::span<const std::vector<corpus::TokenId>> batch,
                           bool keep_traces) {
  if (batch.empty()) throw Error(ErrorCode::empty_split, "empty batch");
  BatchForward out{Matrix(batch.size(), kClasses), {}};
  for (std::size_t i = 0; i < batch.size(); ++i) {
    ExampleTrace ex = forward_example(model, batch[i]);
    std::copy(ex.probs.begin(), ex.probs.end(), out.probs.row(i).begin());
    if (keep_traces) out.traces.push_back(std::move(ex));
  }
  return out;
}

Matrix model_forward(const HybridModel& model, std::span<const std::vector<corpus::TokenId>> batch) {
  return forward_batch(model, batch, false).probs;
}

std::vector<double> bias_only_probs(const HybridModel& model) {
  return softmax(model.dense_b.flat());
}

double model_backward(const HybridModel& model, const BatchForward& forward, std::span<const int> labels,
                      HybridGradients& grads) {
  if (forward.traces.size() != labels.size()) {
    throw Error(ErrorCode::dim_mismatch, "backward needs one label per cached example");
  }
  const double weight = 1.0 / static_cast<double>(labels.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    loss += cross_entropy(forward.traces[i].probs, labels[i]) * weight;
    backward_example(model, forward.traces[i], labels[i], weight, grads);
  }
  return loss;
}

double batch_loss(const HybridModel& model, std::span<const std::vector<corpus::TokenId>> batch,
                  std::span<const int> labels) {
  const Matrix probs = model_forward(model, batch);
  double loss = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) loss += cross_entropy(probs.row(i), labels[i]);
  return loss / static_cast<double>(labels.size());
}

std::vector<double> softmax(std::span<const double> logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) sum += p[i] = std::exp(logits[i] - m);
  for (auto& v : p) v /= sum;
  return p;
}

double cross_entropy(std::span<const double> probs, int label) {
  return -std::log(std::max(probs[static_cast<std::size_t>(label)], 1e-12));
}

// ---------------------------------------------------------------------------

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
  auto& model = const_cast<HybridModel&>(checkpoint.model);
  nlohmann::json header;
  header["format"] = "rumil-hybrid";
  header["version"] = 1;
  header["config"] = {{"static_mode", std::string(static_mode_name(model.config.static_mode))},
                      {"use_bigru", model.config.use_bigru},
                      {"hidden", model.config.hidden},
                      {"bigru_hidden", model.config.bigru_hidden}};
  auto channels = nlohmann::json::array();
  for (const auto& c : model.channels) channels.push_back(std::string(embed::method_name(c.source)));
  header["channels"] = channels;
  header["max_len"] = checkpoint.max_len;
  header["vocabulary"] = checkpoint.vocab.to_text();
  header["rules"] = checkpoint.rules_text;
  const auto storage = named_storage(model);
  auto dir = nlohmann::json::array();
  for (const auto& [name, m] : storage) dir.push_back({{"name", name}, {"rows", m->rows()}, {"cols", m->cols()}});
  header["tensors"] = dir;
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
  out.write(kMagic, sizeof kMagic);
  write_u64(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [name, m] : storage) {
    for (double v : m->flat()) write_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw Error(ErrorCode::io, "write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot open " + path.string());
  char magic[8] = {};
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw Error(ErrorCode::bad_header, path.string() + " is not a rumil checkpoint");
  }
  const std::uint64_t len = read_u64(in);
  if (len > (1ull << 34)) throw Error(ErrorCode::bad_header, "implausible checkpoint header length");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw Error(ErrorCode::bad_header, "truncated checkpoint header");

  Checkpoint ck;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
    if (header.at("format") != "rumil-hybrid") throw Error(ErrorCode::bad_header, "unknown checkpoint format");
    const auto& cfg = header.at("config");
    ck.model.config.static_mode = parse_static_mode(cfg.at("static_mode").get<std::string>());
    ck.model.config.use_bigru = cfg.at("use_bigru").get<bool>();
    ck.model.config.hidden = cfg.at("hidden").get<std::size_t>();
    ck.model.config.bigru_hidden = cfg.at("bigru_hidden").get<std::size_t>();
    const auto channels = header.at("channels").get<std::vector<std::string>>();
    if (channels.size() != kChannels) throw Error(ErrorCode::checkpoint_mismatch, "expected three channels");
    for (std::size_t ch = 0; ch < kChannels; ++ch) ck.model.channels[ch].source = embed::parse_method(channels[ch]);
    ck.max_len = header.at("max_len").get<std::size_t>();
    ck.vocab = corpus::Vocabulary::parse(header.at("vocabulary").get<std::string>());
    ck.rules_text = header.at("rules").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::bad_header, std::string("malformed checkpoint header: ") + e.what());
  }

  HybridModel& model = ck.model;
  // Placeholder shapes so named_storage lists the tuned/bigru slots the
  // header describes.
  for (auto& c : model.channels) {
    if (model.config.static_mode == StaticMode::static_plus_nonstatic) c.tuned = Matrix(1, 1);
  }
  std::map<std::string, std::pair<std::size_t, std::size_t>> shapes;
  for (const auto& t : header.at("tensors")) {
    shapes[t.at("name").get<std::string>()] = {t.at("rows").get<std::size_t>(), t.at("cols").get<std::size_t>()};
  }
  const auto storage = named_storage(model);
  if (storage.size() != shapes.size()) {
    throw Error(ErrorCode::checkpoint_mismatch, "tensor directory does not match the declared architecture");
  }
  for (const auto& [name, m] : storage) {
    auto it = shapes.find(name);
    if (it == shapes.end()) throw Error(ErrorCode::checkpoint_mismatch, "missing tensor " + name);
    *m = Matrix(it->second.first, it->second.second);
  }
  for (const auto& t : header.at("tensors")) {
    const auto name = t.at("name").get<std::string>();
    auto match = std::find_if(storage.begin(), storage.end(), [&](const auto& p) { return p.first == name; });
    for (auto& v : match->second->flat()) v = std::bit_cast<double>(read_u64(in));
  }

  const std::size_t V = ck.vocab.size();
  const std::size_t H = model.config.hidden;
  for (auto& c : model.channels) {
    const std::size_t d = c.frozen.cols();
    if (c.frozen.rows() != V) {
      throw Error(ErrorCode::checkpoint_mismatch, "table rows differ from the bundled vocabulary size");
    }
    if (!c.tuned.empty() && (c.tuned.rows() != V || c.tuned.cols() != d)) {
      throw Error(ErrorCode::checkpoint_mismatch, "tuned table shape differs from frozen table");
    }
    for (const auto& g : c.gru) {
      if (g.W.cols() != d || g.W.rows() != 3 * H || g.U.rows() != 3 * H || g.U.cols() != H) {
        throw Error(ErrorCode::checkpoint_mismatch,
                    "embedding dimension " + std::to_string(d) + " disagrees with GRU input size " +
                        std::to_string(g.W.cols()));
      }
    }
  }
  if (model.config.use_bigru) {
    for (const GruCell* g : {&model.bigru_forward, &model.bigru_backward}) {
      if (g->W.cols() != model.unified_dim() || g->U.cols() != model.config.bigru_hidden) {
        throw Error(ErrorCode::checkpoint_mismatch, "Bi-GRU shapes disagree with the channel GRUs");
      }
    }
  }
  if (model.dense_w.rows() != kClasses || model.dense_w.cols() != model.pooled_dim()) {
    throw Error(ErrorCode::checkpoint_mismatch, "dense layer shape disagrees with the pooled width");
  }
  return ck;
}

}  // namespace rumil::net
