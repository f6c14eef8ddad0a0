#include <gtest/gtest.h>

#include <cmath>

#include "../support/fixtures.hpp"
#include "../support/gradcheck.hpp"
#include "rumil/net.hpp"
#include "rumil/train.hpp"

using namespace rumil;
using net::Direction;
using net::StaticMode;

namespace {

// Straight transcription of the GRU equations, one gate at a time.
std::vector<double> reference_step(const net::GruCell& c, const std::vector<double>& x, const std::vector<double>& h) {
  const std::size_t H = c.hidden();
  auto gate = [&](std::size_t block, std::size_t j, const std::vector<double>& hh) {
    double a = c.b(block * H + j, 0);
    for (std::size_t k = 0; k < x.size(); ++k) a += c.W(block * H + j, k) * x[k];
    for (std::size_t k = 0; k < H; ++k) a += c.U(block * H + j, k) * hh[k];
    return a;
  };
  std::vector<double> z(H), r(H), rh(H), out(H);
  for (std::size_t j = 0; j < H; ++j) {
    z[j] = 1.0 / (1.0 + std::exp(-gate(0, j, h)));
    r[j] = 1.0 / (1.0 + std::exp(-gate(1, j, h)));
  }
  for (std::size_t j = 0; j < H; ++j) rh[j] = r[j] * h[j];
  for (std::size_t j = 0; j < H; ++j) out[j] = (1 - z[j]) * h[j] + z[j] * std::tanh(gate(2, j, rh));
  return out;
}

net::GruCell random_cell(std::size_t d, std::size_t H, std::uint64_t seed) {
  Rng rng(seed);
  auto c = net::GruCell::glorot(d, H, rng);
  for (auto& v : c.b.flat()) v = rng.uniform(-0.5, 0.5);
  return c;
}

}  // namespace

TEST(GruStep, ZeroWeightsHalveThePreviousState) {
  const auto cell = net::GruCell::zeros(3, 4);
  const std::vector<double> x = {0.3, -1.0, 2.0}, h = {1.0, -0.4, 0.8, 0.0};
  const auto g = net::gru_step_gates(cell, x, h);
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_DOUBLE_EQ(g.z[j], 0.5);
    EXPECT_DOUBLE_EQ(g.candidate[j], 0.0);
    EXPECT_DOUBLE_EQ(g.h[j], 0.5 * h[j]);
  }
}

TEST(GruStep, ZeroInputZeroStateZeroBiasGivesZero) {
  const auto cell = random_cell(3, 4, 1);
  auto c = cell;
  c.b.fill(0.0);
  for (double v : net::gru_step(c, std::vector<double>(3, 0.0), std::vector<double>(4, 0.0))) EXPECT_EQ(v, 0.0);
}

TEST(GruStep, MatchesReferenceTranscription) {
  const auto cell = random_cell(5, 3, 7);
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> x(5), h(3);
    for (auto& v : x) v = rng.uniform(-2, 2);
    for (auto& v : h) v = rng.uniform(-1, 1);
    const auto got = net::gru_step(cell, x, h);
    const auto want = reference_step(cell, x, h);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(got[j], want[j], 1e-14);
  }
}

TEST(GruStep, GatesInUnitIntervalAndStateBounded) {
  Rng rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    const auto cell = random_cell(4, 5, 100 + static_cast<std::uint64_t>(trial));
    std::vector<double> x(4), h(5);
    for (auto& v : x) v = rng.uniform(-5, 5);
    for (auto& v : h) v = rng.uniform(-3, 3);
    const auto g = net::gru_step_gates(cell, x, h);
    for (std::size_t j = 0; j < 5; ++j) {
      EXPECT_GT(g.z[j], 0.0);
      EXPECT_LT(g.z[j], 1.0);
      EXPECT_GT(g.r[j], 0.0);
      EXPECT_LT(g.r[j], 1.0);
      EXPECT_LE(std::abs(g.h[j]), std::max(std::abs(h[j]), 1.0) + 1e-12);
    }
  }
}

TEST(RunGru, LengthOneIsOneStepFromZero) {
  const auto cell = random_cell(3, 2, 4);
  Matrix x(1, 3);
  x(0, 0) = 0.5, x(0, 1) = -0.1, x(0, 2) = 0.9;
  const auto run = net::run_gru(cell, x, 1, Direction::forward);
  const auto step = net::gru_step(cell, x.row(0), std::vector<double>(2, 0.0));
  EXPECT_EQ(run.outputs(0, 0), step[0]);
  EXPECT_EQ(run.outputs(0, 1), step[1]);
}

TEST(RunGru, BackwardEqualsForwardOverReversedInput) {
  const auto cell = random_cell(3, 4, 9);
  const Matrix x = fixtures::random_matrix(6, 3, 10, 1.0);
  Matrix rev(6, 3);
  for (std::size_t t = 0; t < 6; ++t) {
    for (std::size_t k = 0; k < 3; ++k) rev(t, k) = x(5 - t, k);
  }
  const auto back = net::run_gru(cell, x, 6, Direction::backward);
  const auto fwd = net::run_gru(cell, rev, 6, Direction::forward);
  for (std::size_t t = 0; t < 6; ++t) {
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(back.outputs(t, j), fwd.outputs(5 - t, j));
  }
}

TEST(RunGru, MaskFlagsPaddingAndValidStepsIgnoreIt) {
  const auto cell = random_cell(3, 4, 12);
  Matrix x = fixtures::random_matrix(5, 3, 13, 1.0);
  const auto a = net::run_gru(cell, x, 3, Direction::backward);
  for (std::size_t k = 0; k < 3; ++k) x(4, k) += 10.0;
  const auto b = net::run_gru(cell, x, 3, Direction::backward);
  EXPECT_EQ(a.mask, (std::vector<bool>{true, true, true, false, false}));
  for (std::size_t t = 0; t < 3; ++t) {
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(a.outputs(t, j), b.outputs(t, j));
  }
  const auto none = net::run_gru(cell, x, 0, Direction::forward);
  for (bool m : none.mask) EXPECT_FALSE(m);
}

TEST(Channel, ContextStreamsShiftWithBosAndEos) {
  const std::vector<corpus::TokenId> ids = {7, 8, 9, 0, 0};
  const auto s = net::context_streams(ids);
  EXPECT_EQ(s[0], (std::vector<corpus::TokenId>{corpus::kBos, 7, 8}));
  EXPECT_EQ(s[1], (std::vector<corpus::TokenId>{7, 8, 9}));
  EXPECT_EQ(s[2], (std::vector<corpus::TokenId>{8, 9, corpus::kEos}));
}

TEST(Model, IntermediateShapesAtDefaultSizes) {
  net::ModelConfig cfg;  // H = H' = 64
  auto model = net::make_hybrid(cfg, fixtures::random_tables(20, 8, 1), 2);
  std::vector<std::vector<corpus::TokenId>> batch(2, std::vector<corpus::TokenId>(12));
  for (std::size_t t = 0; t < 12; ++t) batch[0][t] = batch[1][t] = static_cast<corpus::TokenId>(4 + t % 16);
  const auto fwd = net::forward_batch(model, batch);
  ASSERT_EQ(fwd.traces.size(), 2u);
  const auto& ex = fwd.traces[0];
  for (std::size_t ch = 0; ch < 3; ++ch) {
    std::size_t per_step = 0;
    for (const auto& tr : ex.channel[ch]) {
      EXPECT_EQ(tr.h.rows(), 12u);
      per_step += tr.h.cols();
    }
    EXPECT_EQ(per_step, 192u);
  }
  EXPECT_EQ(ex.unified.rows(), 12u);
  EXPECT_EQ(ex.unified.cols(), 576u);
  EXPECT_EQ(ex.sequence.cols(), 128u);
  EXPECT_EQ(ex.pooled.size(), 128u);
  EXPECT_EQ(fwd.probs.rows(), 2u);
  EXPECT_EQ(fwd.probs.cols(), 3u);

  cfg.use_bigru = false;
  auto flat = net::make_hybrid(cfg, fixtures::random_tables(20, 8, 1), 2);
  EXPECT_EQ(net::forward_batch(flat, batch).traces[0].pooled.size(), 576u);
  EXPECT_EQ(flat.dense_w.cols(), 576u);
}

TEST(Model, ZeroDenseLayerGivesUniformOutput) {
  auto model = gradcheck::small_hybrid(StaticMode::static_plus_nonstatic, true, 1);
  model.dense_w.fill(0.0);
  model.dense_b.fill(0.0);
  const auto probs = net::model_forward(model, gradcheck::small_batch());
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    for (std::size_t c = 0; c < 3; ++c) EXPECT_DOUBLE_EQ(probs(i, c), 1.0 / 3.0);
  }
}

TEST(Model, AllPadSequenceIsAnError) {
  auto model = gradcheck::small_hybrid(StaticMode::all_static, true, 1);
  const std::vector<std::vector<corpus::TokenId>> batch = {{0, 0, 0}};
  try {
    net::model_forward(model, batch);
    FAIL() << "expected AllPadSequence";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::all_pad_sequence);
  }
}

TEST(Model, PadSuffixContentNeverChangesOutput) {
  auto model = gradcheck::small_hybrid(StaticMode::static_plus_nonstatic, true, 4);
  Rng rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<corpus::TokenId> ids(8, corpus::kPad);
    const std::size_t len = 1 + rng.below(7);
    for (std::size_t t = 0; t < len; ++t) ids[t] = static_cast<corpus::TokenId>(4 + rng.below(3));
    auto noisy = ids;
    // Anything after the first PAD is outside the valid prefix.
    for (std::size_t t = len + 1; t < noisy.size(); ++t) noisy[t] = static_cast<corpus::TokenId>(1 + rng.below(6));
    const std::vector<std::vector<corpus::TokenId>> a = {ids}, b = {noisy};
    const auto pa = net::model_forward(model, a), pb = net::model_forward(model, b);
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(pa(0, c), pb(0, c));
  }
}

TEST(Softmax, UniformLogits) {
  const auto p = net::softmax(std::vector<double>{0, 0, 0});
  for (double v : p) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
  EXPECT_NEAR(net::cross_entropy(p, 1), std::log(3.0), 1e-15);
  EXPECT_NEAR(net::cross_entropy(p, 1), 1.0986, 1e-4);
}

TEST(Softmax, ConfidentCorrectPredictionHasZeroLoss) {
  EXPECT_EQ(net::cross_entropy(std::vector<double>{1, 0, 0}, 0), 0.0);
  EXPECT_NEAR(net::cross_entropy(std::vector<double>{1, 0, 0}, 1), -std::log(1e-12), 1e-9);
}

TEST(Softmax, ShiftInvariant) {
  const std::vector<double> a = {0.2, -1.3, 0.7};
  const std::vector<double> b = {1000.2, 998.7, 1000.7};
  const auto pa = net::softmax(a), pb = net::softmax(b);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(pa[c], pb[c], 1e-12);
}

TEST(Softmax, RowsSumToOneOnRandomLogits) {
  Rng rng(5);
  for (int trial = 0; trial < 10000; ++trial) {
    std::vector<double> logits(3);
    for (auto& v : logits) v = rng.uniform(-50, 50);
    const auto p = net::softmax(logits);
    EXPECT_NEAR(p[0] + p[1] + p[2], 1.0, 1e-6);
  }
}

class HybridGradient : public ::testing::TestWithParam<std::tuple<StaticMode, bool>> {};

TEST_P(HybridGradient, MatchesCentralDifferences) {
  const auto [mode, bigru] = GetParam();
  EXPECT_LT(gradcheck::hybrid(mode, bigru, 3), 1e-4);
}

INSTANTIATE_TEST_SUITE_P(AllConfigs, HybridGradient,
                         ::testing::Combine(::testing::Values(StaticMode::all_static, StaticMode::static_plus_nonstatic),
                                            ::testing::Bool()));

TEST(Backward, PoolingRoutesGradientOnlyToArgmaxSteps) {
  // With the Bi-GRU off, the unified sequence is pooled directly, so the
  // gradient reaching each channel GRU output is visible per step.
  auto model = gradcheck::small_hybrid(StaticMode::all_static, false, 6);
  const auto& batch = gradcheck::small_batch();
  const auto fwd = net::forward_batch(model, batch);
  const auto& ex = fwd.traces[0];
  for (std::size_t j = 0; j < ex.pooled.size(); ++j) {
    for (std::size_t t = 0; t < ex.length; ++t) {
      if (t == ex.argmax[j]) {
        EXPECT_EQ(ex.sequence(t, j), ex.pooled[j]);
      } else {
        EXPECT_LE(ex.sequence(t, j), ex.pooled[j]);
      }
    }
  }
  // The dense gradient equals (p - y) pooled^T: only argmax values enter.
  auto grads = net::HybridGradients::zeros_like(model);
  const std::vector<int> labels = {1, 2};
  net::model_backward(model, fwd, labels, grads);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t j = 0; j < ex.pooled.size(); ++j) {
      double want = 0.0;
      for (std::size_t i = 0; i < 2; ++i) {
        want += (fwd.traces[i].probs[c] - (static_cast<int>(c) == labels[i] ? 1.0 : 0.0)) * fwd.traces[i].pooled[j] / 2.0;
      }
      EXPECT_NEAR(grads.dense_w(c, j), want, 1e-14);
    }
  }
}

TEST(Backward, AllStaticHasNoTableGradient) {
  auto model = gradcheck::small_hybrid(StaticMode::all_static, true, 2);
  auto grads = net::HybridGradients::zeros_like(model);
  for (const auto& t : grads.tuned) EXPECT_TRUE(t.empty());
  for (const auto& name : net::trainable_names(model)) EXPECT_EQ(name.find("table"), std::string::npos) << name;
  for (const auto& name : net::trainable_names(model)) EXPECT_EQ(name.find(".tuned"), std::string::npos) << name;
}

namespace {

std::size_t count_gru_cells(const std::vector<net::TensorInfo>& inv, const std::string& prefix) {
  std::size_t n = 0;
  for (const auto& t : inv) {
    if (t.name.rfind(prefix, 0) == 0 && t.name.size() > 2 && t.name.ends_with(".W")) ++n;
  }
  return n;
}

}  // namespace

TEST(Inventory, AblationConfigsMatchArchitecture) {
  for (auto mode : {StaticMode::all_static, StaticMode::static_plus_nonstatic}) {
    for (bool bigru : {false, true}) {
      net::ModelConfig cfg;
      cfg.static_mode = mode;
      cfg.use_bigru = bigru;
      cfg.hidden = 5;
      cfg.bigru_hidden = 4;
      const auto model = net::make_hybrid(cfg, fixtures::random_tables(9, 6, 1), 1);
      const auto inv = net::tensor_inventory(model);
      EXPECT_EQ(count_gru_cells(inv, "channel."), 9u);
      EXPECT_EQ(count_gru_cells(inv, "bigru."), bigru ? 2u : 0u);
      std::size_t tables = 0, trainable_tables = 0;
      for (const auto& t : inv) {
        if (t.name.find(".table.") == std::string::npos) continue;
        ++tables;
        if (t.trainable) {
          ++trainable_tables;
          EXPECT_TRUE(t.name.ends_with(".right")) << t.name;
        }
      }
      EXPECT_EQ(tables, 9u);
      EXPECT_EQ(trainable_tables, mode == StaticMode::all_static ? 0u : 3u);
      const auto dense = std::find_if(inv.begin(), inv.end(), [](const auto& t) { return t.name == "dense.W"; });
      ASSERT_NE(dense, inv.end());
      EXPECT_EQ(dense->cols, bigru ? 8u : 45u);
    }
  }
}

TEST(Training, StaticTablesStayBitwiseAndRightTablesDrift) {
  const auto fx = fixtures::separable_fixture();
  auto model = net::make_hybrid({StaticMode::static_plus_nonstatic, true, 8, 8},
                                fixtures::random_tables(fx.vocab.size(), 6, 3), 4);
  const auto before = model;
  train::FitConfig cfg;
  cfg.epochs = 2;
  const auto result = train::fit(model, fx.data, fx.data, cfg);
  for (std::size_t ch = 0; ch < 3; ++ch) {
    EXPECT_TRUE(result.best.channels[ch].frozen == before.channels[ch].frozen);
    EXPECT_FALSE(result.best.channels[ch].tuned == before.channels[ch].tuned);
  }
}

TEST(Checkpoint, RoundTripIsBitIdentical) {
  fixtures::TempDir dir("ckpt");
  const auto fx = fixtures::separable_fixture();
  for (bool bigru : {false, true}) {
    auto model = net::make_hybrid({StaticMode::static_plus_nonstatic, bigru, 6, 5},
                                  fixtures::random_tables(fx.vocab.size(), 7, 8), 9);
    for (auto& c : model.channels) c.tuned.flat()[3] += 0.125;
    net::save_checkpoint({model, fx.vocab, "^x$\ty\n", 12}, dir / "m.ckpt");
    const auto ck = net::load_checkpoint(dir / "m.ckpt");
    EXPECT_EQ(ck.vocab, fx.vocab);
    EXPECT_EQ(ck.rules_text, "^x$\ty\n");
    EXPECT_EQ(ck.max_len, 12u);
    const auto a = net::model_forward(model, fx.data.sequences);
    const auto b = net::model_forward(ck.model, fx.data.sequences);
    EXPECT_TRUE(a == b);
  }
}

TEST(Checkpoint, DimensionDisagreementIsRejected) {
  fixtures::TempDir dir("ckpt_bad");
  const auto fx = fixtures::separable_fixture();
  auto model = net::make_hybrid({StaticMode::all_static, false, 4, 4}, fixtures::random_tables(fx.vocab.size(), 5, 1), 2);
  model.channels[1].frozen = fixtures::random_matrix(fx.vocab.size(), 6, 3);  // GRU still expects d = 5
  net::save_checkpoint({model, fx.vocab, "", 12}, dir / "bad.ckpt");
  try {
    net::load_checkpoint(dir / "bad.ckpt");
    FAIL() << "expected CheckpointMismatch";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::checkpoint_mismatch);
  }
}

TEST(Checkpoint, GarbageFileIsBadHeader) {
  fixtures::TempDir dir("ckpt_garbage");
  fixtures::write_text(dir / "x.ckpt", "not a checkpoint");
  EXPECT_THROW(net::load_checkpoint(dir / "x.ckpt"), Error);
}
