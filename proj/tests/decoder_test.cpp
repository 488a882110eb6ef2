/* Copyright 2026 The vcot Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "support.hpp"
#include "vcot/decoder.hpp"
#include "vcot/model.hpp"

namespace vcot {
namespace {

DecoderConfig small_decoder(int vocab = 16) {
  DecoderConfig c;
  c.model_dim = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.mlp_hidden = 16;
  c.vocab_size = vocab;
  c.max_seq_len = 32;
  return c;
}

SequenceLayout token_layout(const std::vector<int>& ids) {
  SequenceLayout l;
  for (int id : ids) l.push_token(id, Turn::kAgent, true);
  l.loss_mask[0] = false;
  return l;
}

Mat<double> run_logits(const Decoder<double>& dec, const ParamStore<double>& p, const SequenceLayout& l,
                       const Mat<double>& slots, std::vector<std::vector<Mat<double>>>* probs = nullptr) {
  Graph<double> g(&p);
  return g.value(dec.forward(g, l, g.constant(slots), 2, probs));
}

TEST(DecoderForward, IsCausal) {
  ParamStore<double> p;
  Rng rng(1);
  Decoder<double> dec(small_decoder(), 4, p, rng);
  Rng data(2);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> ids(12);
    for (int& id : ids) id = data.uniform_int(0, 15);
    SequenceLayout l = token_layout(ids);
    const Mat<double> base = run_logits(dec, p, l, Mat<double>(0, 8));
    const int t = data.uniform_int(0, 10);
    SequenceLayout changed = l;
    // Permute and perturb everything after t.
    std::reverse(changed.ids.begin() + t + 1, changed.ids.end());
    changed.ids.back() = (changed.ids.back() + 7) % 16;
    const Mat<double> after = run_logits(dec, p, changed, Mat<double>(0, 8));
    EXPECT_EQ(base.topRows(t + 1), after.topRows(t + 1)) << "t=" << t;
  }
}

TEST(DecoderForward, VisualSlotsAreCausalToo) {
  ParamStore<double> p;
  Rng rng(3);
  Decoder<double> dec(small_decoder(), 4, p, rng);
  SequenceLayout l;
  l.push_token(kBos, Turn::kUser);
  l.push_slot(TokenProvenance::grid(0, 1), Turn::kUser);
  l.push_token(3, Turn::kAgent, true);
  l.push_slot(TokenProvenance::crop(0, 2), Turn::kUser);
  l.push_token(4, Turn::kAgent, true);
  Mat<double> slots = Mat<double>::Random(2, 8);
  const Mat<double> a = run_logits(dec, p, l, slots);
  slots.row(1).setRandom();
  const Mat<double> b = run_logits(dec, p, l, slots);
  EXPECT_EQ(a.topRows(3), b.topRows(3));
  EXPECT_NE(a.row(3), b.row(3));
}

TEST(DecoderForward, AttentionRowsSumToOne) {
  ParamStore<double> p;
  Rng rng(4);
  Decoder<double> dec(small_decoder(), 4, p, rng);
  std::vector<std::vector<Mat<double>>> probs;
  run_logits(dec, p, token_layout({1, 5, 9, 2, 2, 7, 3}), Mat<double>(0, 8), &probs);
  ASSERT_EQ(probs.size(), 2u);
  for (const auto& layer : probs)
    for (const auto& P : layer) {
      for (Eigen::Index i = 0; i < P.rows(); ++i) {
        EXPECT_NEAR(P.row(i).sum(), 1.0, 1e-6);
        for (Eigen::Index j = i + 1; j < P.cols(); ++j) EXPECT_EQ(P(i, j), 0.0);
      }
    }
}

// Hand-rolled forward for one layer, written with explicit loops.
struct LoopOracle {
  const ParamStore<double>& p;
  const Mat<double>& P(const std::string& n) const { return p.value(p.id(n)); }

  static std::vector<double> layer_norm(const std::vector<double>& x, const Mat<double>& g, const Mat<double>& b) {
    double mu = 0, var = 0;
    for (double v : x) mu += v;
    mu /= static_cast<double>(x.size());
    for (double v : x) var += (v - mu) * (v - mu);
    var /= static_cast<double>(x.size());
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i)
      y[i] = (x[i] - mu) / std::sqrt(var + 1e-5) * g(0, static_cast<Eigen::Index>(i)) + b(0, static_cast<Eigen::Index>(i));
    return y;
  }
  static std::vector<double> affine(const std::vector<double>& x, const Mat<double>& w, const Mat<double>& b) {
    std::vector<double> y(static_cast<std::size_t>(w.cols()));
    for (Eigen::Index j = 0; j < w.cols(); ++j) {
      double s = b(0, j);
      for (Eigen::Index i = 0; i < w.rows(); ++i) s += x[static_cast<std::size_t>(i)] * w(i, j);
      y[static_cast<std::size_t>(j)] = s;
    }
    return y;
  }

  std::vector<std::vector<double>> run(const std::vector<int>& ids, int heads) const {
    const int n = static_cast<int>(ids.size());
    const auto d = P("dec.tok_emb").cols();
    std::vector<std::vector<double>> x(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(d)));
    for (int t = 0; t < n; ++t)
      for (Eigen::Index c = 0; c < d; ++c)
        x[static_cast<std::size_t>(t)][static_cast<std::size_t>(c)] = P("dec.tok_emb")(ids[static_cast<std::size_t>(t)], c) + P("dec.pos_emb")(t, c);
    const std::string b = "dec.blk0";
    std::vector<std::vector<double>> qkv;
    for (auto& row : x) qkv.push_back(affine(layer_norm(row, P(b + ".ln1.g"), P(b + ".ln1.b")), P(b + ".qkv.w"), P(b + ".qkv.b")));
    const auto dh = d / heads;
    std::vector<std::vector<double>> att(static_cast<std::size_t>(n), std::vector<double>(static_cast<std::size_t>(d), 0.0));
    for (int h = 0; h < heads; ++h)
      for (int i = 0; i < n; ++i) {
        std::vector<double> s(static_cast<std::size_t>(i + 1));
        double mx = -1e300, z = 0;
        for (int j = 0; j <= i; ++j) {
          double dot = 0;
          for (Eigen::Index k = 0; k < dh; ++k)
            dot += qkv[static_cast<std::size_t>(i)][static_cast<std::size_t>(h * dh + k)] * qkv[static_cast<std::size_t>(j)][static_cast<std::size_t>(d + h * dh + k)];
          s[static_cast<std::size_t>(j)] = dot / std::sqrt(static_cast<double>(dh));
          mx = std::max(mx, s[static_cast<std::size_t>(j)]);
        }
        for (double& v : s) z += (v = std::exp(v - mx));
        for (int j = 0; j <= i; ++j)
          for (Eigen::Index k = 0; k < dh; ++k)
            att[static_cast<std::size_t>(i)][static_cast<std::size_t>(h * dh + k)] += s[static_cast<std::size_t>(j)] / z * qkv[static_cast<std::size_t>(j)][static_cast<std::size_t>(2 * d + h * dh + k)];
      }
    std::vector<std::vector<double>> logits;
    for (int t = 0; t < n; ++t) {
      auto& row = x[static_cast<std::size_t>(t)];
      const auto o = affine(att[static_cast<std::size_t>(t)], P(b + ".attn_out.w"), P(b + ".attn_out.b"));
      for (std::size_t c = 0; c < row.size(); ++c) row[c] += o[c];
      auto h1 = affine(layer_norm(row, P(b + ".ln2.g"), P(b + ".ln2.b")), P(b + ".fc1.w"), P(b + ".fc1.b"));
      for (double& v : h1) v = 0.5 * v * (1 + std::tanh(std::sqrt(2 / std::numbers::pi) * (v + 0.044715 * v * v * v)));
      const auto m = affine(h1, P(b + ".fc2.w"), P(b + ".fc2.b"));
      for (std::size_t c = 0; c < row.size(); ++c) row[c] += m[c];
      logits.push_back(affine(layer_norm(row, P("dec.norm.g"), P("dec.norm.b")), P("dec.head.w"), P("dec.head.b")));
    }
    return logits;
  }
};

TEST(DecoderForward, TwoPositionsMatchLoopOracle) {
  DecoderConfig c = small_decoder();
  c.n_layers = 1;
  ParamStore<double> p;
  Rng rng(5);
  Decoder<double> dec(c, 4, p, rng);
  // Randomize the zero-initialized biases and unit gains too.
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto& v = p.value(static_cast<ParamId>(i));
    for (Eigen::Index k = 0; k < v.size(); ++k) v.data()[k] += 0.1 * rng.normal();
  }
  const std::vector<int> ids = {3, 11};
  const Mat<double> got = run_logits(dec, p, token_layout(ids), Mat<double>(0, 8));
  const auto want = LoopOracle{p}.run(ids, c.n_heads);
  for (int t = 0; t < 2; ++t)
    for (int v = 0; v < c.vocab_size; ++v)
      EXPECT_NEAR(got(t, v), want[static_cast<std::size_t>(t)][static_cast<std::size_t>(v)], 1e-9);
}

TEST(DecoderForward, RejectsSlotMismatch) {
  ParamStore<double> p;
  Rng rng(6);
  Decoder<double> dec(small_decoder(), 4, p, rng);
  SequenceLayout l = token_layout({1, 2});
  l.push_slot(TokenProvenance::grid(0, 0), Turn::kUser);
  EXPECT_THROW(run_logits(dec, p, l, Mat<double>(0, 8)), InvalidInput);
  EXPECT_THROW(run_logits(dec, p, l, Mat<double>::Zero(2, 8)), InvalidInput);
}

TEST(MaskedLoss, UniformLogitsGiveLogVocab) {
  Graph<double> g;
  SequenceLayout l = token_layout({1, 2, 3, 4});
  Var logits = g.constant(Mat<double>::Zero(4, 16));
  EXPECT_NEAR(g.value(masked_loss(g, logits, l))(0, 0), std::log(16.0), 1e-12);
  EXPECT_NEAR(std::log(16.0), 2.7726, 1e-4);
}

TEST(MaskedLoss, ConfidentCorrectLogitsGiveZero) {
  Graph<double> g;
  SequenceLayout l = token_layout({1, 2, 3});
  Mat<double> L = Mat<double>::Zero(3, 16);
  L(0, 2) = 100;
  L(1, 3) = 100;
  EXPECT_LT(g.value(masked_loss(g, g.constant(L), l))(0, 0), 1e-40);
}

TEST(MaskedLoss, MatchesPerPositionSummation) {
  Rng rng(7);
  SequenceLayout l;
  for (int t = 0; t < 10; ++t) l.push_token(rng.uniform_int(0, 15), t % 3 == 0 ? Turn::kUser : Turn::kAgent, t % 3 != 0);
  Mat<double> L(10, 16);
  for (Eigen::Index i = 0; i < L.size(); ++i) L.data()[i] = 3 * rng.normal();
  double total = 0;
  int count = 0;
  for (int t = 1; t < 10; ++t) {
    if (!l.loss_mask[static_cast<std::size_t>(t)]) continue;
    double z = 0;
    for (int v = 0; v < 16; ++v) z += std::exp(L(t - 1, v));
    total += std::log(z) - L(t - 1, l.ids[static_cast<std::size_t>(t)]);
    ++count;
  }
  Graph<double> g;
  EXPECT_NEAR(g.value(masked_loss(g, g.constant(L), l))(0, 0), total / count, 1e-9);
}

TEST(MaskedLoss, EmptyMaskIsError) {
  SequenceLayout l;
  l.push_token(1, Turn::kUser);
  l.push_token(2, Turn::kUser);
  Graph<double> g;
  EXPECT_THROW(masked_loss(g, g.constant(Mat<double>::Zero(2, 16)), l), InvalidInput);
}

TEST(Backward, UnusedEmbeddingRowsGetZeroGradient) {
  ParamStore<double> p;
  Rng rng(8);
  Decoder<double> dec(small_decoder(), 4, p, rng);
  SequenceLayout l = token_layout({1, 2, 3, 2});
  Graph<double> g(&p);
  Var loss = masked_loss(g, dec.forward(g, l, g.constant(Mat<double>(0, 8)), 2), l);
  Grads<double> grads(p);
  g.backward(loss, &grads);
  const auto& te = grads.g[static_cast<std::size_t>(dec.tok_emb())];
  for (int v : {0, 4, 5, 15}) EXPECT_EQ(te.row(v).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_GT(te.row(1).norm(), 0.0);
  const auto& pe = grads.g[static_cast<std::size_t>(dec.pos_emb())];
  for (int t = 4; t < 32; ++t) EXPECT_EQ(pe.row(t).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Backward, SaturatedPredictionsHaveVanishingGradient) {
  Graph<double> g;
  SequenceLayout l = token_layout({1, 2, 3});
  Mat<double> L = Mat<double>::Zero(3, 16);
  L(0, 2) = 60;
  L(1, 3) = 60;
  Var logits = g.input(L);
  g.backward(masked_loss(g, logits, l));
  EXPECT_LT(g.grad(logits).norm(), 1e-20);
}

TEST(AdamW, ZeroGradientZeroMomentsLeavesParams) {
  ParamStore<float> p;
  p.add("w", Mat<float>::Constant(2, 3, 0.5f));
  AdamState<float> st(p);
  Grads<float> g(p);
  AdamWConfig c;
  c.total_steps = 10;
  step_optimizer(p, g, st, c);
  EXPECT_EQ(p.value(0), (Mat<float>::Constant(2, 3, 0.5f)));
}

TEST(AdamW, FirstStepClosedForm) {
  ParamStore<double> p;
  p.add("w", Mat<double>::Constant(1, 1, 2.0));
  AdamState<double> st(p);
  Grads<double> g(p);
  g.g[0](0, 0) = 1.0;
  AdamWConfig c;
  c.lr = 0.1;
  c.warmup_ratio = 0.0;
  c.total_steps = 1000000;
  c.grad_clip = 0.0;
  const double lr = step_optimizer(p, g, st, c);
  // Bias-corrected m = 1, v = 1: update = -lr * 1 / (1 + eps).
  EXPECT_NEAR(p.value(0)(0, 0) - 2.0, -lr / (1.0 + 1e-8), 1e-15);
  EXPECT_NEAR(p.value(0)(0, 0) - 2.0, -0.1, 1e-6);
}

TEST(AdamW, NonFiniteGradientIsTrainingError) {
  ParamStore<double> p;
  p.add("w", Mat<double>::Zero(1, 2));
  AdamState<double> st(p);
  st.step = 41;
  Grads<double> g(p);
  g.g[0](0, 1) = std::numeric_limits<double>::quiet_NaN();
  try {
    step_optimizer(p, g, st, AdamWConfig{});
    FAIL();
  } catch (const TrainingError& e) {
    EXPECT_EQ(e.step(), 41);
  }
}

TEST(Schedule, WarmupThenCosineToZero) {
  AdamWConfig c;
  c.lr = 1e-3;
  c.total_steps = 1000;
  EXPECT_NEAR(scheduled_lr(c, 0), 1e-3 / 30, 1e-15);
  EXPECT_NEAR(scheduled_lr(c, 29), 1e-3, 1e-15);
  EXPECT_NEAR(scheduled_lr(c, 999), 0.0, 1e-12);
  for (long s = 30; s < 999; ++s) EXPECT_LE(scheduled_lr(c, s + 1), scheduled_lr(c, s));
}

TEST(DecoderSession, MatchesGraphForward) {
  const Vocab vocab;
  Model<double> m(testing::tiny_model_config(), 4);
  const ImageTensor img = testing::random_image(16, 5);
  ConversationSample s = testing::tiny_sample(vocab);
  for (auto kind : {StrategyKind::kImplicitAttention, StrategyKind::kRoiResample, StrategyKind::kRoiReencode}) {
    const Strategy st = Strategy::defaults(kind);
    Graph<double> g(&m.params());
    auto f = m.forward(g, s, img, st, vocab);
    const Mat<double>& full = g.value(f.logits);
    // Replay the same layout through the KV-cached session.
    DecoderSession<double> sess(m.decoder(), m.params(), m.grid_side());
    Var slots = f.context.id >= 0 ? ops::vstack(g, {f.image_tokens, f.context}) : f.image_tokens;
    const Mat<double>& sv = g.value(slots);
    int k = 0;
    for (std::size_t t = 0; t < f.layout.size(); ++t) {
      if (f.layout.ids[t] == kVisualSlot) {
        sess.push_visual(sv.row(k), f.layout.slot_provenance[static_cast<std::size_t>(k)]);
        ++k;
      } else {
        sess.push_token(f.layout.ids[t]);
      }
      if (t % 7 == 3 || t + 1 == f.layout.size()) {
        EXPECT_LE((sess.logits().row(0) - full.row(static_cast<Eigen::Index>(t))).cwiseAbs().maxCoeff(), 1e-10)
            << strategy_name(kind) << " t=" << t;
      }
    }
  }
}

}  // namespace
}  // namespace vcot
