#include <gtest/gtest.h>

#include <cmath>

#include "taylornet/model.hpp"

using namespace taylornet;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.frame_h = cfg.frame_w = 16;
  cfg.enc_mid = 4;
  cfg.latent_c = 4;
  cfg.dec_mid = 6;
  cfg.dec_low = 4;
  cfg.bank_k = 3;
  cfg.input_frames = 4;
  cfg.future_frames = 3;
  return cfg;
}

VideoBatch tiny_batch(int frames, uint64_t seed, int b = 2) {
  BounceSpec spec;
  spec.canvas = 16;
  spec.frames = frames;
  spec.batch = b;
  spec.max_speed = 1.5;
  for (int d = 0; d < 3; ++d) spec.sprite_set.push_back(resize_bilinear(render_glyph(d, 28), 7));
  return generate_bouncing(spec, seed);
}

}  // namespace

TEST(EncodeSplit, ShapesBatchingAndFiniteness) {
  Rng rng(1);
  auto cfg = tiny_config();
  auto params = init_model<float>(cfg, rng);
  Tape<float> tp;
  auto v = bind_model(tp, params, false);

  for (int B : {1, 3}) {
    Var frame = tp.leaf(Tensor<float>(Shape{B, 1, 16, 16}, 0.0f), false);
    auto enc = encode_split(tp, v, frame);
    EXPECT_EQ(tp.val(enc.u).shape(), (Shape{B, 4, 4, 4}));
    EXPECT_EQ(tp.val(enc.h_taylor).shape(), (Shape{B, 4, 4, 4}));
    EXPECT_EQ(tp.val(enc.h_residual).shape(), (Shape{B, 4, 4, 4}));
    EXPECT_TRUE(all_finite(tp.val(enc.u)));
    EXPECT_TRUE(all_finite(tp.val(enc.h_taylor)));
    EXPECT_TRUE(all_finite(tp.val(enc.h_residual)));
  }
  Var bad = tp.leaf(Tensor<float>(Shape{1, 1, 8, 8}), false);
  EXPECT_THROW(encode_split(tp, v, bad), std::invalid_argument);
}

TEST(MergeDecode, ZeroResidualBranchContributesNothing) {
  Rng rng(2);
  auto params = init_model<float>(tiny_config(), rng);
  Tape<float> tp;
  auto v = bind_model(tp, params, false);
  Tensor<float> a(Shape{1, 4, 4, 4});
  Rng r2(3);
  r2.fill_uniform(a, -1, 1);
  Var va = tp.leaf(a, false);
  Var zeros = tp.leaf(Tensor<float>(Shape{1, 4, 4, 4}), false);
  Var with_zero = merge_decode(tp, v, va, zeros);
  Var taylor_only = merge_decode(tp, v, va, kNoVar);
  for (int64_t i = 0; i < tp.val(with_zero).size(); ++i)
    EXPECT_EQ(tp.val(with_zero)[i], tp.val(taylor_only)[i]);  // D_R has no bias
}

TEST(MergeDecode, IdentityRemappersReduceToSumThenDecode) {
  Rng rng(4);
  auto params = init_model<float>(tiny_config(), rng);
  // both remappers = identity convolution
  params.dt_w.fill(0);
  params.dr_w.fill(0);
  for (int c = 0; c < 4; ++c) {
    params.dt_w.at(c, c, 1, 1) = 1.0f;
    params.dr_w.at(c, c, 1, 1) = 1.0f;
  }
  Tape<float> tp;
  auto v = bind_model(tp, params, false);
  Tensor<float> a(Shape{1, 4, 4, 4}), b(Shape{1, 4, 4, 4});
  Rng r2(5);
  r2.fill_uniform(a, -1, 1);
  r2.fill_uniform(b, -1, 1);
  Var va = tp.leaf(a, false), vb = tp.leaf(b, false);
  Var merged = merge_decode(tp, v, va, vb);

  // directly decode a + b through the same decoder stack
  Var sum = add(tp, va, vb);
  Var d = tanh_op(tp, conv_transpose2d(tp, sum, v.dec1_w, v.dec1_b, 2, 1));
  d = tanh_op(tp, conv_transpose2d(tp, d, v.dec2_w, v.dec2_b, 2, 1));
  Var direct = sigmoid(tp, conv2d(tp, d, v.head_w, v.head_b, 1, 1));

  for (int64_t i = 0; i < tp.val(merged).size(); ++i)
    EXPECT_NEAR(tp.val(merged)[i], tp.val(direct)[i], 2e-6f);
}

TEST(MergeDecode, OutputAlwaysInUnitRange) {
  Rng rng(6);
  auto params = init_model<float>(tiny_config(), rng);
  Tape<float> tp;
  auto v = bind_model(tp, params, false);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor<float> a(Shape{2, 4, 4, 4}), b(Shape{2, 4, 4, 4});
    rng.fill_uniform(a, -30, 30);
    rng.fill_uniform(b, -30, 30);
    Var out = merge_decode(tp, v, tp.leaf(a, false), tp.leaf(b, false));
    for (int64_t i = 0; i < tp.val(out).size(); ++i) {
      ASSERT_GE(tp.val(out)[i], 0.0f);
      ASSERT_LE(tp.val(out)[i], 1.0f);
    }
  }
}

TEST(ForwardSequence, ShapesHorizonsAndDegenerateCases) {
  Rng rng(7);
  auto params = init_model<float>(tiny_config(), rng);
  auto batch = tiny_batch(12, 21);
  Tape<float> tp(false);
  auto v = bind_model(tp, params, false);
  auto inputs = leaf_frames(tp, batch, 0, 4);

  auto preds = forward_sequence(tp, v, inputs, 3);
  ASSERT_EQ(preds.size(), 3u);
  for (Var p : preds) {
    EXPECT_EQ(tp.val(p).shape(), (Shape{2, 1, 16, 16}));
    EXPECT_TRUE(all_finite(tp.val(p)));
  }

  auto none = forward_sequence(tp, v, inputs, 0);
  EXPECT_TRUE(none.empty());

  std::vector<Var> empty;
  EXPECT_THROW(forward_sequence(tp, v, empty, 3), std::invalid_argument);

  auto teach_bad = leaf_frames(tp, batch, 4, 2);
  EXPECT_THROW(forward_sequence(tp, v, inputs, 3, &teach_bad), std::invalid_argument);
}

TEST(ForwardSequence, LongRolloutStaysFiniteAndBounded) {
  Rng rng(8);
  auto params = init_model<float>(tiny_config(), rng);
  auto batch = tiny_batch(4, 22);
  Tape<float> tp(false);
  auto v = bind_model(tp, params, false);
  auto inputs = leaf_frames(tp, batch, 0, 4);
  auto preds = forward_sequence(tp, v, inputs, 40, nullptr, nullptr, /*free_intermediates=*/true);
  ASSERT_EQ(preds.size(), 40u);
  for (Var p : preds) {
    ASSERT_FALSE(tp.val(p).empty());  // predictions survive the freeing pass
    for (int64_t i = 0; i < tp.val(p).size(); ++i) {
      ASSERT_TRUE(std::isfinite(tp.val(p)[i]));
      ASSERT_GE(tp.val(p)[i], 0.0f);
      ASSERT_LE(tp.val(p)[i], 1.0f);
    }
  }
}

TEST(ForwardSequence, DeterministicBitwise) {
  auto run = [] {
    Rng rng(9);
    auto params = init_model<float>(tiny_config(), rng);
    auto batch = tiny_batch(8, 23);
    Tape<float> tp(false);
    auto v = bind_model(tp, params, false);
    auto inputs = leaf_frames(tp, batch, 0, 4);
    auto preds = forward_sequence(tp, v, inputs, 4);
    std::vector<Tensor<float>> out;
    for (Var p : preds) out.push_back(tp.val(p));
    return out;
  };
  auto a = run(), b = run();
  for (size_t s = 0; s < a.size(); ++s)
    for (int64_t i = 0; i < a[s].size(); ++i) ASSERT_EQ(a[s][i], b[s][i]);
}

TEST(ForwardSequence, HorizonPrefixConsistencyExact) {
  Rng rng(10);
  auto params = init_model<float>(tiny_config(), rng);
  auto batch = tiny_batch(4, 24);
  Tape<float> tp(false);
  auto v = bind_model(tp, params, false);
  auto inputs = leaf_frames(tp, batch, 0, 4);
  auto short_roll = forward_sequence(tp, v, inputs, 5);
  auto long_roll = forward_sequence(tp, v, inputs, 20);
  for (size_t s = 0; s < short_roll.size(); ++s)
    for (int64_t i = 0; i < tp.val(short_roll[s]).size(); ++i)
      ASSERT_EQ(tp.val(short_roll[s])[i], tp.val(long_roll[s])[i]);
}

TEST(ForwardSequence, TeachingModeEquivalenceAtHorizonOne) {
  Rng rng(11);
  auto params = init_model<float>(tiny_config(), rng);
  auto batch = tiny_batch(6, 25);
  Tape<float> tp(false);
  auto v = bind_model(tp, params, false);
  auto inputs = leaf_frames(tp, batch, 0, 4);
  auto teacher = leaf_frames(tp, batch, 4, 1);
  auto teaching = forward_sequence(tp, v, inputs, 1, &teacher);
  auto free_running = forward_sequence(tp, v, inputs, 1);
  ASSERT_EQ(teaching.size(), 1u);
  for (int64_t i = 0; i < tp.val(teaching[0]).size(); ++i)
    ASSERT_EQ(tp.val(teaching[0])[i], tp.val(free_running[0])[i]);
}

TEST(ForwardSequence, TpuAnchoredToFirstFrame) {
  // h~_t must not depend on any input frame after the first: perturbing a
  // later frame leaves it bit-identical, and its gradient w.r.t. later
  // frames is exactly zero.
  Rng rng(12);
  auto params = init_model<double>(tiny_config(), rng);
  auto batch = tiny_batch(8, 26, 1);

  auto run_tilde = [&](double bump) {
    Tape<double> tp(false);
    auto v = bind_model(tp, params, false);
    std::vector<Var> inputs;
    for (int t = 0; t < 6; ++t) {
      auto f = batch.frame(0, t).cast<double>();
      if (t == 3) f[40] += bump;
      inputs.push_back(tp.leaf(f, false));
    }
    ForwardTrace<double> trace;
    forward_sequence(tp, v, inputs, 3, nullptr, &trace);
    std::vector<Tensor<double>> tilde;
    for (Var h : trace.h_tilde) tilde.push_back(tp.val(h));
    return tilde;
  };
  auto base = run_tilde(0.0), bumped = run_tilde(0.25);
  for (size_t s = 0; s < base.size(); ++s)
    for (int64_t i = 0; i < base[s].size(); ++i) ASSERT_EQ(base[s][i], bumped[s][i]);

  // gradient probe
  Tape<double> tp;
  auto v = bind_model(tp, params, false);
  std::vector<Var> inputs;
  for (int t = 0; t < 6; ++t) inputs.push_back(tp.leaf(batch.frame(0, t).cast<double>(), true));
  ForwardTrace<double> trace;
  forward_sequence(tp, v, inputs, 3, nullptr, &trace);
  Var probe = sum_all(tp, trace.h_tilde.back());
  tp.backward(probe);
  EXPECT_TRUE(tp.has_grad(inputs[0]));
  for (size_t t = 1; t < inputs.size(); ++t) {
    auto g = tp.grad_of(inputs[t]);
    for (int64_t i = 0; i < g.size(); ++i) ASSERT_EQ(g[i], 0.0);
  }
}

TEST(ForwardSequence, BranchAblationsRun) {
  Rng rng(13);
  for (auto [taylor, residual] : {std::pair{true, false}, {false, true}}) {
    auto cfg = tiny_config();
    cfg.taylor_branch_enabled = taylor;
    cfg.residual_branch_enabled = residual;
    auto params = init_model<float>(cfg, rng);
    auto batch = tiny_batch(8, 27);
    Tape<float> tp(false);
    auto v = bind_model(tp, params, false);
    auto inputs = leaf_frames(tp, batch, 0, 4);
    auto preds = forward_sequence(tp, v, inputs, 4);
    ASSERT_EQ(preds.size(), 4u);
    for (Var p : preds) EXPECT_TRUE(all_finite(tp.val(p)));
  }
  ModelConfig bad = tiny_config();
  bad.taylor_branch_enabled = bad.residual_branch_enabled = false;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(ModelParams, CastRoundTrip) {
  Rng rng(14);
  auto p32 = init_model<float>(tiny_config(), rng);
  auto p64 = p32.cast<double>();
  auto back = p64.cast<float>();
  std::vector<std::pair<std::string, Tensor<float>*>> a, b;
  p32.visit([&](const std::string& n, Tensor<float>& t) { a.emplace_back(n, &t); });
  back.visit([&](const std::string& n, Tensor<float>& t) { b.emplace_back(n, &t); });
  ASSERT_EQ(a.size(), b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    ASSERT_EQ(a[i].first, b[i].first);
    ASSERT_TRUE(a[i].second->same_shape(*b[i].second)) << a[i].first;
    for (int64_t j = 0; j < a[i].second->size(); ++j)
      ASSERT_EQ((*a[i].second)[j], (*b[i].second)[j]);
  }
}
