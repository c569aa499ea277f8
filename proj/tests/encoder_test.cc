// Copyright 2026 The GroundNLQ Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "groundnlq/encoder.h"
#include "groundnlq/error.h"
#include "groundnlq/model.h"
#include "test_util.h"

namespace groundnlq {
namespace {

using testing::random_matrix;

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.window = 5;
  cfg.d_video_in = 6;
  cfg.d_text_in = 4;
  return cfg;
}

template <typename Module>
void init(Module& m, std::uint64_t seed) {
  ParameterList<double> params;
  m.collect(params);
  initialize_parameters(params, seed);
}

double max_abs(const MatrixD& a) { return a.size() == 0 ? 0.0 : a.cwiseAbs().maxCoeff(); }

TEST(Sinusoid, FirstRowAlternatesZeroOne) {
  const MatrixD t = sinusoidal_positions(4, 10);
  for (int c = 0; c < 10; ++c) EXPECT_DOUBLE_EQ(t(0, c), c % 2 == 0 ? 0.0 : 1.0);
}

TEST(Sinusoid, EntriesBoundedAndMatchFormula) {
  const MatrixD t = sinusoidal_positions(16, 8);
  EXPECT_LE(max_abs(t), 1.0);
  for (int pos = 0; pos < 16; ++pos) {
    for (int i = 0; i < 4; ++i) {
      const double angle = pos / std::pow(10000.0, 2.0 * i / 8.0);
      EXPECT_NEAR(t(pos, 2 * i), std::sin(angle), 1e-15);
      EXPECT_NEAR(t(pos, 2 * i + 1), std::cos(angle), 1e-15);
    }
  }
  const MatrixD big = sinusoidal_positions(2048, 256);
  EXPECT_LE(max_abs(big), 1.0);
}

TEST(Sinusoid, OddWidthIsRejected) { EXPECT_THROW(sinusoidal_positions(4, 7), ValidationError); }

TEST(VideoProjection, ShapeAndMask) {
  const ModelConfig cfg = small_config();
  VideoProjection<double> proj(cfg);
  init(proj, 1);
  std::mt19937_64 rng(1);
  const FeatureSequence f = testing::random_video(64, cfg.d_video_in, rng, 60);
  Tape<double> tape(false);
  const auto out = project_video(tape, f, cfg, proj);
  EXPECT_EQ(out.data.rows(), 64);
  EXPECT_EQ(out.data.cols(), cfg.d_model);
  EXPECT_EQ(out.mask, f.valid_mask);
  EXPECT_EQ(max_abs(out.data.value().bottomRows(4)), 0.0);
}

TEST(VideoProjection, ZeroInputGivesPositionTable) {
  const ModelConfig cfg = small_config();
  VideoProjection<double> proj(cfg);
  init(proj, 2);
  FeatureSequence f;
  f.data = MatrixF::Zero(20, cfg.d_video_in);
  f.valid_mask = prefix_mask(20, 20);
  Tape<double> tape(false);
  const auto out = project_video(tape, f, cfg, proj);
  EXPECT_EQ(max_abs(out.data.value() - sinusoidal_positions(20, cfg.d_model)), 0.0);
}

TEST(VideoProjection, PaddingDoesNotLeak) {
  const ModelConfig cfg = small_config();
  VideoProjection<double> proj(cfg);
  init(proj, 3);
  std::mt19937_64 rng(3);
  const FeatureSequence f = testing::random_video(64, cfg.d_video_in, rng);
  FeatureSequence padded = testing::pad_video(f, 8);
  padded.data.bottomRows(8).setConstant(5.0f);  // garbage under the mask
  Tape<double> tape(false);
  const MatrixD a = project_video(tape, f, cfg, proj).data.value();
  const MatrixD b = project_video(tape, padded, cfg, proj).data.value().topRows(64);
  EXPECT_LE(max_abs(a - b), 1e-5);
}

TEST(VideoProjection, WidthMismatchIsConfigError) {
  const ModelConfig cfg = small_config();
  VideoProjection<double> proj(cfg);
  std::mt19937_64 rng(4);
  Tape<double> tape(false);
  EXPECT_THROW(project_video(tape, testing::random_video(8, cfg.d_video_in + 1, rng), cfg, proj), ConfigError);
}

TEST(TextProjection, PositionWiseMap) {
  const ModelConfig cfg = small_config();
  TextProjection<double> proj(cfg);
  init(proj, 5);
  std::mt19937_64 rng(5);
  const QueryTokens q = testing::random_query(12, cfg.d_text_in, rng);
  Tape<double> tape(false);
  const MatrixD out = project_text(tape, q, cfg, proj).data.value();
  ASSERT_EQ(out.rows(), 12);
  ASSERT_EQ(out.cols(), cfg.d_model);

  QueryTokens reversed = q;
  reversed.data = q.data.colwise().reverse();
  const MatrixD rev = project_text(tape, reversed, cfg, proj).data.value();
  EXPECT_EQ(max_abs(rev - out.colwise().reverse()), 0.0);

  QueryTokens single = q;
  single.data = q.data.row(7);
  single.valid_mask = prefix_mask(1, 1);
  const MatrixD one = project_text(tape, single, cfg, proj).data.value();
  EXPECT_EQ(max_abs(one - out.row(7)), 0.0);
}

TEST(LocalAttention, SingletonSequence) {
  const ModelConfig cfg = small_config();
  MultiHeadAttention<double> attn("a", cfg.d_model, cfg.n_heads);
  init(attn, 6);
  std::mt19937_64 rng(6);
  const MatrixD x0 = random_matrix<double>(1, cfg.d_model, rng);
  Tape<double> tape(false);
  const MatrixD got = local_self_attention(EmbeddedSequence<double>{tape.constant(x0), {1}}, 5, attn).data.value();
  const MatrixD value = x0 * attn.value.weight.value + attn.value.bias.value;
  const MatrixD expected = value * attn.output.weight.value + attn.output.bias.value;
  EXPECT_LE(max_abs(got - expected), 1e-12);
}

TEST(LocalAttention, WideWindowEqualsDense) {
  const ModelConfig cfg = small_config();
  MultiHeadAttention<double> attn("a", cfg.d_model, cfg.n_heads);
  init(attn, 7);
  std::mt19937_64 rng(7);
  const int t = 13;
  const Mask mask = prefix_mask(t, 11);
  Tape<double> tape(false);
  Var<double> x = tape.constant(random_matrix<double>(t, cfg.d_model, rng));
  const MatrixD local = local_self_attention(EmbeddedSequence<double>{x, mask}, 2 * t - 1, attn).data.value();
  const MatrixD dense = ag::mask_rows(attn(tape, x, x, AttentionPattern::dense(mask, mask)), mask).value();
  EXPECT_LE(max_abs(local - dense), 1e-12);
}

TEST(LocalAttention, PerturbationStaysInsideWindow) {
  const ModelConfig cfg = small_config();
  MultiHeadAttention<double> attn("a", cfg.d_model, cfg.n_heads);
  init(attn, 8);
  std::mt19937_64 rng(8);
  const int t = 20, window = 5, radius = 2;
  const Mask mask = prefix_mask(t, t);
  const MatrixD base = random_matrix<double>(t, cfg.d_model, rng);
  Tape<double> tape(false);
  const MatrixD a = local_self_attention(EmbeddedSequence<double>{tape.constant(base), mask}, window, attn).data.value();
  for (int j : {0, 7, 19}) {
    MatrixD bumped = base;
    bumped.row(j).array() += 1.0;
    const MatrixD b =
        local_self_attention(EmbeddedSequence<double>{tape.constant(bumped), mask}, window, attn).data.value();
    for (int i = 0; i < t; ++i) {
      const double diff = (a.row(i) - b.row(i)).cwiseAbs().maxCoeff();
      if (std::abs(i - j) > radius) {
        EXPECT_EQ(diff, 0.0) << i << " " << j;
      } else {
        EXPECT_GT(diff, 0.0) << i << " " << j;
      }
    }
  }
}

TEST(LocalAttention, TailMaskOnlyAffectsRowsNearBoundary) {
  const ModelConfig cfg = small_config();
  MultiHeadAttention<double> attn("a", cfg.d_model, cfg.n_heads);
  init(attn, 9);
  std::mt19937_64 rng(9);
  const int t = 24, valid = 18, window = 5, radius = 2;
  const MatrixD x = random_matrix<double>(t, cfg.d_model, rng);
  Tape<double> tape(false);
  const MatrixD masked =
      local_self_attention(EmbeddedSequence<double>{tape.constant(x), prefix_mask(t, valid)}, window, attn).data.value();
  const MatrixD full =
      local_self_attention(EmbeddedSequence<double>{tape.constant(x), prefix_mask(t, t)}, window, attn).data.value();
  for (int i = 0; i < valid - radius; ++i) EXPECT_EQ((masked.row(i) - full.row(i)).cwiseAbs().maxCoeff(), 0.0) << i;
}

TEST(CrossAttention, SingleKeyGivesProjectedValue) {
  const ModelConfig cfg = small_config();
  MultiHeadAttention<double> attn("c", cfg.d_model, cfg.n_heads);
  init(attn, 10);
  std::mt19937_64 rng(10);
  const MatrixD kv0 = random_matrix<double>(1, cfg.d_model, rng);
  Tape<double> tape(false);
  EmbeddedSequence<double> x{tape.constant(random_matrix<double>(9, cfg.d_model, rng)), prefix_mask(9, 9)};
  EmbeddedSequence<double> kv{tape.constant(kv0), {1}};
  const MatrixD got = cross_attention(x, kv, attn).data.value();
  const MatrixD row = (kv0 * attn.value.weight.value + attn.value.bias.value) * attn.output.weight.value +
                      attn.output.bias.value;
  for (int i = 0; i < 9; ++i) EXPECT_LE(max_abs(got.row(i) - row), 1e-12);
}

TEST(CrossAttention, DuplicatedKeysLeaveOutputUnchanged) {
  const ModelConfig cfg = small_config();
  MultiHeadAttention<double> attn("c", cfg.d_model, cfg.n_heads);
  init(attn, 11);
  std::mt19937_64 rng(11);
  Tape<double> tape(false);
  EmbeddedSequence<double> x{tape.constant(random_matrix<double>(6, cfg.d_model, rng)), prefix_mask(6, 6)};
  const MatrixD keys = random_matrix<double>(3, cfg.d_model, rng);
  MatrixD twice(6, cfg.d_model);
  twice << keys, keys;
  const MatrixD a = cross_attention(x, {tape.constant(keys), prefix_mask(3, 3)}, attn).data.value();
  const MatrixD b = cross_attention(x, {tape.constant(twice), prefix_mask(6, 6)}, attn).data.value();
  EXPECT_LE(max_abs(a - b), 1e-12);

  MatrixD pair(2, cfg.d_model);
  pair << keys.row(0), keys.row(0);
  const MatrixD one = cross_attention(x, {tape.constant(MatrixD(keys.row(0))), prefix_mask(1, 1)}, attn).data.value();
  const MatrixD two = cross_attention(x, {tape.constant(pair), prefix_mask(2, 2)}, attn).data.value();
  EXPECT_LE(max_abs(one - two), 1e-12);
}

TEST(CrossAttention, OutputShapeForAnyKeyLength) {
  const ModelConfig cfg = small_config();
  MultiHeadAttention<double> attn("c", cfg.d_model, cfg.n_heads);
  init(attn, 12);
  std::mt19937_64 rng(12);
  Tape<double> tape(false);
  EmbeddedSequence<double> x{tape.constant(random_matrix<double>(10, cfg.d_model, rng)), prefix_mask(10, 8)};
  for (int l : {1, 2, 7, 30}) {
    const auto out = cross_attention(x, {tape.constant(random_matrix<double>(l, cfg.d_model, rng)), prefix_mask(l, l)}, attn);
    EXPECT_EQ(out.data.rows(), 10);
    EXPECT_EQ(out.data.cols(), cfg.d_model);
  }
  EXPECT_THROW(cross_attention(x, {tape.constant(MatrixD::Zero(2, cfg.d_model)), prefix_mask(2, 0)}, attn),
               ValidationError);
}

struct EncoderFixture {
  ModelConfig cfg = small_config();
  GroundingModel<double> model{cfg, 21};
};

TEST(TextEncoder, ShapeMaskAndPaddingInvariance) {
  EncoderFixture fx;
  std::mt19937_64 rng(13);
  const MatrixD tokens = random_matrix<double>(5, fx.cfg.d_model, rng);
  Tape<double> tape(false);
  const auto a = text_encoder_forward(EmbeddedSequence<double>{tape.constant(tokens), prefix_mask(5, 5)}, fx.cfg,
                                      fx.model.text_blocks());
  EXPECT_EQ(a.data.rows(), 5);
  EXPECT_EQ(a.mask, prefix_mask(5, 5));
  MatrixD padded = MatrixD::Zero(9, fx.cfg.d_model);
  padded.topRows(5) = tokens;
  const auto b = text_encoder_forward(EmbeddedSequence<double>{tape.constant(padded), prefix_mask(9, 5)}, fx.cfg,
                                      fx.model.text_blocks());
  EXPECT_LE(max_abs(a.data.value() - b.data.value().topRows(5)), 1e-5);
  EXPECT_EQ(max_abs(b.data.value().bottomRows(4)), 0.0);
}

TEST(TextEncoder, SingleTokenIsFinite) {
  EncoderFixture fx;
  std::mt19937_64 rng(14);
  Tape<double> tape(false);
  const auto out = text_encoder_forward(
      EmbeddedSequence<double>{tape.constant(random_matrix<double>(1, fx.cfg.d_model, rng)), {1}}, fx.cfg,
      fx.model.text_blocks());
  EXPECT_TRUE(out.data.value().allFinite());
}

TEST(VideoEncoder, ShapeMaskAndPaddingInvariance) {
  EncoderFixture fx;
  std::mt19937_64 rng(15);
  Tape<double> tape(false);
  EmbeddedSequence<double> text{tape.constant(random_matrix<double>(4, fx.cfg.d_model, rng)), prefix_mask(4, 4)};
  const MatrixD v = random_matrix<double>(30, fx.cfg.d_model, rng);
  const auto a = video_encoder_forward(EmbeddedSequence<double>{tape.constant(v), prefix_mask(30, 30)}, &text, fx.cfg,
                                       fx.model.video_blocks());
  EXPECT_EQ(a.data.rows(), 30);
  EXPECT_EQ(a.mask, prefix_mask(30, 30));
  MatrixD padded = MatrixD::Zero(37, fx.cfg.d_model);
  padded.topRows(30) = v;
  const auto b = video_encoder_forward(EmbeddedSequence<double>{tape.constant(padded), prefix_mask(37, 30)}, &text,
                                       fx.cfg, fx.model.video_blocks());
  EXPECT_LE(max_abs(a.data.value() - b.data.value().topRows(30)), 1e-5);
}

TEST(VideoEncoder, ZeroCrossOutputEqualsTextFreeRun) {
  EncoderFixture fx;
  for (auto& block : fx.model.video_blocks()) {
    block.cross_attn.output.weight.value.setZero();
    block.cross_attn.output.bias.value.setZero();
  }
  std::mt19937_64 rng(16);
  Tape<double> tape(false);
  EmbeddedSequence<double> text{tape.constant(random_matrix<double>(4, fx.cfg.d_model, rng)), prefix_mask(4, 4)};
  EmbeddedSequence<double> video{tape.constant(random_matrix<double>(25, fx.cfg.d_model, rng)), prefix_mask(25, 22)};
  const MatrixD with = video_encoder_forward(video, &text, fx.cfg, fx.model.video_blocks()).data.value();
  const MatrixD without =
      video_encoder_forward<double>(video, nullptr, fx.cfg, fx.model.video_blocks()).data.value();
  EXPECT_EQ(max_abs(with - without), 0.0);
}

TEST(VideoEncoder, QueryChangesOutput) {
  EncoderFixture fx;
  std::mt19937_64 rng(17);
  Tape<double> tape(false);
  EmbeddedSequence<double> video{tape.constant(random_matrix<double>(25, fx.cfg.d_model, rng)), prefix_mask(25, 25)};
  EmbeddedSequence<double> t1{tape.constant(random_matrix<double>(4, fx.cfg.d_model, rng)), prefix_mask(4, 4)};
  EmbeddedSequence<double> t2{tape.constant(random_matrix<double>(4, fx.cfg.d_model, rng)), prefix_mask(4, 4)};
  const MatrixD a = video_encoder_forward(video, &t1, fx.cfg, fx.model.video_blocks()).data.value();
  const MatrixD b = video_encoder_forward(video, &t2, fx.cfg, fx.model.video_blocks()).data.value();
  EXPECT_GT(max_abs(a - b), 0.0);
}

TEST(VideoEncoder, ExtremeInputsStayFinite) {
  EncoderFixture fx;
  std::mt19937_64 rng(18);
  Tape<double> tape(false);
  EmbeddedSequence<double> text{tape.constant(1e3 * random_matrix<double>(3, fx.cfg.d_model, rng)), prefix_mask(3, 1)};
  EmbeddedSequence<double> video{tape.constant(1e3 * random_matrix<double>(9, fx.cfg.d_model, rng)), prefix_mask(9, 1)};
  EXPECT_TRUE(video_encoder_forward(video, &text, fx.cfg, fx.model.video_blocks()).data.value().allFinite());
}

}  // namespace
}  // namespace groundnlq
