#include "wavjepa/errors.hpp"
#include "wavjepa/jepa.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace wavjepa;
using namespace wavjepa::fixtures;

TEST(Positional, SinusoidColumnsAndShapes) {
  const Matrix p = positional_embedding(50, 1, 16, PositionalScheme::sin1d);
  ASSERT_EQ(p.rows(), 50);
  ASSERT_EQ(p.cols(), 16);
  EXPECT_DOUBLE_EQ(p(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(p(0, 1), 1.0);
  EXPECT_NEAR(p(3, 0), std::sin(3.0), 1e-12);
  EXPECT_NEAR(p(3, 1), std::cos(3.0), 1e-12);
  EXPECT_THROW(positional_embedding(5, 1, 15, PositionalScheme::sin1d), InvalidArgument);
  EXPECT_THROW(positional_embedding(5, 2, 16, PositionalScheme::sin1d), InvalidArgument);
}

TEST(Positional, TwoDimensionalHalvesEncodeTimeAndChannel) {
  const Matrix p = positional_embedding(10, 2, 16, PositionalScheme::sin2d);
  ASSERT_EQ(p.rows(), 20);
  // Same time index, different channel: time half equal, channel half not.
  EXPECT_EQ(p.row(3).head(8), p.row(13).head(8));
  EXPECT_NE(p.row(3).tail(8), p.row(13).tail(8));
  // Same channel, different time: channel half equal.
  EXPECT_EQ(p.row(3).tail(8), p.row(4).tail(8));
  EXPECT_THROW(positional_embedding(10, 2, 18, PositionalScheme::sin2d), InvalidArgument);
}

TEST(Ema, ScheduleEndpoints) {
  const EmaSchedule e;
  EXPECT_EQ(e.tau_at(0), 0.999);
  EXPECT_EQ(e.tau_at(100000), 0.99999);
  EXPECT_NEAR(e.tau_at(50000), 0.999495, 1e-15);
  EXPECT_EQ(e.tau_at(250000), 0.99999);
}

TEST(Ema, UpdateBlendsAndAdvances) {
  JepaModel model(tiny_model());
  JepaState s = model.init(3);
  for (double& v : s.params.context) v += 1.0;
  const std::vector<double> before = s.target;
  EmaSchedule e{0.9, 0.99, 10};
  const double tau = ema_update(s, e);
  EXPECT_EQ(tau, 0.9);
  EXPECT_EQ(s.step, 1);
  for (std::size_t i = 0; i < before.size(); ++i) {
    EXPECT_NEAR(s.target[i], 0.9 * before[i] + 0.1 * s.params.context[i], 1e-15);
  }
}

TEST(Jepa, InitCopiesContextIntoTarget) {
  JepaModel model(tiny_model());
  const JepaState s = model.init(5);
  EXPECT_EQ(s.params.context, s.target);
  EXPECT_EQ(s.step, 0);
  const JepaState t = model.init(5);
  EXPECT_EQ(s.params.wave, t.params.wave);
  EXPECT_NE(model.init(6).params.wave, s.params.wave);
}

TEST(Jepa, LossShapesAndEmptyBlocks) {
  BlockSampling s;
  s.frames = 4;
  s.context = {0, 1};
  EXPECT_EQ(jepa_loss({}, Matrix::Zero(4, 2), s), 0.0);
  s.target_blocks = {{2, 3}};
  Matrix pred = Matrix::Ones(2, 2);
  EXPECT_DOUBLE_EQ(jepa_loss({pred}, Matrix::Zero(4, 2), s), 1.0);
  EXPECT_THROW(jepa_loss({Matrix::Ones(3, 2)}, Matrix::Zero(4, 2), s), ShapeError);
  EXPECT_THROW(jepa_loss({}, Matrix::Zero(4, 2), s), ShapeError);
}

TEST(Jepa, InstanceNormIsZeroMeanUnitVariance) {
  Matrix x = Matrix::Random(30, 5) * 3.0;
  x.col(2).array() += 7.0;
  const Matrix y = instance_norm_time(x);
  for (int j = 0; j < 5; ++j) {
    EXPECT_NEAR(y.col(j).mean(), 0.0, 1e-12);
    EXPECT_NEAR(y.col(j).squaredNorm() / 30.0, 1.0, 1e-6);
  }
}

TEST(Jepa, ContextEncodingIgnoresNonContextRows) {
  JepaModel model(tiny_model());
  const JepaState st = model.init(1);
  const auto x = tone_plus_noise(samples_for_frames(40), 440.0, 1);
  const Matrix w = model.add_positions(model.embed(st.params.wave, {x}, nullptr));
  const BlockSampling s = sample_blocks(40, SamplerConfig{0.1, 0.05, 4, 4, 0.1, 1000}, 2);
  const Matrix z = model.encode_context(st.params.context, w, s, nullptr);
  Matrix w2 = w;
  std::vector<char> is_ctx(40, 0);
  for (int i : s.context) is_ctx[static_cast<std::size_t>(i)] = 1;
  for (int i = 0; i < 40; ++i) {
    if (!is_ctx[static_cast<std::size_t>(i)]) w2.row(i).setRandom();
  }
  EXPECT_EQ(model.encode_context(st.params.context, w2, s, nullptr), z);
}

TEST(Jepa, PredictionDependsOnPosition) {
  JepaModel model(tiny_model());
  const JepaState st = model.init(1);
  Matrix z = Matrix::Random(6, model.width());
  const Matrix a = model.predict_at(st.params.predictor, z, {10, 11}, 40, nullptr);
  const Matrix b = model.predict_at(st.params.predictor, z, {20, 21}, 40, nullptr);
  EXPECT_GT((a - b).norm(), 1e-6);
}

TEST(Jepa, TopKTargets) {
  ModelConfig cfg = tiny_model();
  JepaModel model(cfg);
  const JepaState st = model.init(4);
  const auto x = tone_plus_noise(samples_for_frames(30), 330.0, 4);
  const Matrix w = model.add_positions(model.embed(st.params.wave, {x}, nullptr));

  const Matrix k1 = model.build_targets(st.target, w, 1);
  EXPECT_LT(k1.colwise().mean().cwiseAbs().maxCoeff(), 1e-5);

  const auto layers = model.layer_outputs(st.target, w);
  ASSERT_EQ(static_cast<int>(layers.size()), cfg.transformer.depth);
  Matrix mean = Matrix::Zero(w.rows(), w.cols());
  for (const auto& l : layers) mean += instance_norm_time(l);
  mean /= static_cast<double>(layers.size());
  EXPECT_LT((model.build_targets(st.target, w, cfg.transformer.depth) - mean).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_EQ(k1, instance_norm_time(layers.back()));
}

TEST(Jepa, TargetsComeOnlyFromEmaParameters) {
  JepaModel model(tiny_model());
  JepaState st = model.init(8);
  const auto x = tone_plus_noise(samples_for_frames(30), 330.0, 8);
  const Matrix t0 = model.instance_targets(st, {x});
  for (double& v : st.params.context) v *= 1.5;
  EXPECT_EQ(model.instance_targets(st, {x}), t0);
  for (double& v : st.target) v *= 1.5;
  EXPECT_NE(model.instance_targets(st, {x}), t0);
}

TEST(Jepa, GradientMatchesFiniteDifferences) {
  JepaModel model(tiny_model());
  const GradCheck r = gradient_check(model, 1, 20, 150);
  EXPECT_GT(r.checked, 300u);
  EXPECT_LT(r.max_rel_error, 1e-3);
}

TEST(Jepa, DualChannelGradientMatchesFiniteDifferences) {
  JepaModel model(tiny_dual_model());
  const GradCheck r = gradient_check(model, 2, 12, 100);
  EXPECT_LT(r.max_rel_error, 1e-3);
}

TEST(Jepa, ClipFeaturesHaveModelWidth) {
  JepaModel model(tiny_model());
  const JepaState st = model.init(1);
  const auto x = tone_plus_noise(16000, 220.0, 1);
  const Vector f = model.clip_features(st.params, {x});
  EXPECT_EQ(f.size(), model.width());
  EXPECT_TRUE(f.allFinite());
}

TEST(Jepa, ConfigValidation) {
  ModelConfig cfg = tiny_model();
  cfg.targets.top_k = 5;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg = tiny_model();
  cfg.channels = 2;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  EXPECT_NO_THROW(tiny_dual_model().validate());
}
