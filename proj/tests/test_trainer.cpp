#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "tscn/trainer.hpp"

using namespace tscn;

namespace {

StageConfig stage(std::size_t epochs, std::size_t warmup, double peak, bool anneal = true) {
  StageConfig s;
  s.name = "s";
  s.epochs = epochs;
  s.warmup_epochs = warmup;
  s.peak_lr = peak;
  s.anneal = anneal;
  return s;
}

LabeledDataset small_synthetic(std::size_t per_class = 40, std::uint64_t seed = 1) {
  SynthConfig cfg;
  cfg.per_class = per_class;
  cfg.side = 8;
  return generate_synthetic(cfg, seed);
}

EncoderParams<float> small_encoder(std::size_t dim, std::uint64_t seed = 1) {
  RandomStream rng(seed);
  return make_encoder<float>(desk_architecture({3, 8, 8}, dim), rng);
}

} // namespace

TEST(Schedule, PeakScalingRule) {
  EXPECT_DOUBLE_EQ(scaled_peak_lr(1024), 0.12);
  EXPECT_DOUBLE_EQ(scaled_peak_lr(256), 0.03);
  EXPECT_DOUBLE_EQ(scaled_peak_lr(128), 0.015);
}

TEST(Schedule, WarmupStartsAtZeroAndEndsAtPeak) {
  const auto s = stage(1000, 10, scaled_peak_lr(1024));
  const std::size_t spe = 48;
  EXPECT_EQ(lr_at(s, 0, spe), 0.0);
  EXPECT_EQ(lr_at(s, 10 * spe, spe), 0.12);
  // linear ramp
  EXPECT_NEAR(lr_at(s, 5 * spe, spe), 0.06, 1e-15);
  for (std::size_t k = 1; k < 10 * spe; ++k) EXPECT_LT(lr_at(s, k - 1, spe), lr_at(s, k, spe));
}

TEST(Schedule, CosineMidpointAndEnd) {
  // 12 epochs, 1 warmup, 1 step per epoch: annealing steps 1..11, midpoint 6.
  const auto s = stage(12, 1, 1.0);
  EXPECT_NEAR(lr_at(s, 6, 1), 0.5, 1e-15);
  EXPECT_LT(lr_at(s, 11, 1), 1e-6);
  // evaluate the cosine formula independently at every step
  for (std::size_t t = 1; t < 12; ++t)
    EXPECT_NEAR(lr_at(s, t, 1), 0.5 * (1 + std::cos(std::numbers::pi * double(t - 1) / 10.0)), 1e-15);
}

TEST(Schedule, FinalStepOfLongScheduleIsTiny) {
  const auto s = stage(1000, 10, 0.12);
  const std::size_t spe = 48;
  EXPECT_LT(lr_at(s, 1000 * spe - 1, spe), 1e-6 * 0.12);
}

TEST(Schedule, ContinuousAtWarmupBoundary) {
  const auto s = stage(50, 5, 0.015);
  const std::size_t spe = 39, w = 5 * spe;
  EXPECT_EQ(lr_at(s, w, spe), 0.015);
  EXPECT_NEAR(lr_at(s, w - 1, spe), 0.015, 0.015 / static_cast<double>(w) + 1e-15);
  EXPECT_NEAR(lr_at(s, w + 1, spe), 0.015, 1e-6);
}

TEST(Schedule, ConstantWithoutAnnealing) {
  const auto s = stage(5, 0, 0.12, false);
  for (std::size_t k = 0; k < 50; ++k) EXPECT_EQ(lr_at(s, k, 10), 0.12);
}

TEST(Sgd, HandIterationWithMomentum) {
  auto p = small_encoder(2);
  for (auto& lp : p.params) {
    std::fill(lp.weight.begin(), lp.weight.end(), 0.0f);
    std::fill(lp.bias.begin(), lp.bias.end(), 0.0f);
  }
  auto g = p.zero_like();
  for (auto& lp : g) {
    std::fill(lp.weight.begin(), lp.weight.end(), 1.0f);
    std::fill(lp.bias.begin(), lp.bias.end(), 1.0f);
  }
  auto o = OptState<float>::zeros_like(p);
  sgd_momentum_step(p, g, o, 1.0, 0.9);
  EXPECT_FLOAT_EQ(p.params[0].weight[0], -1.0f);
  sgd_momentum_step(p, g, o, 1.0, 0.9);
  EXPECT_FLOAT_EQ(p.params[0].weight[0], -2.9f);
  EXPECT_FLOAT_EQ(p.params.back().bias[0], -2.9f);
  EXPECT_FLOAT_EQ(o.momentum[0].weight[0], 1.9f);
}

TEST(Sgd, ZeroMomentumIsPlainGradientDescent) {
  auto p = small_encoder(2);
  const auto before = p;
  auto g = p.zero_like();
  for (auto& lp : g)
    for (std::size_t i = 0; i < lp.weight.size(); ++i) lp.weight[i] = static_cast<float>(i % 7) - 3.0f;
  auto o = OptState<float>::zeros_like(p);
  sgd_momentum_step(p, g, o, 0.5, 0.0);
  sgd_momentum_step(p, g, o, 0.5, 0.0);
  for (std::size_t l = 0; l < p.params.size(); ++l)
    for (std::size_t i = 0; i < p.params[l].weight.size(); ++i)
      EXPECT_FLOAT_EQ(p.params[l].weight[i], before.params[l].weight[i] - 1.0f * g[l].weight[i]);
}

TEST(Sgd, ZeroLearningRateOnlyUpdatesBuffers) {
  auto p = small_encoder(2);
  const auto before = p;
  auto g = p.zero_like();
  for (auto& lp : g) std::fill(lp.weight.begin(), lp.weight.end(), 2.0f);
  auto o = OptState<float>::zeros_like(p);
  sgd_momentum_step(p, g, o, 0.0, 0.9);
  EXPECT_EQ(p, before);
  EXPECT_EQ(o.momentum[0].weight[0], 2.0f);
}

TEST(Sgd, FrozenLayersAreSkippedAndShapesChecked) {
  auto p = set_freeze(small_encoder(2), {0});
  const auto before = p;
  auto g = p.zero_like();
  for (auto& lp : g) std::fill(lp.weight.begin(), lp.weight.end(), 1.0f);
  auto o = OptState<float>::zeros_like(p);
  sgd_momentum_step(p, g, o, 0.1, 0.9);
  EXPECT_EQ(p.params[0], before.params[0]);
  EXPECT_NE(p.params[3], before.params[3]);
  g.pop_back();
  EXPECT_THROW(sgd_momentum_step(p, g, o, 0.1, 0.9), ShapeError);
}

TEST(TrainStage, ZeroEpochsLeavesParamsUnchanged) {
  const auto ds = small_synthetic(10);
  const auto p = small_encoder(2);
  const auto r = train_stage(ds, p, stage(0, 0, 0.01), 8, 0.9, RandomStream(1));
  EXPECT_EQ(r.params, p);
  EXPECT_TRUE(r.history.empty());
}

TEST(TrainStage, ReadoutOnlyStageKeepsOtherLayersBitIdentical) {
  const auto ds = small_synthetic(10);
  const auto p = small_encoder(2);
  auto st = stage(2, 0, 0.05, false);
  st.freeze = FreezeSpec::readout_only();
  const auto r = train_stage(ds, p, st, 8, 0.9, RandomStream(2));
  for (std::size_t l = 0; l + 1 < p.layers.size(); ++l) EXPECT_EQ(r.params.params[l], p.params[l]) << l;
  EXPECT_NE(r.params.params.back(), p.params.back());
  EXPECT_EQ(r.history.size(), 2u);
}

TEST(TrainStage, LossDecreasesOnSyntheticData) {
  const auto ds = small_synthetic(100, 4);
  auto st = stage(30, 3, scaled_peak_lr(64));
  const auto r = train_stage(ds, small_encoder(2, 4), st, 64, 0.9, RandomStream(4));
  ASSERT_EQ(r.history.size(), 30u);
  EXPECT_LT(r.history.back().mean_loss, r.history.front().mean_loss);
  for (std::size_t e = 0; e < 30; ++e) EXPECT_EQ(r.history[e].epoch, e);
}

TEST(TrainStage, ReadoutDimensionMismatchIsRejected) {
  const auto ds = small_synthetic(10);
  auto st = stage(1, 0, 0.01);
  st.readout_dim = 3;
  EXPECT_THROW(train_stage(ds, small_encoder(2), st, 8, 0.9, RandomStream(1)), ShapeError);
  EXPECT_THROW(train_stage(ds, small_encoder(2), stage(1, 0, 0.01), 1000, 0.9, RandomStream(1)), ValidationError);
}

TEST(TrainStage, IndicesRestrictTheTrainingPool) {
  const auto ds = small_synthetic(10);
  TrainOptions opts;
  opts.indices = std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7};
  std::size_t epochs_seen = 0;
  opts.on_epoch = [&](const std::string&, const EpochRecord&) { ++epochs_seen; };
  EXPECT_NO_THROW(train_stage(ds, small_encoder(2), stage(2, 0, 0.01), 8, 0.9, RandomStream(1), opts));
  EXPECT_EQ(epochs_seen, 2u);
  EXPECT_THROW(train_stage(ds, small_encoder(2), stage(1, 0, 0.01), 9, 0.9, RandomStream(1), opts), ValidationError);
}

TEST(Protocol, EmptyStagesReturnReinitializedReadoutOnly) {
  const auto ds = small_synthetic(10);
  auto cfg = ProtocolConfig::three_stage(8, 0, 0, 0, 0, 16, 2);
  const auto r = run_protocol<float>(ds, cfg, RandomStream(5));
  EXPECT_EQ(r.params.readout_dim(), 2u);
  // Every non-readout layer equals a fresh initialisation with the same stream.
  RandomStream init = RandomStream(5).child(100);
  const auto fresh = make_encoder<float>(desk_architecture({3, 8, 8}, 16), init);
  for (std::size_t l = 0; l + 1 < fresh.layers.size(); ++l) EXPECT_EQ(r.params.params[l], fresh.params[l]);
  for (const auto& s : r.report.stages) EXPECT_TRUE(s.history.empty());
}

TEST(Protocol, DeskDefaultStructure) {
  const auto cfg = ProtocolConfig::desk_default();
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_EQ(cfg.total_epochs(), 100u);
  EXPECT_EQ(cfg.batch_size, 128u);
  EXPECT_EQ(*cfg.pretrain.readout_dim, 64u);
  EXPECT_EQ(*cfg.readout.readout_dim, 2u);
  EXPECT_TRUE(cfg.readout.freeze.all_but_readout);
  EXPECT_FALSE(cfg.readout.anneal);
  EXPECT_EQ(cfg.readout.warmup_epochs, 0u);
  EXPECT_TRUE(cfg.finetune.freeze.is_none());
  EXPECT_DOUBLE_EQ(cfg.pretrain.peak_lr, 0.015);
  EXPECT_DOUBLE_EQ(cfg.finetune.peak_lr, 0.015 / 1000);
}

TEST(Protocol, ShortRunEndsInTwoDimensionsWithFullHistory) {
  const auto ds = small_synthetic(10);
  auto cfg = ProtocolConfig::three_stage(8, 2, 1, 2, 1, 16, 2);
  std::vector<int> stage_ends;
  std::vector<std::vector<bool>> masks;
  const auto r = run_protocol<float>(ds, cfg, RandomStream(6), {},
                                     [&](int s, const StageConfig&, const EncoderParams<float>& p) {
                                       stage_ends.push_back(s);
                                       masks.push_back(p.frozen);
                                     });
  EXPECT_EQ(r.params.readout_dim(), 2u);
  EXPECT_EQ(stage_ends, (std::vector<int>{1, 2, 3}));
  EXPECT_TRUE(masks[1][0]);
  EXPECT_FALSE(masks[1].back());
  for (bool f : r.params.frozen) EXPECT_FALSE(f);
  ASSERT_EQ(r.report.stages.size(), 3u);
  EXPECT_EQ(r.report.stages[0].history.size(), 2u);
  EXPECT_EQ(r.report.stages[1].history.size(), 1u);
  EXPECT_EQ(r.report.stages[2].history.size(), 2u);
  EXPECT_EQ(r.report.stages[2].first_epoch, 3u);
  EXPECT_EQ(r.report.final_loss(), r.report.stages[2].history.back().mean_loss);
}

TEST(Protocol, BitReproducibleAndThreadIndependent) {
  const auto ds = small_synthetic(10);
  auto cfg = ProtocolConfig::three_stage(8, 1, 1, 1, 0, 16, 2);
  TrainOptions one, three;
  three.exec.threads = 3;
  const auto a = run_protocol<float>(ds, cfg, RandomStream(7), one);
  const auto b = run_protocol<float>(ds, cfg, RandomStream(7), one);
  const auto c = run_protocol<float>(ds, cfg, RandomStream(7), three);
  EXPECT_EQ(a.params, b.params);
  EXPECT_EQ(a.params, c.params);
  EXPECT_EQ(a.report.final_loss(), c.report.final_loss());
  const auto d = run_protocol<float>(ds, cfg, RandomStream(8), one);
  EXPECT_NE(a.params, d.params);
}

TEST(Protocol, Validation) {
  auto cfg = ProtocolConfig::desk_default();
  cfg.readout.freeze = FreezeSpec::none();
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg = ProtocolConfig::desk_default();
  cfg.finetune.freeze = FreezeSpec::readout_only();
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg = ProtocolConfig::desk_default();
  cfg.pretrain.warmup_epochs = 60;
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg = ProtocolConfig::desk_default();
  cfg.momentum = 1.0;
  EXPECT_THROW(cfg.validate(), ValidationError);
  EXPECT_NO_THROW(ProtocolConfig::direct(128, 100, 5).validate());
}
