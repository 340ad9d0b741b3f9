#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <cstdio>

#include "moe/estimator.hpp"

namespace moe {
namespace {

DepthFrame random_frame(Rng& rng, int w, int h) {
  DepthFrame f(w, h);
  for (auto& v : f.depth_mm) {
    v = rng.uniform() < 0.3
            ? 0
            : static_cast<std::uint16_t>(70 + rng.uniform_index(430));
  }
  return f;
}

EncoderConfig tiny_config() {
  EncoderConfig cfg;
  cfg.conv_channels = {2};
  cfg.depth_feature = 4;
  cfg.load_hidden = 3;
  cfg.load_feature = 4;
  cfg.fusion_hidden = 5;
  cfg.input_h = 8;
  cfg.input_w = 8;
  return cfg;
}

TEST(WeightedMse, MatchesHandEvaluatedExamples) {
  const LossWeights unit;
  EXPECT_EQ(weighted_mse(Vec3(0.3, -0.1, 2.0), Vec3(0.3, -0.1, 2.0), unit), 0.0);
  EXPECT_DOUBLE_EQ(weighted_mse(Vec3(1, 2, 2), Vec3(0, 0, 0), unit), 9.0);
  LossWeights w2;
  w2.lambda = Vec3(2, 1, 1);
  EXPECT_DOUBLE_EQ(weighted_mse(Vec3(1, 0, 0), Vec3(0, 0, 0), w2), 4.0);
}

TEST(WeightedMse, NonNegativeZeroIffEqualAndQuadraticInLambda) {
  Rng rng(10);
  for (int i = 0; i < 200; ++i) {
    const Vec3 w(rng.normal(), rng.normal(), rng.normal());
    const Vec3 w_hat(rng.normal(), rng.normal(), rng.normal());
    LossWeights lam;
    lam.lambda = Vec3(rng.uniform(0.1, 5), rng.uniform(0.1, 5), rng.uniform(0.1, 5));
    const double base = weighted_mse(w, w_hat, lam);
    EXPECT_GE(base, 0.0);
    if ((w - w_hat).norm() > 0) EXPECT_GT(base, 0.0);

    const double c = rng.uniform(0.5, 3.0);
    LossWeights scaled;
    scaled.lambda = c * lam.lambda;
    EXPECT_NEAR(weighted_mse(w, w_hat, scaled), c * c * base,
                1e-12 * std::max(1.0, base));
  }
  LossWeights bad;
  bad.lambda = Vec3(1.0, 0.0, 1.0);
  EXPECT_THROW(weighted_mse(Vec3::Zero(), Vec3::Zero(), bad), ContractViolation);
}

TEST(Predict, ZeroParamsZeroInputsGiveHeadBias) {
  const EncoderConfig cfg = tiny_config();
  EstimatorParams p;
  p.config = cfg;
  p.values = VecX::Zero(build_layout(cfg).total());
  const auto& bias_entry = build_layout(cfg).find("fuse_fc2.bias");
  p.values[bias_entry.offset + 0] = 0.1;
  p.values[bias_entry.offset + 1] = -0.2;
  p.values[bias_entry.offset + 2] = 0.3;

  DepthFrame zero_frame(cfg.input_w, cfg.input_h);
  Mask all(cfg.input_w, cfg.input_h);
  for (auto& b : all.bits) b = 1;
  const auto out =
      predict(p, apply_mask(zero_frame, all), ActuatorLoad{});
  EXPECT_EQ(out, Vec3(0.1, -0.2, 0.3));
}

TEST(Predict, DeterministicAndShapeChecked) {
  const EncoderConfig cfg = tiny_config();
  const EstimatorParams p = init_params(cfg, Variant::kFused, 3);
  Rng rng(4);
  const DepthFrame f = random_frame(rng, cfg.input_w, cfg.input_h);
  Mask all(cfg.input_w, cfg.input_h);
  for (auto& b : all.bits) b = 1;
  ActuatorLoad q;
  q.q = Vec4(0.1, 0.2, 0.0, 0.4);
  const auto a = predict(p, apply_mask(f, all), q);
  const auto b = predict(p, apply_mask(f, all), q);
  EXPECT_EQ(a, b);

  DepthFrame wrong(cfg.input_w + 1, cfg.input_h);
  Mask wrong_mask(cfg.input_w + 1, cfg.input_h);
  EXPECT_THROW(predict(p, apply_mask(wrong, wrong_mask), q), ContractViolation);
}

TEST(Predict, AblationIsolationIsExact) {
  const EncoderConfig cfg = tiny_config();
  const EstimatorParams load_only = init_params(cfg, Variant::kLoadOnly, 5);
  const EstimatorParams depth_only = init_params(cfg, Variant::kDepthOnly, 5);
  Rng rng(6);
  Mask all(cfg.input_w, cfg.input_h);
  for (auto& b : all.bits) b = 1;

  ActuatorLoad q;
  q.q = Vec4(0.3, 0.1, 0.2, 0.05);
  const DepthFrame base_frame = random_frame(rng, cfg.input_w, cfg.input_h);
  const auto lo_ref = predict(load_only, apply_mask(base_frame, all), q);
  const auto do_ref = predict(depth_only, apply_mask(base_frame, all), q);
  for (int i = 0; i < 100; ++i) {
    const DepthFrame other = random_frame(rng, cfg.input_w, cfg.input_h);
    EXPECT_EQ(predict(load_only, apply_mask(other, all), q), lo_ref);

    ActuatorLoad q2;
    q2.q = Vec4(rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1),
                rng.uniform(0, 1));
    EXPECT_EQ(predict(depth_only, apply_mask(base_frame, all), q2), do_ref);
  }
}

TEST(Predict, DependsOnlyOnMaskedPixels) {
  const EncoderConfig cfg = tiny_config();
  const EstimatorParams p = init_params(cfg, Variant::kFused, 7);
  Rng rng(8);
  DepthFrame a = random_frame(rng, cfg.input_w, cfg.input_h);
  DepthFrame b = a;
  Mask m(cfg.input_w, cfg.input_h);
  for (std::size_t i = 0; i < m.bits.size(); ++i) m.bits[i] = i % 3 == 0;
  // change b only outside the mask
  for (std::size_t i = 0; i < m.bits.size(); ++i) {
    if (!m.bits[i]) b.depth_mm[i] = 400;
  }
  ActuatorLoad q;
  q.q = Vec4(0.1, 0.0, 0.2, 0.0);
  EXPECT_EQ(predict(p, apply_mask(a, m), q), predict(p, apply_mask(b, m), q));
}

TEST(LossGradient, PerfectPredictionsGiveZeroGradient) {
  const EncoderConfig cfg = tiny_config();
  const EstimatorParams p = init_params(cfg, Variant::kFused, 11);
  Rng rng(12);
  std::vector<DepthFrame> frames;
  std::vector<TrainExample> batch;
  Mask all(cfg.input_w, cfg.input_h);
  for (auto& b : all.bits) b = 1;
  for (int i = 0; i < 5; ++i) frames.push_back(random_frame(rng, 8, 8));
  for (int i = 0; i < 5; ++i) {
    TrainExample ex;
    ex.frame = &frames[i];
    ex.q = Vec4(rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1),
                rng.uniform(0, 1));
    ActuatorLoad load;
    load.q = ex.q;
    ex.w = predict(p, apply_mask(frames[i], all), load);
    batch.push_back(ex);
  }
  const auto g = loss_gradient(p, batch, LossWeights{});
  EXPECT_EQ(g.loss, 0.0);
  EXPECT_EQ(g.grad.lpNorm<Eigen::Infinity>(), 0.0);
}

TEST(LossGradient, QuadraticLambdaScaling) {
  const EncoderConfig cfg = tiny_config();
  const EstimatorParams p = init_params(cfg, Variant::kFused, 13);
  Rng rng(14);
  std::vector<DepthFrame> frames;
  for (int i = 0; i < 4; ++i) frames.push_back(random_frame(rng, 8, 8));
  std::vector<TrainExample> batch;
  for (int i = 0; i < 4; ++i) {
    batch.push_back({&frames[i],
                     Vec4(rng.uniform(0, 1), 0, rng.uniform(0, 1), 0),
                     Vec3(rng.normal(), rng.normal(), rng.normal())});
  }
  LossWeights lam;
  lam.lambda = Vec3(2.0, 1.0, 3.0);
  LossWeights lam_scaled;
  const double c = 1.7;
  lam_scaled.lambda = c * lam.lambda;
  const auto g1 = loss_gradient(p, batch, lam);
  const auto g2 = loss_gradient(p, batch, lam_scaled);
  EXPECT_NEAR((g2.grad - c * c * g1.grad).lpNorm<Eigen::Infinity>(), 0.0,
              1e-10 * std::max(1.0, g1.grad.lpNorm<Eigen::Infinity>()));
  EXPECT_NEAR(g2.loss, c * c * g1.loss, 1e-10 * std::max(1.0, g1.loss));
}

// Oracle: central finite differences with step 1e-4 on three random tiny
// configurations, one per variant.
TEST(LossGradient, MatchesCentralFiniteDifferences) {
  const Variant variants[3] = {Variant::kFused, Variant::kDepthOnly,
                               Variant::kLoadOnly};
  for (int trial = 0; trial < 3; ++trial) {
    const EncoderConfig cfg = tiny_config();
    EstimatorParams p = init_params(cfg, variants[trial], 101 + trial);
    ASSERT_LE(p.values.size(), 500);
    Rng rng(201 + trial);
    std::vector<DepthFrame> frames;
    for (int i = 0; i < 3; ++i) frames.push_back(random_frame(rng, 8, 8));
    std::vector<TrainExample> batch;
    for (int i = 0; i < 3; ++i) {
      batch.push_back({&frames[i],
                       Vec4(rng.uniform(0, 1), rng.uniform(0, 1),
                            rng.uniform(0, 1), rng.uniform(0, 1)),
                       Vec3(rng.normal(0.3), rng.normal(0.3), rng.normal(1.0))});
    }
    LossWeights lam;
    lam.lambda = Vec3(2.0, 2.0, 1.0);

    const auto analytic = loss_gradient(p, batch, lam);
    const double step = 1e-4;
    VecX fd = VecX::Zero(p.values.size());
    for (Eigen::Index j = 0; j < p.values.size(); ++j) {
      const double saved = p.values[j];
      p.values[j] = saved + step;
      double up = 0.0;
      for (const auto& ex : batch) {
        ActuatorLoad load;
        load.q = ex.q;
        Mask all(cfg.input_w, cfg.input_h);
        for (auto& b : all.bits) b = 1;
        up += weighted_mse(ex.w, predict(p, apply_mask(*ex.frame, all), load), lam);
      }
      p.values[j] = saved - step;
      double down = 0.0;
      for (const auto& ex : batch) {
        ActuatorLoad load;
        load.q = ex.q;
        Mask all(cfg.input_w, cfg.input_h);
        for (auto& b : all.bits) b = 1;
        down += weighted_mse(ex.w, predict(p, apply_mask(*ex.frame, all), load), lam);
      }
      p.values[j] = saved;
      fd[j] = (up - down) / (2.0 * step * batch.size());
    }
    const double denom = std::max(analytic.grad.norm(), fd.norm());
    ASSERT_GT(denom, 0.0);
    EXPECT_LE((analytic.grad - fd).norm() / denom, 1e-4)
        << "variant " << variant_to_string(variants[trial]);
  }
}

TEST(LossGradient, BlockedReductionIndependentOfThreadCount) {
  const EncoderConfig cfg = tiny_config();
  const EstimatorParams p = init_params(cfg, Variant::kFused, 31);
  Rng rng(32);
  std::vector<DepthFrame> frames;
  for (int i = 0; i < 20; ++i) frames.push_back(random_frame(rng, 8, 8));
  std::vector<TrainExample> batch;
  for (int i = 0; i < 20; ++i) {
    batch.push_back({&frames[i], Vec4(0.1 * i, 0, 0, 0),
                     Vec3(0.0, 0.0, 0.05 * i)});
  }
  const auto g1 = loss_gradient(p, batch, LossWeights{}, 1);
  const auto g2 = loss_gradient(p, batch, LossWeights{}, 2);
  const auto g4 = loss_gradient(p, batch, LossWeights{}, 4);
  EXPECT_EQ(g1.grad, g2.grad);
  EXPECT_EQ(g1.grad, g4.grad);
  EXPECT_EQ(g1.loss, g2.loss);
}

struct TinyDataset {
  std::vector<DepthFrame> frames;
  std::vector<TrainExample> train;
  std::vector<TrainExample> val;
};

TinyDataset constant_label_dataset(int n, const Vec3& label) {
  TinyDataset ds;
  Rng rng(77);
  ds.frames.reserve(n);
  for (int i = 0; i < n; ++i) ds.frames.push_back(random_frame(rng, 8, 8));
  for (int i = 0; i < n; ++i) {
    TrainExample ex;
    ex.frame = &ds.frames[i];
    ex.q = Vec4(rng.uniform(0, 0.5), rng.uniform(0, 0.5), rng.uniform(0, 0.5),
                rng.uniform(0, 0.5));
    ex.w = label;
    (i % 5 == 0 ? ds.val : ds.train).push_back(ex);
  }
  return ds;
}

TEST(Train, ConstantLabelsReachBiasSolution) {
  const TinyDataset ds = constant_label_dataset(60, Vec3(0.0, 0.0, 1.0));
  TrainConfig cfg;
  cfg.encoder = tiny_config();
  cfg.epochs = 50;
  cfg.batch_size = 16;
  cfg.learning_rate = 0.02;
  cfg.seed = 5;
  const TrainResult result = train(ds.train, ds.val, cfg, Variant::kFused);
  const RmseReport report = evaluate_rmse(result.params, ds.val);
  EXPECT_LT(report.total, 0.05);
  // loss history: one row per epoch, best-so-far non-increasing
  ASSERT_EQ(result.history.size(), 50u);
  double best = std::numeric_limits<double>::infinity();
  for (const auto& h : result.history) best = std::min(best, h.val_loss);
  EXPECT_EQ(best, result.best_val_loss);
}

TEST(Train, SeededRunsAreBitIdenticalAcrossThreadCounts) {
  const TinyDataset ds = constant_label_dataset(40, Vec3(0.1, -0.1, 0.8));
  TrainConfig cfg;
  cfg.encoder = tiny_config();
  cfg.epochs = 4;
  cfg.batch_size = 8;
  cfg.seed = 21;
  cfg.n_threads = 1;
  const TrainResult a = train(ds.train, ds.val, cfg, Variant::kFused);
  const TrainResult b = train(ds.train, ds.val, cfg, Variant::kFused);
  EXPECT_EQ(a.params.values, b.params.values);
  cfg.n_threads = 4;
  const TrainResult c = train(ds.train, ds.val, cfg, Variant::kFused);
  EXPECT_EQ(a.params.values, c.params.values);

  TrainConfig other = cfg;
  other.seed = 22;
  const TrainResult d = train(ds.train, ds.val, other, Variant::kFused);
  EXPECT_NE(a.params.values, d.params.values);
}

TEST(Train, DivergenceRaisesTrainingErrorWithEpoch) {
  const TinyDataset ds = constant_label_dataset(40, Vec3(0.0, 0.0, 5.0));
  TrainConfig cfg;
  cfg.encoder = tiny_config();
  cfg.epochs = 10;
  cfg.batch_size = 8;
  cfg.learning_rate = 1e9;
  try {
    train(ds.train, ds.val, cfg, Variant::kFused);
    FAIL() << "expected TrainingError";
  } catch (const TrainingError& e) {
    EXPECT_GE(e.epoch, 0);
    EXPECT_LT(e.epoch, 10);
  }
}

TEST(DefaultLambda, MatchesRuleAndClamps) {
  // population sigma exactly (0.1, 0.1, 0.5)
  std::vector<Vec3> labels;
  for (int i = 0; i < 10; ++i) {
    const double s = i % 2 == 0 ? 1.0 : -1.0;
    labels.push_back(Vec3(0.1 * s, 0.1 * s, 0.5 * s));
  }
  const LossWeights lam = default_lambda(labels);
  EXPECT_NEAR(lam.lambda[0], 5.0, 1e-12);
  EXPECT_NEAR(lam.lambda[1], 5.0, 1e-12);
  EXPECT_EQ(lam.lambda[2], 1.0);

  // isotropic labels
  std::vector<Vec3> iso;
  for (int i = 0; i < 10; ++i) {
    const double s = i % 2 == 0 ? 1.0 : -1.0;
    iso.push_back(Vec3(0.2 * s, 0.2 * s, 0.2 * s));
  }
  const LossWeights unit = default_lambda(iso);
  EXPECT_EQ(unit.lambda, Vec3(1.0, 1.0, 1.0));

  // degenerate x axis clamps high
  std::vector<Vec3> degen;
  for (int i = 0; i < 10; ++i) {
    const double s = i % 2 == 0 ? 1.0 : -1.0;
    degen.push_back(Vec3(0.0, 0.3 * s, 0.4 * s));
  }
  EXPECT_EQ(default_lambda(degen).lambda[0], 10.0);

  EXPECT_THROW(default_lambda(std::vector<Vec3>(5, Vec3::Zero())),
               ContractViolation);
}

TEST(Checkpoint, RoundTripPreservesEverything) {
  const EncoderConfig cfg = tiny_config();
  EstimatorParams p = init_params(cfg, Variant::kDepthOnly, 9);
  p.norm.q_scale = 2.5;
  const std::string path = ::testing::TempDir() + "ckpt_roundtrip.bin";
  nlohmann::json extra;
  extra["split_seed"] = 42;
  extra["test_fraction"] = 0.2;
  save_checkpoint(p, path, extra);
  const Checkpoint back = load_checkpoint(path);
  EXPECT_EQ(back.params.values, p.values);
  EXPECT_EQ(back.params.variant, Variant::kDepthOnly);
  EXPECT_EQ(back.params.norm.q_scale, 2.5);
  EXPECT_EQ(back.params.config.conv_channels, cfg.conv_channels);
  EXPECT_EQ(back.extra.at("split_seed"), 42);

  // re-saving the loaded checkpoint is byte-identical
  const std::string path2 = ::testing::TempDir() + "ckpt_roundtrip2.bin";
  save_checkpoint(back.params, path2, back.extra);
  EXPECT_EQ(read_file(path), read_file(path2));

  auto corrupt = read_file(path);
  corrupt[0] = 'X';
  const std::string bad = ::testing::TempDir() + "ckpt_bad.bin";
  write_file(bad, corrupt);
  EXPECT_THROW(load_checkpoint(bad), IoError);
  std::remove(path.c_str());
  std::remove(path2.c_str());
  std::remove(bad.c_str());
}

TEST(InferenceBudget, DefaultConfigSingleSampleWellUnderBudget) {
  const EncoderConfig cfg;  // default 64x64, 8->16->32
  const EstimatorParams p = init_params(cfg, Variant::kFused, 1);
  Rng rng(2);
  const DepthFrame f = random_frame(rng, 64, 64);
  Mask all(64, 64);
  for (auto& b : all.bits) b = 1;
  const auto masked = apply_mask(f, all);
  ActuatorLoad q;
  q.q = Vec4(0.1, 0.2, 0.3, 0.4);
  predict(p, masked, q);  // warm up
  const auto start = std::chrono::steady_clock::now();
  predict(p, masked, q);
  const double ms = std::chrono::duration<double, std::milli>(
                        std::chrono::steady_clock::now() - start)
                        .count();
  EXPECT_LE(ms, 98.0);
}

}  // namespace
}  // namespace moe
