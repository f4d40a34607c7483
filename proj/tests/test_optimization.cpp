#include "covertrace/experiment.hpp"
#include "covertrace/gradient_suite.hpp"
#include "covertrace/optimization.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

using namespace covertrace;

namespace {

ExperimentConfig small_config() {
  ExperimentConfig c = default_experiment_config();
  c.scene.resolution = {12, 12, 12};
  c.model.grid_resolution = {8, 8, 8};
  c.model.field.hidden_layers = 1;
  c.model.field.hidden_width = 8;
  c.model.field.octaves = 1;
  c.capture.views = 4;
  c.capture.width = c.capture.height = 16;
  c.capture.focal = 19.0;
  c.capture.holdout_every = 4;
  c.capture.sampling.samples = 16;
  c.train.sampling.samples = 16;
  c.train.total_iters = 8;
  c.train.warmup_iters = 4;
  c.train.rays_per_batch = 90;
  return c;
}

struct SmallCapture {
  ExperimentConfig config = small_config();
  CaptureDataset data = simulate_experiment(config, false);
  TrainingData view() const { return {data.cameras, data.images}; }
};

}  // namespace

TEST(PhotometricLoss, WorkedExamples) {
  const std::vector<Rgb> one_r{Rgb::Constant(0.5)}, one_t{Rgb::Constant(0.4)};
  EXPECT_NEAR(photometric_loss(one_r, one_t), 0.03, 1e-15);
  const std::vector<Rgb> two_r(2, Rgb::Constant(0.5)), two_t(2, Rgb::Constant(0.4));
  EXPECT_NEAR(photometric_loss(two_r, two_t), 0.06, 1e-15);
  EXPECT_EQ(photometric_loss(two_r, two_r), 0.0);
  EXPECT_THROW(photometric_loss(one_r, two_t), Error);
}

TEST(GradCheck, QuadraticProbeAndDeadParameter) {
  const Objective f = [](std::span<const double> p, std::span<double> g) {
    double v = 0.0;
    for (size_t i = 0; i + 1 < p.size(); ++i) {
      v += 0.5 * p[i] * p[i];
      if (!g.empty()) g[i] = p[i];
    }
    if (!g.empty()) g[p.size() - 1] = 0.0;  // the last entry never enters the loss
    return v;
  };
  const std::vector<double> p{0.3, -1.2, 2.5, 7.0};
  std::vector<double> g(p.size());
  f(p, g);
  EXPECT_EQ(g[3], 0.0);
  EXPECT_LT(grad_check(f, p, 1e-5, 1e-8).max_relative_error, 1e-8);
}

TEST(GradCheck, FlagsACorruptedGradient) {
  const Objective f = [](std::span<const double> p, std::span<double> g) {
    if (!g.empty()) g[0] = 2.0 * std::cos(p[0]);  // twice the true derivative
    return std::sin(p[0]);
  };
  const std::vector<double> p{0.4};
  const GradCheckReport r = grad_check(f, p, 1e-5, 1e-4);
  EXPECT_FALSE(r.passed);
  EXPECT_NEAR(r.max_relative_error, 0.5, 1e-8);
  EXPECT_EQ(r.worst_parameter, 0u);
}

TEST(GradCheck, RefractionWrtIndexRatio) {
  const Vec3 normal(0, 0, -1);
  const Vec3 incident = Vec3(1, 0, 1).normalized();
  const Vec3 weights(0.3, -0.7, 1.1);
  const Objective f = [&](std::span<const double> p, std::span<double> g) {
    const Vec3 t = *refract(incident, normal, p[0]);
    if (!g.empty()) g[0] = refract_backward(incident, normal, p[0], weights).d_eta;
    return weights.dot(t);
  };
  const std::vector<double> p{1.0 / 1.49};
  EXPECT_LT(grad_check(f, p, 1e-5, 1e-6).max_relative_error, 1e-6);
}

TEST(GradCheck, TwoSampleRayWrtDensity) {
  RadianceGrid grid({2, 2, 2}, Bounds{}, 5.0);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0, 1);
  std::uniform_real_distribution<double> u(0.1, 0.9);
  for (size_t v = 0; v < grid.voxel_count(); ++v) {
    grid.params()[v] = g(rng);
    grid.set_color(v, Rgb(u(rng), u(rng), u(rng)));
  }
  const Ray ray{Vec3(-0.9, 0.05, -0.1), Vec3(1, 0.1, 0.05).normalized()};
  const SamplingConfig sampling{0.5, 1.3, 2, false, 0};
  const Vec3 weights(0.2, 0.5, -0.4);
  const size_t n = grid.voxel_count();
  const Objective f = [&](std::span<const double> p, std::span<double> grad) {
    RadianceGrid local = grid;
    std::copy(p.begin(), p.end(), local.params().begin());
    RayRecord rec;
    const Rgb c = render_ray(ray, local, sampling, 0, &rec);
    if (!grad.empty()) {
      std::vector<double> d(local.params().size(), 0.0);
      render_ray_backward(ray, local, rec, weights, d, nullptr, nullptr);
      std::copy_n(d.begin(), n, grad.begin());
    }
    return weights.dot(c);
  };
  const std::vector<double> p(grid.params().begin(), grid.params().begin() + n);
  const GradCheckReport r = grad_check(f, p, 1e-5, 1e-6, {}, 1e-9);
  EXPECT_LT(r.max_relative_error, 1e-6);
}

TEST(Adam, FirstStepMovesByTheLearningRate) {
  Adam adam(3, 0.01);
  std::vector<double> p{1.0, 2.0, 3.0};
  const std::vector<double> g{0.5, -2.0, 0.0};
  adam.step(p, g);
  EXPECT_NEAR(p[0], 0.99, 1e-9);
  EXPECT_NEAR(p[1], 2.01, 1e-9);
  EXPECT_EQ(p[2], 3.0);
  EXPECT_EQ(adam.steps(), 1);
}

TEST(Adam, ConvergesOnAQuadratic) {
  Adam adam(2, 0.05);
  std::vector<double> p{3.0, -2.0};
  for (int i = 0; i < 2000; ++i) {
    const std::vector<double> g{p[0] - 1.0, 4.0 * (p[1] + 0.5)};
    adam.step(p, g);
  }
  EXPECT_NEAR(p[0], 1.0, 1e-3);
  EXPECT_NEAR(p[1], -0.5, 1e-3);
}

TEST(Train, ZeroIterationsReturnsTheInitialState) {
  SmallCapture s;
  TrainConfig t = effective_train_config(s.config);
  t.total_iters = 0;
  t.warmup_iters = 0;
  const SceneModel init = initial_model(s.config);
  const TrainResult r = train(s.view(), init, t);
  EXPECT_TRUE(r.log.empty());
  EXPECT_EQ(r.completed_iters, 0);
  EXPECT_TRUE(std::equal(init.grid.params().begin(), init.grid.params().end(), r.model.grid.params().begin()));
  EXPECT_TRUE(std::equal(init.field.params().begin(), init.field.params().end(), r.model.field.params().begin()));
  EXPECT_EQ(r.model.camera_offsets, init.camera_offsets);
}

TEST(Train, WarmupFreezesFieldAndCamera) {
  SmallCapture s;
  const TrainConfig t = effective_train_config(s.config);
  const SceneModel init = initial_model(s.config);
  int frozen_checks = 0;
  const TrainResult r = train(s.view(), init, t, [&](const LossReport& rep, const SceneModel& m) {
    if (rep.iter > t.warmup_iters) return;  // the model seen at warmup_iters is the last warm-up update
    EXPECT_TRUE(std::equal(init.field.params().begin(), init.field.params().end(), m.field.params().begin()));
    EXPECT_EQ(m.camera_offsets, CameraOffsets{});
    ++frozen_checks;
  });
  EXPECT_EQ(frozen_checks, t.warmup_iters + 1);
  EXPECT_FALSE(std::equal(init.grid.params().begin(), init.grid.params().end(), r.model.grid.params().begin()));
  EXPECT_FALSE(std::equal(init.field.params().begin(), init.field.params().end(), r.model.field.params().begin()));
  EXPECT_NE(r.model.camera_offsets, CameraOffsets{});
}

TEST(Train, LogIsDeterministicAndDecomposes) {
  SmallCapture s;
  const TrainConfig t = effective_train_config(s.config);
  const TrainResult a = train(s.view(), initial_model(s.config), t);
  const TrainResult b = train(s.view(), initial_model(s.config), t);
  ASSERT_EQ(a.log.size(), static_cast<size_t>(t.total_iters));
  ASSERT_EQ(a.log.size(), b.log.size());
  for (size_t i = 0; i < a.log.size(); ++i) {
    EXPECT_EQ(a.log[i].total, b.log[i].total);
    EXPECT_EQ(a.log[i].normal_consistency, b.log[i].normal_consistency);
    const LossReport& l = a.log[i];
    EXPECT_NEAR(l.total, l.photometric + t.lambda_normals * l.normal_consistency, 1e-12);
    EXPECT_GE(l.photometric, 0.0);
    EXPECT_GE(l.normal_consistency, 0.0);
    EXPECT_GE(l.flagged_ray_fraction, 0.0);
    EXPECT_LE(l.flagged_ray_fraction, 1.0);
  }
  EXPECT_TRUE(std::equal(a.model.field.params().begin(), a.model.field.params().end(), b.model.field.params().begin()));
}

TEST(Train, CameraOffsetsStayInsideTheBound) {
  SmallCapture s;
  TrainConfig t = effective_train_config(s.config);
  t.warmup_iters = 0;
  t.lr_camera = 50.0;  // large enough to hit the projection
  const TrainResult r = train(s.view(), initial_model(s.config), t);
  CameraModel cam = s.data.cameras[0];
  set_camera_offsets(cam, r.model.camera_offsets);
  const Intrinsics& k = cam.intrinsics;
  const double norm = std::sqrt(k.delta_fx * k.delta_fx + k.delta_fy * k.delta_fy + k.delta_cx * k.delta_cx +
                                k.delta_cy * k.delta_cy);
  EXPECT_LE(norm, k.offset_bound() * (1 + 1e-12));
  EXPECT_GT(norm, 0.5 * k.offset_bound());
}

TEST(Train, NonFiniteLossAbortsWithTheLastGoodState) {
  SmallCapture s;
  s.data.images[0].data.assign(s.data.images[0].data.size(), std::numeric_limits<double>::quiet_NaN());
  const TrainConfig t = effective_train_config(s.config);
  const SceneModel init = initial_model(s.config);
  const TrainResult r = train(s.view(), init, t);
  EXPECT_TRUE(r.aborted);
  EXPECT_LT(r.completed_iters, t.total_iters);
  EXPECT_EQ(r.log.size(), static_cast<size_t>(r.completed_iters));
  for (double p : r.model.grid.params()) EXPECT_TRUE(std::isfinite(p));
  EXPECT_EQ(r.model.grid.activation_cached(), true);
}

TEST(Train, RejectsMismatchedInputs) {
  SmallCapture s;
  const TrainConfig t = effective_train_config(s.config);
  std::vector<Image> images = s.data.images;
  images.pop_back();
  EXPECT_THROW(train({s.data.cameras, images}, initial_model(s.config), t), Error);
  TrainConfig bad = t;
  bad.warmup_iters = bad.total_iters + 1;
  EXPECT_THROW(train(s.view(), initial_model(s.config), bad), Error);
}

TEST(GradientSuite, EveryBackwardPassMatchesCentralDifferences) {
  for (std::uint64_t seed : {2024u, 3u, 17u, 36u, 288u}) {
    for (const GradientSuiteEntry& e : gradient_suite(seed, 100)) {
      EXPECT_GE(e.report.checked, 100u) << e.name;
      EXPECT_LT(e.report.max_relative_error, 1e-4)
          << e.name << " seed " << seed << " worst probe " << e.report.worst_parameter;
      // Kinks are a minority of stencils; a flood of rejections would mean
      // the smoothness test is misfiring.
      EXPECT_LT(e.rejected, 30) << e.name << " seed " << seed;
    }
  }
}
