#include "covertrace/experiment.hpp"
#include "covertrace/io.hpp"
#include "covertrace/metrics.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

using namespace covertrace;
namespace fs = std::filesystem;

namespace {

Image constant_image(int w, int h, double v) {
  Image img(w, h);
  std::fill(img.data.begin(), img.data.end(), v);
  return img;
}

Image random_image(int w, int h, std::uint64_t seed) {
  Image img(w, h);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0, 1);
  for (double& v : img.data) v = u(rng);
  return img;
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("covertrace_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ExperimentConfig tiny_config() {
  ExperimentConfig c = default_experiment_config();
  c.scene.resolution = {12, 12, 12};
  c.model.grid_resolution = {8, 8, 8};
  c.model.field.hidden_layers = 1;
  c.model.field.hidden_width = 8;
  c.model.field.octaves = 1;
  c.capture.views = 3;
  c.capture.width = c.capture.height = 16;
  c.capture.focal = 19.0;
  c.capture.holdout_every = 3;
  c.capture.sampling.samples = 16;
  c.train.sampling.samples = 16;
  c.train.total_iters = 6;
  c.train.warmup_iters = 3;
  c.train.rays_per_batch = 90;
  c.compute_ssim = true;
  return c;
}

}  // namespace

TEST(Psnr, IdenticalImagesHitTheCap) {
  const Image a = random_image(16, 16, 1);
  EXPECT_EQ(psnr(a, a), 99.0);
}

TEST(Psnr, ConstantOffsets) {
  EXPECT_NEAR(psnr(constant_image(8, 8, 0.5), constant_image(8, 8, 0.6)), 20.0, 1e-9);
  EXPECT_NEAR(psnr(constant_image(8, 8, 0.0), constant_image(8, 8, 1.0)), 0.0, 1e-12);
}

TEST(Psnr, SymmetricAndMonotoneInError) {
  const Image a = random_image(16, 16, 2);
  const Image b = random_image(16, 16, 3);
  EXPECT_EQ(psnr(a, b), psnr(b, a));
  double last = 100.0;
  for (double d : {0.01, 0.02, 0.05, 0.1, 0.3}) {
    const double p = psnr(constant_image(4, 4, 0.2), constant_image(4, 4, 0.2 + d));
    EXPECT_LT(p, last);
    last = p;
  }
  EXPECT_THROW(psnr(a, Image(8, 16)), Error);
}

TEST(Ssim, IdenticalImagesGiveOne) {
  const Image a = random_image(24, 20, 4);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-9);
}

TEST(Ssim, NegatedBinaryPatternIsNegative) {
  Image a(32, 32);
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 32; ++x) a.set(x, y, Rgb::Constant(((x / 3 + y / 5) % 2) ? 1.0 : 0.0));
  }
  Image b = a;
  for (double& v : b.data) v = 1.0 - v;
  EXPECT_LT(ssim(a, b), 0.0);
}

TEST(Ssim, ConstantShiftIsLuminanceOnly) {
  // Zero variance leaves only (2 mu_a mu_b + C1) / (mu_a^2 + mu_b^2 + C1).
  const double value = ssim(constant_image(16, 16, 0.5), constant_image(16, 16, 0.6));
  EXPECT_NEAR(value, 0.9836092443861661, 1e-12);
  EXPECT_LT(value, 1.0);
}

TEST(Ssim, SymmetricAndValidated) {
  const Image a = random_image(20, 20, 5);
  const Image b = random_image(20, 20, 6);
  EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-9);
  EXPECT_THROW(ssim(Image(10, 20), Image(10, 20)), Error);
  EXPECT_THROW(ssim(a, Image(20, 21)), Error);
  try {
    ssim(Image(10, 10), Image(10, 10));
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::TooSmall);
  }
}

TEST(Io, PngRoundTripQuantizes) {
  const fs::path dir = scratch_dir("png");
  const Image a = random_image(13, 7, 7);
  io::write_png(dir / "a.png", a);
  const Image b = io::read_png(dir / "a.png");
  ASSERT_TRUE(a.same_shape(b));
  for (size_t i = 0; i < a.data.size(); ++i) EXPECT_LE(std::abs(a.data[i] - b.data[i]), 0.5 / 255 + 1e-12);
  EXPECT_THROW(io::read_png(dir / "missing.png"), Error);
}

TEST(Io, RawImageRoundTripIsFloatExact) {
  const fs::path dir = scratch_dir("raw");
  const Image a = random_image(9, 5, 8);
  io::write_raw_image(dir / "a.f32", a);
  const Image b = io::read_raw_image(dir / "a.f32");
  for (size_t i = 0; i < a.data.size(); ++i) EXPECT_EQ(b.data[i], static_cast<double>(static_cast<float>(a.data[i])));
}

TEST(Io, CameraRecordRoundTrip) {
  CameraModel cam;
  cam.intrinsics = {500, 510, 320, 240, 2, -1, 0.5, 0.25};
  cam.distortion.base = {-0.1, 0.02, 0.001, 0.0005, -0.0003};
  cam.distortion.delta.k1 = 0.01;
  cam.width = 640;
  cam.height = 480;
  cam.pose = Pose::look_at(Vec3(1, 2, 0.5), Vec3::Zero(), Vec3::UnitZ());
  const io::Json j = io::camera_to_json(cam);
  for (const char* key : {"fx", "fy", "cx", "cy", "k1", "k2", "k3", "p1", "p2", "qw", "qx", "qy", "qz",
                          "tx", "ty", "tz", "width", "height"}) {
    EXPECT_TRUE(j.contains(key)) << key;
  }
  const CameraModel back = io::camera_from_json(io::Json::parse(j.dump()));
  EXPECT_NEAR(back.intrinsics.base_fx, 502.0, 1e-12);
  EXPECT_NEAR(back.distortion.base.k1, -0.09, 1e-15);
  EXPECT_LT((back.pose.rotation - cam.pose.rotation).norm(), 1e-12);
  for (const Vec2& px : {Vec2(10.5, 20.5), Vec2(600.0, 400.0)}) {
    EXPECT_LT((lift_pixel_to_ray(px, back).direction - lift_pixel_to_ray(px, cam).direction).norm(), 1e-12);
  }
  io::Json bad = j;
  bad.erase("fx");
  EXPECT_THROW(io::camera_from_json(bad), Error);
}

TEST(Io, CoverRoundTripTracesIdentically) {
  const CoverSurfacePair cover = make_spherical_cover({});
  const CoverSurfacePair back = io::cover_from_json(io::Json::parse(io::cover_to_json(cover).dump()));
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-0.4, 0.4);
  for (int i = 0; i < 50; ++i) {
    const Ray ray{Vec3::Zero(), Vec3(u(rng), u(rng), 1.0).normalized()};
    const CoverTraversal a = trace_through_cover(ray, cover);
    const CoverTraversal b = trace_through_cover(ray, back);
    EXPECT_EQ(a.status, b.status);
    EXPECT_EQ(a.exit.direction, b.exit.direction);
  }
}

TEST(Io, FieldCheckpointIsBitwise) {
  const fs::path dir = scratch_dir("field");
  FieldConfig cfg;
  cfg.hidden_layers = 2;
  cfg.hidden_width = 12;
  cfg.octaves = 3;
  cfg.prior = FieldPrior::Shell;
  RefractiveField field(cfg);
  std::mt19937_64 rng(10);
  std::normal_distribution<double> g(0, 0.1);
  for (double& p : field.params()) p = g(rng);
  io::save_field(dir / "field.bin", field);
  const RefractiveField back = io::load_field(dir / "field.bin");
  ASSERT_EQ(back.param_count(), field.param_count());
  EXPECT_TRUE(std::equal(field.params().begin(), field.params().end(), back.params().begin()));
  EXPECT_EQ(back.config().prior, FieldPrior::Shell);
  EXPECT_EQ(back.layer_sizes(), field.layer_sizes());
}

TEST(Io, GridCheckpointKeepsFloatPrecision) {
  const fs::path dir = scratch_dir("grid");
  RadianceGrid grid({4, 5, 6}, Bounds{Vec3(-1, -0.5, 0), Vec3(1, 0.5, 2)}, 20.0);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0, 1);
  for (size_t v = 0; v < grid.voxel_count(); ++v) {
    grid.set_sigma(v, 30 * u(rng));
    grid.set_color(v, Rgb(u(rng), u(rng), u(rng)));
  }
  io::save_grid(dir / "grid.bin", grid);
  const RadianceGrid back = io::load_grid(dir / "grid.bin");
  EXPECT_EQ(back.resolution(), grid.resolution());
  EXPECT_EQ(back.bounds().min, grid.bounds().min);
  for (size_t v = 0; v < grid.voxel_count(); ++v) {
    EXPECT_NEAR(back.sigma(v), grid.sigma(v), 1e-5 * std::max(1.0, grid.sigma(v)));
    EXPECT_LT((back.color(v) - grid.color(v)).norm(), 1e-6);
  }
  // Byte layout: header, then 4 bytes per sigma and 12 per colour.
  std::ifstream in(dir / "grid.bin", std::ios::binary);
  std::string line, header;
  while (std::getline(in, line) && line != "end") header += line + "\n";
  const auto data_start = in.tellg();
  in.seekg(0, std::ios::end);
  EXPECT_EQ(static_cast<size_t>(in.tellg() - data_start), 16 * grid.voxel_count());
}

TEST(Io, ExitRayMapRoundTrip) {
  const fs::path dir = scratch_dir("exit");
  CameraModel cam;
  cam.intrinsics = {20, 20, 8, 6};
  cam.width = 16;
  cam.height = 12;
  const CoverSurfacePair cover = make_spherical_cover({});
  const ExitRayMap map = exit_ray_map(cam, &cover);
  io::write_exit_rays(dir / "e.bin", map);
  const ExitRayMap back = io::read_exit_rays(dir / "e.bin");
  EXPECT_EQ(back.origins, map.origins);
  EXPECT_EQ(back.directions, map.directions);
  EXPECT_EQ(back.status, map.status);
}

TEST(Io, Fnv1aKnownValues) {
  EXPECT_EQ(io::fnv1a(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(io::fnv1a("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(io::hex64(0xabcULL), "0000000000000abc");
}

TEST(Io, RejectsForeignFiles) {
  const fs::path dir = scratch_dir("foreign");
  std::ofstream(dir / "x.bin") << "not a checkpoint\n";
  EXPECT_THROW(io::load_grid(dir / "x.bin"), Error);
  EXPECT_THROW(io::load_field(dir / "x.bin"), Error);
  EXPECT_THROW(io::read_json(dir / "x.bin"), Error);
}

TEST(Experiment, ConfigJsonRoundTrip) {
  ExperimentConfig c = default_experiment_config();
  c.flags.enable_warmup = false;
  c.train.lr_field = 3e-4;
  c.cover.figure_amplitude = 0.0002;
  const ExperimentConfig back = ExperimentConfig::from_json(io::Json::parse(c.to_json().dump()));
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_EQ(back.hash(), c.hash());
  EXPECT_NE(default_experiment_config().hash(), c.hash());
}

TEST(Experiment, InvalidConfigIsCategorized) {
  io::Json j = default_experiment_config().to_json();
  j["train"]["warmup_iters"] = 5000;
  try {
    ExperimentConfig::from_json(j);
    FAIL() << "expected a config error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Config);
  }
  j = default_experiment_config().to_json();
  j["model"]["field"]["prior"] = "curved";
  EXPECT_THROW(ExperimentConfig::from_json(j), Error);
}

TEST(Experiment, DatasetDirectoryRoundTrip) {
  const fs::path dir = scratch_dir("dataset");
  const ExperimentConfig c = tiny_config();
  const CaptureDataset data = simulate_experiment(c, true);
  io::save_dataset(dir, data, c.to_json());
  for (const char* p : {"images/view_000.png", "images/view_000.f32", "cameras/view_000.json",
                        "exit_rays/view_000.bin", "cover.json", "manifest.json"}) {
    EXPECT_TRUE(fs::exists(dir / p)) << p;
  }
  const io::Json manifest = io::read_json(dir / "manifest.json");
  EXPECT_EQ(manifest.at("config_hash").get<std::string>(), io::hex64(io::fnv1a(c.to_json().dump())));
  EXPECT_EQ(manifest.at("seed").get<std::uint64_t>(), c.seed);
  const CaptureDataset back = io::load_dataset(dir);
  ASSERT_EQ(back.images.size(), data.images.size());
  EXPECT_EQ(back.holdout_indices, data.holdout_indices);
  EXPECT_EQ(back.exit_rays[1].directions, data.exit_rays[1].directions);
  for (size_t i = 0; i < data.images[0].data.size(); ++i) {
    EXPECT_NEAR(back.images[0].data[i], data.images[0].data[i], 1e-7);
  }
  ASSERT_TRUE(back.cover.has_value());
}

TEST(Experiment, RunsAreDeterministicAndWriteArtifacts) {
  const ExperimentConfig c = tiny_config();
  const CaptureDataset data = simulate_experiment(c, true);
  const fs::path dir = scratch_dir("run");
  const ExperimentResult a = run_experiment(c, data, dir);
  const ExperimentResult b = run_experiment(c, data);
  EXPECT_EQ(a.report.to_json(), b.report.to_json());
  ASSERT_EQ(a.training.log.size(), b.training.log.size());
  for (size_t i = 0; i < a.training.log.size(); ++i) EXPECT_EQ(a.training.log[i].total, b.training.log[i].total);
  for (const char* p : {"config.json", "manifest.json", "loss.csv", "report.json", "checkpoint/grid.bin",
                        "checkpoint/field.bin", "renders/view_000.png", "difference/view_000.png"}) {
    EXPECT_TRUE(fs::exists(dir / p)) << p;
  }
  std::ifstream csv(dir / "loss.csv");
  std::string header;
  std::getline(csv, header);
  EXPECT_EQ(header, "iter,photometric,normal_consistency,total,flagged_fraction,psnr_holdout");
  const SceneModel loaded = io::load_model(dir / "checkpoint");
  EXPECT_EQ(loaded.camera_offsets, a.training.model.camera_offsets);
}

TEST(Experiment, OracleRenderMatchesCapture) {
  const ExperimentConfig c = tiny_config();
  const CaptureDataset data = simulate_experiment(c, false);
  const MetricReport r = oracle_report(c, data);
  ASSERT_FALSE(r.per_image.empty());
  EXPECT_EQ(r.psnr, 99.0);
  EXPECT_NEAR(r.ssim, 1.0, 1e-9);
}

TEST(Experiment, AblationFlagsMapOntoTraining) {
  ExperimentConfig c = tiny_config();
  c.flags = {false, false, false};
  const TrainConfig t = effective_train_config(c);
  EXPECT_EQ(t.warmup_iters, 0);
  EXPECT_FALSE(t.enable_refractive_field);
  EXPECT_FALSE(t.enable_camera_offsets);
  EXPECT_FALSE(evaluation_options(c).use_field);
  EXPECT_FALSE(evaluation_options(c).sampling.jitter);
}

TEST(Experiment, WindowedNormalLoss) {
  std::vector<LossReport> log(10);
  for (int i = 0; i < 10; ++i) log[i].normal_consistency = i;
  EXPECT_EQ(windowed_normal_loss(log, 2, 4), (std::vector<double>{3.5, 7.5}));
}
