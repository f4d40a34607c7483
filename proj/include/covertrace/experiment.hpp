#pragma once

#include "covertrace/io.hpp"
#include "covertrace/metrics.hpp"
#include "covertrace/optimization.hpp"
#include "covertrace/simulator.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace covertrace {

struct CaptureConfig {
  int views = 24;
  int width = 128;
  int height = 128;
  double focal = 150.0;  // pixels, both axes; principal point at the image centre
  double orbit_radius = 1.4;
  double elevation = 0.35;
  Vec3 target = Vec3::Zero();
  int holdout_every = 8;
  SamplingConfig sampling{0.8, 2.0, 96, false, 0};
};

struct ModelConfig {
  std::array<int, 3> grid_resolution{64, 64, 64};
  double density_scale = 100.0;
  double initial_sigma = 1.0;  // per metre; keeps softplus gradients alive at the start
  Rgb initial_color = Rgb::Constant(0.5);
  FieldConfig field;
};

struct ExperimentFlags {
  bool enable_refractive_field = true;
  bool enable_warmup = true;
  bool enable_camera_offsets = true;
};

struct ExperimentConfig {
  std::string name = "experiment";
  std::uint64_t seed = 7;
  SceneSpec scene;
  CaptureConfig capture;
  bool cover_enabled = true;
  SphericalCoverSpec cover;
  ModelConfig model;
  TrainConfig train;
  ExperimentFlags flags;
  int eval_every = 0;  // holdout PSNR during training; 0 evaluates only at the end
  bool compute_ssim = true;
  int checkpoint_every = 0;

  void validate() const;
  io::Json to_json() const;
  static ExperimentConfig from_json(const io::Json& json);
  std::uint64_t hash() const;
};

// The desk-scale synthetic setup: a 64^3 primitive scene, 24 orbit views at
// 128x128 and a spherical cover of radius 0.06 m with 0.5 mm figure.
ExperimentConfig default_experiment_config();

// The same config with the cover indices matched (optically absent).
ExperimentConfig matched_index_config(ExperimentConfig config);

std::vector<CameraModel> capture_cameras(const CaptureConfig& capture);
std::optional<CoverSurfacePair> experiment_cover(const ExperimentConfig& config);
CaptureDataset simulate_experiment(const ExperimentConfig& config, bool emit_exit_rays = true);

// Fresh model: uniform low-density grid and a field whose prior matches the
// configured cover's nominal on-axis geometry.
SceneModel initial_model(const ExperimentConfig& config);

// The TrainConfig actually used, with the flags applied.
TrainConfig effective_train_config(const ExperimentConfig& config);

RenderOptions evaluation_options(const ExperimentConfig& config);

// Stored in checkpoint manifests under "render" so a checkpoint can be
// rendered without its training config.
io::Json render_options_to_json(const RenderOptions& options);
RenderOptions render_options_from_json(const io::Json& json);

struct ImageMetrics {
  int view = 0;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct MetricReport {
  double psnr = 0.0;  // mean over images
  double ssim = 0.0;
  std::vector<ImageMetrics> per_image;

  io::Json to_json() const;
};

MetricReport compare_images(std::span<const Image> predicted, std::span<const Image> reference,
                            std::span<const int> views, bool compute_ssim = true);

// Renders the holdout views of `data` with the model's learned camera offsets.
std::vector<Image> render_holdout(const SceneModel& model, const CaptureDataset& data,
                                  const RenderOptions& options, std::uint64_t seed);

MetricReport evaluate_holdout(const SceneModel& model, const CaptureDataset& data,
                              const RenderOptions& options, std::uint64_t seed,
                              bool compute_ssim = true);

// Mean angle in degrees between the model's exit rays and the stored
// ground-truth exit-ray maps over pixels with |x - cx| <= W/4 and
// |y - cy| <= H/4 (the central half of the field of view along each axis).
double exit_ray_angular_error(const SceneModel& model, const CaptureDataset& data,
                              const RenderOptions& options, double central_fraction = 0.5);

// Mean normal-consistency log value over consecutive windows of `window`
// iterations starting at `from`.
std::vector<double> windowed_normal_loss(std::span<const LossReport> log, int from, int window);

struct ExperimentResult {
  std::string name;
  MetricReport report;
  TrainResult training;
  std::vector<std::pair<int, double>> holdout_curve;
  std::vector<Image> holdout_renders;
  double exit_ray_error_deg = -1.0;  // negative when the dataset has no cover or exit rays
  double seconds = 0.0;
};

// Trains on the training split and evaluates on the holdout split. With a
// non-empty `out_dir` it writes config, manifest, loss log, report, the final
// checkpoint, holdout renders and difference maps.
ExperimentResult run_experiment(const ExperimentConfig& config, const CaptureDataset& data,
                                const std::filesystem::path& out_dir = {});

// Oracle pass-through: renders the holdout views with the ground-truth grid
// through the ground-truth cover.
MetricReport oracle_report(const ExperimentConfig& config, const CaptureDataset& data);

struct AblationRow {
  std::string name;
  ExperimentFlags flags;
  ExperimentResult result;
};

// Full method, without warm-up and without the refractive field, all on
// the same dataset and seed.
std::vector<AblationRow> ablate(const ExperimentConfig& config, const CaptureDataset& data,
                                const std::filesystem::path& out_dir = {});

io::Json ablation_summary(std::span<const AblationRow> rows);

}  // namespace covertrace
