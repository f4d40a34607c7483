#pragma once

#include "covertrace/pipeline.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace covertrace {

// Sum of squared RGB residuals over the batch.
double photometric_loss(std::span<const Rgb> rendered, std::span<const Rgb> reference);
double photometric_loss(const Image& rendered, const Image& reference);

// Rays of one 3x3 pixel neighbourhood in the cover frame, row-major, with a
// flag saying whether each ray crosses the cover.
struct PatchRays {
  std::array<Ray, 9> rays;
  std::array<bool, 9> crossing{};
};

// Squared distance between fitted and predicted normals at each patch centre,
// both surfaces summed. Patches with a non-crossing ray and degenerate fits
// contribute nothing.
double normal_consistency_loss(const RefractiveField& field, std::span<const PatchRays> patches,
                               double index_inside, double index_outside, int* terms = nullptr);

// Loss and, when `gradient` is non-empty, its gradient written into it.
using Objective = std::function<double(std::span<const double> params, std::span<double> gradient)>;

struct GradCheckReport {
  double max_relative_error = 0.0;
  size_t worst_parameter = 0;
  size_t checked = 0;
  bool passed = true;
};

// Central differences on the listed parameters (all of them when empty).
// Relative error is |ga - gfd| / max(|ga|, |gfd|, floor). Raising the floor
// towards the finite-difference resolution turns the check into an absolute
// one for entries too small for central differences to resolve.
GradCheckReport grad_check(const Objective& objective, std::span<const double> params,
                           double step, double tolerance, std::span<const size_t> indices = {},
                           double floor = 1e-12);

class Adam {
 public:
  Adam(size_t size, double lr, double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8);

  void step(std::span<double> params, std::span<const double> gradient);
  int steps() const { return t_; }
  double learning_rate() const { return lr_; }

 private:
  double lr_, beta1_, beta2_, epsilon_;
  int t_ = 0;
  std::vector<double> m_, v_;
};

struct TrainConfig {
  int warmup_iters = 500;
  int total_iters = 2000;
  int rays_per_batch = 4096;
  double lr_grid = 5e-3;
  double lr_field = 1e-4;
  double lr_camera = 1e-5;
  double lambda_normals = 0.1;
  double index_inside = 1.49;
  double index_outside = 1.0;
  std::uint64_t seed = 0;

  bool enable_refractive_field = true;
  bool enable_camera_offsets = true;
  SamplingConfig sampling;
  int partitions = kernels::kDefaultPartitions;

  void validate() const;
};

// Per-ray means of one training batch.
struct LossReport {
  int iter = 0;
  double photometric = 0.0;
  double normal_consistency = 0.0;
  double total = 0.0;
  double flagged_ray_fraction = 0.0;
};

struct TrainingData {
  std::span<const CameraModel> cameras;
  std::span<const Image> images;
};

struct TrainResult {
  SceneModel model;
  std::vector<LossReport> log;
  bool aborted = false;  // non-finite loss; model holds the last good state
  int completed_iters = 0;
};

// Called after each logged iteration with the pre-update model.
using TrainObserver = std::function<void(const LossReport&, const SceneModel&)>;

// Warm-up (grid only) followed by joint optimization of grid, field, and
// shared camera offsets. Deterministic for a given config.
TrainResult train(const TrainingData& data, SceneModel model, const TrainConfig& config,
                  const TrainObserver& observer = {});

}  // namespace covertrace
