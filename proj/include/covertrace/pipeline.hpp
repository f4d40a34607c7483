#pragma once

#include "covertrace/camera.hpp"
#include "covertrace/common.hpp"
#include "covertrace/image.hpp"
#include "covertrace/radiance.hpp"
#include "covertrace/refractive_field.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace covertrace {

struct RenderOptions {
  SamplingConfig sampling;
  bool use_field = true;
  double index_inside = 1.49;
  double index_outside = 1.0;
};

// Everything the optimizer updates. Camera offsets are shared by all views,
// which come from one physical camera behind one cover.
struct SceneModel {
  RadianceGrid grid;
  RefractiveField field;
  CameraOffsets camera_offsets{};
};

CameraModel with_offsets(const CameraModel& camera, const CameraOffsets& offsets);

// Sample distances are measured as optical path length from the camera
// centre, so the sampling window does not shift when a cover is inserted. The
// exit ray is re-anchored `path_length` behind its true origin for sampling.
inline Ray sampling_ray(const Ray& exit, double path_length) {
  return Ray{exit.origin - path_length * exit.direction, exit.direction};
}

struct PixelRay {
  TraceStatus status = TraceStatus::Refracted;
  Ray exit;                  // world frame, starting at the outer surface
  double path_length = 0.0;  // camera centre to exit.origin along the path

  Ray sampling() const { return sampling_ray(exit, path_length); }
};

// Exit ray for a pixel through the learned field (or straight when `field`
// is null). The field is evaluated in the camera frame.
PixelRay exit_ray_for_pixel(const Vec2& pixel, const CameraModel& camera,
                            const RefractiveField* field, const RenderOptions& options);

// Same through an analytic cover attached to the camera. A cover whose two
// indices match is optically absent and leaves the ray untouched.
PixelRay exit_ray_through_cover(const Vec2& pixel, const CameraModel& camera,
                                const CoverSurfacePair* cover);

struct PixelRender {
  Rgb color = Rgb::Zero();
  bool flagged = false;
};

PixelRender render_pixel(const Vec2& pixel, const CameraModel& camera,
                         const RefractiveField* field, const RadianceGrid& grid,
                         const RenderOptions& options, std::uint64_t ray_seed = 0);

PixelRender render_pixel_through_cover(const Vec2& pixel, const CameraModel& camera,
                                       const CoverSurfacePair* cover, const RadianceGrid& grid,
                                       const SamplingConfig& sampling, std::uint64_t ray_seed = 0);

std::uint64_t pixel_seed(std::uint64_t seed, int view, int x, int y);

// A 3x3 neighbourhood of adjacent pixels centred on (x, y) in one view.
struct PatchRef {
  int view = 0;
  int x = 1;
  int y = 1;
};

struct GradientMask {
  bool grid = true;
  bool field = true;
  bool camera = true;
};

struct BatchGradients {
  std::vector<double> grid;
  std::vector<double> field;
  CameraOffsets camera{};

  void reset(const SceneModel& model);
};

struct BatchLoss {
  double photometric = 0.0;
  double normal_consistency = 0.0;
  int rays = 0;
  int flagged = 0;
  int normal_terms = 0;
};

struct BatchInputs {
  std::span<const CameraModel> cameras;  // base cameras, offsets applied from the model
  std::span<const Image> images;
  std::span<const PatchRef> patches;
  RenderOptions options;
  double lambda_normals = 0.1;
  std::uint64_t seed = 0;
};

// Normal consistency for one patch given its predictions and camera-frame
// rays, with gradients with respect to both.
struct PatchNormalGradient {
  std::array<FieldPredictionGradient, 9> prediction{};
  std::array<Vec3, 9> d_direction;
  std::array<Vec3, 9> d_origin;

  PatchNormalGradient() {
    d_direction.fill(Vec3::Zero());
    d_origin.fill(Vec3::Zero());
  }
};

double patch_normal_loss(std::span<const FieldPrediction, 9> predictions,
                         std::span<const Ray, 9> rays, double index_inside,
                         double index_outside, int* terms, PatchNormalGradient* gradient);

namespace kernels {

inline constexpr int kDefaultPartitions = 4;

// OpenMP kernel over a fixed partition of the patch list. The network runs
// batched per partition and gradients reduce in partition order, so results
// are bitwise reproducible for a given partition count.
BatchLoss evaluate_batch(const SceneModel& model, const BatchInputs& inputs,
                         const GradientMask& mask, BatchGradients* gradients,
                         int partitions = kDefaultPartitions);

Image render_image(const SceneModel& model, const CameraModel& camera, const RenderOptions& options,
                   std::uint64_t seed, int view, int* flagged = nullptr);

}  // namespace kernels

namespace reference {

// Serial, one ray at a time through the scalar network path.
BatchLoss evaluate_batch(const SceneModel& model, const BatchInputs& inputs,
                         const GradientMask& mask, BatchGradients* gradients);

Image render_image(const SceneModel& model, const CameraModel& camera, const RenderOptions& options,
                   std::uint64_t seed, int view, int* flagged = nullptr);

}  // namespace reference

}  // namespace covertrace
