#include "covertrace/pipeline.hpp"

#include "pipeline_detail.hpp"

#include <algorithm>

namespace covertrace::kernels {
namespace {

struct PartitionResult {
  BatchLoss loss;
  std::vector<double> grid;
  std::vector<double> field;
  CameraOffsets camera{};
};

void run_partition(const SceneModel& model, const BatchInputs& inputs, const GradientMask& mask,
                   std::span<const PatchRef> patches, bool with_gradients, PartitionResult& out) {
  const bool use_field = inputs.options.use_field;
  const bool want_rays = with_gradients && (mask.field || mask.camera);
  const bool want_camera = with_gradients && mask.camera;
  const GradientMask local_mask{with_gradients && mask.grid, want_rays && mask.field, want_camera};

  std::vector<detail::RayWork> rays(9 * patches.size());
  for (size_t p = 0; p < patches.size(); ++p) {
    detail::setup_patch_rays(model, inputs, patches[p], want_camera,
                             std::span<detail::RayWork, 9>(&rays[9 * p], 9));
  }

  RefractiveField::BatchTape tape;
  if (use_field) {
    RowMatrix net_in(static_cast<Eigen::Index>(rays.size()), kFieldInputs);
    for (size_t r = 0; r < rays.size(); ++r) {
      net_in.row(static_cast<Eigen::Index>(r)) = RefractiveField::input_of(rays[r].ray_cam).transpose();
    }
    const RowMatrix raw = model.field.network_batch(net_in, want_rays ? &tape : nullptr);
    for (size_t r = 0; r < rays.size(); ++r) rays[r].raw = raw.row(static_cast<Eigen::Index>(r)).transpose();
  }

  RayRecord record;
  std::span<double> d_grid = local_mask.grid ? std::span<double>(out.grid) : std::span<double>();
  for (size_t p = 0; p < patches.size(); ++p) {
    detail::process_patch(model, inputs, patches[p], local_mask,
                          std::span<detail::RayWork, 9>(&rays[9 * p], 9), record, d_grid, out.loss);
  }
  if (!want_rays) return;

  if (use_field) {
    detail::finish_rays(model, rays);
    RowMatrix d_out(static_cast<Eigen::Index>(rays.size()), kFieldOutputs);
    for (size_t r = 0; r < rays.size(); ++r) d_out.row(static_cast<Eigen::Index>(r)) = rays[r].d_raw.transpose();
    std::vector<double> scratch;
    if (!mask.field) scratch.assign(model.field.param_count(), 0.0);
    RowMatrix d_in;
    model.field.network_batch_backward(tape, d_out, mask.field ? std::span<double>(out.field) : std::span<double>(scratch),
                                       want_camera ? &d_in : nullptr);
    if (want_camera) {
      for (size_t r = 0; r < rays.size(); ++r) {
        rays[r].d_dir_cam += d_in.row(static_cast<Eigen::Index>(r)).segment<3>(3).transpose();
      }
    }
  }
  if (want_camera) {
    for (const detail::RayWork& w : rays) {
      const Eigen::Matrix<double, kCameraOffsetCount, 1> g = w.jacobian.transpose() * w.d_dir_cam;
      for (int i = 0; i < kCameraOffsetCount; ++i) out.camera[i] += g[i];
    }
  }
}

}  // namespace

BatchLoss evaluate_batch(const SceneModel& model, const BatchInputs& inputs,
                         const GradientMask& mask, BatchGradients* gradients, int partitions) {
  const auto& patches = inputs.patches;
  const int n_parts = std::max(1, std::min<int>(partitions, static_cast<int>(patches.size())));
  const bool with_gradients = gradients != nullptr;
  std::vector<PartitionResult> parts(static_cast<size_t>(n_parts));
  if (with_gradients) {
    for (int p = 0; p < n_parts; ++p) {
      if (mask.grid) {
        if (p == 0) {
          parts[0].grid.swap(gradients->grid);
          parts[0].grid.assign(model.grid.params().size(), 0.0);
        } else {
          parts[p].grid.assign(model.grid.params().size(), 0.0);
        }
      }
      if (mask.field) parts[p].field.assign(model.field.param_count(), 0.0);
    }
  }

#pragma omp parallel for schedule(static)
  for (int p = 0; p < n_parts; ++p) {
    const size_t begin = patches.size() * p / n_parts;
    const size_t end = patches.size() * (p + 1) / n_parts;
    run_partition(model, inputs, mask, patches.subspan(begin, end - begin), with_gradients,
                  parts[static_cast<size_t>(p)]);
  }

  BatchLoss total;
  for (const PartitionResult& part : parts) {
    total.photometric += part.loss.photometric;
    total.normal_consistency += part.loss.normal_consistency;
    total.rays += part.loss.rays;
    total.flagged += part.loss.flagged;
    total.normal_terms += part.loss.normal_terms;
  }
  if (!with_gradients) return total;

  if (mask.grid) {
    std::vector<double>& grid = parts[0].grid;
    const long long n = static_cast<long long>(grid.size());
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < n; ++i) {
      double acc = grid[static_cast<size_t>(i)];
      for (int p = 1; p < n_parts; ++p) acc += parts[static_cast<size_t>(p)].grid[static_cast<size_t>(i)];
      grid[static_cast<size_t>(i)] = acc;
    }
    gradients->grid.swap(grid);
  }
  if (mask.field) {
    std::fill(gradients->field.begin(), gradients->field.end(), 0.0);
    for (const PartitionResult& part : parts) {
      for (size_t i = 0; i < part.field.size(); ++i) gradients->field[i] += part.field[i];
    }
  }
  if (mask.camera) {
    gradients->camera.fill(0.0);
    for (const PartitionResult& part : parts) {
      for (int i = 0; i < kCameraOffsetCount; ++i) gradients->camera[i] += part.camera[i];
    }
  }
  return total;
}

Image render_image(const SceneModel& model, const CameraModel& base_camera,
                   const RenderOptions& options, std::uint64_t seed, int view, int* flagged) {
  const CameraModel camera = with_offsets(base_camera, model.camera_offsets);
  Image image(camera.width, camera.height);
  std::vector<int> row_flags(static_cast<size_t>(camera.height), 0);
  const bool use_field = options.use_field;

#pragma omp parallel for schedule(static)
  for (int y = 0; y < camera.height; ++y) {
    std::vector<Ray> local(static_cast<size_t>(camera.width));
    for (int x = 0; x < camera.width; ++x) {
      local[x] = Ray{Vec3::Zero(), lift_to_camera_direction(Vec2(x + 0.5, y + 0.5), camera)};
    }
    RowMatrix raw;
    if (use_field) {
      RowMatrix net_in(camera.width, kFieldInputs);
      for (int x = 0; x < camera.width; ++x) net_in.row(x) = RefractiveField::input_of(local[x]).transpose();
      raw = model.field.network_batch(net_in);
    }
    for (int x = 0; x < camera.width; ++x) {
      Ray exit_local = local[x];
      double path = 0.0;
      if (use_field) {
        const FieldPrediction pred = model.field.head(raw.row(x).transpose(), local[x]);
        const FieldTraversal t =
            refract_via_prediction(local[x], pred, options.index_inside, options.index_outside);
        if (t.status != TraceStatus::Refracted) {
          ++row_flags[static_cast<size_t>(y)];
          continue;
        }
        exit_local = t.exit;
        path = t.path_length;
      }
      const Ray exit = sampling_ray(Ray{camera.pose.center + camera.pose.rotation * exit_local.origin,
                                        camera.pose.rotation * exit_local.direction},
                                    path);
      image.set(x, y, render_ray(exit, model.grid, options.sampling, pixel_seed(seed, view, x, y)));
    }
  }
  if (flagged) {
    *flagged = 0;
    for (int f : row_flags) *flagged += f;
  }
  return image;
}

}  // namespace covertrace::kernels
