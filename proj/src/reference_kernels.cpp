#include "covertrace/pipeline.hpp"

#include "pipeline_detail.hpp"

namespace covertrace::reference {

BatchLoss evaluate_batch(const SceneModel& model, const BatchInputs& inputs,
                         const GradientMask& mask, BatchGradients* gradients) {
  const bool with_gradients = gradients != nullptr;
  const bool want_rays = with_gradients && (mask.field || mask.camera);
  const bool want_camera = with_gradients && mask.camera;
  const GradientMask local_mask{with_gradients && mask.grid, want_rays && mask.field, want_camera};
  const bool use_field = inputs.options.use_field;
  if (with_gradients) {
    if (mask.grid) std::fill(gradients->grid.begin(), gradients->grid.end(), 0.0);
    if (mask.field) std::fill(gradients->field.begin(), gradients->field.end(), 0.0);
    if (mask.camera) gradients->camera.fill(0.0);
  }
  std::vector<double> scratch;
  if (want_rays && !mask.field) scratch.assign(model.field.param_count(), 0.0);

  BatchLoss loss;
  RayRecord record;
  std::array<detail::RayWork, 9> rays;
  std::array<RefractiveField::Tape, 9> tapes;
  for (const PatchRef& patch : inputs.patches) {
    detail::setup_patch_rays(model, inputs, patch, want_camera, rays);
    if (use_field) {
      for (int k = 0; k < 9; ++k) {
        rays[k].raw = model.field.network(rays[k].ray_cam, want_rays ? &tapes[k] : nullptr);
      }
    }
    detail::process_patch(model, inputs, patch, local_mask, rays, record,
                          local_mask.grid ? std::span<double>(gradients->grid) : std::span<double>(),
                          loss);
    if (!want_rays) continue;
    if (use_field) {
      detail::finish_rays(model, rays);
      for (int k = 0; k < 9; ++k) {
        const FieldInputs d_in = model.field.network_backward(
            tapes[k], rays[k].d_raw,
            mask.field ? std::span<double>(gradients->field) : std::span<double>(scratch));
        rays[k].d_dir_cam += d_in.segment<3>(3);
      }
    }
    if (want_camera) {
      for (const detail::RayWork& w : rays) {
        const Eigen::Matrix<double, kCameraOffsetCount, 1> g = w.jacobian.transpose() * w.d_dir_cam;
        for (int i = 0; i < kCameraOffsetCount; ++i) gradients->camera[i] += g[i];
      }
    }
  }
  return loss;
}

Image render_image(const SceneModel& model, const CameraModel& base_camera,
                   const RenderOptions& options, std::uint64_t seed, int view, int* flagged) {
  const CameraModel camera = with_offsets(base_camera, model.camera_offsets);
  Image image(camera.width, camera.height);
  int count = 0;
  for (int y = 0; y < camera.height; ++y) {
    for (int x = 0; x < camera.width; ++x) {
      const PixelRender px = render_pixel(Vec2(x + 0.5, y + 0.5), camera, &model.field,
                                          model.grid, options, pixel_seed(seed, view, x, y));
      count += px.flagged ? 1 : 0;
      image.set(x, y, px.color);
    }
  }
  if (flagged) *flagged = count;
  return image;
}

}  // namespace covertrace::reference
