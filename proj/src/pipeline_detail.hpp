#pragma once

#include "covertrace/pipeline.hpp"

namespace covertrace::detail {

// Per-ray scratch shared by the parallel and reference batch kernels.
struct RayWork {
  Vec2 pixel;
  std::uint64_t seed = 0;
  Rgb target;
  Ray ray_cam;
  CameraJacobian jacobian;
  FieldOutputs raw = FieldOutputs::Zero();
  FieldPrediction pred;
  FieldTraversal trav;
  FieldPredictionGradient d_pred;
  FieldOutputs d_raw = FieldOutputs::Zero();
  Vec3 d_dir_cam = Vec3::Zero();
};

void setup_patch_rays(const SceneModel& model, const BatchInputs& inputs, const PatchRef& patch,
                      bool want_camera, std::span<RayWork, 9> rays);

// Renders the nine rays, accumulates photometric and normal losses, grid
// gradients, and per-ray gradients with respect to the field prediction and
// camera-frame direction.
void process_patch(const SceneModel& model, const BatchInputs& inputs, const PatchRef& patch,
                   const GradientMask& mask, std::span<RayWork, 9> rays, RayRecord& record,
                   std::span<double> d_grid, BatchLoss& loss);

// Folds prediction gradients through the output head into d_raw and d_dir_cam.
void finish_rays(const SceneModel& model, std::span<RayWork> rays);

}  // namespace covertrace::detail
