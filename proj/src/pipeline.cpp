#include "covertrace/pipeline.hpp"

#include "pipeline_detail.hpp"

#include <algorithm>
#include <cmath>

namespace covertrace {

CameraModel with_offsets(const CameraModel& camera, const CameraOffsets& offsets) {
  CameraModel out = camera;
  set_camera_offsets(out, offsets);
  return out;
}

std::uint64_t pixel_seed(std::uint64_t seed, int view, int x, int y) {
  std::uint64_t z = seed ^ (static_cast<std::uint64_t>(view) << 42) ^
                    (static_cast<std::uint64_t>(y) << 21) ^ static_cast<std::uint64_t>(x);
  return splitmix64(z);
}

PixelRay exit_ray_for_pixel(const Vec2& pixel, const CameraModel& camera,
                            const RefractiveField* field, const RenderOptions& options) {
  const Ray local{Vec3::Zero(), lift_to_camera_direction(pixel, camera)};
  PixelRay out;
  Ray exit_local = local;
  if (field && options.use_field) {
    const FieldTraversal t =
        refract_via_field(local, *field, options.index_inside, options.index_outside);
    out.status = t.status;
    exit_local = t.exit;
    out.path_length = t.path_length;
  }
  out.exit = Ray{camera.pose.center + camera.pose.rotation * exit_local.origin,
                 camera.pose.rotation * exit_local.direction};
  return out;
}

PixelRay exit_ray_through_cover(const Vec2& pixel, const CameraModel& camera,
                                const CoverSurfacePair* cover) {
  const Ray local{Vec3::Zero(), lift_to_camera_direction(pixel, camera)};
  PixelRay out;
  Ray exit_local = local;
  if (cover && cover->index_inside == cover->index_outside) {
    out.status = TraceStatus::Untouched;
  } else if (cover) {
    const CoverTraversal t = trace_through_cover(local, *cover);
    out.status = t.status;
    exit_local = t.exit;
    if (t.status == TraceStatus::Refracted) {
      out.path_length = t.inner.distance + (t.outer.point - t.inner.point).norm();
    }
  }
  out.exit = Ray{camera.pose.center + camera.pose.rotation * exit_local.origin,
                 camera.pose.rotation * exit_local.direction};
  return out;
}

PixelRender render_pixel(const Vec2& pixel, const CameraModel& camera,
                         const RefractiveField* field, const RadianceGrid& grid,
                         const RenderOptions& options, std::uint64_t ray_seed) {
  if (!(pixel.x() >= 0.0 && pixel.x() <= camera.width && pixel.y() >= 0.0 &&
        pixel.y() <= camera.height)) {
    throw Error(ErrorKind::OutOfBounds, "pixel outside the image");
  }
  const PixelRay ray = exit_ray_for_pixel(pixel, camera, field, options);
  PixelRender out;
  if (ray.status == TraceStatus::TotalInternalReflection) {
    out.flagged = true;
    return out;
  }
  out.color = render_ray(ray.sampling(), grid, options.sampling, ray_seed);
  return out;
}

PixelRender render_pixel_through_cover(const Vec2& pixel, const CameraModel& camera,
                                       const CoverSurfacePair* cover, const RadianceGrid& grid,
                                       const SamplingConfig& sampling, std::uint64_t ray_seed) {
  PixelRender out;
  PixelRay ray;
  try {
    ray = exit_ray_through_cover(pixel, camera, cover);
  } catch (const Error&) {
    out.flagged = true;
    return out;
  }
  if (ray.status == TraceStatus::TotalInternalReflection) {
    out.flagged = true;
    return out;
  }
  out.color = render_ray(ray.sampling(), grid, sampling, ray_seed);
  return out;
}

void BatchGradients::reset(const SceneModel& model) {
  grid.assign(model.grid.params().size(), 0.0);
  field.assign(model.field.param_count(), 0.0);
  camera.fill(0.0);
}

double patch_normal_loss(std::span<const FieldPrediction, 9> predictions,
                         std::span<const Ray, 9> rays, double index_inside,
                         double index_outside, int* terms, PatchNormalGradient* gradient) {
  double loss = 0.0;
  for (int surface = 1; surface <= 2; ++surface) {
    const auto points = surface_points(predictions, rays, surface, index_inside, index_outside);
    if (!points) continue;
    const PlaneFit fit = fit_plane(*points, rays[4].origin);
    if (fit.degenerate) continue;
    const Vec3& predicted = surface == 1 ? predictions[4].n1 : predictions[4].n2;
    const Vec3 diff = fit.normal - predicted;
    loss += diff.squaredNorm();
    if (terms) ++*terms;
    if (!gradient) continue;

    const Vec3 d_fit = 2.0 * diff;
    if (surface == 1) {
      gradient->prediction[4].d_n1 -= d_fit;
    } else {
      gradient->prediction[4].d_n2 -= d_fit;
    }
    const std::array<Vec3, 9> d_points = fit_plane_backward(fit, d_fit);
    for (size_t k = 0; k < 9; ++k) {
      if (surface == 1) {
        gradient->prediction[k].d_d1 += d_points[k].dot(rays[k].direction);
        gradient->d_direction[k] += predictions[k].d1 * d_points[k];
        gradient->d_origin[k] += d_points[k];
        continue;
      }
      const FieldTraversal t =
          refract_via_prediction(rays[k], predictions[k], index_inside, index_outside);
      const FieldTraversalGradient g = refract_via_prediction_backward(
          rays[k], predictions[k], t, index_inside, index_outside, d_points[k], Vec3::Zero());
      gradient->prediction[k].d_d1 += g.prediction.d_d1;
      gradient->prediction[k].d_d2 += g.prediction.d_d2;
      gradient->prediction[k].d_n1 += g.prediction.d_n1;
      gradient->prediction[k].d_n2 += g.prediction.d_n2;
      gradient->d_direction[k] += g.d_direction;
      gradient->d_origin[k] += g.d_origin;
    }
  }
  return loss;
}

namespace detail {

void setup_patch_rays(const SceneModel& model, const BatchInputs& inputs, const PatchRef& patch,
                      bool want_camera, std::span<RayWork, 9> rays) {
  const CameraModel camera = with_offsets(inputs.cameras[patch.view], model.camera_offsets);
  const Image& image = inputs.images[patch.view];
  for (int k = 0; k < 9; ++k) {
    RayWork& w = rays[k];
    const int px = patch.x + (k % 3) - 1;
    const int py = patch.y + (k / 3) - 1;
    w.pixel = Vec2(px + 0.5, py + 0.5);
    w.seed = pixel_seed(inputs.seed, patch.view, px, py);
    w.target = image.at(px, py);
    w.ray_cam = Ray{Vec3::Zero(),
                    lift_to_camera_direction(w.pixel, camera, want_camera ? &w.jacobian : nullptr)};
    w.d_pred = FieldPredictionGradient{};
    w.d_dir_cam.setZero();
    w.d_raw.setZero();
  }
}

void process_patch(const SceneModel& model, const BatchInputs& inputs, const PatchRef& patch,
                   const GradientMask& mask, std::span<RayWork, 9> rays, RayRecord& record,
                   std::span<double> d_grid, BatchLoss& loss) {
  const Pose& pose = inputs.cameras[patch.view].pose;
  const RenderOptions& opt = inputs.options;
  const bool use_field = opt.use_field;
  const bool want_rays = mask.field || mask.camera;
  bool all_refracted = use_field;

  for (int k = 0; k < 9; ++k) {
    RayWork& w = rays[k];
    Ray exit_local = w.ray_cam;
    double path = 0.0;
    bool flagged = false;
    if (use_field) {
      w.pred = model.field.head(w.raw, w.ray_cam);
      w.trav = refract_via_prediction(w.ray_cam, w.pred, opt.index_inside, opt.index_outside);
      if (w.trav.status != TraceStatus::Refracted) {
        flagged = true;
        all_refracted = false;
      } else {
        exit_local = w.trav.exit;
        path = w.trav.path_length;
      }
    }
    ++loss.rays;
    if (flagged) {
      ++loss.flagged;
      loss.photometric += w.target.squaredNorm();
      continue;
    }
    const Ray exit = sampling_ray(Ray{pose.center + pose.rotation * exit_local.origin,
                                      pose.rotation * exit_local.direction},
                                  path);
    const Rgb color = render_ray(exit, model.grid, opt.sampling, w.seed, &record);
    const Rgb residual = color - w.target;
    loss.photometric += residual.squaredNorm();
    if (!mask.grid && !want_rays) continue;

    Vec3 d_origin, d_direction;
    render_ray_backward(exit, model.grid, record, 2.0 * residual, d_grid,
                        want_rays ? &d_origin : nullptr, want_rays ? &d_direction : nullptr);
    if (!want_rays) continue;
    const Vec3 d_exit_origin = pose.rotation.transpose() * d_origin;
    Vec3 d_exit_dir = pose.rotation.transpose() * d_direction;
    if (!use_field) {
      w.d_dir_cam += d_exit_dir;
      continue;
    }
    // Undo the re-anchoring: origin' = origin - d2 * direction.
    d_exit_dir -= path * d_exit_origin;
    const double d_path = -d_exit_origin.dot(w.trav.exit.direction);
    const FieldTraversalGradient g = refract_via_prediction_backward(
        w.ray_cam, w.pred, w.trav, opt.index_inside, opt.index_outside, d_exit_origin, d_exit_dir);
    w.d_pred.d_d1 += g.prediction.d_d1;
    w.d_pred.d_d2 += g.prediction.d_d2 + d_path;
    w.d_pred.d_n1 += g.prediction.d_n1;
    w.d_pred.d_n2 += g.prediction.d_n2;
    w.d_dir_cam += g.d_direction;
  }

  if (!all_refracted) return;
  std::array<FieldPrediction, 9> preds;
  std::array<Ray, 9> cam_rays;
  for (int k = 0; k < 9; ++k) {
    preds[k] = rays[k].pred;
    cam_rays[k] = rays[k].ray_cam;
  }
  PatchNormalGradient normal_grad;
  const double normal = patch_normal_loss(preds, cam_rays, opt.index_inside, opt.index_outside,
                                          &loss.normal_terms, want_rays ? &normal_grad : nullptr);
  loss.normal_consistency += normal;
  if (!want_rays) return;
  const double lambda = inputs.lambda_normals;
  for (int k = 0; k < 9; ++k) {
    RayWork& w = rays[k];
    w.d_pred.d_d1 += lambda * normal_grad.prediction[k].d_d1;
    w.d_pred.d_d2 += lambda * normal_grad.prediction[k].d_d2;
    w.d_pred.d_n1 += lambda * normal_grad.prediction[k].d_n1;
    w.d_pred.d_n2 += lambda * normal_grad.prediction[k].d_n2;
    w.d_dir_cam += lambda * normal_grad.d_direction[k];
  }
}

void finish_rays(const SceneModel& model, std::span<RayWork> rays) {
  for (RayWork& w : rays) {
    Vec3 d_origin, d_dir;
    w.d_raw = model.field.head_backward(w.raw, w.ray_cam, w.d_pred, &d_origin, &d_dir);
    w.d_dir_cam += d_dir;
  }
}

}  // namespace detail
}  // namespace covertrace
