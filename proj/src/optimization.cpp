#include "covertrace/optimization.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace covertrace {

double photometric_loss(std::span<const Rgb> rendered, std::span<const Rgb> reference) {
  if (rendered.size() != reference.size()) {
    throw Error(ErrorKind::SizeMismatch, "rendered and reference batches differ in size");
  }
  double loss = 0.0;
  for (size_t i = 0; i < rendered.size(); ++i) loss += (rendered[i] - reference[i]).squaredNorm();
  return loss;
}

double photometric_loss(const Image& rendered, const Image& reference) {
  if (!rendered.same_shape(reference)) {
    throw Error(ErrorKind::SizeMismatch, "rendered and reference images differ in size");
  }
  double loss = 0.0;
  for (size_t i = 0; i < rendered.data.size(); ++i) {
    const double d = rendered.data[i] - reference.data[i];
    loss += d * d;
  }
  return loss;
}

double normal_consistency_loss(const RefractiveField& field, std::span<const PatchRays> patches,
                               double index_inside, double index_outside, int* terms) {
  double loss = 0.0;
  int count = 0;
  std::array<FieldPrediction, 9> preds;
  for (const PatchRays& patch : patches) {
    if (!std::all_of(patch.crossing.begin(), patch.crossing.end(), [](bool c) { return c; })) {
      continue;
    }
    for (int k = 0; k < 9; ++k) preds[k] = field.eval(patch.rays[k]);
    loss += patch_normal_loss(preds, patch.rays, index_inside, index_outside, &count, nullptr);
  }
  if (terms) *terms = count;
  return loss;
}

GradCheckReport grad_check(const Objective& objective, std::span<const double> params,
                           double step, double tolerance, std::span<const size_t> indices,
                           double floor) {
  std::vector<double> x(params.begin(), params.end());
  std::vector<double> analytic(x.size(), 0.0);
  objective(x, analytic);

  std::vector<size_t> all;
  if (indices.empty()) {
    all.resize(x.size());
    for (size_t i = 0; i < x.size(); ++i) all[i] = i;
    indices = all;
  }
  GradCheckReport report;
  for (size_t i : indices) {
    const double saved = x[i];
    x[i] = saved + step;
    const double plus = objective(x, {});
    x[i] = saved - step;
    const double minus = objective(x, {});
    x[i] = saved;
    const double fd = (plus - minus) / (2.0 * step);
    const double rel = std::abs(analytic[i] - fd) /
                       std::max({std::abs(analytic[i]), std::abs(fd), floor});
    if (report.checked == 0 || rel > report.max_relative_error) {
      report.max_relative_error = rel;
      report.worst_parameter = i;
    }
    ++report.checked;
  }
  report.passed = report.max_relative_error < tolerance;
  return report;
}

Adam::Adam(size_t size, double lr, double beta1, double beta2, double epsilon)
    : lr_(lr), beta1_(beta1), beta2_(beta2), epsilon_(epsilon), m_(size, 0.0), v_(size, 0.0) {}

void Adam::step(std::span<double> params, std::span<const double> gradient) {
  if (params.size() != m_.size() || gradient.size() != m_.size()) {
    throw Error(ErrorKind::SizeMismatch, "optimizer state does not match the parameter vector");
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, t_);
  const double c2 = 1.0 - std::pow(beta2_, t_);
  const long long n = static_cast<long long>(params.size());
#pragma omp parallel for schedule(static) if (n > 65536)
  for (long long i = 0; i < n; ++i) {
    const double g = gradient[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g * g;
    params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + epsilon_);
  }
}

void TrainConfig::validate() const {
  if (warmup_iters < 0 || warmup_iters > total_iters) {
    throw Error(ErrorKind::Config, "warmup_iters must lie in [0, total_iters]");
  }
  if (!(lr_grid > 0.0) || !(lr_field > 0.0) || !(lr_camera > 0.0)) {
    throw Error(ErrorKind::Config, "learning rates must be positive");
  }
  if (rays_per_batch < 9) throw Error(ErrorKind::Config, "rays_per_batch must be at least 9");
  if (!(lambda_normals >= 0.0)) throw Error(ErrorKind::Config, "lambda_normals must be non-negative");
  if (!(index_inside > 0.0) || !(index_outside > 0.0)) {
    throw Error(ErrorKind::Config, "refractive indices must be positive");
  }
  if (partitions < 1) throw Error(ErrorKind::Config, "partitions must be at least 1");
  if (!(sampling.near >= 0.0) || !(sampling.far > sampling.near) || sampling.samples < 1) {
    throw Error(ErrorKind::Config, "sampling range must satisfy 0 <= near < far with samples >= 1");
  }
}

namespace {

bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

TrainResult train(const TrainingData& data, SceneModel model, const TrainConfig& config,
                  const TrainObserver& observer) {
  config.validate();
  if (data.cameras.size() != data.images.size() || data.cameras.empty()) {
    throw Error(ErrorKind::SizeMismatch, "training needs one image per camera");
  }
  for (size_t v = 0; v < data.cameras.size(); ++v) {
    const CameraModel& cam = data.cameras[v];
    if (data.images[v].width != cam.width || data.images[v].height != cam.height) {
      throw Error(ErrorKind::SizeMismatch, "image resolution does not match its camera");
    }
    if (cam.width < 3 || cam.height < 3) throw Error(ErrorKind::TooSmall, "images must be at least 3x3");
  }

  TrainResult result{std::move(model), {}, false, 0};
  SceneModel& m = result.model;
  Adam adam_grid(m.grid.params().size(), config.lr_grid);
  Adam adam_field(m.field.param_count(), config.lr_field);
  Adam adam_camera(kCameraOffsetCount, config.lr_camera);
  Intrinsics bound_ref = data.cameras[0].intrinsics;

  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<int> pick_view(0, static_cast<int>(data.cameras.size()) - 1);
  const int n_patches = config.rays_per_batch / 9;
  std::vector<PatchRef> patches(static_cast<size_t>(n_patches));

  BatchInputs inputs;
  inputs.cameras = data.cameras;
  inputs.images = data.images;
  inputs.options.sampling = config.sampling;
  inputs.options.use_field = config.enable_refractive_field;
  inputs.options.index_inside = config.index_inside;
  inputs.options.index_outside = config.index_outside;
  inputs.lambda_normals = config.enable_refractive_field ? config.lambda_normals : 0.0;

  BatchGradients grads;
  grads.reset(m);
  std::vector<double> last_grid, last_field;
  CameraOffsets last_camera{};

  m.grid.cache_activation();
  for (int iter = 0; iter < config.total_iters; ++iter) {
    const bool warm = iter < config.warmup_iters;
    const GradientMask mask{true, !warm && config.enable_refractive_field,
                            !warm && config.enable_camera_offsets};
    for (PatchRef& p : patches) {
      p.view = pick_view(rng);
      const CameraModel& cam = data.cameras[p.view];
      p.x = std::uniform_int_distribution<int>(1, cam.width - 2)(rng);
      p.y = std::uniform_int_distribution<int>(1, cam.height - 2)(rng);
    }
    inputs.patches = patches;
    inputs.seed = pixel_seed(config.seed, iter, 0x5eed, 0);

    const BatchLoss loss = kernels::evaluate_batch(m, inputs, mask, &grads, config.partitions);
    const double rays = std::max(1, loss.rays);
    LossReport report;
    report.iter = iter;
    report.photometric = loss.photometric / rays;
    report.normal_consistency = loss.normal_consistency / rays;
    report.total = report.photometric + inputs.lambda_normals * report.normal_consistency;
    report.flagged_ray_fraction = loss.flagged / rays;

    const bool finite = std::isfinite(report.total) && all_finite(grads.grid) &&
                        (!mask.field || all_finite(grads.field)) &&
                        (!mask.camera || all_finite(grads.camera));
    if (!finite) {
      if (iter > 0) {
        std::copy(last_grid.begin(), last_grid.end(), m.grid.params().begin());
        std::copy(last_field.begin(), last_field.end(), m.field.params().begin());
        m.camera_offsets = last_camera;
        m.grid.cache_activation();
      }
      result.aborted = true;
      break;
    }
    result.log.push_back(report);
    if (observer) observer(report, m);

    last_grid.assign(m.grid.params().begin(), m.grid.params().end());
    if (mask.field) last_field.assign(m.field.params().begin(), m.field.params().end());
    else if (last_field.empty()) last_field.assign(m.field.params().begin(), m.field.params().end());
    last_camera = m.camera_offsets;

    adam_grid.step(m.grid.params(), grads.grid);
    m.grid.cache_activation();
    if (mask.field) adam_field.step(m.field.params(), grads.field);
    if (mask.camera) {
      adam_camera.step(m.camera_offsets, grads.camera);
      CameraModel projected = data.cameras[0];
      projected.intrinsics = bound_ref;
      set_camera_offsets(projected, m.camera_offsets);
      project_intrinsic_offsets(projected.intrinsics);
      m.camera_offsets = camera_offsets(projected);
    }
    result.completed_iters = iter + 1;
  }
  return result;
}

}  // namespace covertrace
