#include "covertrace/experiment.hpp"

#include <chrono>
#include <cmath>
#include <numbers>

namespace covertrace {
namespace {

using io::Json;

Json vec_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }

Vec3 vec_from(const Json& j) {
  return Vec3(j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>());
}

Json sampling_json(const SamplingConfig& s) {
  return {{"near", s.near}, {"far", s.far}, {"samples", s.samples}, {"jitter", s.jitter}};
}

void read_sampling(const Json& j, SamplingConfig& s) {
  s.near = j.value("near", s.near);
  s.far = j.value("far", s.far);
  s.samples = j.value("samples", s.samples);
  s.jitter = j.value("jitter", s.jitter);
}

Json primitive_json(const Primitive& p) {
  const bool sphere = p.kind == Primitive::Kind::Sphere;
  Json j{{"kind", sphere ? "sphere" : "box"},
         {"center", vec_json(p.center)},
         {"rgb", vec_json(p.rgb)},
         {"density", p.density}};
  if (sphere) j["radius"] = p.size.x();
  else j["half_extents"] = vec_json(p.size);
  return j;
}

Primitive primitive_from(const Json& j) {
  Primitive p;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "sphere") {
    p.kind = Primitive::Kind::Sphere;
    p.size = Vec3::Constant(j.at("radius").get<double>());
  } else if (kind == "box") {
    p.kind = Primitive::Kind::Box;
    p.size = vec_from(j.at("half_extents"));
  } else {
    throw Error(ErrorKind::Config, "unknown primitive kind '" + kind + "'");
  }
  p.center = vec_from(j.at("center"));
  p.rgb = vec_from(j.at("rgb"));
  p.density = j.at("density").get<double>();
  return p;
}

Image difference_map(const Image& a, const Image& b) {
  Image d(a.width, a.height);
  for (size_t i = 0; i < d.data.size(); ++i) d.data[i] = std::min(1.0, 4.0 * std::abs(a.data[i] - b.data[i]));
  return d;
}

Image side_by_side(const Image& a, const Image& b) {
  Image out(a.width * 2, a.height);
  for (int y = 0; y < a.height; ++y) {
    for (int x = 0; x < a.width; ++x) {
      out.set(x, y, a.at(x, y));
      out.set(x + a.width, y, b.at(x, y));
    }
  }
  return out;
}

std::string view_name(int v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "view_%03d", v);
  return buf;
}

}  // namespace

void ExperimentConfig::validate() const {
  scene.validate();
  train.validate();
  if (capture.views < 1) throw Error(ErrorKind::Config, "capture.views must be at least 1");
  if (capture.width < 11 || capture.height < 11) {
    throw Error(ErrorKind::Config, "capture images must be at least 11x11 for SSIM");
  }
  if (!(capture.focal > 0.0) || !(capture.orbit_radius > 0.0)) {
    throw Error(ErrorKind::Config, "capture.focal and capture.orbit_radius must be positive");
  }
  if (capture.holdout_every < 2) throw Error(ErrorKind::Config, "capture.holdout_every must be at least 2");
  if (!(capture.sampling.far > capture.sampling.near) || capture.sampling.samples < 1) {
    throw Error(ErrorKind::Config, "capture sampling range is invalid");
  }
  if (!(model.initial_sigma > 0.0)) throw Error(ErrorKind::Config, "model.initial_sigma must be positive");
  if (eval_every < 0 || checkpoint_every < 0) {
    throw Error(ErrorKind::Config, "eval_every and checkpoint_every must be non-negative");
  }
}

Json ExperimentConfig::to_json() const {
  Json prims = Json::array();
  for (const Primitive& p : scene.primitives) prims.push_back(primitive_json(p));
  const FieldConfig& f = model.field;
  return Json{
      {"name", name},
      {"seed", seed},
      {"scene",
       {{"resolution", scene.resolution},
        {"bounds_min", vec_json(scene.bounds.min)},
        {"bounds_max", vec_json(scene.bounds.max)},
        {"density_scale", scene.density_scale},
        {"primitives", prims}}},
      {"capture",
       {{"views", capture.views},
        {"width", capture.width},
        {"height", capture.height},
        {"focal", capture.focal},
        {"orbit_radius", capture.orbit_radius},
        {"elevation", capture.elevation},
        {"target", vec_json(capture.target)},
        {"holdout_every", capture.holdout_every},
        {"sampling", sampling_json(capture.sampling)}}},
      {"cover",
       {{"enabled", cover_enabled},
        {"base_radius", cover.base_radius},
        {"thickness", cover.thickness},
        {"center_z", cover.center_z},
        {"figure_amplitude", cover.figure_amplitude},
        {"figure_grid", cover.figure_grid},
        {"index_inside", cover.index_inside},
        {"index_outside", cover.index_outside},
        {"aperture_radius", cover.aperture_radius},
        {"seed", cover.seed}}},
      {"model",
       {{"grid_resolution", model.grid_resolution},
        {"density_scale", model.density_scale},
        {"initial_sigma", model.initial_sigma},
        {"initial_color", vec_json(model.initial_color)},
        {"field",
         {{"hidden_layers", f.hidden_layers},
          {"hidden_width", f.hidden_width},
          {"octaves", f.octaves},
          {"prior", f.prior == FieldPrior::Shell ? "shell" : "flat"}}}}},
      {"train",
       {{"warmup_iters", train.warmup_iters},
        {"total_iters", train.total_iters},
        {"rays_per_batch", train.rays_per_batch},
        {"lr_grid", train.lr_grid},
        {"lr_field", train.lr_field},
        {"lr_camera", train.lr_camera},
        {"lambda_normals", train.lambda_normals},
        {"index_inside", train.index_inside},
        {"index_outside", train.index_outside},
        {"partitions", train.partitions},
        {"sampling", sampling_json(train.sampling)}}},
      {"flags",
       {{"enable_refractive_field", flags.enable_refractive_field},
        {"enable_warmup", flags.enable_warmup},
        {"enable_camera_offsets", flags.enable_camera_offsets}}},
      {"eval_every", eval_every},
      {"checkpoint_every", checkpoint_every},
      {"compute_ssim", compute_ssim}};
}

ExperimentConfig ExperimentConfig::from_json(const Json& j) {
  ExperimentConfig c = default_experiment_config();
  try {
    c.name = j.value("name", c.name);
    c.seed = j.value("seed", c.seed);
    if (j.contains("scene")) {
      const Json& s = j.at("scene");
      if (s.contains("resolution")) c.scene.resolution = s.at("resolution").get<std::array<int, 3>>();
      if (s.contains("bounds_min")) c.scene.bounds.min = vec_from(s.at("bounds_min"));
      if (s.contains("bounds_max")) c.scene.bounds.max = vec_from(s.at("bounds_max"));
      c.scene.density_scale = s.value("density_scale", c.scene.density_scale);
      if (s.contains("primitives")) {
        c.scene.primitives.clear();
        for (const Json& p : s.at("primitives")) c.scene.primitives.push_back(primitive_from(p));
      }
    }
    if (j.contains("capture")) {
      const Json& s = j.at("capture");
      CaptureConfig& k = c.capture;
      k.views = s.value("views", k.views);
      k.width = s.value("width", k.width);
      k.height = s.value("height", k.height);
      k.focal = s.value("focal", k.focal);
      k.orbit_radius = s.value("orbit_radius", k.orbit_radius);
      k.elevation = s.value("elevation", k.elevation);
      if (s.contains("target")) k.target = vec_from(s.at("target"));
      k.holdout_every = s.value("holdout_every", k.holdout_every);
      if (s.contains("sampling")) read_sampling(s.at("sampling"), k.sampling);
    }
    if (j.contains("cover")) {
      const Json& s = j.at("cover");
      SphericalCoverSpec& k = c.cover;
      c.cover_enabled = s.value("enabled", c.cover_enabled);
      k.base_radius = s.value("base_radius", k.base_radius);
      k.thickness = s.value("thickness", k.thickness);
      k.center_z = s.value("center_z", k.center_z);
      k.figure_amplitude = s.value("figure_amplitude", k.figure_amplitude);
      k.figure_grid = s.value("figure_grid", k.figure_grid);
      k.index_inside = s.value("index_inside", k.index_inside);
      k.index_outside = s.value("index_outside", k.index_outside);
      k.aperture_radius = s.value("aperture_radius", k.aperture_radius);
      k.seed = s.value("seed", k.seed);
    }
    if (j.contains("model")) {
      const Json& s = j.at("model");
      ModelConfig& m = c.model;
      if (s.contains("grid_resolution")) m.grid_resolution = s.at("grid_resolution").get<std::array<int, 3>>();
      m.density_scale = s.value("density_scale", m.density_scale);
      m.initial_sigma = s.value("initial_sigma", m.initial_sigma);
      if (s.contains("initial_color")) m.initial_color = vec_from(s.at("initial_color"));
      if (s.contains("field")) {
        const Json& f = s.at("field");
        m.field.hidden_layers = f.value("hidden_layers", m.field.hidden_layers);
        m.field.hidden_width = f.value("hidden_width", m.field.hidden_width);
        m.field.octaves = f.value("octaves", m.field.octaves);
        const std::string prior = f.value("prior", std::string(m.field.prior == FieldPrior::Shell ? "shell" : "flat"));
        if (prior != "shell" && prior != "flat") throw Error(ErrorKind::Config, "model.field.prior must be flat or shell");
        m.field.prior = prior == "shell" ? FieldPrior::Shell : FieldPrior::FlatSlab;
      }
    }
    if (j.contains("train")) {
      const Json& s = j.at("train");
      TrainConfig& t = c.train;
      t.warmup_iters = s.value("warmup_iters", t.warmup_iters);
      t.total_iters = s.value("total_iters", t.total_iters);
      t.rays_per_batch = s.value("rays_per_batch", t.rays_per_batch);
      t.lr_grid = s.value("lr_grid", t.lr_grid);
      t.lr_field = s.value("lr_field", t.lr_field);
      t.lr_camera = s.value("lr_camera", t.lr_camera);
      t.lambda_normals = s.value("lambda_normals", t.lambda_normals);
      t.index_inside = s.value("index_inside", t.index_inside);
      t.index_outside = s.value("index_outside", t.index_outside);
      t.partitions = s.value("partitions", t.partitions);
      if (s.contains("sampling")) read_sampling(s.at("sampling"), t.sampling);
    }
    if (j.contains("flags")) {
      const Json& s = j.at("flags");
      c.flags.enable_refractive_field = s.value("enable_refractive_field", c.flags.enable_refractive_field);
      c.flags.enable_warmup = s.value("enable_warmup", c.flags.enable_warmup);
      c.flags.enable_camera_offsets = s.value("enable_camera_offsets", c.flags.enable_camera_offsets);
    }
    c.eval_every = j.value("eval_every", c.eval_every);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.compute_ssim = j.value("compute_ssim", c.compute_ssim);
  } catch (const Json::exception& e) {
    throw Error(ErrorKind::Config, std::string("bad experiment config: ") + e.what());
  }
  c.validate();
  return c;
}

std::uint64_t ExperimentConfig::hash() const { return io::fnv1a(to_json().dump()); }

ExperimentConfig default_experiment_config() {
  ExperimentConfig c;
  c.name = "curved-cover";
  SceneSpec& s = c.scene;
  s.resolution = {64, 64, 64};
  s.density_scale = 100.0;
  // Checkerboard floor gives texture across the whole frame.
  const Rgb light(0.85, 0.8, 0.7), dark(0.15, 0.2, 0.3);
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 6; ++j) {
      const Vec3 centre(-0.375 + 0.15 * i, -0.375 + 0.15 * j, -0.4);
      s.primitives.push_back({Primitive::Kind::Box, centre, Vec3(0.075, 0.075, 0.04),
                              (i + j) % 2 ? light : dark, 150.0});
    }
  }
  s.primitives.push_back({Primitive::Kind::Sphere, Vec3(0.12, 0.1, -0.12), Vec3::Constant(0.2),
                          Rgb(0.85, 0.2, 0.15), 150.0});
  s.primitives.push_back({Primitive::Kind::Box, Vec3(-0.2, -0.15, -0.15), Vec3(0.1, 0.12, 0.2),
                          Rgb(0.2, 0.45, 0.85), 150.0});
  s.primitives.push_back({Primitive::Kind::Box, Vec3(-0.22, 0.25, -0.25), Vec3(0.08, 0.08, 0.1),
                          Rgb(0.3, 0.8, 0.3), 150.0});
  s.primitives.push_back({Primitive::Kind::Sphere, Vec3(0.25, -0.25, -0.25), Vec3::Constant(0.1),
                          Rgb(0.95, 0.85, 0.2), 150.0});
  s.primitives.push_back({Primitive::Kind::Box, Vec3(0.1, 0.1, 0.2), Vec3(0.04, 0.04, 0.12),
                          Rgb(0.9, 0.9, 0.9), 150.0});

  c.cover = SphericalCoverSpec{};
  c.cover.seed = 3;
  c.model.field.prior = FieldPrior::Shell;
  c.train.sampling = SamplingConfig{0.8, 2.0, 96, true, 0};
  // The raw-density grid underfits in 2000 steps at 5e-3.
  c.train.lr_grid = 2e-2;
  return c;
}

ExperimentConfig matched_index_config(ExperimentConfig config) {
  config.cover.index_inside = config.cover.index_outside;
  config.name += "-matched";
  return config;
}

std::vector<CameraModel> capture_cameras(const CaptureConfig& capture) {
  std::vector<CameraModel> cams;
  for (const Pose& pose :
       orbit_trajectory(capture.target, capture.orbit_radius, capture.views, capture.elevation)) {
    CameraModel cam;
    cam.intrinsics = {capture.focal, capture.focal, capture.width / 2.0, capture.height / 2.0};
    cam.width = capture.width;
    cam.height = capture.height;
    cam.pose = pose;
    cams.push_back(cam);
  }
  return cams;
}

std::optional<CoverSurfacePair> experiment_cover(const ExperimentConfig& config) {
  if (!config.cover_enabled) return std::nullopt;
  return make_spherical_cover(config.cover);
}

CaptureDataset simulate_experiment(const ExperimentConfig& config, bool emit_exit_rays) {
  config.validate();
  const RadianceGrid grid = voxelize(config.scene);
  const auto cover = experiment_cover(config);
  return simulate_capture(grid, cover ? &*cover : nullptr, capture_cameras(config.capture),
                          config.capture.sampling, config.seed, emit_exit_rays,
                          config.capture.holdout_every);
}

SceneModel initial_model(const ExperimentConfig& config) {
  RadianceGrid grid(config.model.grid_resolution, config.scene.bounds, config.model.density_scale);
  for (size_t v = 0; v < grid.voxel_count(); ++v) {
    grid.set_sigma(v, config.model.initial_sigma);
    grid.set_color(v, config.model.initial_color);
  }
  grid.cache_activation();
  FieldConfig field = config.model.field;
  // The prior is the nominal cover: on-axis inner distance and thickness.
  field.slab_distance = config.cover.base_radius + config.cover.center_z;
  field.slab_thickness = config.cover.thickness;
  field.index_inside = config.train.index_inside;
  field.index_outside = config.train.index_outside;
  field.seed = config.seed;
  return SceneModel{std::move(grid), RefractiveField(field), {}};
}

TrainConfig effective_train_config(const ExperimentConfig& config) {
  TrainConfig t = config.train;
  t.seed = config.seed;
  t.enable_refractive_field = config.flags.enable_refractive_field;
  t.enable_camera_offsets = config.flags.enable_camera_offsets;
  if (!config.flags.enable_warmup) t.warmup_iters = 0;
  return t;
}

RenderOptions evaluation_options(const ExperimentConfig& config) {
  RenderOptions o;
  o.sampling = config.train.sampling;
  o.sampling.jitter = false;
  o.use_field = config.flags.enable_refractive_field;
  o.index_inside = config.train.index_inside;
  o.index_outside = config.train.index_outside;
  return o;
}

Json MetricReport::to_json() const {
  Json images = Json::array();
  for (const ImageMetrics& m : per_image) images.push_back({{"view", m.view}, {"psnr", m.psnr}, {"ssim", m.ssim}});
  return {{"psnr", psnr}, {"ssim", ssim}, {"images", images}};
}

MetricReport compare_images(std::span<const Image> predicted, std::span<const Image> reference,
                            std::span<const int> views, bool compute_ssim) {
  if (predicted.size() != reference.size() || predicted.size() != views.size()) {
    throw Error(ErrorKind::SizeMismatch, "image lists differ in length");
  }
  MetricReport r;
  for (size_t i = 0; i < predicted.size(); ++i) {
    ImageMetrics m{views[i], psnr(predicted[i], reference[i]),
                   compute_ssim ? ssim(predicted[i], reference[i]) : 0.0};
    r.psnr += m.psnr;
    r.ssim += m.ssim;
    r.per_image.push_back(m);
  }
  if (!predicted.empty()) {
    r.psnr /= static_cast<double>(predicted.size());
    r.ssim /= static_cast<double>(predicted.size());
  }
  return r;
}

io::Json render_options_to_json(const RenderOptions& options) {
  return {{"sampling", sampling_json(options.sampling)},
          {"use_field", options.use_field},
          {"index_inside", options.index_inside},
          {"index_outside", options.index_outside}};
}

RenderOptions render_options_from_json(const io::Json& json) {
  RenderOptions o;
  try {
    if (json.contains("sampling")) read_sampling(json.at("sampling"), o.sampling);
    o.use_field = json.value("use_field", o.use_field);
    o.index_inside = json.value("index_inside", o.index_inside);
    o.index_outside = json.value("index_outside", o.index_outside);
  } catch (const io::Json::exception& e) {
    throw Error(ErrorKind::Config, std::string("bad render options: ") + e.what());
  }
  return o;
}

std::vector<Image> render_holdout(const SceneModel& model, const CaptureDataset& data,
                                  const RenderOptions& options, std::uint64_t seed) {
  std::vector<Image> out;
  for (int v : data.holdout_indices) {
    out.push_back(kernels::render_image(model, data.cameras[v], options, seed, v));
  }
  return out;
}

MetricReport evaluate_holdout(const SceneModel& model, const CaptureDataset& data,
                              const RenderOptions& options, std::uint64_t seed, bool compute_ssim) {
  const auto renders = render_holdout(model, data, options, seed);
  std::vector<Image> refs;
  for (int v : data.holdout_indices) refs.push_back(data.images[v]);
  return compare_images(renders, refs, data.holdout_indices, compute_ssim);
}

double exit_ray_angular_error(const SceneModel& model, const CaptureDataset& data,
                              const RenderOptions& options, double central_fraction) {
  if (data.exit_rays.size() != data.cameras.size()) {
    throw Error(ErrorKind::InvalidInput, "dataset has no exit-ray maps");
  }
  double sum = 0.0;
  long count = 0;
  for (size_t v = 0; v < data.cameras.size(); ++v) {
    const CameraModel cam = with_offsets(data.cameras[v], model.camera_offsets);
    const CameraModel& base = data.cameras[v];
    const ExitRayMap& map = data.exit_rays[v];
    const double hx = central_fraction * base.width / 2.0;
    const double hy = central_fraction * base.height / 2.0;
    const double cx = base.width / 2.0, cy = base.height / 2.0;
    for (int y = 0; y < base.height; ++y) {
      for (int x = 0; x < base.width; ++x) {
        if (std::abs(x + 0.5 - cx) > hx || std::abs(y + 0.5 - cy) > hy) continue;
        if (map.status[static_cast<size_t>(y) * map.width + x] == kExitRayError) continue;
        const PixelRay r = exit_ray_for_pixel(Vec2(x + 0.5, y + 0.5), cam, &model.field, options);
        const double c = std::clamp(r.exit.direction.dot(map.ray(x, y).direction), -1.0, 1.0);
        sum += std::acos(c);
        ++count;
      }
    }
  }
  return count ? sum / count * 180.0 / std::numbers::pi : 0.0;
}

std::vector<double> windowed_normal_loss(std::span<const LossReport> log, int from, int window) {
  std::vector<double> out;
  if (window < 1) return out;
  for (size_t start = static_cast<size_t>(std::max(from, 0)); start + window <= log.size(); start += window) {
    double sum = 0.0;
    for (int i = 0; i < window; ++i) sum += log[start + i].normal_consistency;
    out.push_back(sum / window);
  }
  return out;
}

ExperimentResult run_experiment(const ExperimentConfig& config, const CaptureDataset& data,
                                const std::filesystem::path& out_dir) {
  config.validate();
  const auto started = std::chrono::steady_clock::now();
  const TrainConfig train_cfg = effective_train_config(config);
  const RenderOptions eval_opt = evaluation_options(config);

  std::vector<CameraModel> cams;
  std::vector<Image> images;
  for (int v : data.train_indices) {
    cams.push_back(data.cameras[v]);
    images.push_back(data.images[v]);
  }
  if (cams.empty()) throw Error(ErrorKind::InvalidInput, "dataset has no training views");

  const bool write = !out_dir.empty();
  const Json config_json = config.to_json();
  const std::string hash = io::hex64(config.hash());
  Json manifest{{"format_version", io::kFormatVersion}, {"seed", config.seed}, {"config_hash", hash},
                {"dataset_seed", data.seed},
                {"render", render_options_to_json(eval_opt)}};
  if (write) {
    std::filesystem::create_directories(out_dir);
    io::write_json(out_dir / "config.json", config_json);
    io::write_json(out_dir / "manifest.json", manifest);
  }

  std::vector<std::pair<int, double>> curve;
  TrainObserver observer = [&](const LossReport& r, const SceneModel& m) {
    if (config.eval_every > 0 && r.iter % config.eval_every == 0 && !data.holdout_indices.empty()) {
      curve.emplace_back(r.iter, evaluate_holdout(m, data, eval_opt, config.seed, false).psnr);
    }
    if (write && config.checkpoint_every > 0 && r.iter > 0 && r.iter % config.checkpoint_every == 0) {
      io::save_model(out_dir / "checkpoints" / ("iter_" + std::to_string(r.iter)), m, manifest);
    }
  };
  ExperimentResult result{config.name, {},
                          train(TrainingData{cams, images}, initial_model(config), train_cfg, observer),
                          std::move(curve), {}, -1.0, 0.0};

  if (!data.holdout_indices.empty()) {
    result.holdout_renders = render_holdout(result.training.model, data, eval_opt, config.seed);
    std::vector<Image> refs;
    for (int v : data.holdout_indices) refs.push_back(data.images[v]);
    result.report = compare_images(result.holdout_renders, refs, data.holdout_indices, config.compute_ssim);
  }
  if (data.cover && data.exit_rays.size() == data.cameras.size()) {
    result.exit_ray_error_deg = exit_ray_angular_error(result.training.model, data, eval_opt);
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

  if (write) {
    io::write_loss_csv(out_dir / "loss.csv", result.training.log, result.holdout_curve);
    io::save_model(out_dir / "checkpoint", result.training.model, manifest);
    for (size_t i = 0; i < result.holdout_renders.size(); ++i) {
      const int v = data.holdout_indices[i];
      const std::string name = view_name(v);
      io::write_png(out_dir / "renders" / (name + ".png"), result.holdout_renders[i]);
      io::write_raw_image(out_dir / "renders" / (name + ".f32"), result.holdout_renders[i]);
      io::write_png(out_dir / "compare" / (name + ".png"), side_by_side(result.holdout_renders[i], data.images[v]));
      io::write_png(out_dir / "difference" / (name + ".png"), difference_map(result.holdout_renders[i], data.images[v]));
      io::write_json(out_dir / "renders" / (name + ".json"),
                     io::camera_to_json(with_offsets(data.cameras[v], result.training.model.camera_offsets)));
    }
    Json report = result.report.to_json();
    report["name"] = config.name;
    report["config_hash"] = hash;
    report["aborted"] = result.training.aborted;
    report["completed_iters"] = result.training.completed_iters;
    report["exit_ray_error_deg"] = result.exit_ray_error_deg;
    report["camera_offsets"] = result.training.model.camera_offsets;
    io::write_json(out_dir / "report.json", report);
  }
  return result;
}

MetricReport oracle_report(const ExperimentConfig& config, const CaptureDataset& data) {
  const RadianceGrid grid = voxelize(config.scene);
  const auto cover = data.cover;
  std::vector<Image> renders, refs;
  for (int v : data.holdout_indices) {
    // Pixel seeds depend on the view index, so render with the original one.
    Image img(data.cameras[v].width, data.cameras[v].height);
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        img.set(x, y, render_pixel_through_cover(Vec2(x + 0.5, y + 0.5), data.cameras[v],
                                                 cover ? &*cover : nullptr, grid, config.capture.sampling,
                                                 pixel_seed(config.seed, v, x, y)).color);
      }
    }
    renders.push_back(std::move(img));
    refs.push_back(data.images[v]);
  }
  return compare_images(renders, refs, data.holdout_indices, config.compute_ssim);
}

std::vector<AblationRow> ablate(const ExperimentConfig& config, const CaptureDataset& data,
                                const std::filesystem::path& out_dir) {
  std::vector<AblationRow> rows;
  const std::vector<std::pair<std::string, ExperimentFlags>> grid{
      {"full", {true, true, config.flags.enable_camera_offsets}},
      {"no-warmup", {true, false, config.flags.enable_camera_offsets}},
      {"no-refractive-field", {false, true, config.flags.enable_camera_offsets}},
  };
  for (const auto& [name, flags] : grid) {
    ExperimentConfig c = config;
    c.flags = flags;
    c.name = config.name + "-" + name;
    rows.push_back({name, flags, run_experiment(c, data, out_dir.empty() ? out_dir : out_dir / name)});
  }
  if (!out_dir.empty()) io::write_json(out_dir / "ablation.json", ablation_summary(rows));
  return rows;
}

Json ablation_summary(std::span<const AblationRow> rows) {
  Json out = Json::array();
  for (const AblationRow& r : rows) {
    out.push_back({{"name", r.name},
                   {"enable_refractive_field", r.flags.enable_refractive_field},
                   {"enable_warmup", r.flags.enable_warmup},
                   {"enable_camera_offsets", r.flags.enable_camera_offsets},
                   {"psnr", r.result.report.psnr},
                   {"ssim", r.result.report.ssim},
                   {"exit_ray_error_deg", r.result.exit_ray_error_deg},
                   {"seconds", r.result.seconds}});
  }
  return out;
}

}  // namespace covertrace
