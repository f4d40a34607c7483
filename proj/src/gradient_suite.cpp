#include "covertrace/gradient_suite.hpp"

#include "covertrace/pipeline.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <random>

namespace covertrace {

namespace {

using Rng = std::mt19937_64;

// Folds one single-parameter check into the running entry; worst_parameter
// records the probe number.
void absorb(GradCheckReport& total, const GradCheckReport& one, size_t probe) {
  if (one.max_relative_error > total.max_relative_error || total.checked == 0) {
    total.max_relative_error = std::max(total.max_relative_error, one.max_relative_error);
    total.worst_parameter = probe;
  }
  total.checked += one.checked;
  total.passed = total.passed && one.passed;
}

Vec3 random_unit(Rng& rng) {
  std::normal_distribution<double> g(0, 1);
  Vec3 v;
  do v = Vec3(g(rng), g(rng), g(rng));
  while (v.norm() < 1e-3);
  return v.normalized();
}

GradCheckReport check_refract(Rng& rng, int probes, double step, double tol, double floor) {
  GradCheckReport total;
  std::uniform_real_distribution<double> eta_dist(0.6, 1.5);
  for (int p = 0; p < probes; ++p) {
    Vec3 n, i;
    double eta = 0.0;
    while (true) {
      n = random_unit(rng);
      i = random_unit(rng);
      if (i.dot(n) > 0) i = -i;
      eta = eta_dist(rng);
      const double c1 = -i.dot(n);
      // Stay clear of grazing incidence and the critical angle.
      if (c1 > 0.1 && 1.0 - eta * eta * (1.0 - c1 * c1) > 0.05) break;
    }
    const Vec3 w = random_unit(rng);
    const Objective f = [&](std::span<const double> x, std::span<double> g) {
      const Vec3 xi(x[0], x[1], x[2]), xn(x[3], x[4], x[5]);
      Vec3 t;
      if (!refract_unchecked(xi, xn, x[6], t)) throw Error(ErrorKind::TotalInternalReflection, "probe hit TIR");
      if (!g.empty()) {
        const RefractGradient d = refract_backward(xi, xn, x[6], w);
        for (int k = 0; k < 3; ++k) {
          g[k] = d.d_incident[k];
          g[3 + k] = d.d_normal[k];
        }
        g[6] = d.d_eta;
      }
      return w.dot(t);
    };
    const std::vector<double> x{i.x(), i.y(), i.z(), n.x(), n.y(), n.z(), eta};
    absorb(total, grad_check(f, x, step, tol, {}, floor), p);
  }
  return total;
}

RefractiveField probe_field(Rng& rng) {
  FieldConfig cfg;
  cfg.hidden_layers = 2;
  cfg.hidden_width = 16;
  cfg.octaves = 2;
  cfg.seed = rng();
  RefractiveField field(cfg);
  std::uniform_real_distribution<double> u(-0.05, 0.05);
  for (double& p : field.params()) p += u(rng);
  return field;
}

GradCheckReport check_field_traversal(Rng& rng, int probes, double step, double tol, double floor) {
  GradCheckReport total;
  RefractiveField field = probe_field(rng);
  const size_t n = field.param_count();
  std::uniform_real_distribution<double> u(-0.4, 0.4);
  std::uniform_int_distribution<size_t> pick(0, n + 5);
  for (int p = 0; p < probes; ++p) {
    const Vec3 origin(0.2 * u(rng) / 40, 0.2 * u(rng) / 40, 0.0);
    const Vec3 dir = Vec3(u(rng), u(rng), 1.0).normalized();
    const Vec3 w_o = random_unit(rng), w_d = random_unit(rng);
    // Parameters: field weights, then ray origin and direction.
    std::vector<double> x(field.params().begin(), field.params().end());
    for (int k = 0; k < 3; ++k) x.push_back(origin[k]);
    for (int k = 0; k < 3; ++k) x.push_back(dir[k]);
    const Objective f = [&](std::span<const double> xs, std::span<double> g) {
      std::copy_n(xs.begin(), n, field.params().begin());
      const Ray ray{Vec3(xs[n], xs[n + 1], xs[n + 2]), Vec3(xs[n + 3], xs[n + 4], xs[n + 5])};
      RefractiveField::Tape tape;
      const FieldOutputs raw = field.network(ray, &tape);
      const FieldPrediction pred = field.head(raw, ray);
      const FieldTraversal t = refract_via_prediction(ray, pred, 1.49, 1.0);
      if (t.status != TraceStatus::Refracted) throw Error(ErrorKind::TotalInternalReflection, "probe ray blocked");
      if (!g.empty()) {
        std::fill(g.begin(), g.end(), 0.0);
        const FieldTraversalGradient d = refract_via_prediction_backward(ray, pred, t, 1.49, 1.0, 10.0 * w_o, w_d);
        Vec3 head_origin, head_dir;
        const FieldOutputs d_raw = field.head_backward(raw, ray, d.prediction, &head_origin, &head_dir);
        const FieldInputs d_in = field.network_backward(tape, d_raw, g.first(n));
        for (int k = 0; k < 3; ++k) {
          g[n + k] = d.d_origin[k] + head_origin[k] + d_in[k];
          g[n + 3 + k] = d.d_direction[k] + head_dir[k] + d_in[3 + k];
        }
      }
      return 10.0 * w_o.dot(t.exit.origin) + w_d.dot(t.exit.direction);
    };
    const std::vector<size_t> idx{pick(rng)};
    absorb(total, grad_check(f, x, step, tol, idx, floor), p);
  }
  return total;
}

struct PatchScene {
  SceneModel model;
  std::vector<CameraModel> cameras;
  std::vector<Image> images;

  explicit PatchScene(Rng& rng, bool dark)
      : model{RadianceGrid({8, 8, 8}, Bounds{}, 20.0), probe_field(rng), {}} {
    std::normal_distribution<double> g(0, 1);
    std::uniform_real_distribution<double> u(0.05, 0.95);
    for (int x = 0; x < 8; ++x)
      for (int y = 0; y < 8; ++y)
        for (int z = 0; z < 8; ++z) {
          // Density jumps to zero at the box faces, so the outer layer stays
          // empty and samples crossing a face leave the loss continuous. A
          // dark scene has no colour, so only the normal term depends on the rays.
          const bool shell = x == 0 || y == 0 || z == 0 || x == 7 || y == 7 || z == 7;
          const size_t v = model.grid.index(x, y, z);
          model.grid.params()[v] = dark || shell ? -30.0 : g(rng);
          model.grid.set_color(v, dark ? Rgb::Zero() : Rgb(u(rng), u(rng), u(rng)));
        }
    model.camera_offsets = {0.3, -0.2, 0.1, 0.05, 0.01, -0.002, 0.0005, 0.0003, -0.0002};
    for (int v = 0; v < 2; ++v) {
      CameraModel cam;
      cam.intrinsics = {18, 18, 8, 8};
      cam.distortion.base = {-0.05, 0.01, 0, 0.001, 0};
      cam.width = cam.height = 16;
      const double az = 0.7 * v;
      cam.pose = Pose::look_at(Vec3(1.2 * std::cos(az), 1.2 * std::sin(az), 0.2), Vec3::Zero(), Vec3::UnitZ());
      cameras.push_back(cam);
      Image img(16, 16);
      for (double& c : img.data) c = u(rng);
      images.push_back(img);
    }
  }
};

// Samples the objective at nine points h/4 apart across the central stencil.
// On a smooth stretch consecutive slope differences are equal up to rounding;
// a slope kink of size J moves one of them by at least J/3. The threshold sits
// well below the 4 * tol * |g| jump needed to spoil the central difference.
bool smooth_stencil(const Objective& f, std::span<const double> base, size_t index, double step,
                    double tol, double floor) {
  std::vector<double> x(base.begin(), base.end());
  std::array<double, 9> v;
  for (int k = 0; k < 9; ++k) {
    x[index] = base[index] + (k - 4) * step / 4;
    v[k] = f(x, {});
  }
  const double q = step / 4;
  std::array<double, 7> curv;
  for (int k = 0; k < 7; ++k) curv[k] = (v[k + 2] - 2 * v[k + 1] + v[k]) / q;
  std::array<double, 7> sorted = curv;
  std::nth_element(sorted.begin(), sorted.begin() + 3, sorted.end());
  const double median = sorted[3];
  const double slope = std::max(std::abs(v[8] - v[0]) / (2 * step), floor);
  for (double c : curv) {
    if (std::abs(c - median) > 0.5 * tol * slope) return false;
  }
  return true;
}

enum class Group { Grid, Field, Camera };

std::span<double> group_params(SceneModel& m, Group g) {
  switch (g) {
    case Group::Grid: return m.grid.params();
    case Group::Field: return m.field.params();
    case Group::Camera: return m.camera_offsets;
  }
  return {};
}

std::span<const double> group_grad(const BatchGradients& b, Group g) {
  switch (g) {
    case Group::Grid: return b.grid;
    case Group::Field: return b.field;
    case Group::Camera: return b.camera;
  }
  return {};
}

// One 3x3 patch per probe; the closure covers a single parameter group.
GradCheckReport check_patch_loss(Rng& rng, int probes, double step, double tol, double floor, bool dark,
                                 double lambda_normals, std::span<const Group> groups, int& rejected) {
  GradCheckReport total;
  PatchScene scene(rng, dark);
  std::uniform_int_distribution<int> pos(1, 14), view(0, 1);
  for (int p = 0; p < probes; ++p) {
    const Group group = groups[static_cast<size_t>(p) % groups.size()];
    const std::vector<PatchRef> patch{PatchRef{view(rng), pos(rng), pos(rng)}};
    BatchInputs in;
    in.cameras = scene.cameras;
    in.images = scene.images;
    in.patches = patch;
    in.options.sampling = SamplingConfig{0.6, 1.8, 24, false, 0};
    in.lambda_normals = lambda_normals;
    in.seed = rng();

    SceneModel& m = scene.model;
    const std::span<double> params = group_params(m, group);
    const std::vector<double> base(params.begin(), params.end());
    const GradientMask mask{group == Group::Grid, group == Group::Field, group == Group::Camera};
    const Objective f = [&](std::span<const double> x, std::span<double> g) {
      std::copy(x.begin(), x.end(), group_params(m, group).begin());
      BatchGradients grads;
      grads.reset(m);
      const BatchLoss l = reference::evaluate_batch(m, in, mask, g.empty() ? nullptr : &grads);
      if (!g.empty()) {
        const auto src = group_grad(grads, group);
        std::copy(src.begin(), src.end(), g.begin());
      }
      return l.photometric + lambda_normals * l.normal_consistency;
    };
    std::vector<double> grad(base.size());
    f(base, grad);
    std::vector<size_t> live;
    for (size_t i = 0; i < grad.size(); ++i) if (grad[i] != 0.0) live.push_back(i);
    if (live.empty()) {
      --p;  // patch misses everything the group touches; draw another
      continue;
    }
    const std::vector<size_t> idx{live[std::uniform_int_distribution<size_t>(0, live.size() - 1)(rng)]};
    const bool smooth = smooth_stencil(f, base, idx[0], step, tol, floor);
    std::copy(base.begin(), base.end(), params.begin());
    if (!smooth) {
      if (++rejected > 10 * probes) throw Error(ErrorKind::InvalidInput, "no smooth probes left");
      --p;
      continue;
    }
    absorb(total, grad_check(f, base, step, tol, idx, floor), p);
    std::copy(base.begin(), base.end(), params.begin());
  }
  return total;
}

GradCheckReport check_photometric(Rng& rng, int probes, double step, double tol, double floor) {
  GradCheckReport total;
  std::uniform_real_distribution<double> u(0, 1);
  std::uniform_int_distribution<size_t> pick(0, 3 * 8 - 1);
  for (int p = 0; p < probes; ++p) {
    std::vector<double> x(3 * 8), ref(3 * 8);
    for (double& v : x) v = u(rng);
    for (double& v : ref) v = u(rng);
    const Objective f = [&](std::span<const double> xs, std::span<double> g) {
      std::vector<Rgb> a(8), b(8);
      for (int k = 0; k < 8; ++k) {
        a[k] = Rgb(xs[3 * k], xs[3 * k + 1], xs[3 * k + 2]);
        b[k] = Rgb(ref[3 * k], ref[3 * k + 1], ref[3 * k + 2]);
      }
      if (!g.empty()) for (size_t k = 0; k < xs.size(); ++k) g[k] = 2.0 * (xs[k] - ref[k]);
      return photometric_loss(a, b);
    };
    const std::vector<size_t> idx{pick(rng)};
    absorb(total, grad_check(f, x, step, tol, idx, floor), p);
  }
  return total;
}

}  // namespace

std::vector<GradientSuiteEntry> gradient_suite(std::uint64_t seed, int probes, double step,
                                               double tolerance, double floor) {
  Rng rng(seed);
  std::vector<GradientSuiteEntry> out;
  out.push_back({"refract", check_refract(rng, probes, step, tolerance, floor), tolerance});
  out.push_back({"field_traversal", check_field_traversal(rng, probes, step, tolerance, floor), tolerance});
  const Group all[] = {Group::Grid, Group::Field, Group::Camera};
  int rejected = 0;
  GradCheckReport pixel = check_patch_loss(rng, probes, step, tolerance, floor, false, 0.0, all, rejected);
  out.push_back({"render_pixel", pixel, tolerance, rejected});
  out.push_back({"photometric_loss", check_photometric(rng, probes, step, tolerance, floor), tolerance});
  const Group rays[] = {Group::Field, Group::Camera};
  rejected = 0;
  GradCheckReport normals = check_patch_loss(rng, probes, step, tolerance, floor, true, 1.0, rays, rejected);
  out.push_back({"normal_consistency_loss", normals, tolerance, rejected});
  return out;
}

}  // namespace covertrace
