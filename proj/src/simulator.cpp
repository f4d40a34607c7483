#include "covertrace/simulator.hpp"

#include "covertrace/pipeline.hpp"

#include <cmath>
#include <numbers>

namespace covertrace {

bool Primitive::contains(const Vec3& p) const {
  if (kind == Kind::Sphere) return (p - center).norm() <= size.x();
  return ((p - center).cwiseAbs().array() <= size.array()).all();
}

void SceneSpec::validate() const {
  for (int n : resolution) {
    if (n < 1) throw Error(ErrorKind::InvalidInput, "scene resolution must be positive");
  }
  for (const Primitive& prim : primitives) {
    if (!(prim.density >= 0.0)) throw Error(ErrorKind::InvalidInput, "primitive density must be non-negative");
    const bool sphere = prim.kind == Primitive::Kind::Sphere;
    const Vec3 extent = sphere ? Vec3::Constant(prim.size.x()) : prim.size;
    if (!(extent.array() > 0.0).all()) throw Error(ErrorKind::InvalidInput, "primitive size must be positive");
    if (!bounds.contains(prim.center - extent) || !bounds.contains(prim.center + extent)) {
      throw Error(ErrorKind::InvalidInput, "primitive extends outside the scene bounds");
    }
  }
}

RadianceGrid voxelize(const SceneSpec& spec) {
  spec.validate();
  RadianceGrid grid(spec.resolution, spec.bounds, spec.density_scale);
  const auto& res = spec.resolution;
#pragma omp parallel for schedule(static)
  for (int x = 0; x < res[0]; ++x) {
    for (int y = 0; y < res[1]; ++y) {
      for (int z = 0; z < res[2]; ++z) {
        const Vec3 c = grid.voxel_center(x, y, z);
        const Primitive* hit = nullptr;
        for (const Primitive& prim : spec.primitives) {
          if (prim.contains(c)) hit = &prim;
        }
        if (!hit) continue;
        const size_t v = grid.index(x, y, z);
        grid.set_sigma(v, hit->density);
        grid.set_color(v, hit->rgb);
      }
    }
  }
  grid.cache_activation();
  return grid;
}

std::vector<Pose> orbit_trajectory(const Vec3& center, double radius, int n_views, double elevation) {
  if (!(radius > 0.0)) throw Error(ErrorKind::InvalidInput, "orbit radius must be positive");
  if (n_views < 1) throw Error(ErrorKind::InvalidInput, "orbit needs at least one view");
  std::vector<Pose> poses;
  poses.reserve(static_cast<size_t>(n_views));
  for (int i = 0; i < n_views; ++i) {
    const double az = 2.0 * std::numbers::pi * i / n_views;
    const Vec3 eye = center + radius * Vec3(std::cos(elevation) * std::cos(az),
                                            std::cos(elevation) * std::sin(az), std::sin(elevation));
    poses.push_back(Pose::look_at(eye, center, Vec3::UnitZ()));
  }
  return poses;
}

CoverSurfacePair make_spherical_cover(const SphericalCoverSpec& spec) {
  if (!(spec.base_radius > 0.0) || !(spec.thickness > 0.0)) {
    throw Error(ErrorKind::InvalidInput, "cover radius and thickness must be positive");
  }
  const Vec3 center(0, 0, spec.center_z);
  const double inner_r = spec.base_radius;
  const double outer_r = spec.base_radius + spec.thickness;
  SurfaceFigure inner_fig, outer_fig;
  if (spec.figure_amplitude > 0.0) {
    inner_fig = SurfaceFigure::random(spec.figure_grid, inner_r, spec.figure_amplitude, spec.seed);
    outer_fig = SurfaceFigure::random(spec.figure_grid, outer_r, spec.figure_amplitude,
                                      spec.seed ^ 0x9e3779b97f4a7c15ULL);
  }
  CoverSurfacePair cover{
      ParametricSurface(SphericalCap{center, inner_r, Vec3::UnitZ()}, std::move(inner_fig)),
      ParametricSurface(SphericalCap{center, outer_r, Vec3::UnitZ()}, std::move(outer_fig)),
      spec.index_inside, spec.index_outside, spec.aperture_radius};
  cover.validate();
  return cover;
}

Ray ExitRayMap::ray(int x, int y) const {
  const size_t o = (static_cast<size_t>(y) * width + x) * 3;
  return Ray{Vec3(origins[o], origins[o + 1], origins[o + 2]),
             Vec3(directions[o], directions[o + 1], directions[o + 2])};
}

ExitRayMap exit_ray_map(const CameraModel& camera, const CoverSurfacePair* cover) {
  ExitRayMap map;
  map.width = camera.width;
  map.height = camera.height;
  const size_t n = static_cast<size_t>(camera.width) * camera.height;
  map.origins.assign(3 * n, 0.0);
  map.directions.assign(3 * n, 0.0);
  map.status.assign(n, 0);
#pragma omp parallel for schedule(static)
  for (int y = 0; y < camera.height; ++y) {
    for (int x = 0; x < camera.width; ++x) {
      const size_t p = static_cast<size_t>(y) * camera.width + x;
      try {
        const PixelRay r = exit_ray_through_cover(Vec2(x + 0.5, y + 0.5), camera, cover);
        map.status[p] = static_cast<std::uint8_t>(r.status);
        for (int a = 0; a < 3; ++a) {
          map.origins[3 * p + a] = r.exit.origin[a];
          map.directions[3 * p + a] = r.exit.direction[a];
        }
      } catch (const Error&) {
        map.status[p] = kExitRayError;
      }
    }
  }
  return map;
}

void split_holdout(CaptureDataset& dataset, int holdout_every) {
  dataset.train_indices.clear();
  dataset.holdout_indices.clear();
  for (int i = 0; i < static_cast<int>(dataset.cameras.size()); ++i) {
    if (holdout_every > 0 && i % holdout_every == 0) {
      dataset.holdout_indices.push_back(i);
    } else {
      dataset.train_indices.push_back(i);
    }
  }
}

CaptureDataset simulate_capture(const RadianceGrid& grid, const CoverSurfacePair* cover,
                                const std::vector<CameraModel>& cameras,
                                const SamplingConfig& sampling, std::uint64_t seed,
                                bool emit_exit_rays, int holdout_every) {
  if (cover) cover->validate();
  CaptureDataset data;
  data.cameras = cameras;
  data.seed = seed;
  if (cover) data.cover = *cover;
  for (size_t v = 0; v < cameras.size(); ++v) {
    const CameraModel& cam = cameras[v];
    cam.validate();
    Image image(cam.width, cam.height);
    std::vector<int> row_flags(static_cast<size_t>(cam.height), 0);
#pragma omp parallel for schedule(static)
    for (int y = 0; y < cam.height; ++y) {
      for (int x = 0; x < cam.width; ++x) {
        const PixelRender px = render_pixel_through_cover(
            Vec2(x + 0.5, y + 0.5), cam, cover, grid, sampling,
            pixel_seed(seed, static_cast<int>(v), x, y));
        image.set(x, y, px.color);
        row_flags[static_cast<size_t>(y)] += px.flagged ? 1 : 0;
      }
    }
    int flagged = 0;
    for (int f : row_flags) flagged += f;
    data.images.push_back(std::move(image));
    data.flagged_pixels.push_back(flagged);
    if (emit_exit_rays) data.exit_rays.push_back(exit_ray_map(cam, cover));
  }
  split_holdout(data, holdout_every);
  return data;
}

}  // namespace covertrace
