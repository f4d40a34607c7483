#pragma once

#include "covertrace/camera.hpp"
#include "covertrace/geometry.hpp"
#include "covertrace/image.hpp"
#include "covertrace/radiance.hpp"

#include <cstdint>
#include <optional>
#include <vector>

namespace covertrace {

struct Primitive {
  enum class Kind { Sphere, Box };
  Kind kind = Kind::Sphere;
  Vec3 center = Vec3::Zero();
  Vec3 size = Vec3::Constant(0.1);  // sphere: size.x() is the radius; box: half extents
  Rgb rgb = Rgb::Ones();
  double density = 100.0;

  bool contains(const Vec3& p) const;
};

struct SceneSpec {
  std::vector<Primitive> primitives;
  std::array<int, 3> resolution{64, 64, 64};
  Bounds bounds;
  double density_scale = 100.0;

  void validate() const;
};

// Each voxel takes the density and colour of the last primitive containing
// its centre; everything else is vacuum.
RadianceGrid voxelize(const SceneSpec& spec);

// Poses evenly spaced in azimuth around `center` at `elevation` radians, all
// looking at the centre with world +z up.
std::vector<Pose> orbit_trajectory(const Vec3& center, double radius, int n_views, double elevation);

// Spherical shell in the camera frame: both surfaces are spheres centred on
// the optical axis at z = center_z, each with its own seeded figure.
struct SphericalCoverSpec {
  double base_radius = 0.06;
  double thickness = 0.003;
  double center_z = -0.02;
  double figure_amplitude = 0.0005;
  int figure_grid = 6;
  double index_inside = 1.49;
  double index_outside = 1.0;
  double aperture_radius = 0.05;
  std::uint64_t seed = 0;
};

CoverSurfacePair make_spherical_cover(const SphericalCoverSpec& spec);

// Per-pixel exit rays in world coordinates, row-major.
struct ExitRayMap {
  int width = 0;
  int height = 0;
  std::vector<double> origins;     // xyz per pixel
  std::vector<double> directions;  // xyz per pixel
  std::vector<std::uint8_t> status;  // TraceStatus, or 255 for a geometry error

  Ray ray(int x, int y) const;
};

inline constexpr std::uint8_t kExitRayError = 255;

struct CaptureDataset {
  std::vector<Image> images;
  std::vector<CameraModel> cameras;
  std::optional<CoverSurfacePair> cover;
  std::vector<int> train_indices;
  std::vector<int> holdout_indices;
  std::vector<int> flagged_pixels;
  std::vector<ExitRayMap> exit_rays;
  std::uint64_t seed = 0;
};

// Every `holdout_every`-th view (starting at 0) is held out; 0 disables it.
void split_holdout(CaptureDataset& dataset, int holdout_every);

ExitRayMap exit_ray_map(const CameraModel& camera, const CoverSurfacePair* cover);

// Renders every camera through the cover (attached to the camera) or without
// one when `cover` is null.
CaptureDataset simulate_capture(const RadianceGrid& grid, const CoverSurfacePair* cover,
                                const std::vector<CameraModel>& cameras,
                                const SamplingConfig& sampling, std::uint64_t seed,
                                bool emit_exit_rays = false, int holdout_every = 8);

}  // namespace covertrace
