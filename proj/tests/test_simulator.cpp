#include "covertrace/pipeline.hpp"
#include "covertrace/simulator.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace covertrace;

namespace {

SceneSpec small_scene() {
  SceneSpec spec;
  spec.resolution = {24, 24, 24};
  spec.density_scale = 50.0;
  spec.primitives.push_back({Primitive::Kind::Box, Vec3(0, 0, -0.3), Vec3(0.45, 0.45, 0.05),
                             Rgb(0.8, 0.8, 0.2), 80.0});
  spec.primitives.push_back({Primitive::Kind::Sphere, Vec3(0.1, 0, 0), Vec3::Constant(0.2),
                             Rgb(0.9, 0.1, 0.1), 80.0});
  spec.primitives.push_back({Primitive::Kind::Box, Vec3(-0.2, 0.15, 0.05), Vec3(0.1, 0.15, 0.2),
                             Rgb(0.1, 0.3, 0.9), 80.0});
  return spec;
}

std::vector<CameraModel> orbit_cameras(int n, int size) {
  std::vector<CameraModel> cams;
  for (const Pose& pose : orbit_trajectory(Vec3::Zero(), 1.4, n, 0.3)) {
    CameraModel cam;
    cam.intrinsics = {1.1 * size, 1.1 * size, size / 2.0, size / 2.0};
    cam.width = cam.height = size;
    cam.pose = pose;
    cams.push_back(cam);
  }
  return cams;
}

SamplingConfig sampling() { return SamplingConfig{0.6, 2.2, 48, false, 0}; }

}  // namespace

TEST(Voxelize, SphereInsideIsRedOutsideVacuum) {
  SceneSpec spec;
  spec.resolution = {16, 16, 16};
  spec.density_scale = 10.0;
  spec.primitives.push_back({Primitive::Kind::Sphere, Vec3::Zero(), Vec3::Constant(0.3),
                             Rgb(1, 0, 0), 40.0});
  const RadianceGrid grid = voxelize(spec);
  int inside = 0;
  for (int x = 0; x < 16; ++x) {
    for (int y = 0; y < 16; ++y) {
      for (int z = 0; z < 16; ++z) {
        const size_t v = grid.index(x, y, z);
        if (grid.voxel_center(x, y, z).norm() <= 0.3) {
          ++inside;
          EXPECT_NEAR(grid.sigma(v), 40.0, 1e-9);
          EXPECT_EQ(grid.color(v), Rgb(1, 0, 0));
        } else {
          EXPECT_LT(grid.sigma(v), 1e-6);
        }
      }
    }
  }
  EXPECT_GT(inside, 0);
}

TEST(Voxelize, EmptySpecIsVacuum) {
  SceneSpec spec;
  spec.resolution = {8, 8, 8};
  const RadianceGrid grid = voxelize(spec);
  for (size_t v = 0; v < grid.voxel_count(); ++v) EXPECT_LT(grid.sigma(v), 1e-6);
}

TEST(Voxelize, LaterPrimitiveWinsOverlap) {
  SceneSpec spec;
  spec.resolution = {8, 8, 8};
  spec.primitives.push_back({Primitive::Kind::Box, Vec3::Zero(), Vec3::Constant(0.3), Rgb(1, 0, 0), 5.0});
  spec.primitives.push_back({Primitive::Kind::Box, Vec3::Zero(), Vec3::Constant(0.1), Rgb(0, 0, 1), 9.0});
  const RadianceGrid grid = voxelize(spec);
  const size_t centre = grid.index(4, 4, 4);  // centre (0.0625, ...) lies in both boxes
  EXPECT_EQ(grid.color(centre), Rgb(0, 0, 1));
  EXPECT_NEAR(grid.sigma(centre), 9.0, 1e-9);
  const size_t ring = grid.index(5, 4, 4);
  EXPECT_EQ(grid.color(ring), Rgb(1, 0, 0));
}

TEST(Voxelize, RejectsInvalidSpecs) {
  SceneSpec spec;
  spec.primitives.push_back({Primitive::Kind::Sphere, Vec3(0.45, 0, 0), Vec3::Constant(0.1), Rgb::Ones(), 1.0});
  EXPECT_THROW(voxelize(spec), Error);
  spec.primitives[0].center = Vec3::Zero();
  spec.primitives[0].density = -1.0;
  EXPECT_THROW(voxelize(spec), Error);
}

TEST(Orbit, FourViewsAtQuarterTurns) {
  const Vec3 center(0.1, -0.2, 0.3);
  const auto poses = orbit_trajectory(center, 2.0, 4, 0.0);
  ASSERT_EQ(poses.size(), 4u);
  for (int i = 0; i < 4; ++i) {
    const Vec3 offset = poses[i].center - center;
    const double az = std::atan2(offset.y(), offset.x());
    const double expected = std::remainder(i * std::numbers::pi / 2, 2 * std::numbers::pi);
    EXPECT_NEAR(std::remainder(az - expected, 2 * std::numbers::pi), 0.0, 1e-12);
    EXPECT_NEAR(offset.z(), 0.0, 1e-12);
    // Optical axis (+z in camera) passes through the centre.
    const Vec3 axis = poses[i].rotation.col(2);
    const Vec3 to_center = center - poses[i].center;
    EXPECT_NEAR(axis.cross(to_center).norm(), 0.0, 1e-9);
    EXPECT_GT(axis.dot(to_center), 0.0);
  }
}

TEST(Orbit, SingleViewAtAzimuthZero) {
  const auto poses = orbit_trajectory(Vec3::Zero(), 1.5, 1, 0.2);
  ASSERT_EQ(poses.size(), 1u);
  EXPECT_NEAR(poses[0].center.y(), 0.0, 1e-12);
  EXPECT_GT(poses[0].center.x(), 0.0);
}

TEST(Orbit, PosesAreProperRotations) {
  for (const Pose& pose : orbit_trajectory(Vec3(0, 0, 0.1), 1.2, 17, 0.4)) {
    EXPECT_NEAR(pose.rotation.determinant(), 1.0, 1e-9);
    EXPECT_LT((pose.rotation.transpose() * pose.rotation - Mat3::Identity()).norm(), 1e-9);
    EXPECT_NO_THROW(pose.validate());
  }
  EXPECT_THROW(orbit_trajectory(Vec3::Zero(), 0.0, 3, 0.0), Error);
  EXPECT_THROW(orbit_trajectory(Vec3::Zero(), 1.0, 0, 0.0), Error);
}

TEST(SimulateCapture, MatchedIndexCoverIsBitwiseNoOp) {
  const RadianceGrid grid = voxelize(small_scene());
  const auto cams = orbit_cameras(2, 24);
  SphericalCoverSpec spec;
  spec.index_inside = 1.0;
  const CoverSurfacePair cover = make_spherical_cover(spec);
  const CaptureDataset covered = simulate_capture(grid, &cover, cams, sampling(), 5);
  const CaptureDataset bare = simulate_capture(grid, nullptr, cams, sampling(), 5);
  for (size_t v = 0; v < cams.size(); ++v) EXPECT_EQ(covered.images[v].data, bare.images[v].data);
}

TEST(SimulateCapture, FlatCoverAtNormalIncidenceIsNoOp) {
  const RadianceGrid grid = voxelize(small_scene());
  CameraModel cam = orbit_cameras(1, 24)[0];
  const CoverSurfacePair slab = make_flat_slab(0.05, 0.003, 1.49, 1.0, 0.05);
  // Only the principal ray meets the slab at normal incidence.
  const Vec2 pixel(12.0, 12.0);
  const PixelRender through = render_pixel_through_cover(pixel, cam, &slab, grid, sampling());
  const PixelRender bare = render_pixel_through_cover(pixel, cam, nullptr, grid, sampling());
  EXPECT_LT((through.color - bare.color).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(SimulateCapture, CurvedCoverDistortsPeripheryMore) {
  const RadianceGrid grid = voxelize(small_scene());
  const auto cams = orbit_cameras(3, 32);
  SphericalCoverSpec spec;
  spec.figure_amplitude = 0.0;
  const CoverSurfacePair cover = make_spherical_cover(spec);
  const CaptureDataset covered = simulate_capture(grid, &cover, cams, sampling(), 1, true);
  const CaptureDataset bare = simulate_capture(grid, nullptr, cams, sampling(), 1, true);

  double centre_sum = 0, edge_sum = 0, centre_angle = 0, edge_angle = 0;
  int centre_n = 0, edge_n = 0;
  double total = 0;
  for (size_t v = 0; v < cams.size(); ++v) {
    for (int y = 0; y < 32; ++y) {
      for (int x = 0; x < 32; ++x) {
        const double r = std::hypot(x + 0.5 - 16, y + 0.5 - 16) / 16;
        const double diff = (covered.images[v].at(x, y) - bare.images[v].at(x, y)).cwiseAbs().sum();
        const double angle = std::acos(std::clamp(
            covered.exit_rays[v].ray(x, y).direction.dot(bare.exit_rays[v].ray(x, y).direction), -1.0, 1.0));
        total += diff;
        if (r < 0.5) {
          centre_sum += diff;
          centre_angle += angle;
          ++centre_n;
        } else if (r > 0.75) {
          edge_sum += diff;
          edge_angle += angle;
          ++edge_n;
        }
      }
    }
  }
  EXPECT_GT(total, 0.0);
  EXPECT_GT(edge_angle / edge_n, 2.0 * centre_angle / centre_n);
  EXPECT_GT(edge_sum / edge_n, centre_sum / centre_n);
}

TEST(SimulateCapture, SameSeedGivesIdenticalDatasets) {
  const RadianceGrid grid = voxelize(small_scene());
  const auto cams = orbit_cameras(2, 16);
  const CoverSurfacePair cover = make_spherical_cover({});
  SamplingConfig s = sampling();
  s.jitter = true;
  const CaptureDataset a = simulate_capture(grid, &cover, cams, s, 11, true);
  const CaptureDataset b = simulate_capture(grid, &cover, cams, s, 11, true);
  for (size_t v = 0; v < cams.size(); ++v) {
    EXPECT_EQ(a.images[v].data, b.images[v].data);
    EXPECT_EQ(a.exit_rays[v].directions, b.exit_rays[v].directions);
  }
  EXPECT_EQ(a.flagged_pixels, b.flagged_pixels);
  const CaptureDataset c = simulate_capture(grid, &cover, cams, s, 12, false);
  EXPECT_NE(a.images[0].data, c.images[0].data);
}

TEST(SimulateCapture, ExitRayMapsMatchTraversal) {
  const RadianceGrid grid = voxelize(small_scene());
  const auto cams = orbit_cameras(2, 16);
  const CoverSurfacePair cover = make_spherical_cover({});
  const CaptureDataset data = simulate_capture(grid, &cover, cams, sampling(), 3, true);
  for (size_t v = 0; v < cams.size(); ++v) {
    const ExitRayMap& map = data.exit_rays[v];
    for (int y = 0; y < 16; ++y) {
      for (int x = 0; x < 16; ++x) {
        const Ray stored = map.ray(x, y);
        const PixelRay fresh = exit_ray_through_cover(Vec2(x + 0.5, y + 0.5), cams[v], &cover);
        ASSERT_NE(map.status[static_cast<size_t>(y) * 16 + x], kExitRayError);
        EXPECT_LT((stored.origin - fresh.exit.origin).norm(), 1e-12);
        EXPECT_LT((stored.direction - fresh.exit.direction).norm(), 1e-12);
        // Independent check through the geometry module in the camera frame.
        const Ray cam_ray{Vec3::Zero(), lift_to_camera_direction(Vec2(x + 0.5, y + 0.5), cams[v])};
        const CoverTraversal t = trace_through_cover(cam_ray, cover);
        const Vec3 dir = cams[v].pose.rotation * t.exit.direction;
        EXPECT_LT((stored.direction - dir).norm(), 1e-12);
      }
    }
  }
}

TEST(SimulateCapture, HoldoutSplitIsDisjoint) {
  const RadianceGrid grid = voxelize(small_scene());
  const auto cams = orbit_cameras(10, 12);
  const CaptureDataset data = simulate_capture(grid, nullptr, cams, sampling(), 0, false, 4);
  EXPECT_EQ(data.holdout_indices, (std::vector<int>{0, 4, 8}));
  EXPECT_EQ(data.train_indices.size() + data.holdout_indices.size(), cams.size());
  EXPECT_EQ(data.images.size(), data.cameras.size());
}
