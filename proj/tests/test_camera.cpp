#include "covertrace/camera.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace covertrace;

namespace {

CameraModel make_camera() {
  CameraModel cam;
  cam.intrinsics.base_fx = 500;
  cam.intrinsics.base_fy = 500;
  cam.intrinsics.base_cx = 320;
  cam.intrinsics.base_cy = 240;
  cam.width = 640;
  cam.height = 480;
  return cam;
}

}  // namespace

TEST(Intrinsics, ZeroOffsetIsBase) {
  const EffectiveIntrinsics k = effective_intrinsics(make_camera().intrinsics);
  EXPECT_EQ(k.fx, 500);
  EXPECT_EQ(k.fy, 500);
  EXPECT_EQ(k.cx, 320);
  EXPECT_EQ(k.cy, 240);
}

TEST(Intrinsics, OffsetAdds) {
  Intrinsics in = make_camera().intrinsics;
  in.delta_fx = 10;
  EXPECT_EQ(effective_intrinsics(in).fx, 510);
}

TEST(Intrinsics, OversizedOffsetIsProjectedOntoBound) {
  Intrinsics in = make_camera().intrinsics;
  in.delta_fx = 100;
  // 0.1 * |(500, 500, 320, 240)| = 0.1 * sqrt(660000)
  EXPECT_NEAR(in.offset_bound(), 81.24038404635961, 1e-10);
  EXPECT_NEAR(effective_intrinsics(in).fx, 581.2403840463596, 1e-10);
  project_intrinsic_offsets(in);
  EXPECT_NEAR(in.delta_fx, 81.24038404635961, 1e-10);
  EXPECT_EQ(in.delta_fy, 0.0);
}

TEST(Distort, Examples) {
  EXPECT_EQ(distort(Vec2(0.3, -0.2), DistortionCoeffs{}), Vec2(0.3, -0.2));
  const Vec2 d = distort(Vec2(0.5, 0.0), DistortionCoeffs{0.1, 0, 0, 0, 0});
  EXPECT_NEAR(d.x(), 0.5125, 1e-15);
  EXPECT_EQ(d.y(), 0.0);
  EXPECT_EQ(distort(Vec2(0, 0), DistortionCoeffs{0.3, -0.1, 0.02, 0.01, -0.02}), Vec2(0, 0));
}

TEST(Distort, TangentialTermsFollowBrownConrady) {
  const double x = 0.2, y = -0.3, p1 = 0.01, p2 = -0.02;
  const double r2 = x * x + y * y;
  const Vec2 d = distort(Vec2(x, y), DistortionCoeffs{0, 0, 0, p1, p2});
  EXPECT_NEAR(d.x(), x + 2 * p1 * x * y + p2 * (r2 + 2 * x * x), 1e-15);
  EXPECT_NEAR(d.y(), y + p1 * (r2 + 2 * y * y) + 2 * p2 * x * y, 1e-15);
}

TEST(Lift, PrincipalAxisAndOffAxis) {
  CameraModel cam = make_camera();
  Ray r = lift_pixel_to_ray(Vec2(320, 240), cam);
  EXPECT_NEAR((r.direction - Vec3(0, 0, 1)).norm(), 0.0, 1e-15);
  EXPECT_EQ(r.origin, Vec3::Zero());
  r = lift_pixel_to_ray(Vec2(820, 240), CameraModel{cam.intrinsics, {}, {}, 1000, 480});
  EXPECT_NEAR(r.direction.x(), 0.7071067811865476, 1e-12);
  EXPECT_NEAR(r.direction.z(), 0.7071067811865476, 1e-12);
  cam.distortion.base = {0.2, -0.05, 0.01, 0.003, -0.002};
  r = lift_pixel_to_ray(Vec2(320, 240), cam);
  EXPECT_NEAR((r.direction - Vec3(0, 0, 1)).norm(), 0.0, 1e-15);
}

TEST(Lift, OutOfBoundsThrows) {
  const CameraModel cam = make_camera();
  try {
    lift_pixel_to_ray(Vec2(-1, 10), cam);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::OutOfBounds);
  }
  EXPECT_THROW(lift_pixel_to_ray(Vec2(10, 481), cam), Error);
}

TEST(Project, PrincipalPointAndBehind) {
  const CameraModel cam = make_camera();
  const auto p = project_ray_to_pixel(Ray{Vec3::Zero(), Vec3::UnitZ()}, cam);
  ASSERT_TRUE(p);
  EXPECT_NEAR((*p - Vec2(320, 240)).norm(), 0.0, 1e-12);
  EXPECT_FALSE(project_ray_to_pixel(Ray{Vec3::Zero(), -Vec3::UnitZ()}, cam));
}

TEST(Project, RoundTripOverFieldOfView) {
  CameraModel cam = make_camera();
  cam.distortion.base = {-0.12, 0.03, -0.004, 0.001, -0.0015};
  cam.distortion.delta = {0.01, -0.002, 0.0005, 0.0002, 0.0001};
  cam.intrinsics.delta_fx = 3;
  cam.intrinsics.delta_cy = -2;
  cam.pose = Pose::look_at(Vec3(1, 2, 0.5), Vec3::Zero(), Vec3::UnitZ());
  cam.validate();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> ux(0, 640), uy(0, 480);
  for (int i = 0; i < 1000; ++i) {
    const Vec2 px(ux(rng), uy(rng));
    const auto back = project_ray_to_pixel(lift_pixel_to_ray(px, cam), cam);
    ASSERT_TRUE(back);
    EXPECT_LT((*back - px).norm(), 1e-6);
  }
}

TEST(Lift, JacobianMatchesCentralDifferences) {
  CameraModel cam = make_camera();
  cam.distortion.base = {-0.1, 0.02, -0.003, 0.001, -0.001};
  cam.distortion.delta = {0.004, 0.001, -0.0003, 0.0002, 0.0001};
  cam.intrinsics.delta_fx = 2;
  cam.intrinsics.delta_cx = -1.5;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> ux(0, 640), uy(0, 480);
  const double step = 1e-6;
  for (int probe = 0; probe < 100; ++probe) {
    const Vec2 px(ux(rng), uy(rng));
    CameraJacobian jac;
    lift_to_camera_direction(px, cam, &jac);
    const CameraOffsets base = camera_offsets(cam);
    for (int k = 0; k < kCameraOffsetCount; ++k) {
      CameraModel plus = cam, minus = cam;
      CameraOffsets o = base;
      o[k] += step;
      set_camera_offsets(plus, o);
      o[k] -= 2 * step;
      set_camera_offsets(minus, o);
      const Vec3 fd = (lift_to_camera_direction(px, plus) - lift_to_camera_direction(px, minus)) /
                      (2 * step);
      const Vec3 ga = jac.col(k);
      // Near the image centre the k3 column is ~1e-9, below what a 1e-6 step
      // resolves; the floor makes such columns an absolute 1e-10 check.
      const double rel = (ga - fd).norm() / std::max({ga.norm(), fd.norm(), 1e-6});
      EXPECT_LT(rel, 1e-4) << "offset " << k;
    }
  }
}

TEST(Lift, JacobianThroughActiveBoundProjection) {
  CameraModel cam = make_camera();
  cam.intrinsics.delta_fx = 70;
  cam.intrinsics.delta_fy = -50;  // outside the bound, so projection is active
  const Vec2 px(100, 400);
  CameraJacobian jac;
  lift_to_camera_direction(px, cam, &jac);
  const double step = 1e-6;
  for (int k = 0; k < 4; ++k) {
    CameraModel plus = cam, minus = cam;
    CameraOffsets o = camera_offsets(cam);
    o[k] += step;
    set_camera_offsets(plus, o);
    o[k] -= 2 * step;
    set_camera_offsets(minus, o);
    const Vec3 fd =
        (lift_to_camera_direction(px, plus) - lift_to_camera_direction(px, minus)) / (2 * step);
    const Vec3 ga = jac.col(k);
    EXPECT_LT((ga - fd).norm() / std::max({ga.norm(), fd.norm(), 1e-12}), 1e-4) << k;
  }
}

TEST(Pose, LookAtIsOrthonormalAndAimed) {
  const Pose p = Pose::look_at(Vec3(1.5, 0.3, 0.4), Vec3(0.1, 0, 0), Vec3::UnitZ());
  EXPECT_NO_THROW(p.validate());
  EXPECT_NEAR(p.rotation.determinant(), 1.0, 1e-12);
  const Vec3 axis = p.rotation.col(2);
  const Vec3 to_target = (Vec3(0.1, 0, 0) - p.center).normalized();
  EXPECT_NEAR((axis - to_target).norm(), 0.0, 1e-12);
  // Image "down" has a negative world-up component.
  EXPECT_LT(p.rotation.col(1).z(), 0.0);
}

TEST(CameraModel, RejectsNonInjectiveDistortion) {
  CameraModel cam = make_camera();
  cam.distortion.base.k1 = -2.0;
  EXPECT_THROW(cam.validate(), Error);
  cam.distortion.base.k1 = 0.0;
  cam.pose.rotation(0, 0) = 2.0;
  EXPECT_THROW(cam.validate(), Error);
}
