#pragma once

#include "covertrace/common.hpp"
#include "covertrace/geometry.hpp"

#include <array>
#include <optional>
#include <span>

namespace covertrace {

// Offsets are learnable; their norm is bounded relative to the base values.
struct Intrinsics {
  double base_fx = 1.0, base_fy = 1.0, base_cx = 0.0, base_cy = 0.0;
  double delta_fx = 0.0, delta_fy = 0.0, delta_cx = 0.0, delta_cy = 0.0;

  double offset_bound() const;
};

struct EffectiveIntrinsics {
  double fx, fy, cx, cy;
};

inline constexpr double kIntrinsicOffsetBoundRatio = 0.1;

EffectiveIntrinsics effective_intrinsics(const Intrinsics& intrinsics);

// Radially projects the offsets onto the ball of radius offset_bound().
void project_intrinsic_offsets(Intrinsics& intrinsics);

struct DistortionCoeffs {
  double k1 = 0.0, k2 = 0.0, k3 = 0.0, p1 = 0.0, p2 = 0.0;
};

struct Distortion {
  DistortionCoeffs base;
  DistortionCoeffs delta;

  DistortionCoeffs effective() const {
    return {base.k1 + delta.k1, base.k2 + delta.k2, base.k3 + delta.k3, base.p1 + delta.p1,
            base.p2 + delta.p2};
  }
};

// Brown-Conrady forward map on normalized image coordinates. When `jacobian`
// is given it receives d(out)/d(in).
Vec2 distort(const Vec2& normalized, const DistortionCoeffs& coeffs,
             Eigen::Matrix2d* jacobian = nullptr);
Vec2 distort(const Vec2& normalized, const Distortion& distortion);

struct Pose {
  Mat3 rotation = Mat3::Identity();  // camera-to-world
  Vec3 center = Vec3::Zero();

  void validate() const;
  // Camera looks along +z with +y pointing down the image.
  static Pose look_at(const Vec3& eye, const Vec3& target, const Vec3& up);
};

struct CameraModel {
  Intrinsics intrinsics;
  Distortion distortion;
  Pose pose;
  int width = 0;
  int height = 0;

  void validate() const;
};

// Learnable offsets in a fixed order: fx, fy, cx, cy, k1, k2, k3, p1, p2.
inline constexpr int kCameraOffsetCount = 9;
using CameraOffsets = std::array<double, kCameraOffsetCount>;

CameraOffsets camera_offsets(const CameraModel& camera);
void set_camera_offsets(CameraModel& camera, const CameraOffsets& offsets);

using CameraJacobian = Eigen::Matrix<double, 3, kCameraOffsetCount>;

// Unit ray direction in the camera frame for a pixel, optionally with its
// Jacobian with respect to the nine offsets. No bounds check.
Vec3 lift_to_camera_direction(const Vec2& pixel, const CameraModel& camera,
                              CameraJacobian* jacobian = nullptr);

// World-space ray through a pixel. Throws Error(OutOfBounds) outside the image.
Ray lift_pixel_to_ray(const Vec2& pixel, const CameraModel& camera);

// Inverse of lifting. Returns nullopt when the ray points behind the camera;
// throws Error(NoConvergence) if undistortion fails.
std::optional<Vec2> project_ray_to_pixel(const Ray& ray, const CameraModel& camera);

}  // namespace covertrace
