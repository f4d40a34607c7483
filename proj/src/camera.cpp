#include "covertrace/camera.hpp"

#include <cmath>

namespace covertrace {
namespace {

Eigen::Vector4d base_vector(const Intrinsics& k) {
  return {k.base_fx, k.base_fy, k.base_cx, k.base_cy};
}

Eigen::Vector4d delta_vector(const Intrinsics& k) {
  return {k.delta_fx, k.delta_fy, k.delta_cx, k.delta_cy};
}

// Offsets after projection, plus the Jacobian of the projection.
Eigen::Vector4d projected_delta(const Intrinsics& k, Eigen::Matrix4d* jacobian) {
  const Eigen::Vector4d delta = delta_vector(k);
  const double bound = k.offset_bound();
  const double norm = delta.norm();
  if (norm <= bound) {
    if (jacobian) jacobian->setIdentity();
    return delta;
  }
  if (jacobian) {
    *jacobian = (bound / norm) *
                (Eigen::Matrix4d::Identity() - delta * delta.transpose() / (norm * norm));
  }
  return delta * (bound / norm);
}

}  // namespace

double Intrinsics::offset_bound() const {
  return kIntrinsicOffsetBoundRatio * base_vector(*this).norm();
}

EffectiveIntrinsics effective_intrinsics(const Intrinsics& intrinsics) {
  const Eigen::Vector4d eff = base_vector(intrinsics) + projected_delta(intrinsics, nullptr);
  return {eff[0], eff[1], eff[2], eff[3]};
}

void project_intrinsic_offsets(Intrinsics& intrinsics) {
  const Eigen::Vector4d delta = projected_delta(intrinsics, nullptr);
  intrinsics.delta_fx = delta[0];
  intrinsics.delta_fy = delta[1];
  intrinsics.delta_cx = delta[2];
  intrinsics.delta_cy = delta[3];
}

Vec2 distort(const Vec2& p, const DistortionCoeffs& c, Eigen::Matrix2d* jacobian) {
  const double x = p.x(), y = p.y();
  const double r2 = x * x + y * y;
  const double radial = 1.0 + r2 * (c.k1 + r2 * (c.k2 + r2 * c.k3));
  if (jacobian) {
    const double d_radial = c.k1 + r2 * (2.0 * c.k2 + 3.0 * r2 * c.k3);
    const double cross = 2.0 * x * y * d_radial + 2.0 * c.p1 * x + 2.0 * c.p2 * y;
    (*jacobian)(0, 0) = radial + 2.0 * x * x * d_radial + 2.0 * c.p1 * y + 6.0 * c.p2 * x;
    (*jacobian)(0, 1) = cross;
    (*jacobian)(1, 0) = cross;
    (*jacobian)(1, 1) = radial + 2.0 * y * y * d_radial + 6.0 * c.p1 * y + 2.0 * c.p2 * x;
  }
  return {x * radial + 2.0 * c.p1 * x * y + c.p2 * (r2 + 2.0 * x * x),
          y * radial + c.p1 * (r2 + 2.0 * y * y) + 2.0 * c.p2 * x * y};
}

Vec2 distort(const Vec2& normalized, const Distortion& distortion) {
  return distort(normalized, distortion.effective());
}

void Pose::validate() const {
  if ((rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-9 ||
      std::abs(rotation.determinant() - 1.0) > 1e-9) {
    throw Error(ErrorKind::InvalidInput, "pose rotation must be orthonormal with det +1");
  }
  if (!center.allFinite()) throw Error(ErrorKind::InvalidInput, "pose center must be finite");
}

Pose Pose::look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
  const Vec3 forward = (target - eye).normalized();
  const Vec3 right = forward.cross(up).normalized();
  const Vec3 down = forward.cross(right);
  Pose pose;
  pose.rotation.col(0) = right;
  pose.rotation.col(1) = down;
  pose.rotation.col(2) = forward;
  pose.center = eye;
  return pose;
}

void CameraModel::validate() const {
  if (width <= 0 || height <= 0) throw Error(ErrorKind::InvalidInput, "camera resolution must be positive");
  const EffectiveIntrinsics k = effective_intrinsics(intrinsics);
  if (!(k.fx > 0.0) || !(k.fy > 0.0)) {
    throw Error(ErrorKind::InvalidInput, "effective focal lengths must be positive");
  }
  pose.validate();
  const DistortionCoeffs c = distortion.effective();
  for (double v : {c.k1, c.k2, c.k3, c.p1, c.p2}) {
    if (!std::isfinite(v)) throw Error(ErrorKind::InvalidInput, "distortion coefficients must be finite");
  }
  // Injectivity over the field of view: the distortion Jacobian must stay
  // orientation-preserving on a grid that covers the image with some margin.
  constexpr int kSamples = 17;
  for (int j = 0; j < kSamples; ++j) {
    for (int i = 0; i < kSamples; ++i) {
      const double u = -0.1 * width + 1.2 * width * i / (kSamples - 1);
      const double v = -0.1 * height + 1.2 * height * j / (kSamples - 1);
      Eigen::Matrix2d jac;
      distort(Vec2((u - k.cx) / k.fx, (v - k.cy) / k.fy), c, &jac);
      if (!(jac.determinant() > 0.0)) {
        throw Error(ErrorKind::InvalidInput, "distortion is not injective over the field of view");
      }
    }
  }
}

CameraOffsets camera_offsets(const CameraModel& camera) {
  const auto& k = camera.intrinsics;
  const auto& d = camera.distortion.delta;
  return {k.delta_fx, k.delta_fy, k.delta_cx, k.delta_cy, d.k1, d.k2, d.k3, d.p1, d.p2};
}

void set_camera_offsets(CameraModel& camera, const CameraOffsets& o) {
  auto& k = camera.intrinsics;
  k.delta_fx = o[0];
  k.delta_fy = o[1];
  k.delta_cx = o[2];
  k.delta_cy = o[3];
  camera.distortion.delta = {o[4], o[5], o[6], o[7], o[8]};
}

Vec3 lift_to_camera_direction(const Vec2& pixel, const CameraModel& camera,
                              CameraJacobian* jacobian) {
  const Intrinsics& k = camera.intrinsics;
  Eigen::Matrix4d proj_jac;
  const Eigen::Vector4d eff =
      base_vector(k) + projected_delta(k, jacobian ? &proj_jac : nullptr);
  const double fx = eff[0], fy = eff[1], cx = eff[2], cy = eff[3];
  const Vec2 normalized((pixel.x() - cx) / fx, (pixel.y() - cy) / fy);
  const DistortionCoeffs coeffs = camera.distortion.effective();
  Eigen::Matrix2d dist_jac;
  const Vec2 distorted = distort(normalized, coeffs, jacobian ? &dist_jac : nullptr);
  const Vec3 w(distorted.x(), distorted.y(), 1.0);
  const double len = w.norm();
  const Vec3 dir = w / len;
  if (!jacobian) return dir;

  // d(normalized)/d(effective fx, fy, cx, cy)
  Eigen::Matrix<double, 2, 4> dn_deff = Eigen::Matrix<double, 2, 4>::Zero();
  dn_deff(0, 0) = -normalized.x() / fx;
  dn_deff(1, 1) = -normalized.y() / fy;
  dn_deff(0, 2) = -1.0 / fx;
  dn_deff(1, 3) = -1.0 / fy;

  const double x = normalized.x(), y = normalized.y();
  const double r2 = x * x + y * y;
  Eigen::Matrix<double, 2, 5> dd_dcoeff;
  dd_dcoeff << x * r2, x * r2 * r2, x * r2 * r2 * r2, 2.0 * x * y, r2 + 2.0 * x * x,
      y * r2, y * r2 * r2, y * r2 * r2 * r2, r2 + 2.0 * y * y, 2.0 * x * y;

  Eigen::Matrix<double, 2, kCameraOffsetCount> dd_doffsets;
  dd_doffsets.leftCols<4>() = dist_jac * dn_deff * proj_jac;
  dd_doffsets.rightCols<5>() = dd_dcoeff;

  const Mat3 norm_jac = (Mat3::Identity() - dir * dir.transpose()) / len;
  *jacobian = norm_jac.leftCols<2>() * dd_doffsets;
  return dir;
}

Ray lift_pixel_to_ray(const Vec2& pixel, const CameraModel& camera) {
  if (!(pixel.x() >= 0.0 && pixel.x() <= camera.width && pixel.y() >= 0.0 &&
        pixel.y() <= camera.height)) {
    throw Error(ErrorKind::OutOfBounds, "pixel outside the image");
  }
  const Vec3 dir = lift_to_camera_direction(pixel, camera);
  return Ray{camera.pose.center, (camera.pose.rotation * dir).normalized()};
}

std::optional<Vec2> project_ray_to_pixel(const Ray& ray, const CameraModel& camera) {
  const Vec3 local = camera.pose.rotation.transpose() * ray.direction;
  if (!(local.z() > 0.0)) return std::nullopt;
  const Vec2 target(local.x() / local.z(), local.y() / local.z());
  const DistortionCoeffs coeffs = camera.distortion.effective();
  Vec2 x = target;
  bool converged = false;
  for (int iter = 0; iter < 50; ++iter) {
    Eigen::Matrix2d jac;
    const Vec2 residual = distort(x, coeffs, &jac) - target;
    if (residual.norm() < 1e-13) {
      converged = true;
      break;
    }
    x -= jac.partialPivLu().solve(residual);
  }
  if (!converged && (distort(x, coeffs) - target).norm() > 1e-9) {
    throw Error(ErrorKind::NoConvergence, "distortion inversion did not converge");
  }
  const EffectiveIntrinsics k = effective_intrinsics(camera.intrinsics);
  return Vec2(k.fx * x.x() + k.cx, k.fy * x.y() + k.cy);
}

}  // namespace covertrace
