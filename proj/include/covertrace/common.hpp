#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace covertrace {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Rgb = Eigen::Vector3d;

enum class ErrorKind {
  InvalidInput,
  TotalInternalReflection,
  Miss,
  NoConvergence,
  OutOfBounds,
  Behind,
  InvalidRange,
  LengthMismatch,
  SizeMismatch,
  TooSmall,
  Degenerate,
  NonFiniteLoss,
  Io,
  Config,
};

std::string_view to_string(ErrorKind kind);

// Every failure surfaced to callers carries a category so the CLI can map it
// onto a stable message prefix and exit code.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// splitmix64 step. Cheap to seed, which matters for one stream per ray.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Uniform double in [0, 1) from the top 53 bits.
inline double unit_uniform(std::uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

inline double softplus(double x) {
  return x > 30.0 ? x : (x < -30.0 ? std::exp(x) : std::log1p(std::exp(x)));
}

inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

inline double softplus_inverse(double y) {
  return y > 30.0 ? y : std::log(std::expm1(y));
}

// Backward of v / |v| for an upstream gradient on the unit vector.
inline Vec3 normalize_backward(const Vec3& v, const Vec3& d_unit) {
  const double len = v.norm();
  const Vec3 u = v / len;
  return (d_unit - u * u.dot(d_unit)) / len;
}

}  // namespace covertrace
