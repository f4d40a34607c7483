#pragma once

#include "covertrace/common.hpp"

#include <cstdint>
#include <optional>
#include <variant>
#include <vector>

namespace covertrace {

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();

  Vec3 at(double t) const { return origin + t * direction; }
  bool is_valid() const { return std::abs(direction.norm() - 1.0) <= 1e-9 && origin.allFinite(); }
};

struct SurfaceHit {
  double distance = 0.0;
  Vec3 point = Vec3::Zero();
  Vec3 normal = Vec3::Zero();  // faces the incident medium
};

struct Plane {
  Vec3 point = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
};

struct SphericalCap {
  Vec3 center = Vec3::Zero();
  double radius = 1.0;
  Vec3 axis = Vec3::UnitZ();
};

// Smooth heightfield on the surface's tangent coordinates, a uniform cubic
// B-spline whose control values are bounded by `amplitude`. An empty control
// grid is the zero figure.
class SurfaceFigure {
 public:
  SurfaceFigure() = default;
  SurfaceFigure(int grid_size, double half_extent, std::vector<double> control_values);

  static SurfaceFigure random(int grid_size, double half_extent, double amplitude,
                              std::uint64_t seed);

  bool is_zero() const { return control_.empty(); }
  double max_abs_control() const;
  int grid_size() const { return n_; }
  double half_extent() const { return half_extent_; }
  const std::vector<double>& control_values() const { return control_; }

  // Height and its (u, v) partial derivatives.
  double eval(double u, double v, double* du = nullptr, double* dv = nullptr) const;

 private:
  int n_ = 0;
  double half_extent_ = 0.0;
  double spacing_ = 0.0;
  std::vector<double> control_;  // row-major, index i along u, j along v
};

class ParametricSurface {
 public:
  using Base = std::variant<Plane, SphericalCap>;

  ParametricSurface(Base base, SurfaceFigure figure = {});

  const Base& base() const { return base_; }
  const SurfaceFigure& figure() const { return figure_; }
  const Vec3& axis() const { return axis_; }
  const Vec3& anchor() const { return anchor_; }
  bool is_sphere() const { return std::holds_alternative<SphericalCap>(base_); }

  // Signed implicit function (zero on the surface) and its gradient.
  double implicit(const Vec3& p, Vec3* gradient = nullptr) const;

 private:
  std::optional<double> base_hit(const Vec3& origin, const Vec3& direction) const;
  friend std::optional<SurfaceHit> intersect(const Ray& ray, const ParametricSurface& surface);

  Base base_;
  SurfaceFigure figure_;
  Vec3 anchor_;  // sphere center or plane point
  Vec3 axis_;
  Vec3 tangent_u_;
  Vec3 tangent_v_;
};

struct CoverSurfacePair {
  ParametricSurface inner;
  ParametricSurface outer;
  double index_inside = 1.49;
  double index_outside = 1.0;
  double aperture_radius = 0.05;

  void validate() const;
};

// Transmitted direction through an interface with index ratio `eta` = z1/z2.
// `normal` must face the incident medium. Returns nullopt on total internal
// reflection; throws Error(InvalidInput) when preconditions fail.
std::optional<Vec3> refract(const Vec3& incident, const Vec3& normal, double eta);

// Unchecked variant used on hot paths; false on total internal reflection.
bool refract_unchecked(const Vec3& incident, const Vec3& normal, double eta, Vec3& out);

struct RefractGradient {
  Vec3 d_incident = Vec3::Zero();
  Vec3 d_normal = Vec3::Zero();
  double d_eta = 0.0;
};

// Vector-Jacobian product of refract for a non-TIR configuration.
RefractGradient refract_backward(const Vec3& incident, const Vec3& normal, double eta,
                                 const Vec3& d_transmitted);

// Nearest hit beyond 1e-9 along the ray, or nullopt on a miss. Throws
// Error(NoConvergence) when Newton refinement on the figure fails.
std::optional<SurfaceHit> intersect(const Ray& ray, const ParametricSurface& surface);

enum class TraceStatus { Refracted, Untouched, TotalInternalReflection };

struct CoverTraversal {
  TraceStatus status = TraceStatus::Untouched;
  Ray exit;  // input ray when Untouched
  SurfaceHit inner;
  SurfaceHit outer;
};

CoverTraversal trace_through_cover(const Ray& ray, const CoverSurfacePair& cover);

// Flat parallel slab perpendicular to +z starting at z = `distance`.
CoverSurfacePair make_flat_slab(double distance, double thickness, double index_inside,
                                double index_outside, double aperture_radius);

}  // namespace covertrace
