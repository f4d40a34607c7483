#include "covertrace/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace covertrace {
namespace {

constexpr double kMinHitDistance = 1e-9;
constexpr double kNewtonTolerance = 1e-10;
constexpr int kNewtonIterations = 20;

// Centered uniform cubic B-spline and its derivative.
double bspline3(double x, double* dx) {
  const double ax = std::abs(x);
  if (ax < 1.0) {
    *dx = -2.0 * x + 1.5 * x * ax;
    return 2.0 / 3.0 - x * x + 0.5 * ax * ax * ax;
  }
  if (ax < 2.0) {
    const double r = 2.0 - ax;
    *dx = -0.5 * r * r * (x > 0 ? 1.0 : -1.0);
    return r * r * r / 6.0;
  }
  *dx = 0.0;
  return 0.0;
}

void tangent_frame(const Vec3& axis, Vec3& u, Vec3& v) {
  const Vec3 helper = std::abs(axis.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
  u = (helper - axis * axis.dot(helper)).normalized();
  v = axis.cross(u);
}

}  // namespace

SurfaceFigure::SurfaceFigure(int grid_size, double half_extent, std::vector<double> control_values)
    : n_(grid_size), half_extent_(half_extent), control_(std::move(control_values)) {
  if (n_ < 2 || half_extent_ <= 0.0 || control_.size() != static_cast<size_t>(n_ * n_)) {
    throw Error(ErrorKind::InvalidInput, "figure grid must be n x n with n >= 2 and positive extent");
  }
  spacing_ = 2.0 * half_extent_ / (n_ - 1);
}

SurfaceFigure SurfaceFigure::random(int grid_size, double half_extent, double amplitude,
                                    std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(-amplitude, amplitude);
  std::vector<double> values(static_cast<size_t>(grid_size * grid_size));
  for (double& value : values) value = uniform(rng);
  return SurfaceFigure(grid_size, half_extent, std::move(values));
}

double SurfaceFigure::max_abs_control() const {
  double m = 0.0;
  for (double c : control_) m = std::max(m, std::abs(c));
  return m;
}

double SurfaceFigure::eval(double u, double v, double* du, double* dv) const {
  if (control_.empty()) {
    if (du) *du = 0.0;
    if (dv) *dv = 0.0;
    return 0.0;
  }
  const double su = (u + half_extent_) / spacing_;
  const double sv = (v + half_extent_) / spacing_;
  const int i_lo = std::max(0, static_cast<int>(std::floor(su)) - 1);
  const int i_hi = std::min(n_ - 1, static_cast<int>(std::floor(su)) + 2);
  const int j_lo = std::max(0, static_cast<int>(std::floor(sv)) - 1);
  const int j_hi = std::min(n_ - 1, static_cast<int>(std::floor(sv)) + 2);
  double h = 0.0, hu = 0.0, hv = 0.0;
  for (int i = i_lo; i <= i_hi; ++i) {
    double bu_d;
    const double bu = bspline3(su - i, &bu_d);
    if (bu == 0.0 && bu_d == 0.0) continue;
    for (int j = j_lo; j <= j_hi; ++j) {
      double bv_d;
      const double bv = bspline3(sv - j, &bv_d);
      const double c = control_[static_cast<size_t>(i * n_ + j)];
      h += c * bu * bv;
      hu += c * bu_d * bv;
      hv += c * bu * bv_d;
    }
  }
  if (du) *du = hu / spacing_;
  if (dv) *dv = hv / spacing_;
  return h;
}

ParametricSurface::ParametricSurface(Base base, SurfaceFigure figure)
    : base_(std::move(base)), figure_(std::move(figure)) {
  if (const auto* sphere = std::get_if<SphericalCap>(&base_)) {
    if (!(sphere->radius > 0.0)) throw Error(ErrorKind::InvalidInput, "sphere radius must be positive");
    anchor_ = sphere->center;
    axis_ = sphere->axis.normalized();
  } else {
    const auto& plane = std::get<Plane>(base_);
    anchor_ = plane.point;
    axis_ = plane.normal.normalized();
  }
  if (!axis_.allFinite()) throw Error(ErrorKind::InvalidInput, "surface axis must be nonzero");
  tangent_frame(axis_, tangent_u_, tangent_v_);
}

double ParametricSurface::implicit(const Vec3& p, Vec3* gradient) const {
  const Vec3 rel = p - anchor_;
  double hu = 0.0, hv = 0.0;
  const double h = figure_.eval(rel.dot(tangent_u_), rel.dot(tangent_v_), &hu, &hv);
  double value;
  Vec3 grad;
  if (const auto* sphere = std::get_if<SphericalCap>(&base_)) {
    const double r = rel.norm();
    value = r - sphere->radius - h;
    grad = rel / r;
  } else {
    value = axis_.dot(rel) - h;
    grad = axis_;
  }
  if (gradient) *gradient = grad - hu * tangent_u_ - hv * tangent_v_;
  return value;
}

std::optional<double> ParametricSurface::base_hit(const Vec3& origin, const Vec3& direction) const {
  if (const auto* sphere = std::get_if<SphericalCap>(&base_)) {
    const Vec3 oc = origin - sphere->center;
    const double b = direction.dot(oc);
    const double c = oc.squaredNorm() - sphere->radius * sphere->radius;
    const double disc = b * b - c;
    if (disc < 0.0) return std::nullopt;
    const double root = std::sqrt(disc);
    // Numerically stable pair of roots.
    const double q = b > 0 ? -(b + root) : -(b - root);
    double t0 = q;
    double t1 = q != 0.0 ? c / q : -b;
    if (t0 > t1) std::swap(t0, t1);
    if (t0 > kMinHitDistance) return t0;
    if (t1 > kMinHitDistance) return t1;
    return std::nullopt;
  }
  const auto& plane = std::get<Plane>(base_);
  const double denom = axis_.dot(direction);
  if (std::abs(denom) < 1e-14) return std::nullopt;
  const double t = axis_.dot(plane.point - origin) / denom;
  if (t > kMinHitDistance) return t;
  return std::nullopt;
}

std::optional<SurfaceHit> intersect(const Ray& ray, const ParametricSurface& surface) {
  const auto start = surface.base_hit(ray.origin, ray.direction);
  if (!start) return std::nullopt;
  double t = *start;
  Vec3 grad;
  bool converged = false;
  for (int iter = 0; iter <= kNewtonIterations; ++iter) {
    const double f = surface.implicit(ray.at(t), &grad);
    if (std::abs(f) < kNewtonTolerance) {
      converged = true;
      break;
    }
    if (iter == kNewtonIterations) break;
    const double slope = grad.dot(ray.direction);
    if (std::abs(slope) < 1e-12) break;
    t -= f / slope;
  }
  if (!converged || !std::isfinite(t)) {
    throw Error(ErrorKind::NoConvergence, "Newton refinement on surface figure did not converge");
  }
  if (t <= kMinHitDistance) return std::nullopt;
  SurfaceHit hit;
  hit.distance = t;
  hit.point = ray.at(t);
  hit.normal = grad.normalized();
  if (hit.normal.dot(ray.direction) > 0.0) hit.normal = -hit.normal;
  return hit;
}

bool refract_unchecked(const Vec3& incident, const Vec3& normal, double eta, Vec3& out) {
  const double c1 = -normal.dot(incident);
  const double k = 1.0 - eta * eta * (1.0 - c1 * c1);
  if (k < 0.0) return false;
  const double c2 = std::sqrt(k);
  out = eta * incident + (eta * c1 - c2) * normal;
  return true;
}

std::optional<Vec3> refract(const Vec3& incident, const Vec3& normal, double eta) {
  if (std::abs(incident.norm() - 1.0) > 1e-9 || std::abs(normal.norm() - 1.0) > 1e-9) {
    throw Error(ErrorKind::InvalidInput, "refract expects unit incident and normal vectors");
  }
  if (!(normal.dot(incident) < 0.0)) {
    throw Error(ErrorKind::InvalidInput, "normal must face the incident medium");
  }
  if (!(eta > 0.0)) throw Error(ErrorKind::InvalidInput, "index ratio must be positive");
  Vec3 out;
  if (!refract_unchecked(incident, normal, eta, out)) return std::nullopt;
  return out;
}

RefractGradient refract_backward(const Vec3& incident, const Vec3& normal, double eta,
                                 const Vec3& d_transmitted) {
  const double c1 = -normal.dot(incident);
  const double sin2 = 1.0 - c1 * c1;
  const double c2 = std::sqrt(std::max(0.0, 1.0 - eta * eta * sin2));
  const double coeff = eta * c1 - c2;
  const double s = d_transmitted.dot(normal);

  RefractGradient g;
  g.d_incident = eta * d_transmitted;
  g.d_normal = coeff * d_transmitted;
  g.d_eta = d_transmitted.dot(incident) + s * (c1 + eta * sin2 / c2);
  const double d_c1 = s * (eta - eta * eta * c1 / c2);
  g.d_incident -= d_c1 * normal;
  g.d_normal -= d_c1 * incident;
  return g;
}

void CoverSurfacePair::validate() const {
  if (!(index_inside > 0.0) || !(index_outside > 0.0)) {
    throw Error(ErrorKind::InvalidInput, "refractive indices must be positive");
  }
  if (!(aperture_radius > 0.0)) throw Error(ErrorKind::InvalidInput, "aperture radius must be positive");
  for (const ParametricSurface* s : {&inner, &outer}) {
    const double scale = s->is_sphere() ? std::get<SphericalCap>(s->base()).radius
                                        : s->figure().half_extent();
    if (!s->figure().is_zero() && s->figure().max_abs_control() > 0.1 * scale) {
      throw Error(ErrorKind::InvalidInput, "figure amplitude exceeds 10% of the base scale");
    }
  }
}

CoverTraversal trace_through_cover(const Ray& ray, const CoverSurfacePair& cover) {
  CoverTraversal out;
  out.exit = ray;
  const auto inner = intersect(ray, cover.inner);
  if (!inner) return out;
  const Vec3 rel = inner->point - cover.inner.anchor();
  const Vec3 radial = rel - cover.inner.axis() * rel.dot(cover.inner.axis());
  if (radial.norm() > cover.aperture_radius) return out;
  out.inner = *inner;

  Vec3 inside_dir;
  if (!refract_unchecked(ray.direction, inner->normal, cover.index_outside / cover.index_inside,
                         inside_dir)) {
    out.status = TraceStatus::TotalInternalReflection;
    return out;
  }
  const auto outer = intersect(Ray{inner->point, inside_dir}, cover.outer);
  if (!outer) throw Error(ErrorKind::Miss, "ray entered the cover but missed its outer surface");
  out.outer = *outer;
  Vec3 exit_dir;
  if (!refract_unchecked(inside_dir, outer->normal, cover.index_inside / cover.index_outside,
                         exit_dir)) {
    out.status = TraceStatus::TotalInternalReflection;
    return out;
  }
  out.status = TraceStatus::Refracted;
  out.exit = Ray{outer->point, exit_dir};
  return out;
}

CoverSurfacePair make_flat_slab(double distance, double thickness, double index_inside,
                                double index_outside, double aperture_radius) {
  CoverSurfacePair cover{
      ParametricSurface(Plane{Vec3(0, 0, distance), Vec3(0, 0, -1)}),
      ParametricSurface(Plane{Vec3(0, 0, distance + thickness), Vec3(0, 0, -1)}),
      index_inside, index_outside, aperture_radius};
  cover.validate();
  return cover;
}

}  // namespace covertrace
