#pragma once

#include "covertrace/common.hpp"
#include "covertrace/geometry.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <vector>

namespace covertrace {

struct Bounds {
  Vec3 min = Vec3::Constant(-0.5);
  Vec3 max = Vec3::Constant(0.5);

  bool contains(const Vec3& p) const {
    return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
  }
};

// Voxel grid of density and colour sampled at voxel centres. Stored density
// values pass through density_scale * softplus so sigma stays non-negative.
// Parameters are laid out as [raw density (N) | rgb (3N)], voxels row-major
// with z fastest.
class RadianceGrid {
 public:
  RadianceGrid(std::array<int, 3> resolution, Bounds bounds, double density_scale = 1.0);

  const std::array<int, 3>& resolution() const { return resolution_; }
  const Bounds& bounds() const { return bounds_; }
  double density_scale() const { return density_scale_; }
  size_t voxel_count() const { return voxel_count_; }
  Vec3 voxel_size() const { return voxel_size_; }

  size_t index(int x, int y, int z) const {
    return (static_cast<size_t>(x) * resolution_[1] + y) * resolution_[2] + z;
  }
  Vec3 voxel_center(int x, int y, int z) const;

  double sigma(size_t voxel) const {
    return activation_valid_ ? activation_[4 * voxel] : density_scale_ * softplus(params_[voxel]);
  }
  // d sigma / d raw density.
  double sigma_slope(size_t voxel) const {
    return activation_valid_ ? slope_[voxel] : density_scale_ * sigmoid(params_[voxel]);
  }
  // sigma, r, g, b of one voxel, contiguous; only valid while cached.
  const double* cached_voxel(size_t voxel) const { return &activation_[4 * voxel]; }
  Rgb color(size_t voxel) const {
    return Rgb(params_[voxel_count_ + 3 * voxel], params_[voxel_count_ + 3 * voxel + 1],
               params_[voxel_count_ + 3 * voxel + 2]);
  }
  void set_sigma(size_t voxel, double sigma);
  void set_color(size_t voxel, const Rgb& rgb);

  std::span<const double> params() const { return params_; }
  std::span<double> params() {
    activation_valid_ = false;
    return params_;
  }

  // Tabulates sigma, its slope and the colour of every voxel so hot loops skip
  // the softplus and touch one cache line per voxel. The values are bitwise
  // the ones computed on the fly. Any mutable params() access or set_*() call
  // drops the table, so take it only after the last write.
  void cache_activation();
  bool activation_cached() const { return activation_valid_; }

 private:
  std::array<int, 3> resolution_;
  Bounds bounds_;
  double density_scale_;
  size_t voxel_count_;
  Vec3 voxel_size_;
  std::vector<double> params_;
  std::vector<double> activation_;  // sigma, r, g, b per voxel
  std::vector<double> slope_;
  bool activation_valid_ = false;
};

struct GridQuery {
  double sigma = 0.0;
  Rgb color = Rgb::Zero();
  bool inside = false;
  std::array<size_t, 8> voxels{};
  std::array<double, 8> weights{};
  Vec3 fraction = Vec3::Zero();
  std::array<bool, 3> clamped{};
};

// Trilinear interpolation of sigma and stored colour; vacuum outside bounds.
GridQuery query_grid(const RadianceGrid& grid, const Vec3& point);

// Accumulates d(params) (skipped when empty) and optionally returns d(point).
void query_grid_backward(const RadianceGrid& grid, const GridQuery& query, double d_sigma,
                         const Rgb& d_color, std::span<double> d_params, Vec3* d_point);

struct SamplingConfig {
  double near = 0.0;
  double far = 1.0;
  int samples = 64;
  bool jitter = false;
  std::uint64_t seed = 0;
};

struct RaySamples {
  std::vector<double> t;
  std::vector<Vec3> positions;
  std::vector<double> deltas;

  size_t count() const { return t.size(); }
};

// Stratified samples in [near, far] along the ray; bin midpoints without jitter.
RaySamples sample_along_ray(const Ray& exit_ray, double near, double far, int n_samples,
                            bool jitter, std::uint64_t rng_seed);

// Emission-absorption quadrature with explicit per-sample values.
Rgb composite_volumetric(std::span<const double> sigmas, std::span<const double> deltas,
                         std::span<const Rgb> colors);

Rgb alpha_composite(std::span<const double> alphas, std::span<const Rgb> colors);

Rgb render_volumetric(const RaySamples& samples, const RadianceGrid& grid);

// Forward record for one exit ray, kept for the backward pass.
struct RayRecord {
  RaySamples samples;
  std::vector<GridQuery> queries;
  std::vector<Rgb> colors;  // clamped
  std::vector<double> transmittance;
  Rgb color = Rgb::Zero();
};

Rgb render_ray(const Ray& exit_ray, const RadianceGrid& grid, const SamplingConfig& sampling,
               std::uint64_t ray_seed, RayRecord* record = nullptr);

void render_ray_backward(const Ray& exit_ray, const RadianceGrid& grid, const RayRecord& record,
                         const Rgb& d_color, std::span<double> d_params, Vec3* d_origin,
                         Vec3* d_direction);

}  // namespace covertrace
