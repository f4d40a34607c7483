#include "covertrace/radiance.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace covertrace {

RadianceGrid::RadianceGrid(std::array<int, 3> resolution, Bounds bounds, double density_scale)
    : resolution_(resolution), bounds_(bounds), density_scale_(density_scale) {
  for (int n : resolution_) {
    if (n < 1) throw Error(ErrorKind::InvalidInput, "grid resolution must be positive");
  }
  if (!((bounds_.max - bounds_.min).array() > 0.0).all()) {
    throw Error(ErrorKind::InvalidInput, "grid bounds must have positive extent");
  }
  if (!(density_scale_ > 0.0)) throw Error(ErrorKind::InvalidInput, "density scale must be positive");
  voxel_count_ = static_cast<size_t>(resolution_[0]) * resolution_[1] * resolution_[2];
  voxel_size_ = (bounds_.max - bounds_.min).cwiseQuotient(
      Vec3(resolution_[0], resolution_[1], resolution_[2]));
  params_.assign(4 * voxel_count_, 0.0);
  for (size_t v = 0; v < voxel_count_; ++v) set_sigma(v, 0.0);
}

Vec3 RadianceGrid::voxel_center(int x, int y, int z) const {
  return bounds_.min + (Vec3(x, y, z) + Vec3::Constant(0.5)).cwiseProduct(voxel_size_);
}

void RadianceGrid::cache_activation() {
  activation_.resize(4 * voxel_count_);
  slope_.resize(voxel_count_);
  const long n = static_cast<long>(voxel_count_);
#pragma omp parallel for schedule(static)
  for (long v = 0; v < n; ++v) {
    activation_[4 * v] = density_scale_ * softplus(params_[v]);
    for (int c = 0; c < 3; ++c) activation_[4 * v + 1 + c] = params_[n + 3 * v + c];
    slope_[v] = density_scale_ * sigmoid(params_[v]);
  }
  activation_valid_ = true;
}

void RadianceGrid::set_sigma(size_t voxel, double sigma) {
  activation_valid_ = false;
  params_[voxel] = softplus_inverse(std::max(sigma / density_scale_, 1e-9));
}

void RadianceGrid::set_color(size_t voxel, const Rgb& rgb) {
  activation_valid_ = false;
  for (int c = 0; c < 3; ++c) params_[voxel_count_ + 3 * voxel + c] = rgb[c];
}

GridQuery query_grid(const RadianceGrid& grid, const Vec3& point) {
  GridQuery q;
  if (!grid.bounds().contains(point)) return q;
  q.inside = true;
  const auto& res = grid.resolution();
  std::array<int, 3> lo{};
  std::array<int, 3> hi{};
  for (int a = 0; a < 3; ++a) {
    const double u = (point[a] - grid.bounds().min[a]) / grid.voxel_size()[a] - 0.5;
    int i0 = static_cast<int>(std::floor(u));
    double f = u - i0;
    if (i0 < 0) {
      i0 = 0;
      f = 0.0;
      q.clamped[a] = true;
    } else if (i0 >= res[a] - 1) {
      i0 = std::max(0, res[a] - 2);
      f = res[a] > 1 ? 1.0 : 0.0;
      q.clamped[a] = true;
    }
    lo[a] = i0;
    hi[a] = std::min(i0 + 1, res[a] - 1);
    q.fraction[a] = f;
  }
  const size_t n = grid.voxel_count();
  const auto params = grid.params();
  const bool cached = grid.activation_cached();
  for (int corner = 0; corner < 8; ++corner) {
    const int cx = corner & 1, cy = (corner >> 1) & 1, cz = (corner >> 2) & 1;
    const double w = (cx ? q.fraction[0] : 1.0 - q.fraction[0]) *
                     (cy ? q.fraction[1] : 1.0 - q.fraction[1]) *
                     (cz ? q.fraction[2] : 1.0 - q.fraction[2]);
    const size_t v = grid.index(cx ? hi[0] : lo[0], cy ? hi[1] : lo[1], cz ? hi[2] : lo[2]);
    q.voxels[corner] = v;
    q.weights[corner] = w;
    if (w == 0.0) continue;
    if (cached) {
      const double* c = grid.cached_voxel(v);
      q.sigma += w * c[0];
      q.color += w * Rgb(c[1], c[2], c[3]);
    } else {
      q.sigma += w * grid.sigma(v);
      q.color += w * Rgb(params[n + 3 * v], params[n + 3 * v + 1], params[n + 3 * v + 2]);
    }
  }
  return q;
}

void query_grid_backward(const RadianceGrid& grid, const GridQuery& q, double d_sigma,
                         const Rgb& d_color, std::span<double> d_params, Vec3* d_point) {
  if (!q.inside) {
    if (d_point) d_point->setZero();
    return;
  }
  const size_t n = grid.voxel_count();
  const auto params = grid.params();
  Vec3 d_frac = Vec3::Zero();
  for (int corner = 0; corner < 8; ++corner) {
    const size_t v = q.voxels[corner];
    const double w = q.weights[corner];
    const double sigma_v = grid.sigma(v);
    const double* c = &params[n + 3 * v];
    if (!d_params.empty()) {
      d_params[v] += d_sigma * w * grid.sigma_slope(v);
      double* dc = &d_params[n + 3 * v];
      dc[0] += d_color[0] * w;
      dc[1] += d_color[1] * w;
      dc[2] += d_color[2] * w;
    }
    if (!d_point) continue;
    const double value_grad = d_sigma * sigma_v + d_color[0] * c[0] + d_color[1] * c[1] +
                              d_color[2] * c[2];
    const int bits[3] = {corner & 1, (corner >> 1) & 1, (corner >> 2) & 1};
    for (int a = 0; a < 3; ++a) {
      double partial = bits[a] ? 1.0 : -1.0;
      for (int b = 0; b < 3; ++b) {
        if (b != a) partial *= bits[b] ? q.fraction[b] : 1.0 - q.fraction[b];
      }
      d_frac[a] += value_grad * partial;
    }
  }
  if (d_point) {
    for (int a = 0; a < 3; ++a) {
      (*d_point)[a] = q.clamped[a] ? 0.0 : d_frac[a] / grid.voxel_size()[a];
    }
  }
}

namespace {

// Fills `s` in place so per-ray buffers can be reused.
void sample_into(RaySamples& s, const Ray& exit_ray, double near, double far, int n_samples,
                 bool jitter, std::uint64_t rng_seed) {
  if (!(near >= 0.0) || !(near < far)) {
    throw Error(ErrorKind::InvalidRange, "sampling requires 0 <= near < far");
  }
  if (n_samples < 1) throw Error(ErrorKind::InvalidRange, "sampling requires at least one sample");
  s.t.resize(n_samples);
  s.positions.resize(n_samples);
  s.deltas.resize(n_samples);
  const double bin = (far - near) / n_samples;
  std::uint64_t state = rng_seed;
  for (int i = 0; i < n_samples; ++i) {
    const double offset = jitter ? unit_uniform(splitmix64(state)) : 0.5;
    s.t[i] = near + (i + offset) * bin;
    s.positions[i] = exit_ray.at(s.t[i]);
  }
  for (int i = 0; i + 1 < n_samples; ++i) s.deltas[i] = s.t[i + 1] - s.t[i];
  s.deltas[n_samples - 1] = bin;
}

}  // namespace

RaySamples sample_along_ray(const Ray& exit_ray, double near, double far, int n_samples,
                            bool jitter, std::uint64_t rng_seed) {
  RaySamples s;
  sample_into(s, exit_ray, near, far, n_samples, jitter, rng_seed);
  return s;
}

Rgb composite_volumetric(std::span<const double> sigmas, std::span<const double> deltas,
                         std::span<const Rgb> colors) {
  if (sigmas.size() != deltas.size() || sigmas.size() != colors.size()) {
    throw Error(ErrorKind::LengthMismatch, "sigma, delta and colour lists differ in length");
  }
  Rgb out = Rgb::Zero();
  double optical_depth = 0.0;
  for (size_t i = 0; i < sigmas.size(); ++i) {
    const double tau = sigmas[i] * deltas[i];
    out += std::exp(-optical_depth) * (-std::expm1(-tau)) * colors[i];
    optical_depth += tau;
  }
  return out;
}

Rgb alpha_composite(std::span<const double> alphas, std::span<const Rgb> colors) {
  if (alphas.size() != colors.size()) {
    throw Error(ErrorKind::LengthMismatch, "alpha and colour lists differ in length");
  }
  Rgb out = Rgb::Zero();
  double transmittance = 1.0;
  for (size_t i = 0; i < alphas.size(); ++i) {
    if (alphas[i] < 0.0 || alphas[i] > 1.0) {
      throw Error(ErrorKind::InvalidInput, "alpha values must lie in [0, 1]");
    }
    out += colors[i] * alphas[i] * transmittance;
    transmittance *= 1.0 - alphas[i];
  }
  return out;
}

Rgb render_volumetric(const RaySamples& samples, const RadianceGrid& grid) {
  std::vector<double> sigmas(samples.count());
  std::vector<Rgb> colors(samples.count());
  for (size_t i = 0; i < samples.count(); ++i) {
    const GridQuery q = query_grid(grid, samples.positions[i]);
    sigmas[i] = q.sigma;
    colors[i] = q.color.cwiseMax(0.0).cwiseMin(1.0);
  }
  return composite_volumetric(sigmas, samples.deltas, colors);
}

Rgb render_ray(const Ray& exit_ray, const RadianceGrid& grid, const SamplingConfig& sampling,
               std::uint64_t ray_seed, RayRecord* record) {
  thread_local RayRecord scratch;
  RayRecord& rec = record ? *record : scratch;
  sample_into(rec.samples, exit_ray, sampling.near, sampling.far, sampling.samples,
              sampling.jitter, ray_seed);
  const size_t n = rec.samples.count();
  rec.queries.resize(n);
  rec.colors.resize(n);
  rec.transmittance.resize(n + 1);
  rec.color.setZero();
  double optical_depth = 0.0;
  for (size_t i = 0; i < n; ++i) {
    rec.transmittance[i] = std::exp(-optical_depth);
    GridQuery& q = rec.queries[i];
    q = query_grid(grid, rec.samples.positions[i]);
    rec.colors[i] = q.color.cwiseMax(0.0).cwiseMin(1.0);
    if (!q.inside) continue;
    const double tau = q.sigma * rec.samples.deltas[i];
    rec.color += rec.transmittance[i] * (-std::expm1(-tau)) * rec.colors[i];
    optical_depth += tau;
  }
  rec.transmittance[n] = std::exp(-optical_depth);
  return rec.color;
}

void render_ray_backward(const Ray& /*exit_ray*/, const RadianceGrid& grid, const RayRecord& rec,
                         const Rgb& d_color, std::span<double> d_params, Vec3* d_origin,
                         Vec3* d_direction) {
  const size_t n = rec.samples.count();
  const double total = d_color.dot(rec.color);
  double prefix = 0.0;  // g . (colour accumulated through sample i)
  Vec3 d_o = Vec3::Zero();
  Vec3 d_d = Vec3::Zero();
  const bool want_point = d_origin || d_direction;
  for (size_t i = 0; i < n; ++i) {
    const GridQuery& q = rec.queries[i];
    if (!q.inside) continue;
    const double delta = rec.samples.deltas[i];
    const double t_i = rec.transmittance[i];
    const double t_next = t_i * std::exp(-q.sigma * delta);
    const double weight = t_i - t_next;
    const double gc = d_color.dot(rec.colors[i]);
    prefix += weight * gc;
    const double d_sigma = delta * (t_next * gc - (total - prefix));
    Rgb d_c = weight * d_color;
    for (int c = 0; c < 3; ++c) {
      if (q.color[c] < 0.0 || q.color[c] > 1.0) d_c[c] = 0.0;
    }
    Vec3 d_point;
    query_grid_backward(grid, q, d_sigma, d_c, d_params, want_point ? &d_point : nullptr);
    if (want_point) {
      d_o += d_point;
      d_d += rec.samples.t[i] * d_point;
    }
  }
  if (d_origin) *d_origin = d_o;
  if (d_direction) *d_direction = d_d;
}

}  // namespace covertrace
