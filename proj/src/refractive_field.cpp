#include "covertrace/refractive_field.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace covertrace {
namespace {

// Raw offset that maps softplus(raw + kUnitShift) to 1.
const double kUnitShift = softplus_inverse(1.0);

// Flat-slab distances use r_z clamped away from grazing directions.
constexpr double kMinSlabCosine = 0.05;

}  // namespace

RefractiveField::RefractiveField(const FieldConfig& config) : config_(config) {
  build_layout();
  std::mt19937_64 rng(config_.seed);
  for (size_t l = 0; l + 1 < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    const double limit = std::sqrt(6.0 / (layer.in + layer.out));
    std::uniform_real_distribution<double> uniform(-limit, limit);
    for (int i = 0; i < layer.in * layer.out; ++i) params_[layer.weight_offset + i] = uniform(rng);
  }
}

RefractiveField::RefractiveField(const FieldConfig& config, std::vector<double> params)
    : config_(config) {
  build_layout();
  if (params.size() != params_.size()) {
    throw Error(ErrorKind::SizeMismatch, "field parameter vector does not match the architecture");
  }
  params_ = std::move(params);
}

void RefractiveField::build_layout() {
  if (config_.hidden_layers < 1 || config_.hidden_width < 1 || config_.octaves < 0) {
    throw Error(ErrorKind::InvalidInput, "invalid field architecture");
  }
  if (!(config_.slab_distance > 0.0) || !(config_.slab_thickness > 0.0) ||
      !(config_.index_inside > 0.0) || !(config_.index_outside > 0.0)) {
    throw Error(ErrorKind::InvalidInput, "invalid flat-slab prior");
  }
  layers_.clear();
  size_t offset = 0;
  const std::vector<int> sizes = layer_sizes();
  for (size_t l = 0; l + 1 < sizes.size(); ++l) {
    Layer layer{sizes[l], sizes[l + 1], offset, offset + static_cast<size_t>(sizes[l] * sizes[l + 1])};
    offset = layer.bias_offset + layer.out;
    layers_.push_back(layer);
  }
  params_.assign(offset, 0.0);
}

std::vector<int> RefractiveField::layer_sizes() const {
  std::vector<int> sizes{feature_count()};
  for (int l = 0; l < config_.hidden_layers; ++l) sizes.push_back(config_.hidden_width);
  sizes.push_back(kFieldOutputs);
  return sizes;
}

FieldInputs RefractiveField::input_of(const Ray& ray) {
  FieldInputs x;
  x << ray.origin, ray.direction;
  return x;
}

void RefractiveField::encode(const double* input, double* features) const {
  int k = 0;
  for (int d = 0; d < kFieldInputs; ++d) features[k++] = input[d];
  for (int o = 0; o < config_.octaves; ++o) {
    const double freq = std::ldexp(std::numbers::pi, o);
    for (int d = 0; d < kFieldInputs; ++d) {
      features[k++] = std::sin(freq * input[d]);
      features[k++] = std::cos(freq * input[d]);
    }
  }
}

void RefractiveField::encode_backward(const double* input, const double* d_features,
                                      double* d_input) const {
  int k = 0;
  for (int d = 0; d < kFieldInputs; ++d) d_input[d] = d_features[k++];
  for (int o = 0; o < config_.octaves; ++o) {
    const double freq = std::ldexp(std::numbers::pi, o);
    for (int d = 0; d < kFieldInputs; ++d) {
      d_input[d] += freq * std::cos(freq * input[d]) * d_features[k++];
      d_input[d] -= freq * std::sin(freq * input[d]) * d_features[k++];
    }
  }
}

FieldOutputs RefractiveField::network(const Ray& ray, Tape* tape) const {
  const FieldInputs input = input_of(ray);
  Eigen::VectorXd h(feature_count());
  encode(input.data(), h.data());
  if (tape) {
    tape->input = input;
    tape->activations.assign(1, h);
  }
  for (size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    Eigen::VectorXd z(layer.out);
    for (int o = 0; o < layer.out; ++o) {
      const double* w = &params_[layer.weight_offset + static_cast<size_t>(o * layer.in)];
      double acc = params_[layer.bias_offset + o];
      for (int i = 0; i < layer.in; ++i) acc += w[i] * h[i];
      z[o] = acc;
    }
    if (l + 1 == layers_.size()) return z;
    h = z.array().tanh();
    if (tape) tape->activations.push_back(h);
  }
  return {};
}

FieldInputs RefractiveField::network_backward(const Tape& tape, const FieldOutputs& d_outputs,
                                              std::span<double> d_params) const {
  Eigen::VectorXd delta = d_outputs;
  for (size_t l = layers_.size(); l-- > 0;) {
    const Layer& layer = layers_[l];
    const Eigen::VectorXd& h = tape.activations[l];
    Eigen::VectorXd d_h = Eigen::VectorXd::Zero(layer.in);
    for (int o = 0; o < layer.out; ++o) {
      const double* w = &params_[layer.weight_offset + static_cast<size_t>(o * layer.in)];
      double* gw = &d_params[layer.weight_offset + static_cast<size_t>(o * layer.in)];
      d_params[layer.bias_offset + o] += delta[o];
      for (int i = 0; i < layer.in; ++i) {
        gw[i] += delta[o] * h[i];
        d_h[i] += delta[o] * w[i];
      }
    }
    if (l == 0) {
      FieldInputs d_input;
      encode_backward(tape.input.data(), d_h.data(), d_input.data());
      return d_input;
    }
    delta = d_h.array() * (1.0 - h.array().square());
  }
  return FieldInputs::Zero();
}

RowMatrix RefractiveField::network_batch(const RowMatrix& inputs, BatchTape* tape) const {
  const Eigen::Index n = inputs.rows();
  RowMatrix h(n, feature_count());
  for (Eigen::Index r = 0; r < n; ++r) encode(inputs.row(r).data(), h.row(r).data());
  if (tape) {
    tape->inputs = inputs;
    tape->activations.assign(1, h);
  }
  for (size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    const Eigen::Map<const RowMatrix> w(&params_[layer.weight_offset], layer.out, layer.in);
    const Eigen::Map<const Eigen::RowVectorXd> b(&params_[layer.bias_offset], layer.out);
    RowMatrix z = h * w.transpose();
    z.rowwise() += b;
    if (l + 1 == layers_.size()) return z;
    h = z.array().tanh();
    if (tape) tape->activations.push_back(h);
  }
  return {};
}

void RefractiveField::network_batch_backward(const BatchTape& tape, const RowMatrix& d_outputs,
                                             std::span<double> d_params,
                                             RowMatrix* d_inputs) const {
  RowMatrix delta = d_outputs;
  for (size_t l = layers_.size(); l-- > 0;) {
    const Layer& layer = layers_[l];
    const RowMatrix& h = tape.activations[l];
    const Eigen::Map<const RowMatrix> w(&params_[layer.weight_offset], layer.out, layer.in);
    Eigen::Map<RowMatrix> gw(&d_params[layer.weight_offset], layer.out, layer.in);
    Eigen::Map<Eigen::RowVectorXd> gb(&d_params[layer.bias_offset], layer.out);
    gw.noalias() += delta.transpose() * h;
    gb += delta.colwise().sum();
    if (l == 0 && !d_inputs) return;
    RowMatrix d_h = delta * w;
    if (l == 0) {
      d_inputs->resize(d_h.rows(), kFieldInputs);
      for (Eigen::Index r = 0; r < d_h.rows(); ++r) {
        encode_backward(tape.inputs.row(r).data(), d_h.row(r).data(), d_inputs->row(r).data());
      }
      return;
    }
    delta = d_h.array() * (1.0 - h.array().square());
  }
}

FieldPrediction RefractiveField::head(const FieldOutputs& raw, const Ray& ray) const {
  const double rz = ray.direction.z();
  const double eta = config_.index_outside / config_.index_inside;
  const bool flat = config_.prior == FieldPrior::FlatSlab;
  const double slab_rz = std::max(rz, kMinSlabCosine);
  const double prior_d1 = flat ? config_.slab_distance / slab_rz : config_.slab_distance;
  const double cos_t = std::sqrt(1.0 - eta * eta * (1.0 - rz * rz));
  const double prior_travel = config_.slab_thickness / cos_t;

  FieldPrediction p;
  p.d1 = prior_d1 * softplus(raw[0] + kUnitShift);
  p.d2 = p.d1 + prior_travel * softplus(raw[1] + kUnitShift);
  p.n1 = (Vec3(0, 0, -1) + raw.segment<3>(2)).normalized();
  p.n2 = (Vec3(0, 0, -1) + raw.segment<3>(5)).normalized();
  return p;
}

FieldOutputs RefractiveField::head_backward(const FieldOutputs& raw, const Ray& ray,
                                            const FieldPredictionGradient& g, Vec3* d_origin,
                                            Vec3* d_direction) const {
  const double rz = ray.direction.z();
  const double eta = config_.index_outside / config_.index_inside;
  const bool flat = config_.prior == FieldPrior::FlatSlab;
  const double slab_rz = std::max(rz, kMinSlabCosine);
  const double prior_d1 = flat ? config_.slab_distance / slab_rz : config_.slab_distance;
  const double cos_t = std::sqrt(1.0 - eta * eta * (1.0 - rz * rz));
  const double prior_travel = config_.slab_thickness / cos_t;

  const double g_d1 = g.d_d1 + g.d_d2;
  const double g_travel = g.d_d2;
  FieldOutputs d_raw;
  d_raw[0] = g_d1 * prior_d1 * sigmoid(raw[0] + kUnitShift);
  d_raw[1] = g_travel * prior_travel * sigmoid(raw[1] + kUnitShift);
  d_raw.segment<3>(2) = normalize_backward(Vec3(0, 0, -1) + raw.segment<3>(2), g.d_n1);
  d_raw.segment<3>(5) = normalize_backward(Vec3(0, 0, -1) + raw.segment<3>(5), g.d_n2);

  const double d_prior_travel = g_travel * softplus(raw[1] + kUnitShift);
  const double d_prior_d1 = g_d1 * softplus(raw[0] + kUnitShift);
  if (d_origin) d_origin->setZero();
  if (d_direction) {
    double d_rz = -d_prior_travel * config_.slab_thickness * eta * eta * rz / (cos_t * cos_t * cos_t);
    if (flat && rz > kMinSlabCosine) d_rz -= d_prior_d1 * config_.slab_distance / (rz * rz);
    *d_direction = Vec3(0, 0, d_rz);
  }
  return d_raw;
}

FieldPrediction RefractiveField::eval(const Ray& ray) const { return head(network(ray), ray); }

FieldTraversal refract_via_prediction(const Ray& ray, const FieldPrediction& p,
                                      double index_inside, double index_outside) {
  FieldTraversal t;
  t.exit = ray;
  t.n1 = p.n1;
  if (t.n1.dot(ray.direction) >= 0.0) {
    t.n1 = -t.n1;
    t.flipped_n1 = true;
  }
  t.inner_point = ray.at(p.d1);
  if (!refract_unchecked(ray.direction, t.n1, index_outside / index_inside, t.inside_direction)) {
    t.status = TraceStatus::TotalInternalReflection;
    return t;
  }
  t.n2 = p.n2;
  if (t.n2.dot(t.inside_direction) >= 0.0) {
    t.n2 = -t.n2;
    t.flipped_n2 = true;
  }
  Vec3 exit_dir;
  if (!refract_unchecked(t.inside_direction, t.n2, index_inside / index_outside, exit_dir)) {
    t.status = TraceStatus::TotalInternalReflection;
    return t;
  }
  t.status = TraceStatus::Refracted;
  t.exit = Ray{t.inner_point + (p.d2 - p.d1) * t.inside_direction, exit_dir};
  t.path_length = p.d2;
  return t;
}

FieldTraversal refract_via_field(const Ray& ray, const RefractiveField& field,
                                 double index_inside, double index_outside) {
  if (!(index_inside > 0.0) || !(index_outside > 0.0)) {
    throw Error(ErrorKind::InvalidInput, "refractive indices must be positive");
  }
  return refract_via_prediction(ray, field.eval(ray), index_inside, index_outside);
}

FieldTraversalGradient refract_via_prediction_backward(const Ray& ray, const FieldPrediction& p,
                                                       const FieldTraversal& t,
                                                       double index_inside, double index_outside,
                                                       const Vec3& d_exit_origin,
                                                       const Vec3& d_exit_direction) {
  FieldTraversalGradient g;
  if (t.status != TraceStatus::Refracted) return g;
  const RefractGradient second =
      refract_backward(t.inside_direction, t.n2, index_inside / index_outside, d_exit_direction);
  const double travel = p.d2 - p.d1;
  const Vec3 d_inside = second.d_incident + travel * d_exit_origin;
  const double d_travel = d_exit_origin.dot(t.inside_direction);
  const RefractGradient first =
      refract_backward(ray.direction, t.n1, index_outside / index_inside, d_inside);

  g.prediction.d_d2 = d_travel;
  g.prediction.d_d1 = -d_travel + d_exit_origin.dot(ray.direction);
  g.prediction.d_n1 = t.flipped_n1 ? Vec3(-first.d_normal) : first.d_normal;
  g.prediction.d_n2 = t.flipped_n2 ? Vec3(-second.d_normal) : second.d_normal;
  g.d_origin = d_exit_origin;
  g.d_direction = first.d_incident + p.d1 * d_exit_origin;
  return g;
}

PlaneFit fit_plane(std::span<const Vec3, 9> points, const Vec3& viewpoint) {
  PlaneFit fit;
  Vec3 centroid = Vec3::Zero();
  for (const Vec3& p : points) centroid += p;
  centroid /= 9.0;
  Mat3 cov = Mat3::Zero();
  for (size_t k = 0; k < 9; ++k) {
    fit.centered[k] = points[k] - centroid;
    cov += fit.centered[k] * fit.centered[k].transpose();
  }
  const Eigen::SelfAdjointEigenSolver<Mat3> solver(cov);
  fit.eigenvalues = solver.eigenvalues();
  fit.eigenvectors = solver.eigenvectors();
  const double spread = std::sqrt(std::max(0.0, fit.eigenvalues[2]));
  fit.degenerate = std::sqrt(std::max(0.0, fit.eigenvalues[1])) <= 1e-12 * std::max(1.0, spread);
  const Vec3 v0 = fit.eigenvectors.col(0);
  fit.orientation = v0.dot(viewpoint - centroid) >= 0.0 ? 1.0 : -1.0;
  fit.normal = fit.orientation * v0;
  return fit;
}

std::array<Vec3, 9> fit_plane_backward(const PlaneFit& fit, const Vec3& d_normal) {
  std::array<Vec3, 9> d_points;
  d_points.fill(Vec3::Zero());
  const Vec3 v0 = fit.eigenvectors.col(0);
  for (int j = 1; j < 3; ++j) {
    const Vec3 vj = fit.eigenvectors.col(j);
    const double gap = fit.eigenvalues[0] - fit.eigenvalues[j];
    const double scale = fit.orientation * d_normal.dot(vj) / gap;
    for (size_t k = 0; k < 9; ++k) {
      const Vec3& x = fit.centered[k];
      d_points[k] += scale * (vj * x.dot(v0) + v0 * vj.dot(x));
    }
  }
  return d_points;
}

std::optional<std::array<Vec3, 9>> surface_points(std::span<const FieldPrediction, 9> predictions,
                                                  std::span<const Ray, 9> rays, int surface_index,
                                                  double index_inside, double index_outside) {
  if (surface_index != 1 && surface_index != 2) {
    throw Error(ErrorKind::InvalidInput, "surface index must be 1 or 2");
  }
  std::array<Vec3, 9> points;
  for (size_t k = 0; k < 9; ++k) {
    if (surface_index == 1) {
      points[k] = rays[k].at(predictions[k].d1);
      continue;
    }
    const FieldTraversal t = refract_via_prediction(rays[k], predictions[k], index_inside,
                                                    index_outside);
    if (t.status != TraceStatus::Refracted) return std::nullopt;
    points[k] = t.exit.origin;
  }
  return points;
}

std::optional<Vec3> fit_local_normals(std::span<const FieldPrediction, 9> predictions,
                                      std::span<const Ray, 9> rays, int surface_index,
                                      double index_inside, double index_outside) {
  const auto points = surface_points(predictions, rays, surface_index, index_inside, index_outside);
  if (!points) return std::nullopt;
  const PlaneFit fit = fit_plane(*points, rays[4].origin);
  if (fit.degenerate) return std::nullopt;
  return fit.normal;
}

}  // namespace covertrace
