#pragma once

#include "covertrace/common.hpp"
#include "covertrace/geometry.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace covertrace {

struct FieldPrediction {
  double d1 = 0.0;
  double d2 = 0.0;
  Vec3 n1 = -Vec3::UnitZ();
  Vec3 n2 = -Vec3::UnitZ();
};

struct FieldPredictionGradient {
  double d_d1 = 0.0;
  double d_d2 = 0.0;
  Vec3 d_n1 = Vec3::Zero();
  Vec3 d_n2 = Vec3::Zero();
};

// Geometry a fresh field predicts. FlatSlab is the plane z = slab_distance
// (first hit at slab_distance / r_z). Shell keeps the first hit at the
// constant distance slab_distance along every ray, a sphere around the
// optical centre. Both cross slab_thickness at the refracted slab angle and
// start with -z normals, so Shell begins inconsistent with its own normals.
enum class FieldPrior { FlatSlab, Shell };

// Architecture plus the prior the field starts from. The field lives in the
// cover frame (the camera frame for a head-mounted cover).
struct FieldConfig {
  int hidden_layers = 4;
  int hidden_width = 64;
  int octaves = 6;
  double slab_distance = 0.05;
  double slab_thickness = 0.003;
  double index_inside = 1.49;
  double index_outside = 1.0;
  FieldPrior prior = FieldPrior::FlatSlab;
  std::uint64_t seed = 0;
};

inline constexpr int kFieldInputs = 6;
inline constexpr int kFieldOutputs = 8;
using FieldOutputs = Eigen::Matrix<double, kFieldOutputs, 1>;
using FieldInputs = Eigen::Matrix<double, kFieldInputs, 1>;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Learnable surrogate mapping a ray to the distances of its two cover hits and
// the incident normals there. A tanh MLP over a sinusoidal encoding of
// (origin, direction) produces residuals on top of the prior; the output layer
// starts at zero, so a fresh field is exactly the prior. d2 is the cumulative
// path length, so d2 - d1 is the distance travelled inside the cover.
class RefractiveField {
 public:
  explicit RefractiveField(const FieldConfig& config);
  RefractiveField(const FieldConfig& config, std::vector<double> params);

  const FieldConfig& config() const { return config_; }
  std::vector<int> layer_sizes() const;
  int feature_count() const { return kFieldInputs * (1 + 2 * config_.octaves); }

  std::span<const double> params() const { return params_; }
  std::span<double> params() { return params_; }
  size_t param_count() const { return params_.size(); }

  FieldPrediction eval(const Ray& ray) const;

  // Scalar network path, one ray at a time.
  struct Tape {
    std::vector<Eigen::VectorXd> activations;  // encoded input, then each hidden layer
    FieldInputs input;
  };
  FieldOutputs network(const Ray& ray, Tape* tape = nullptr) const;
  // Accumulates d(params) and returns d(input) for one ray.
  FieldInputs network_backward(const Tape& tape, const FieldOutputs& d_outputs,
                               std::span<double> d_params) const;

  // Batched network path; rows are rays.
  struct BatchTape {
    std::vector<RowMatrix> activations;
    RowMatrix inputs;
  };
  RowMatrix network_batch(const RowMatrix& inputs, BatchTape* tape = nullptr) const;
  void network_batch_backward(const BatchTape& tape, const RowMatrix& d_outputs,
                              std::span<double> d_params, RowMatrix* d_inputs) const;

  // Maps raw network outputs to a prediction, and its vector-Jacobian product.
  FieldPrediction head(const FieldOutputs& raw, const Ray& ray) const;
  FieldOutputs head_backward(const FieldOutputs& raw, const Ray& ray,
                             const FieldPredictionGradient& grad, Vec3* d_origin,
                             Vec3* d_direction) const;

  static FieldInputs input_of(const Ray& ray);
  void encode(const double* input, double* features) const;
  void encode_backward(const double* input, const double* d_features, double* d_input) const;

 private:
  struct Layer {
    int in, out;
    size_t weight_offset, bias_offset;
  };
  void build_layout();

  FieldConfig config_;
  std::vector<Layer> layers_;
  std::vector<double> params_;
};

struct FieldTraversal {
  TraceStatus status = TraceStatus::Refracted;
  Ray exit;
  double path_length = 0.0;  // d2 when refracted
  Vec3 inner_point = Vec3::Zero();
  Vec3 inside_direction = Vec3::Zero();
  Vec3 n1 = Vec3::Zero();  // after orientation repair
  Vec3 n2 = Vec3::Zero();
  bool flipped_n1 = false;
  bool flipped_n2 = false;
};

struct FieldTraversalGradient {
  FieldPredictionGradient prediction;
  Vec3 d_origin = Vec3::Zero();
  Vec3 d_direction = Vec3::Zero();
};

// Two analytic refractions through the geometry a prediction describes.
FieldTraversal refract_via_prediction(const Ray& ray, const FieldPrediction& prediction,
                                      double index_inside, double index_outside);
FieldTraversal refract_via_field(const Ray& ray, const RefractiveField& field,
                                 double index_inside, double index_outside);

FieldTraversalGradient refract_via_prediction_backward(const Ray& ray,
                                                       const FieldPrediction& prediction,
                                                       const FieldTraversal& traversal,
                                                       double index_inside, double index_outside,
                                                       const Vec3& d_exit_origin,
                                                       const Vec3& d_exit_direction);

// Least-squares plane through nine points, normal oriented toward `viewpoint`.
struct PlaneFit {
  bool degenerate = true;
  Vec3 normal = Vec3::Zero();
  double orientation = 1.0;
  Vec3 eigenvalues = Vec3::Zero();
  Mat3 eigenvectors = Mat3::Identity();
  std::array<Vec3, 9> centered{};
};

PlaneFit fit_plane(std::span<const Vec3, 9> points, const Vec3& viewpoint);
// Gradient of the fitted normal with respect to each of the nine points.
std::array<Vec3, 9> fit_plane_backward(const PlaneFit& fit, const Vec3& d_normal);

// Hit points for one surface of a 3x3 neighbourhood. Surface 1 uses
// origin + d1 * direction; surface 2 follows the refracted path to the exit
// point. Returns nullopt when a ray of the patch is totally reflected.
std::optional<std::array<Vec3, 9>> surface_points(std::span<const FieldPrediction, 9> predictions,
                                                  std::span<const Ray, 9> rays, int surface_index,
                                                  double index_inside, double index_outside);

// Fitted normal at the centre of a 3x3 neighbourhood; nullopt if degenerate.
std::optional<Vec3> fit_local_normals(std::span<const FieldPrediction, 9> predictions,
                                      std::span<const Ray, 9> rays, int surface_index,
                                      double index_inside = 1.49, double index_outside = 1.0);

}  // namespace covertrace
