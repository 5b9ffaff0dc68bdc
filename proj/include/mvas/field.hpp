#pragma once

// Signed distance fields: the positional-encoded softplus MLP that is
// optimised during reconstruction, and closed-form shapes used as ground
// truth. Both implement SdfField so tracing and evaluation are agnostic to
// which one they see.

#include "mvas/common.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <variant>
#include <vector>

namespace mvas {

struct FieldEval {
  double value = 0.0;
  Vec3d gradient = Vec3d::UnitX();
  /// False at points where the gradient does not exist (medial axis).
  bool gradient_defined = true;
};

struct BatchEval {
  Eigen::RowVectorXd values;
  Points3d gradients;
};

class SdfField {
 public:
  virtual ~SdfField() = default;

  virtual Eigen::RowVectorXd values(const Points3d& x) const = 0;
  virtual BatchEval evaluate(const Points3d& x) const = 0;

  double value(const Vec3d& x) const { return values(x)[0]; }
  FieldEval eval(const Vec3d& x) const;
};

// ---------------------------------------------------------------------------
// Analytic shapes

struct Sphere {
  Vec3d center = Vec3d::Zero();
  double radius = 0.5;
};

struct Torus {
  Vec3d center = Vec3d::Zero();
  Vec3d axis = Vec3d::UnitZ();
  double major_radius = 0.5;
  double minor_radius = 0.2;
};

/// Box with outer half-extents `half_extents` whose edges are rounded by
/// `corner_radius`.
struct RoundedBox {
  Vec3d center = Vec3d::Zero();
  Vec3d half_extents = Vec3d::Constant(0.4);
  double corner_radius = 0.1;
};

using AnalyticShape = std::variant<Sphere, Torus, RoundedBox>;

FieldEval analytic_sdf(const AnalyticShape& shape, const Vec3d& x);

/// First ray parameter in (t_min, t_max) where the ray meets the surface,
/// computed without sphere tracing for spheres and tori.
std::optional<double> analytic_intersect(const AnalyticShape& shape, const Vec3d& origin,
                                         const Vec3d& dir, double t_min, double t_max);

/// Radius of a ball around the origin that contains the shape.
double bounding_radius(const AnalyticShape& shape);

void validate(const AnalyticShape& shape);

class AnalyticField final : public SdfField {
 public:
  explicit AnalyticField(AnalyticShape shape) : shape_(std::move(shape)) {}

  Eigen::RowVectorXd values(const Points3d& x) const override;
  BatchEval evaluate(const Points3d& x) const override;

  const AnalyticShape& shape() const { return shape_; }

 private:
  AnalyticShape shape_;
};

// ---------------------------------------------------------------------------
// Neural SDF

/// Layer layout of the MLP. Input features are [x, gamma(x)]; layer
/// `skip_layer` additionally receives the same features concatenated to its
/// input (both halves scaled by 1/sqrt(2)). Hidden layers use softplus with
/// sharpness beta, the last layer is linear with a single output.
struct Architecture {
  int num_layers = 8;
  int width = 256;
  int frequencies = 10;
  double beta = 100.0;
  int skip_layer = 4;
  double init_radius = 0.6;

  int input_dim() const { return 3 + 6 * frequencies; }
  bool has_skip() const { return skip_layer > 0 && skip_layer < num_layers; }
  int layer_in(int l) const;
  int layer_out(int l) const;
  std::int64_t parameter_count() const;
  void validate() const;

  bool operator==(const Architecture&) const = default;
};

/// sin(2^k pi x) and cos(2^k pi x) for k = 0..L-1; each block of three holds
/// one function of the three coordinates: [sin_0(x), cos_0(x), sin_1(x), ...].
Eigen::VectorXd positional_encoding(const Vec3d& x, int frequencies);

/// All parameters in one flat vector: for each layer, the out x in weight
/// matrix (column-major) followed by the bias.
class FieldParams {
 public:
  FieldParams() = default;
  explicit FieldParams(Architecture arch);

  const Architecture& arch() const { return arch_; }
  Eigen::VectorXd& flat() { return theta_; }
  const Eigen::VectorXd& flat() const { return theta_; }
  Eigen::Index size() const { return theta_.size(); }

  Eigen::Map<Eigen::MatrixXd> weight(int l);
  Eigen::Map<const Eigen::MatrixXd> weight(int l) const;
  Eigen::Map<Eigen::VectorXd> bias(int l);
  Eigen::Map<const Eigen::VectorXd> bias(int l) const;

  Eigen::Index weight_offset(int l) const { return offsets_[static_cast<std::size_t>(l)]; }

 private:
  Architecture arch_;
  Eigen::VectorXd theta_;
  std::vector<Eigen::Index> offsets_;
};

/// Geometric initialisation: the zero level set approximates a sphere of
/// radius arch.init_radius around the origin. Deterministic in `seed`.
FieldParams init_sphere(const Architecture& arch, std::uint64_t seed);

/// Small Gaussian weights, for derivative checks on tiny nets.
FieldParams init_random(const Architecture& arch, std::uint64_t seed, double scale = 0.5);

/// Intermediate values of a batched forward pass, kept for the backward pass.
struct ForwardCache {
  Points3d points;
  std::vector<Eigen::MatrixXd> inputs;                   // per layer, in x N
  std::vector<std::array<Eigen::MatrixXd, 3>> input_jac;  // d input / d x_c
  std::vector<Eigen::MatrixXd> pre;                      // per layer, out x N
  std::vector<std::array<Eigen::MatrixXd, 3>> pre_jac;
};

/// Values and exact spatial gradients for a batch of points.
BatchEval forward(const FieldParams& params, const Points3d& x, ForwardCache* cache = nullptr);

/// Values only; cheaper, used for marching.
Eigen::RowVectorXd forward_values(const FieldParams& params, const Points3d& x);

struct FieldVjp {
  Eigen::VectorXd params;  // dL/dtheta, laid out like FieldParams::flat()
  Points3d points;         // dL/dx per point
};

/// Reverse pass for a scalar loss that depends on f(x_j) and grad_x f(x_j):
/// given dL/df (1 x N) and dL/d(grad f) (3 x N), returns dL/dtheta and dL/dx.
/// Paths through grad_x f are differentiated exactly (second order).
FieldVjp backward(const FieldParams& params, const ForwardCache& cache,
                  const Eigen::RowVectorXd& f_bar, const Points3d& g_bar);

/// Non-owning SdfField view over a parameter set.
class NeuralSdf final : public SdfField {
 public:
  explicit NeuralSdf(const FieldParams& params) : params_(&params) {}

  Eigen::RowVectorXd values(const Points3d& x) const override;
  BatchEval evaluate(const Points3d& x) const override;

  const FieldParams& params() const { return *params_; }

 private:
  const FieldParams* params_;
};

}  // namespace mvas
