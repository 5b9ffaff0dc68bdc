#pragma once

// Optimisation of the neural SDF from azimuth maps and silhouettes: pixel
// sampling, the tangent-space-consistency, silhouette and Eikonal losses
// with their parameter gradients, ADAM, and the epoch loop.

#include "mvas/dataset.hpp"
#include "mvas/field.hpp"
#include "mvas/tracing.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mvas {

enum class TscMode { MultiView, HalfPi, SingleViewAblation };
enum class IntersectionMode { Detached, Differentiable };

const char* to_string(TscMode mode);
TscMode parse_tsc_mode(const std::string& name);
const char* to_string(IntersectionMode mode);
IntersectionMode parse_intersection_mode(const std::string& name);

struct TrainConfig {
  Architecture arch;
  double lambda1 = 100.0;  // silhouette
  double lambda2 = 0.1;    // Eikonal
  double lr = 1e-4;
  int epochs = 50;
  int batch_size = 4096;
  double alpha0 = 50.0;
  /// lr and alpha are multiplied by their factor every `schedule_epochs`.
  int schedule_epochs = 10;
  double lr_factor = 0.5;
  double alpha_factor = 0.5;
  int dilation = 30;
  /// Eikonal samples per iteration; 0 means batch_size.
  int eikonal_samples = 0;
  /// Eikonal samples are drawn from [-bbox_half, bbox_half]^3.
  double bbox_half = 1.0;
  /// Camera rays are clipped to the ball of this radius.
  double scene_radius = 1.0;
  TscMode tsc_mode = TscMode::MultiView;
  IntersectionMode intersection = IntersectionMode::Detached;
  /// Stop after this many iterations even if epochs remain; 0 disables.
  std::int64_t max_iterations = 0;
  std::uint64_t seed = 0;
  TraceConfig trace;
  VisibilityConfig visibility;
  MinSdfConfig min_sdf;

  int eikonal_count() const { return eikonal_samples > 0 ? eikonal_samples : batch_size; }
  void validate() const;
};

/// Keys mirror the field names (lambda1, batch_size, tsc_mode, width, ...).
/// Unknown keys are an InvalidSpec error; absent keys keep `base`.
TrainConfig train_config_from_json(const std::string& text, TrainConfig base = {});
std::string to_json(const TrainConfig& config);

// ---------------------------------------------------------------------------
// Pixel sampling

struct PixelSample {
  int view = 0;
  int col = 0;
  int row = 0;

  bool operator==(const PixelSample&) const = default;
};

/// Dilation with a 3x3 square, repeated `iterations` times.
SilhouetteMask dilate(const SilhouetteMask& mask, int iterations);

/// Every pixel of the dilated masks, view-major then row-major.
std::vector<PixelSample> dilated_pixels(std::span<const SilhouetteMask> masks, int dilation);

/// Walks a seeded permutation of the dilated pixels, one permutation per
/// epoch; a batch that runs past the end wraps to the start.
class PixelSampler {
 public:
  PixelSampler(std::span<const SilhouetteMask> masks, int dilation, std::uint64_t seed);

  std::size_t size() const { return pixels_.size(); }
  std::int64_t iterations_per_epoch(int batch_size) const;
  std::vector<PixelSample> sample(int batch_size, int epoch, std::int64_t iteration);

 private:
  std::vector<PixelSample> pixels_;
  std::uint64_t seed_;
  int cached_epoch_ = -1;
  std::vector<std::uint32_t> order_;
};

/// Throws Dataset if the dilated masks are empty.
std::vector<PixelSample> sample_pixels(std::span<const SilhouetteMask> masks, int batch_size,
                                       int dilation, std::uint64_t seed, int epoch,
                                       std::int64_t iteration);

// ---------------------------------------------------------------------------
// Batch preparation: everything that is held fixed while differentiating

struct ViewTangent {
  int view = 0;
  Vec3d t = Vec3d::Zero();
  Vec3d t_half = Vec3d::Zero();  // the tangent rotated by pi/2 in the image plane
};

/// A pixel whose ray hit the surface inside the silhouette.
struct SurfaceSample {
  int pixel = 0;
  Vec3d x = Vec3d::Zero();
  Vec3d dir = Vec3d::UnitZ();
  /// f and grad f at x under the parameters used for tracing.
  double f0 = 0.0;
  Vec3d g0 = Vec3d::UnitZ();
  std::vector<ViewTangent> tangents;
};

/// A pixel whose ray missed, or hit outside the silhouette.
struct BackgroundSample {
  int pixel = 0;
  Vec3d x_star = Vec3d::Zero();  // where f attains its minimum on the ray
  double label = 0.0;            // mask value at the pixel
};

struct PreparedBatch {
  int batch_size = 0;
  std::vector<PixelSample> pixels;
  std::vector<SurfaceSample> surface;
  std::vector<BackgroundSample> background;
  /// Surface pixels that contribute nothing: no view saw the point, or the
  /// ray grazes the surface in differentiable mode.
  int no_views = 0;
  int grazing = 0;
  std::int64_t visibility_queries = 0;
  std::int64_t visibility_steps = 0;
  std::int64_t visibility_capped = 0;
};

/// Tangents of the views in which x is visible: the projection is in the
/// image, inside the silhouette, on a valid azimuth, and the reverse march
/// reaches the camera.
std::vector<ViewTangent> visible_tangents(const SdfField& field, const Dataset& data,
                                          const Vec3d& x, const VisibilityConfig& config = {});

/// Traces the rays of `pixels`, splits them into surface and background
/// samples, gathers tangents and finds f* for background rays.
PreparedBatch prepare_batch(const SdfField& field, const Dataset& data,
                            std::vector<PixelSample> pixels, const TrainConfig& config);

// ---------------------------------------------------------------------------
// Losses

struct LossBreakdown {
  double tsc = 0.0;
  double silhouette = 0.0;
  double eikonal = 0.0;
  double total = 0.0;
};

/// Per-point TSC term for normal n (not normalised) and its gradient in n.
double tsc_point(const Vec3d& n, std::span<const ViewTangent> tangents, TscMode mode,
                 Vec3d* n_bar = nullptr);

/// Binary cross entropy between the label and sigma(-alpha f*), clamped at
/// 1e-12, and its derivative in f*.
double silhouette_point(double label, double f_star, double alpha, double* f_bar = nullptr);

double tsc_loss(const SdfField& field, const PreparedBatch& batch, TscMode mode);
double silhouette_loss(const SdfField& field, const PreparedBatch& batch, double alpha);

Points3d eikonal_points(const Eigen::AlignedBox3d& box, int count, std::uint64_t seed);
double eikonal_loss(const SdfField& field, const Points3d& points);
double eikonal_loss(const SdfField& field, const Eigen::AlignedBox3d& box, int count,
                    std::uint64_t seed);

struct LossWeights {
  double lambda1 = 100.0;
  double lambda2 = 0.1;
  double alpha = 50.0;
  TscMode mode = TscMode::MultiView;
  IntersectionMode intersection = IntersectionMode::Detached;
};

/// Total loss on a prepared batch, and its gradient in the parameters when
/// `grad` is given. In differentiable mode the surface points move with the
/// parameters as x0 - dir (f(x0) - f0) / (g0 . dir).
LossBreakdown batch_loss(const FieldParams& params, const PreparedBatch& batch,
                         const Points3d& eikonal, const LossWeights& weights,
                         Eigen::VectorXd* grad = nullptr);

// ---------------------------------------------------------------------------
// Optimiser and loop

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  std::int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  AdamState() = default;
  explicit AdamState(Eigen::Index n) : m(Eigen::VectorXd::Zero(n)), v(Eigen::VectorXd::Zero(n)) {}
};

/// Throws NumericFailure on non-finite gradients, InvalidSpec on shape mismatch.
void adam_step(AdamState& state, Eigen::VectorXd& params, const Eigen::VectorXd& grads, double lr);

struct IterationLog {
  std::int64_t iteration = 0;
  int epoch = 0;
  LossBreakdown loss;
  double lr = 0.0;
  double alpha = 0.0;
  int surface = 0;
  int background = 0;
};

struct TrainOptions {
  /// Directory for checkpoint.mvas, rewritten after every epoch.
  std::optional<fs::path> checkpoint_dir;
  std::optional<Normalization<double>> normalization;
  std::optional<FieldParams> initial;
  std::function<void(const IterationLog&)> on_iteration;
};

struct TrainResult {
  FieldParams params;
  std::vector<IterationLog> log;
  std::int64_t visibility_queries = 0;
  std::int64_t visibility_steps = 0;
  std::int64_t visibility_capped = 0;
};

double scheduled(double initial, double factor, int epoch, int schedule_epochs);

/// Expects normalised cameras. A numeric failure propagates after the last
/// completed epoch's checkpoint has been written.
TrainResult train(const TrainConfig& config, const Dataset& data, const TrainOptions& options = {});

inline constexpr const char* kCheckpointName = "checkpoint.mvas";

void write_loss_csv(const fs::path& path, std::span<const IterationLog> log);

}  // namespace mvas
