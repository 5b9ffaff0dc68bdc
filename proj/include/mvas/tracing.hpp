#pragma once

// Ray marching on signed distance fields: forward sphere tracing, the
// minimum of the field along a ray, visibility by marching a surface point
// back toward a camera, and the implicit-function sensitivity of a hit.

#include "mvas/field.hpp"
#include "mvas/geom.hpp"

#include <optional>
#include <span>
#include <vector>

namespace mvas {

struct Ray {
  Vec3d origin = Vec3d::Zero();
  Vec3d dir = Vec3d::UnitZ();
  double t_min = 0.0;
  double t_max = 1e6;

  Vec3d at(double t) const { return origin + t * dir; }
};

/// Ray through pixel coordinates (u, v), clipped to the ball of radius
/// `scene_radius` around the origin. Rays that miss the ball get the segment
/// of length 2 * scene_radius centred on their closest approach.
Ray camera_ray(const Camerad& camera, double u, double v, double scene_radius = 1.0);

struct TraceConfig {
  double epsilon = 1e-5;
  int max_steps = 64;
};

struct Hit {
  Vec3d x = Vec3d::Zero();
  double t = 0.0;
  int steps = 0;
  double residual = 0.0;
};

/// March x <- x + f(x) dir from t_min. Returns a hit once |f| < epsilon, or
/// nothing when t leaves [t_min, t_max] or the step budget runs out.
/// Throws InvalidStart if f <= 0 at t_min.
std::optional<Hit> sphere_trace(const SdfField& field, const Ray& ray, TraceConfig config = {});

enum class TraceStatus { Hit, Miss, StartInside };

struct TraceResult {
  TraceStatus status = TraceStatus::Miss;
  Hit hit;
};

/// Batched sphere tracing; a ray starting inside is reported, not thrown.
std::vector<TraceResult> sphere_trace_batch(const SdfField& field, std::span<const Ray> rays,
                                            TraceConfig config = {});

struct MinSdfConfig {
  int samples = 64;
  int refine_iterations = 8;
};

struct MinSdf {
  double value = 0.0;
  double t = 0.0;
};

/// Minimum of f over [t_min, t_max]: stratified samples followed by a
/// bracketing search around the best one.
MinSdf min_sdf_along_ray(const SdfField& field, const Ray& ray, MinSdfConfig config = {});
std::vector<MinSdf> min_sdf_batch(const SdfField& field, std::span<const Ray> rays,
                                  MinSdfConfig config = {});

enum class Visibility { Visible, OccludedByHit, EnteredSurface, MaxStepsExceeded };

const char* to_string(Visibility v);

struct VisibilityOutcome {
  Visibility status = Visibility::MaxStepsExceeded;
  int steps = 0;

  bool visible() const { return status == Visibility::Visible; }
};

struct VisibilityConfig {
  double push = 1e-3;
  double epsilon = 1e-5;
  int max_steps = 64;
};

/// Marches from the surface point x toward `camera_center`. Invisible if the
/// march enters the surface, converges onto another surface point, or runs
/// out of steps; visible once it passes the camera centre.
VisibilityOutcome visibility(const SdfField& field, const Vec3d& x, const Vec3d& camera_center,
                             VisibilityConfig config = {});

struct VisibilityQuery {
  Vec3d point;
  Vec3d camera_center;
};

std::vector<VisibilityOutcome> visibility_batch(const SdfField& field,
                                                std::span<const VisibilityQuery> queries,
                                                VisibilityConfig config = {});

/// First-order motion of a converged hit under a parameter change:
/// x(theta) = x0 - dir * f(x0; theta) / (grad f(x0)^T dir).
struct IntersectionSensitivity {
  Vec3d x = Vec3d::Zero();
  Vec3d dir = Vec3d::UnitZ();
  Vec3d gradient = Vec3d::UnitZ();
  double grad_dot_dir = -1.0;

  /// d t / d theta given d f(x0) / d theta.
  double dt(double df) const { return -df / grad_dot_dir; }
  /// d x / d theta given d f(x0) / d theta.
  Vec3d dx(double df) const { return dir * dt(df); }
};

inline constexpr double kGrazingThreshold = 1e-6;

/// Throws UnstableIntersection when |grad f^T dir| <= 1e-6.
IntersectionSensitivity differentiable_intersection(const SdfField& field, const Ray& ray,
                                                    const Hit& hit);

}  // namespace mvas
