#include "mvas/tracing.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace mvas {

Ray camera_ray(const Camerad& camera, double u, double v, double scene_radius) {
  Ray ray;
  ray.origin = camera.center();
  ray.dir = camera.ray_direction(u, v);
  const double b = ray.origin.dot(ray.dir);
  const double c = ray.origin.squaredNorm() - scene_radius * scene_radius;
  const double disc = b * b - c;
  if (disc > 0.0) {
    const double sq = std::sqrt(disc);
    ray.t_min = std::max(0.0, -b - sq);
    ray.t_max = -b + sq;
  } else {
    ray.t_min = std::max(0.0, -b - scene_radius);
    ray.t_max = -b + scene_radius;
  }
  if (ray.t_max <= ray.t_min) ray.t_max = ray.t_min + 2.0 * scene_radius;
  return ray;
}

std::vector<TraceResult> sphere_trace_batch(const SdfField& field, std::span<const Ray> rays,
                                            TraceConfig config) {
  const std::size_t n = rays.size();
  std::vector<TraceResult> out(n);
  std::vector<double> t(n);
  std::vector<std::size_t> active;
  active.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    t[i] = rays[i].t_min;
    active.push_back(i);
  }

  Points3d pts;
  for (int step = 0; step <= config.max_steps && !active.empty(); ++step) {
    pts.resize(3, static_cast<Eigen::Index>(active.size()));
    for (std::size_t k = 0; k < active.size(); ++k) {
      pts.col(static_cast<Eigen::Index>(k)) = rays[active[k]].at(t[active[k]]);
    }
    const Eigen::RowVectorXd f = field.values(pts);
    std::vector<std::size_t> next;
    next.reserve(active.size());
    for (std::size_t k = 0; k < active.size(); ++k) {
      const std::size_t i = active[k];
      const double fi = f[static_cast<Eigen::Index>(k)];
      TraceResult& r = out[i];
      if (step == 0 && !(fi > 0.0)) {
        r.status = TraceStatus::StartInside;
        continue;
      }
      if (std::abs(fi) < config.epsilon) {
        r.status = TraceStatus::Hit;
        r.hit = Hit{pts.col(static_cast<Eigen::Index>(k)), t[i], step, std::abs(fi)};
        continue;
      }
      if (!std::isfinite(fi) || step == config.max_steps) continue;  // miss
      t[i] += fi;
      if (t[i] > rays[i].t_max || t[i] < rays[i].t_min) continue;
      next.push_back(i);
    }
    active.swap(next);
  }
  return out;
}

std::optional<Hit> sphere_trace(const SdfField& field, const Ray& ray, TraceConfig config) {
  const TraceResult r = sphere_trace_batch(field, std::span<const Ray>(&ray, 1), config)[0];
  if (r.status == TraceStatus::StartInside) {
    throw Error(ErrorCode::InvalidStart, "sphere_trace: ray starts inside the surface");
  }
  if (r.status == TraceStatus::Miss) return std::nullopt;
  return r.hit;
}

std::vector<MinSdf> min_sdf_batch(const SdfField& field, std::span<const Ray> rays,
                                  MinSdfConfig config) {
  if (config.samples < 2) throw Error(ErrorCode::InvalidSpec, "min_sdf: samples must be >= 2");
  const auto n = static_cast<Eigen::Index>(rays.size());
  const int s = config.samples;
  std::vector<MinSdf> out(rays.size());
  if (n == 0) return out;

  // Sample midpoints of equal strata; endpoints included so a minimum at the
  // ends of the interval is found exactly.
  Points3d pts(3, n * (s + 2));
  auto sample_t = [&](const Ray& r, int j) {
    const double len = r.t_max - r.t_min;
    if (j == 0) return r.t_min;
    if (j == s + 1) return r.t_max;
    return r.t_min + len * (j - 0.5) / s;
  };
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int j = 0; j < s + 2; ++j) {
      pts.col(i * (s + 2) + j) = rays[static_cast<std::size_t>(i)].at(sample_t(rays[static_cast<std::size_t>(i)], j));
    }
  }
  const Eigen::RowVectorXd f = field.values(pts);

  std::vector<double> lo(rays.size()), hi(rays.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const Ray& r = rays[static_cast<std::size_t>(i)];
    int best = 0;
    for (int j = 1; j < s + 2; ++j) {
      if (f[i * (s + 2) + j] < f[i * (s + 2) + best]) best = j;
    }
    auto& o = out[static_cast<std::size_t>(i)];
    o.value = f[i * (s + 2) + best];
    o.t = sample_t(r, best);
    lo[static_cast<std::size_t>(i)] = sample_t(r, std::max(best - 1, 0));
    hi[static_cast<std::size_t>(i)] = sample_t(r, std::min(best + 1, s + 1));
  }

  // Golden-section style bracket shrinking, two evaluations per iteration.
  constexpr double kInvPhi = 0.6180339887498949;
  Points3d probe(3, 2 * n);
  for (int it = 0; it < config.refine_iterations; ++it) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(i);
      const double a = lo[k], b = hi[k];
      probe.col(2 * i) = rays[k].at(b - kInvPhi * (b - a));
      probe.col(2 * i + 1) = rays[k].at(a + kInvPhi * (b - a));
    }
    const Eigen::RowVectorXd g = field.values(probe);
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(i);
      const double a = lo[k], b = hi[k];
      const double c = b - kInvPhi * (b - a);
      const double d = a + kInvPhi * (b - a);
      const double fc = g[2 * i], fd = g[2 * i + 1];
      if (fc < out[k].value) out[k] = {fc, c};
      if (fd < out[k].value) out[k] = {fd, d};
      if (fc < fd) {
        hi[k] = d;
      } else {
        lo[k] = c;
      }
    }
  }
  return out;
}

MinSdf min_sdf_along_ray(const SdfField& field, const Ray& ray, MinSdfConfig config) {
  return min_sdf_batch(field, std::span<const Ray>(&ray, 1), config)[0];
}

const char* to_string(Visibility v) {
  switch (v) {
    case Visibility::Visible: return "visible";
    case Visibility::OccludedByHit: return "occluded";
    case Visibility::EnteredSurface: return "entered-surface";
    case Visibility::MaxStepsExceeded: return "max-steps";
  }
  return "unknown";
}

std::vector<VisibilityOutcome> visibility_batch(const SdfField& field,
                                                std::span<const VisibilityQuery> queries,
                                                VisibilityConfig config) {
  const std::size_t n = queries.size();
  std::vector<VisibilityOutcome> out(n);
  std::vector<Vec3d> dir(n);
  std::vector<double> dist(n), s(n);
  std::vector<std::size_t> active;
  active.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3d to_cam = queries[i].camera_center - queries[i].point;
    dist[i] = to_cam.norm();
    dir[i] = to_cam / dist[i];
    s[i] = config.push;
    if (s[i] > dist[i]) {
      out[i].status = Visibility::Visible;
    } else {
      active.push_back(i);
    }
  }

  Points3d pts;
  for (int step = 1; step <= config.max_steps && !active.empty(); ++step) {
    pts.resize(3, static_cast<Eigen::Index>(active.size()));
    for (std::size_t k = 0; k < active.size(); ++k) {
      const std::size_t i = active[k];
      pts.col(static_cast<Eigen::Index>(k)) = queries[i].point + s[i] * dir[i];
    }
    const Eigen::RowVectorXd f = field.values(pts);
    std::vector<std::size_t> next;
    next.reserve(active.size());
    for (std::size_t k = 0; k < active.size(); ++k) {
      const std::size_t i = active[k];
      const double fi = f[static_cast<Eigen::Index>(k)];
      out[i].steps = step;
      if (fi < 0.0) {
        out[i].status = Visibility::EnteredSurface;
      } else if (fi < config.epsilon) {
        out[i].status = Visibility::OccludedByHit;
      } else if (!std::isfinite(fi)) {
        out[i].status = Visibility::MaxStepsExceeded;
      } else {
        s[i] += fi;
        if (s[i] > dist[i]) {
          out[i].status = Visibility::Visible;
        } else {
          next.push_back(i);
        }
      }
    }
    active.swap(next);
  }
  for (const std::size_t i : active) out[i].status = Visibility::MaxStepsExceeded;
  return out;
}

VisibilityOutcome visibility(const SdfField& field, const Vec3d& x, const Vec3d& camera_center,
                             VisibilityConfig config) {
  const VisibilityQuery q{x, camera_center};
  return visibility_batch(field, std::span<const VisibilityQuery>(&q, 1), config)[0];
}

IntersectionSensitivity differentiable_intersection(const SdfField& field, const Ray& ray,
                                                    const Hit& hit) {
  const FieldEval e = field.eval(hit.x);
  IntersectionSensitivity out;
  out.x = hit.x;
  out.dir = ray.dir;
  out.gradient = e.gradient;
  out.grad_dot_dir = e.gradient.dot(ray.dir);
  if (!(std::abs(out.grad_dot_dir) > kGrazingThreshold)) {
    throw Error(ErrorCode::UnstableIntersection, "differentiable_intersection: grazing ray");
  }
  return out;
}

}  // namespace mvas
