#pragma once

// Pinhole cameras, azimuth/tangent algebra and tangent-space consistency
// (TSC) matrices. Everything here is a pure function templated on the scalar
// type so the same code runs in double and in extended precision.

#include "mvas/common.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <numbers>
#include <span>
#include <vector>

namespace mvas {

template <typename Scalar>
struct CameraIntrinsics {
  Scalar fx{1};
  Scalar fy{1};
  Scalar cx{0};
  Scalar cy{0};
  int width{1};
  int height{1};
};

/// World-to-camera rigid transform x_c = R x + t. Rows of R are the world
/// directions of the camera x-axis, y-axis and optical axis.
template <typename Scalar>
struct CameraPose {
  Mat3<Scalar> R = Mat3<Scalar>::Identity();
  Vec3<Scalar> t = Vec3<Scalar>::Zero();

  Vec3<Scalar> center() const { return -R.transpose() * t; }
  Vec3<Scalar> x_axis() const { return R.row(0).transpose(); }
  Vec3<Scalar> y_axis() const { return R.row(1).transpose(); }
  Vec3<Scalar> optical_axis() const { return R.row(2).transpose(); }
};

template <typename Scalar>
struct Camera {
  CameraIntrinsics<Scalar> intrinsics;
  CameraPose<Scalar> pose;

  Vec3<Scalar> center() const { return pose.center(); }

  /// Unit world-space direction of the ray through pixel coordinates (u, v).
  Vec3<Scalar> ray_direction(Scalar u, Scalar v) const {
    const auto& K = intrinsics;
    Vec3<Scalar> d_cam((u - K.cx) / K.fx, (v - K.cy) / K.fy, Scalar(1));
    return (pose.R.transpose() * d_cam).normalized();
  }
};

using Camerad = Camera<double>;

template <typename Scalar>
struct Projection {
  Scalar u;
  Scalar v;
  Scalar depth;
};

/// Builds a pose whose optical axis points from `eye` toward `target`.
/// `up` fixes the roll; the camera y-axis points roughly along -up.
template <typename Scalar>
CameraPose<Scalar> look_at(const Vec3<Scalar>& eye, const Vec3<Scalar>& target,
                           const Vec3<Scalar>& up) {
  Vec3<Scalar> z = (target - eye).normalized();
  Vec3<Scalar> x = z.cross(up);
  if (x.norm() < Scalar(1e-12)) {
    // up parallel to the viewing direction; pick any perpendicular
    Vec3<Scalar> alt = std::abs(z.x()) < Scalar(0.9) ? Vec3<Scalar>::UnitX()
                                                      : Vec3<Scalar>::UnitY();
    x = z.cross(alt);
  }
  x.normalize();
  Vec3<Scalar> y = z.cross(x);
  CameraPose<Scalar> pose;
  pose.R.row(0) = x.transpose();
  pose.R.row(1) = y.transpose();
  pose.R.row(2) = z.transpose();
  pose.t = -pose.R * eye;
  return pose;
}

template <typename Scalar>
Projection<Scalar> project(const Camera<Scalar>& camera, const Vec3<Scalar>& x) {
  const Vec3<Scalar> xc = camera.pose.R * x + camera.pose.t;
  if (!(xc.z() > Scalar(0))) {
    throw Error(ErrorCode::BehindCamera, "project: point is behind the camera");
  }
  const auto& K = camera.intrinsics;
  return {K.fx * xc.x() / xc.z() + K.cx, K.fy * xc.y() / xc.z() + K.cy, xc.z()};
}

template <typename Scalar>
Scalar wrap_two_pi(Scalar phi) {
  using std::fmod;
  const Scalar two_pi = Scalar(2) * std::numbers::pi_v<Scalar>;
  Scalar r = fmod(phi, two_pi);
  if (r < Scalar(0)) r += two_pi;
  if (r >= two_pi) r -= two_pi;
  return r;
}

inline constexpr double kAzimuthEpsilon = 1e-6;

/// Azimuth of a world-space normal as seen by the camera: atan2 of the
/// camera-frame y and x components, in [0, 2pi).
template <typename Scalar>
Scalar azimuth_of_normal(const CameraPose<Scalar>& pose, const Vec3<Scalar>& n) {
  using std::atan2;
  const Scalar nx = pose.R.row(0).dot(n);
  const Scalar ny = pose.R.row(1).dot(n);
  const Scalar eps = Scalar(kAzimuthEpsilon);
  if (nx * nx + ny * ny < eps * eps) {
    throw Error(ErrorCode::UndefinedAzimuth,
                "azimuth_of_normal: normal is parallel to the optical axis");
  }
  return wrap_two_pi(atan2(ny, nx));
}

/// t(phi) = r1 sin(phi) - r2 cos(phi); unit length and parallel to the image
/// plane. Every surface normal observed with azimuth phi is orthogonal to it.
template <typename Scalar>
Vec3<Scalar> azimuth_to_tangent(const CameraPose<Scalar>& pose, Scalar phi) {
  using std::cos;
  using std::sin;
  return pose.R.row(0).transpose() * sin(phi) - pose.R.row(1).transpose() * cos(phi);
}

/// The tangent for the azimuth rotated by pi/2 in the image plane,
/// t'(phi) = -r1 cos(phi) - r2 sin(phi).
template <typename Scalar>
Vec3<Scalar> tangent_half_pi(const CameraPose<Scalar>& pose, Scalar phi) {
  using std::cos;
  using std::sin;
  return -pose.R.row(0).transpose() * cos(phi) - pose.R.row(1).transpose() * sin(phi);
}

/// Sum of visible outer products t t^T and the number of visible views.
template <typename Scalar>
struct TscAccumulator {
  Mat3<Scalar> M = Mat3<Scalar>::Zero();
  int count = 0;

  bool empty() const { return count == 0; }

  void add(const Vec3<Scalar>& t) {
    M.noalias() += t * t.transpose();
    ++count;
  }

  /// M / count; zero when no view contributed.
  Mat3<Scalar> averaged() const {
    if (count == 0) return Mat3<Scalar>::Zero();
    return M / Scalar(count);
  }
};

template <typename Scalar>
TscAccumulator<Scalar> accumulate_tsc(std::span<const Vec3<Scalar>> tangents,
                                      std::span<const bool> visible) {
  if (tangents.size() != visible.size()) {
    throw Error(ErrorCode::EmptyInput, "accumulate_tsc: list sizes differ");
  }
  TscAccumulator<Scalar> acc;
  for (std::size_t i = 0; i < tangents.size(); ++i) {
    if (visible[i]) acc.add(tangents[i]);
  }
  return acc;
}

enum class RankClass { Line = 1, TangentPlane = 2, FullSpace = 3 };

const char* to_string(RankClass c);

struct RankTolerances {
  double lo = 1e-6;
  double hi = 1e-3;
};

template <typename Scalar>
struct RankReport {
  RankClass rank = RankClass::Line;
  bool ambiguous = false;
  Vec3<Scalar> singular_values = Vec3<Scalar>::Zero();
};

/// C x 3 stack of unit tangents, one row per contributing view.
template <typename Scalar>
using TangentStack = Eigen::Matrix<Scalar, Eigen::Dynamic, 3>;

template <typename Scalar>
TangentStack<Scalar> make_stack(std::span<const Vec3<Scalar>> rows) {
  TangentStack<Scalar> stack(static_cast<Eigen::Index>(rows.size()), 3);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    stack.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  }
  return stack;
}

template <typename Scalar>
Vec3<Scalar> stack_singular_values(const TangentStack<Scalar>& stack) {
  Vec3<Scalar> sv = Vec3<Scalar>::Zero();
  Eigen::JacobiSVD<TangentStack<Scalar>> svd(stack);
  const auto& s = svd.singularValues();
  for (Eigen::Index i = 0; i < s.size() && i < 3; ++i) sv[i] = s[i];
  return sv;
}

/// Classifies the effective rank from singular-value ratios. Ratios that fall
/// between the two tolerances are reported as the lower class and flagged.
template <typename Scalar>
RankReport<Scalar> classify_rank(const TangentStack<Scalar>& stack,
                                 RankTolerances tol = {}) {
  if (stack.rows() < 1) {
    throw Error(ErrorCode::EmptyInput, "classify_rank: empty tangent stack");
  }
  RankReport<Scalar> report;
  report.singular_values = stack_singular_values(stack);
  const Scalar s1 = report.singular_values[0];
  if (!(s1 > Scalar(0))) {
    throw Error(ErrorCode::EmptyInput, "classify_rank: zero tangent stack");
  }
  const Scalar r2 = report.singular_values[1] / s1;
  const Scalar r3 = report.singular_values[2] / s1;
  const Scalar lo(tol.lo);
  const Scalar hi(tol.hi);

  if (r3 > hi) {
    report.rank = RankClass::FullSpace;
    return report;
  }
  report.ambiguous = r3 > lo;
  if (r2 > hi) {
    report.rank = RankClass::TangentPlane;
  } else {
    report.rank = RankClass::Line;
    if (r2 > lo) report.ambiguous = true;
  }
  return report;
}

/// Returns v with its first non-negligible component made positive.
template <typename Scalar>
Vec3<Scalar> canonical_sign(Vec3<Scalar> v) {
  using std::abs;
  for (int i = 0; i < 3; ++i) {
    if (abs(v[i]) > Scalar(1e-12)) {
      if (v[i] < Scalar(0)) v = -v;
      break;
    }
  }
  return v;
}

/// Unit normal spanning the null space of a rank-2 stack, sign-canonicalised.
template <typename Scalar>
Vec3<Scalar> normal_from_tangents(const TangentStack<Scalar>& stack,
                                  RankTolerances tol = {}) {
  const auto report = classify_rank(stack, tol);
  if (report.rank != RankClass::TangentPlane) {
    throw Error(ErrorCode::DegenerateNormal,
                std::string("normal_from_tangents: stack has rank class ") +
                    to_string(report.rank));
  }
  Eigen::JacobiSVD<TangentStack<Scalar>> svd(stack, Eigen::ComputeFullV);
  Vec3<Scalar> n = svd.matrixV().col(2);
  return canonical_sign<Scalar>(n.normalized());
}

template <typename Scalar>
struct Normalization {
  Vec3<Scalar> offset = Vec3<Scalar>::Zero();
  Scalar scale = Scalar(1);
  Scalar scale_ratio = Scalar(1);

  Vec3<Scalar> to_normalized(const Vec3<Scalar>& x) const { return (x - offset) / scale; }
  Vec3<Scalar> to_world(const Vec3<Scalar>& x) const { return x * scale + offset; }
};

template <typename Scalar>
struct NormalizedRig {
  Normalization<Scalar> normalization;
  std::vector<Camera<Scalar>> cameras;
};

/// Recentres the rig on the point closest (least squares) to every optical
/// axis and rescales so the farthest camera sits at distance `scale_ratio`.
template <typename Scalar>
NormalizedRig<Scalar> normalize_cameras(std::span<const Camera<Scalar>> cameras,
                                        Scalar scale_ratio) {
  if (cameras.size() < 2) {
    throw Error(ErrorCode::DegenerateRig, "normalize_cameras: need at least two cameras");
  }
  if (!(scale_ratio > Scalar(0))) {
    throw Error(ErrorCode::InvalidSpec, "normalize_cameras: scale ratio must be positive");
  }
  Mat3<Scalar> A = Mat3<Scalar>::Zero();
  Vec3<Scalar> b = Vec3<Scalar>::Zero();
  for (const auto& cam : cameras) {
    const Vec3<Scalar> z = cam.pose.optical_axis();
    const Mat3<Scalar> Z = Mat3<Scalar>::Identity() - z * z.transpose();
    A += Z;
    b += Z * cam.center();
  }
  // A is symmetric PSD; its smallest eigenvalue vanishes iff all axes share
  // one direction.
  Eigen::SelfAdjointEigenSolver<Mat3<Scalar>> eig(A);
  const Scalar lambda_min = eig.eigenvalues()[0];
  if (!(lambda_min > Scalar(1e-9) * Scalar(cameras.size()))) {
    throw Error(ErrorCode::DegenerateRig,
                "normalize_cameras: optical axes are parallel, offset is not unique");
  }
  const Mat3<Scalar> AtA = A.transpose() * A;
  const Vec3<Scalar> offset = AtA.ldlt().solve(A.transpose() * b);

  Scalar max_dist(0);
  for (const auto& cam : cameras) {
    using std::max;
    max_dist = max(max_dist, Scalar((cam.center() - offset).norm()));
  }

  NormalizedRig<Scalar> out;
  out.normalization.offset = offset;
  out.normalization.scale = max_dist / scale_ratio;
  out.normalization.scale_ratio = scale_ratio;
  out.cameras.reserve(cameras.size());
  for (const auto& cam : cameras) {
    Camera<Scalar> c = cam;
    const Vec3<Scalar> center = out.normalization.to_normalized(cam.center());
    c.pose.t = -c.pose.R * center;
    out.cameras.push_back(c);
  }
  return out;
}

}  // namespace mvas
