#include "mvas/field.hpp"

#include <unsupported/Eigen/Polynomials>

#include <algorithm>
#include <cmath>
#include <limits>

namespace mvas {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};

FieldEval sphere_sdf(const Sphere& s, const Vec3d& x) {
  const Vec3d d = x - s.center;
  const double r = d.norm();
  FieldEval out;
  out.value = r - s.radius;
  if (r > 0.0) {
    out.gradient = d / r;
  } else {
    out.gradient = Vec3d::UnitX();
    out.gradient_defined = false;
  }
  return out;
}

FieldEval torus_sdf(const Torus& t, const Vec3d& x) {
  const Vec3d a = t.axis.normalized();
  const Vec3d p = x - t.center;
  const double h = p.dot(a);
  const Vec3d q = p - h * a;
  const double rho = q.norm();
  FieldEval out;
  Vec3d radial;
  if (rho > 0.0) {
    radial = q / rho;
  } else {
    // on the symmetry axis every radial direction is equally close
    radial = a.unitOrthogonal();
    out.gradient_defined = false;
  }
  const Vec3d tube_center = t.major_radius * radial;
  const Vec3d d = p - tube_center;
  const double dn = d.norm();
  out.value = dn - t.minor_radius;
  if (dn > 0.0) {
    out.gradient = d / dn;
  } else {
    out.gradient = radial;
    out.gradient_defined = false;
  }
  return out;
}

FieldEval rounded_box_sdf(const RoundedBox& b, const Vec3d& x) {
  const Vec3d p = x - b.center;
  const Vec3d inner = b.half_extents - Vec3d::Constant(b.corner_radius);
  const Vec3d q = p.cwiseAbs() - inner;
  const Vec3d outside = q.cwiseMax(0.0);
  const double on = outside.norm();
  FieldEval out;
  Vec3d sign;
  for (int i = 0; i < 3; ++i) sign[i] = p[i] < 0.0 ? -1.0 : 1.0;
  if (on > 0.0) {
    out.value = on - b.corner_radius;
    out.gradient = sign.cwiseProduct(outside) / on;
  } else {
    Eigen::Index k = 0;
    const double m = q.maxCoeff(&k);
    out.value = m - b.corner_radius;
    out.gradient = Vec3d::Zero();
    out.gradient[k] = sign[k];
    int ties = 0;
    for (int i = 0; i < 3; ++i) ties += q[i] == m ? 1 : 0;
    out.gradient_defined = ties == 1;
  }
  return out;
}

std::optional<double> sphere_intersect(const Sphere& s, const Vec3d& o, const Vec3d& d,
                                       double t_min, double t_max) {
  const Vec3d oc = o - s.center;
  const double b = oc.dot(d);
  const double c = oc.squaredNorm() - s.radius * s.radius;
  const double disc = b * b - c;
  if (disc < 0.0) return std::nullopt;
  const double sq = std::sqrt(disc);
  // numerically stable pair of roots
  const double q = b > 0.0 ? -(b + sq) : -(b - sq);
  double t0 = q;
  double t1 = q != 0.0 ? c / q : -b;
  if (t0 > t1) std::swap(t0, t1);
  for (const double t : {t0, t1}) {
    if (t > t_min && t < t_max) return t;
  }
  return std::nullopt;
}

std::optional<double> torus_intersect(const Torus& tor, const Vec3d& o_world, const Vec3d& d_world,
                                      double t_min, double t_max) {
  const Vec3d a = tor.axis.normalized();
  const Vec3d o = o_world - tor.center;
  const Vec3d& d = d_world;
  const double R2 = tor.major_radius * tor.major_radius;
  const double r2 = tor.minor_radius * tor.minor_radius;
  const Vec3d o_perp = o - o.dot(a) * a;
  const Vec3d d_perp = d - d.dot(a) * a;
  const double dd = d.squaredNorm();
  const double od = o.dot(d);
  const double k = o.squaredNorm() + R2 - r2;
  // (|p|^2 + R^2 - r^2)^2 = 4 R^2 |p_perp|^2 with p = o + t d
  Eigen::Matrix<double, 5, 1> coeffs;  // ascending powers of t
  coeffs[4] = dd * dd;
  coeffs[3] = 4.0 * dd * od;
  coeffs[2] = 2.0 * dd * k + 4.0 * od * od - 4.0 * R2 * d_perp.squaredNorm();
  coeffs[1] = 4.0 * od * k - 8.0 * R2 * o_perp.dot(d_perp);
  coeffs[0] = k * k - 4.0 * R2 * o_perp.squaredNorm();

  Eigen::PolynomialSolver<double, 4> solver(coeffs);
  std::vector<double> roots;
  solver.realRoots(roots, 1e-6);

  auto poly = [&](double t) {
    return (((coeffs[4] * t + coeffs[3]) * t + coeffs[2]) * t + coeffs[1]) * t + coeffs[0];
  };
  auto dpoly = [&](double t) {
    return ((4.0 * coeffs[4] * t + 3.0 * coeffs[3]) * t + 2.0 * coeffs[2]) * t + coeffs[1];
  };
  double best = std::numeric_limits<double>::infinity();
  for (double t : roots) {
    for (int it = 0; it < 4; ++it) {
      const double dp = dpoly(t);
      if (dp == 0.0) break;
      t -= poly(t) / dp;
    }
    // reject spurious roots from the eigenvalue solver
    const FieldEval e = torus_sdf(tor, o_world + t * d);
    if (std::abs(e.value) > 1e-7) continue;
    if (t > t_min && t < t_max) best = std::min(best, t);
  }
  if (std::isinf(best)) return std::nullopt;
  return best;
}

// Shapes without a closed-form intersection are marched on their exact SDF
// and the final bracket is bisected.
std::optional<double> march_intersect(const AnalyticShape& shape, const Vec3d& o, const Vec3d& d,
                                      double t_min, double t_max) {
  double t = t_min;
  double f = analytic_sdf(shape, o + t * d).value;
  if (f <= 0.0) return std::nullopt;
  for (int i = 0; i < 1000 && t < t_max; ++i) {
    if (f < 1e-12) return t;
    const double step = std::max(f, 1e-9);
    const double tn = t + step;
    const double fn = analytic_sdf(shape, o + tn * d).value;
    if (fn < 0.0) {
      double lo = t;
      double hi = tn;
      for (int b = 0; b < 80; ++b) {
        const double mid = 0.5 * (lo + hi);
        (analytic_sdf(shape, o + mid * d).value > 0.0 ? lo : hi) = mid;
      }
      return 0.5 * (lo + hi);
    }
    t = tn;
    f = fn;
  }
  return std::nullopt;
}

}  // namespace

FieldEval analytic_sdf(const AnalyticShape& shape, const Vec3d& x) {
  return std::visit(Overloaded{[&](const Sphere& s) { return sphere_sdf(s, x); },
                               [&](const Torus& t) { return torus_sdf(t, x); },
                               [&](const RoundedBox& b) { return rounded_box_sdf(b, x); }},
                    shape);
}

std::optional<double> analytic_intersect(const AnalyticShape& shape, const Vec3d& origin,
                                         const Vec3d& dir, double t_min, double t_max) {
  return std::visit(
      Overloaded{
          [&](const Sphere& s) { return sphere_intersect(s, origin, dir, t_min, t_max); },
          [&](const Torus& t) { return torus_intersect(t, origin, dir, t_min, t_max); },
          [&](const RoundedBox&) { return march_intersect(shape, origin, dir, t_min, t_max); }},
      shape);
}

double bounding_radius(const AnalyticShape& shape) {
  return std::visit(
      Overloaded{[](const Sphere& s) { return s.center.norm() + s.radius; },
                 [](const Torus& t) { return t.center.norm() + t.major_radius + t.minor_radius; },
                 [](const RoundedBox& b) { return b.center.norm() + b.half_extents.norm(); }},
      shape);
}

void validate(const AnalyticShape& shape) {
  const bool ok = std::visit(
      Overloaded{[](const Sphere& s) { return s.radius > 0.0; },
                 [](const Torus& t) {
                   return t.minor_radius > 0.0 && t.major_radius > t.minor_radius &&
                          t.axis.norm() > 0.0;
                 },
                 [](const RoundedBox& b) {
                   return b.corner_radius >= 0.0 &&
                          (b.half_extents.array() > b.corner_radius).all();
                 }},
      shape);
  if (!ok) throw Error(ErrorCode::InvalidSpec, "analytic shape: invalid dimensions");
}

Eigen::RowVectorXd AnalyticField::values(const Points3d& x) const {
  Eigen::RowVectorXd v(x.cols());
  for (Eigen::Index i = 0; i < x.cols(); ++i) v[i] = analytic_sdf(shape_, x.col(i)).value;
  return v;
}

BatchEval AnalyticField::evaluate(const Points3d& x) const {
  BatchEval out;
  out.values.resize(x.cols());
  out.gradients.resize(3, x.cols());
  for (Eigen::Index i = 0; i < x.cols(); ++i) {
    const FieldEval e = analytic_sdf(shape_, x.col(i));
    out.values[i] = e.value;
    out.gradients.col(i) = e.gradient;
  }
  return out;
}

}  // namespace mvas
