#include "doctest.h"

#include "mvas/field.hpp"
#include "mvas/geom.hpp"
#include "test_util.hpp"

#include <boost/multiprecision/cpp_bin_float.hpp>

#include <array>
#include <memory>
#include <numbers>
#include <vector>

using namespace mvas;
using mvas::testing::angle_between;
using mvas::testing::make_camera;
using mvas::testing::random_rotation;
using mvas::testing::random_unit;
using mvas::testing::uniform;

namespace {

constexpr double kPi = std::numbers::pi;

CameraPose<double> identity_pose() { return {}; }

Camerad basic_camera() {
  Camerad cam;
  cam.intrinsics = {100.0, 100.0, 50.0, 50.0, 101, 101};
  return cam;
}

}  // namespace

TEST_CASE("project: pinhole examples") {
  const Camerad cam = basic_camera();
  auto p = project(cam, Vec3d(0, 0, 2));
  CHECK(p.u == doctest::Approx(50.0));
  CHECK(p.v == doctest::Approx(50.0));
  CHECK(p.depth == doctest::Approx(2.0));

  p = project(cam, Vec3d(1, 0, 2));
  CHECK(p.u == doctest::Approx(100.0));
  CHECK(p.v == doctest::Approx(50.0));

  try {
    project(cam, Vec3d(0, 0, -1));
    FAIL("expected behind-camera error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::BehindCamera);
  }
}

TEST_CASE("project and ray_direction are inverse") {
  std::mt19937_64 rng(3);
  const Camerad cam = make_camera(Vec3d(2.0, -1.0, 0.5), Vec3d(0.1, 0.2, 0.0));
  for (int i = 0; i < 50; ++i) {
    const Vec3d x = Vec3d(uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5));
    const auto p = project(cam, x);
    const Vec3d d = cam.ray_direction(p.u, p.v);
    const Vec3d back = x - cam.center();
    CHECK(angle_between(d, back) < 1e-12);
  }
}

TEST_CASE("azimuth_of_normal: examples and undefined azimuth") {
  const auto pose = identity_pose();
  CHECK(azimuth_of_normal(pose, Vec3d(1, 0, 0)) == doctest::Approx(0.0));
  CHECK(azimuth_of_normal(pose, Vec3d(0, 1, 0)) == doctest::Approx(kPi / 2));
  CHECK(azimuth_of_normal(pose, Vec3d(0, -1, 0)) == doctest::Approx(3 * kPi / 2));
  try {
    azimuth_of_normal(pose, Vec3d(0, 0, 1));
    FAIL("expected undefined azimuth");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UndefinedAzimuth);
  }
}

TEST_CASE("azimuth depends only on the camera-frame x,y components") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 100; ++i) {
    CameraPose<double> pose;
    pose.R = random_rotation(rng);
    const Vec3d nc = random_unit(rng);
    Vec3d flipped = nc;
    flipped.z() = -flipped.z();
    const double a = azimuth_of_normal(pose, Vec3d(pose.R.transpose() * nc));
    const double b = azimuth_of_normal(pose, Vec3d(pose.R.transpose() * flipped));
    CHECK(a == doctest::Approx(b).epsilon(1e-12));
    CHECK(a >= 0.0);
    CHECK(a < 2 * kPi);
  }
}

TEST_CASE("azimuth_to_tangent and tangent_half_pi examples") {
  const auto pose = identity_pose();
  CHECK((azimuth_to_tangent(pose, 0.0) - Vec3d(0, -1, 0)).norm() < 1e-15);
  CHECK((azimuth_to_tangent(pose, kPi / 2) - Vec3d(1, 0, 0)).norm() < 1e-15);
  CHECK((tangent_half_pi(pose, 0.0) - Vec3d(-1, 0, 0)).norm() < 1e-15);
  CHECK((tangent_half_pi(pose, kPi / 2) - Vec3d(0, -1, 0)).norm() < 1e-15);
}

TEST_CASE("tangent algebra properties on random rotations") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 10000; ++i) {
    CameraPose<double> pose;
    pose.R = random_rotation(rng);
    const double phi = uniform(rng, 0.0, 2 * kPi);
    const Vec3d t = azimuth_to_tangent(pose, phi);
    const Vec3d tp = tangent_half_pi(pose, phi);
    REQUIRE(std::abs(t.norm() - 1.0) < 1e-9);
    REQUIRE(std::abs(tp.norm() - 1.0) < 1e-9);
    REQUIRE((azimuth_to_tangent(pose, phi + kPi) + t).norm() < 1e-12);
    REQUIRE(std::abs((pose.R * t).z()) < 1e-9);
    REQUIRE(std::abs(tp.dot(t)) < 1e-12);
  }
}

TEST_CASE("lifted tangent is orthogonal to the normal and parallel to n x r3") {
  std::mt19937_64 rng(13);
  int checked = 0;
  while (checked < 2000) {
    CameraPose<double> pose;
    pose.R = random_rotation(rng);
    const Vec3d n = random_unit(rng);
    if (std::abs(pose.optical_axis().dot(n)) >= 0.99) continue;
    const double phi = azimuth_of_normal(pose, n);
    const Vec3d t = azimuth_to_tangent(pose, phi);
    REQUIRE(std::abs(t.dot(n)) < 1e-9);
    const Vec3d cross = n.cross(pose.optical_axis()).normalized();
    const double ang = std::min(angle_between(t, cross), angle_between(-t, cross));
    REQUIRE(ang < 1e-6);
    ++checked;
  }
}

TEST_CASE("accumulate_tsc: examples, trace and sign invariance") {
  std::vector<Vec3d> t1 = {Vec3d(1, 0, 0)};
  std::array<bool, 1> v1 = {true};
  auto acc = accumulate_tsc<double>(t1, v1);
  CHECK(acc.count == 1);
  CHECK((acc.M - Vec3d(1, 0, 0).asDiagonal().toDenseMatrix()).norm() == 0.0);

  std::vector<Vec3d> t2 = {Vec3d(1, 0, 0), Vec3d(0, 1, 0)};
  std::array<bool, 2> v2 = {true, true};
  acc = accumulate_tsc<double>(t2, v2);
  Mat3d expected = Mat3d::Zero();
  expected(0, 0) = expected(1, 1) = 0.5;
  CHECK((acc.averaged() - expected).norm() == 0.0);

  std::array<bool, 2> none = {false, false};
  acc = accumulate_tsc<double>(t2, none);
  CHECK(acc.empty());
  CHECK(acc.averaged().isZero(0.0));

  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const int C = 1 + static_cast<int>(rng() % 12);
    std::vector<Vec3d> ts;
    std::vector<Vec3d> flipped;
    auto vis = std::make_unique<bool[]>(static_cast<std::size_t>(C));
    for (int i = 0; i < C; ++i) {
      ts.push_back(random_unit(rng));
      flipped.push_back(rng() % 2 ? Vec3d(-ts.back()) : ts.back());
      vis[static_cast<std::size_t>(i)] = rng() % 4 != 0;
    }
    const std::span<const bool> vspan(vis.get(), static_cast<std::size_t>(C));
    const auto a = accumulate_tsc<double>(ts, vspan);
    const auto b = accumulate_tsc<double>(flipped, vspan);
    REQUIRE(a.count == b.count);
    REQUIRE(a.M == b.M);
    REQUIRE((a.M - a.M.transpose()).norm() < 1e-12);
    if (!a.empty()) REQUIRE(std::abs(a.averaged().trace() - 1.0) < 1e-9);
  }
}

TEST_CASE("classify_rank and normal_from_tangents: small stacks") {
  TangentStack<double> plane(2, 3);
  plane << 1, 0, 0, 0, 1, 0;
  CHECK(classify_rank(plane).rank == RankClass::TangentPlane);
  CHECK((normal_from_tangents(plane) - Vec3d(0, 0, 1)).norm() < 1e-15);

  TangentStack<double> line(2, 3);
  line << 1, 0, 0, -1, 0, 0;
  CHECK(classify_rank(line).rank == RankClass::Line);
  try {
    normal_from_tangents(line);
    FAIL("expected degenerate normal");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DegenerateNormal);
  }

  TangentStack<double> empty(0, 3);
  CHECK_THROWS_AS(classify_rank(empty), Error);

  TangentStack<double> ambiguous(3, 3);
  ambiguous << 1, 0, 0, 0, 1, 0, 0, 0, 1e-4;
  const auto r = classify_rank(ambiguous);
  CHECK(r.rank == RankClass::TangentPlane);
  CHECK(r.ambiguous);
}

namespace {

// Tangents a camera would report for a point x: intersect the ray from the
// camera centre through x with the sphere and lift the azimuth of the normal
// found there.
std::optional<Vec3d> observed_tangent(const Sphere& s, const Camerad& cam, const Vec3d& x) {
  const Vec3d o = cam.center();
  const Vec3d d = (x - o).normalized();
  const auto t = analytic_intersect(s, o, d, 0.0, 1e9);
  if (!t) return std::nullopt;
  const Vec3d n = analytic_sdf(s, o + *t * d).gradient;
  const double phi = azimuth_of_normal(cam.pose, n);
  return azimuth_to_tangent(cam.pose, phi);
}

std::vector<Camerad> generic_cameras(int count) {
  std::vector<Camerad> cams;
  for (int i = 0; i < count; ++i) {
    const double az = 2 * kPi * i / count + 0.3;
    const double el = i % 2 ? 0.5 : -0.3;
    const Vec3d eye = 3.0 * Vec3d(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
    cams.push_back(make_camera(eye, Vec3d::Zero()));
  }
  return cams;
}

}  // namespace

TEST_CASE("classify_rank on surface and off-surface points") {
  const Sphere sphere{Vec3d(0.15, -0.1, 0.05), 0.5};
  const auto cams = generic_cameras(4);
  std::mt19937_64 rng(21);

  SUBCASE("parallel optical axes give a line") {
    std::vector<Vec3d> rows;
    const Vec3d n = random_unit(rng);
    for (int i = 0; i < 4; ++i) {
      CameraPose<double> pose;
      pose.t = Vec3d(0.3 * i, -0.2 * i, 3.0);
      rows.push_back(azimuth_to_tangent(pose, azimuth_of_normal(pose, n)));
    }
    CHECK(classify_rank(make_stack<double>(rows)).rank == RankClass::Line);
  }

  SUBCASE("true surface point gives the tangent plane and its normal") {
    for (int trial = 0; trial < 50; ++trial) {
      const Vec3d n = random_unit(rng);
      std::vector<Vec3d> rows;
      for (const auto& cam : generic_cameras(3)) {
        if (std::abs(cam.pose.optical_axis().dot(n)) > 0.999) continue;
        rows.push_back(azimuth_to_tangent(cam.pose, azimuth_of_normal(cam.pose, n)));
      }
      if (rows.size() < 3) continue;
      const auto stack = make_stack<double>(rows);
      const auto r = classify_rank(stack);
      REQUIRE(r.rank == RankClass::TangentPlane);
      REQUIRE(r.singular_values[2] / r.singular_values[0] < 1e-8);
    }
  }

  SUBCASE("sphere point seen by four views recovers the analytic normal") {
    int done = 0;
    while (done < 20) {
      const Vec3d n = random_unit(rng);
      const Vec3d x = sphere.center + sphere.radius * n;
      std::vector<Vec3d> rows;
      for (const auto& cam : cams) {
        if ((x - cam.center()).dot(n) >= 0.0) continue;  // back-facing
        if (auto t = observed_tangent(sphere, cam, x)) rows.push_back(*t);
      }
      if (rows.size() < 3) continue;
      const Vec3d est = normal_from_tangents(make_stack<double>(rows));
      REQUIRE(std::min(angle_between(est, n), angle_between(-est, n)) < 1e-4);
      ++done;
    }
  }

  SUBCASE("off-surface correspondences span the full space") {
    int full = 0;
    const int trials = 200;
    for (int i = 0; i < trials; ++i) {
      const Vec3d x = sphere.center + 0.45 * std::cbrt(uniform(rng, 0, 1)) * random_unit(rng);
      std::vector<Vec3d> rows;
      for (const auto& cam : cams) {
        if (auto t = observed_tangent(sphere, cam, x)) rows.push_back(*t);
      }
      full += classify_rank(make_stack<double>(rows)).rank == RankClass::FullSpace;
    }
    CHECK(full >= 0.97 * trials);
  }
}

namespace {

using Quad = boost::multiprecision::cpp_bin_float_quad;

// Singular values of a C x 3 stack from the closed-form eigenvalues of its
// Gram matrix, evaluated in 113-bit arithmetic.
std::array<Quad, 3> quad_singular_values(const TangentStack<double>& stack) {
  Quad G[3][3] = {};
  for (Eigen::Index r = 0; r < stack.rows(); ++r) {
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) G[i][j] += Quad(stack(r, i)) * Quad(stack(r, j));
    }
  }
  const Quad p1 = G[0][1] * G[0][1] + G[0][2] * G[0][2] + G[1][2] * G[1][2];
  const Quad q = (G[0][0] + G[1][1] + G[2][2]) / 3;
  std::array<Quad, 3> eig;
  if (p1 == 0) {
    eig = {G[0][0], G[1][1], G[2][2]};
  } else {
    const Quad p2 = (G[0][0] - q) * (G[0][0] - q) + (G[1][1] - q) * (G[1][1] - q) +
                    (G[2][2] - q) * (G[2][2] - q) + 2 * p1;
    const Quad p = sqrt(p2 / 6);
    Quad B[3][3];
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) B[i][j] = (G[i][j] - (i == j ? q : Quad(0))) / p;
    Quad detB = B[0][0] * (B[1][1] * B[2][2] - B[1][2] * B[2][1]) -
                B[0][1] * (B[1][0] * B[2][2] - B[1][2] * B[2][0]) +
                B[0][2] * (B[1][0] * B[2][1] - B[1][1] * B[2][0]);
    Quad r = detB / 2;
    if (r < -1) r = -1;
    if (r > 1) r = 1;
    const Quad phi = acos(r) / 3;
    const Quad pi = boost::math::constants::pi<Quad>();
    eig[0] = q + 2 * p * cos(phi);
    eig[2] = q + 2 * p * cos(phi + 2 * pi / 3);
    eig[1] = 3 * q - eig[0] - eig[2];
  }
  std::sort(eig.begin(), eig.end(), [](const Quad& a, const Quad& b) { return a > b; });
  std::array<Quad, 3> sv;
  for (int i = 0; i < 3; ++i) sv[static_cast<std::size_t>(i)] = eig[static_cast<std::size_t>(i)] > 0 ? sqrt(eig[static_cast<std::size_t>(i)]) : Quad(0);
  return sv;
}

int quad_rank(const TangentStack<double>& stack, double tol) {
  const auto sv = quad_singular_values(stack);
  int rank = 1;
  for (int i = 1; i < 3; ++i) rank += sv[static_cast<std::size_t>(i)] / sv[0] > tol ? 1 : 0;
  return rank;
}

}  // namespace

TEST_CASE("classify_rank agrees with an extended-precision rank oracle") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 1000; ++trial) {
    const int target = 1 + trial % 3;
    const int C = std::max(target, 2 + static_cast<int>(rng() % 10));
    const Vec3d u = random_unit(rng);
    Vec3d v = random_unit(rng);
    v = (v - v.dot(u) * u).normalized();
    TangentStack<double> stack(C, 3);
    for (int i = 0; i < C; ++i) {
      Vec3d row;
      if (target == 1) {
        row = (rng() % 2 ? 1.0 : -1.0) * u;
      } else if (target == 2) {
        const double a = uniform(rng, 0, 2 * kPi);
        row = std::cos(a) * u + std::sin(a) * v;
      } else {
        row = random_unit(rng);
      }
      stack.row(i) = row.transpose();
    }
    // force well-separated spectra so the expected class is unambiguous
    if (target >= 2) stack.row(0) = u.transpose(), stack.row(1) = v.transpose();
    if (target == 3) stack.row(2) = u.cross(v).transpose();

    const auto report = classify_rank(stack);
    const int oracle = quad_rank(stack, 1e-6);
    REQUIRE(static_cast<int>(report.rank) == oracle);
    REQUIRE(oracle == target);
    REQUIRE_FALSE(report.ambiguous);
  }
}

TEST_CASE("normalize_cameras") {
  SUBCASE("symmetric rig on the axes") {
    std::vector<Camerad> cams = {make_camera(Vec3d(2, 0, 0), Vec3d::Zero()),
                                 make_camera(Vec3d(-2, 0, 0), Vec3d::Zero()),
                                 make_camera(Vec3d(0, 2, 0), Vec3d::Zero())};
    const auto out = normalize_cameras<double>(cams, 10.0);
    CHECK(out.normalization.offset.norm() < 1e-12);
    CHECK(out.normalization.scale == doctest::Approx(0.2).epsilon(1e-12));
    for (std::size_t i = 0; i < cams.size(); ++i) {
      CHECK((out.cameras[i].center() - cams[i].center() / 0.2).norm() < 1e-12);
      CHECK(out.cameras[i].pose.R == cams[i].pose.R);
    }
  }

  SUBCASE("collinear optical axes are degenerate") {
    std::vector<Camerad> cams = {make_camera(Vec3d(2, 0, 0), Vec3d::Zero()),
                                 make_camera(Vec3d(-2, 0, 0), Vec3d::Zero())};
    try {
      normalize_cameras<double>(cams, 3.0);
      FAIL("expected degenerate rig");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::DegenerateRig);
    }
  }

  SUBCASE("ring around an offset target, and idempotence") {
    const Vec3d target(1, 1, 1);
    std::vector<Camerad> cams;
    for (int i = 0; i < 8; ++i) {
      const double a = 2 * kPi * i / 8;
      const double el = i % 2 ? 0.4 : -0.2;
      const Vec3d eye = target + 3.0 * Vec3d(std::cos(el) * std::cos(a), std::cos(el) * std::sin(a),
                                             std::sin(el));
      cams.push_back(make_camera(eye, target));
    }
    const auto out = normalize_cameras<double>(cams, 3.0);
    CHECK((out.normalization.offset - target).norm() < 1e-9);
    CHECK(std::abs(out.normalization.scale - 1.0) < 1e-9);

    const auto again = normalize_cameras<double>(out.cameras, 3.0);
    CHECK(again.normalization.offset.norm() < 1e-9);
    CHECK(std::abs(again.normalization.scale - 1.0) < 1e-9);
  }
}
