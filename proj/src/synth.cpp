#include "mvas/synth.hpp"

#include "json.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

namespace mvas {

namespace {

using json = nlohmann::json;

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};

Vec3d on_sphere(double radius, double azimuth, double elevation) {
  return radius * Vec3d(std::cos(elevation) * std::cos(azimuth),
                        std::cos(elevation) * std::sin(azimuth), std::sin(elevation));
}

Camerad aimed(const CameraIntrinsics<double>& K, const Vec3d& eye, const Vec3d& target) {
  Camerad c;
  c.intrinsics = K;
  c.pose = look_at<double>(eye, target, Vec3d::UnitZ());
  return c;
}

json vec_json(const Vec3d& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3d vec_from(const json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 3) throw Error(ErrorCode::InvalidSpec, "shape: expected a 3-vector");
  return {v[0], v[1], v[2]};
}

}  // namespace

const char* to_string(RigKind kind) {
  switch (kind) {
    case RigKind::GenericRing: return "generic-ring";
    case RigKind::TwoView: return "two-view";
    case RigKind::ParallelAxes: return "parallel-axes";
    case RigKind::CoplanarAxes: return "coplanar-axes";
  }
  return "unknown";
}

RigKind parse_rig_kind(const std::string& name) {
  for (const RigKind k : {RigKind::GenericRing, RigKind::TwoView, RigKind::ParallelAxes,
                          RigKind::CoplanarAxes}) {
    if (name == to_string(k)) return k;
  }
  throw Error(ErrorCode::InvalidSpec, "unknown rig kind '" + name + "'");
}

const char* to_string(AmbiguityKind kind) {
  switch (kind) {
    case AmbiguityKind::Exact: return "exact";
    case AmbiguityKind::PiRandom: return "pi";
    case AmbiguityKind::HalfPiRandom: return "half-pi";
  }
  return "unknown";
}

AmbiguityKind parse_ambiguity(const std::string& name) {
  for (const AmbiguityKind k :
       {AmbiguityKind::Exact, AmbiguityKind::PiRandom, AmbiguityKind::HalfPiRandom}) {
    if (name == to_string(k)) return k;
  }
  throw Error(ErrorCode::InvalidSpec, "unknown ambiguity mode '" + name + "'");
}

std::vector<Camerad> make_rig(const RigSpec& spec) {
  if (spec.count < 1) throw Error(ErrorCode::InvalidSpec, "rig: count must be >= 1");
  if (spec.kind == RigKind::TwoView && spec.count != 2) {
    throw Error(ErrorCode::InvalidSpec,
                "rig: two-view needs exactly 2 cameras, got " + std::to_string(spec.count));
  }
  if (spec.width < 1 || spec.height < 1 || !(spec.radius > 0.0) || !(spec.fov_deg > 0.0) ||
      !(spec.fov_deg < 180.0)) {
    throw Error(ErrorCode::InvalidSpec, "rig: bad resolution, radius or field of view");
  }
  if (spec.elevations.empty()) throw Error(ErrorCode::InvalidSpec, "rig: no elevations given");
  for (const double e : spec.elevations) {
    if (!(std::abs(e) < 1.5)) throw Error(ErrorCode::InvalidSpec, "rig: elevation too close to a pole");
  }

  CameraIntrinsics<double> K;
  K.width = spec.width;
  K.height = spec.height;
  K.fx = K.fy = 0.5 * spec.width / std::tan(0.5 * spec.fov_deg * std::numbers::pi / 180.0);
  K.cx = 0.5 * (spec.width - 1);
  K.cy = 0.5 * (spec.height - 1);

  const double two_pi = 2.0 * std::numbers::pi;
  const auto elevation = [&](int i) {
    return spec.elevations[static_cast<std::size_t>(i) % spec.elevations.size()];
  };
  std::vector<Camerad> cams;
  switch (spec.kind) {
    case RigKind::GenericRing:
      for (int i = 0; i < spec.count; ++i) {
        const Vec3d eye = spec.target + on_sphere(spec.radius, two_pi * i / spec.count, elevation(i));
        cams.push_back(aimed(K, eye, spec.target));
      }
      break;
    case RigKind::TwoView:
      for (int i = 0; i < 2; ++i) {
        const Vec3d eye =
            spec.target + on_sphere(spec.radius, 0.5 * std::numbers::pi * i, elevation(0));
        cams.push_back(aimed(K, eye, spec.target));
      }
      break;
    case RigKind::ParallelAxes: {
      const Camerad base = aimed(K, spec.target + on_sphere(spec.radius, 0.0, elevation(0)), spec.target);
      const Vec3d x_axis = base.pose.x_axis();
      const Vec3d y_axis = base.pose.y_axis();
      for (int i = 0; i < spec.count; ++i) {
        Camerad c = base;
        if (spec.count > 1) {
          const double a = two_pi * i / spec.count;
          const Vec3d center = base.center() + spec.spread * (std::cos(a) * x_axis + std::sin(a) * y_axis);
          c.pose.t = -c.pose.R * center;
        }
        cams.push_back(c);
      }
      break;
    }
    case RigKind::CoplanarAxes:
      for (int i = 0; i < spec.count; ++i) {
        const Vec3d eye = spec.target + on_sphere(spec.radius, two_pi * i / spec.count, 0.0);
        cams.push_back(aimed(K, eye, spec.target));
      }
      break;
  }
  return cams;
}

SyntheticView render_view(const AnalyticShape& shape, const Camerad& camera,
                          const AmbiguityMode& mode, std::uint64_t view_index) {
  validate(shape);
  if (!(mode.probability >= 0.0 && mode.probability <= 1.0) || !(mode.noise_sigma >= 0.0)) {
    throw Error(ErrorCode::InvalidSpec, "ambiguity: probability must be in [0,1], sigma >= 0");
  }
  const Vec3d center = camera.center();
  if (analytic_sdf(shape, center).value <= 0.0) {
    throw Error(ErrorCode::Render, "render_view: camera centre is inside the shape");
  }

  const int w = camera.intrinsics.width;
  const int h = camera.intrinsics.height;
  SyntheticView view;
  view.camera = camera;
  view.azimuth = AzimuthMap(w, h, AzimuthMap::invalid());
  view.mask = SilhouetteMask(w, h, 0);
  view.normals = NormalMap(w, h, invalid_normal());
  view.depth = DepthMap(w, h, std::numeric_limits<double>::quiet_NaN());

  std::mt19937_64 rng(mix_seed(mode.seed ^ mix_seed(view_index + 1)));
  std::bernoulli_distribution flip(mode.probability);
  std::normal_distribution<double> noise(0.0, mode.noise_sigma > 0.0 ? mode.noise_sigma : 1.0);
  const double inf = std::numeric_limits<double>::infinity();

  for (int row = 0; row < h; ++row) {
    for (int col = 0; col < w; ++col) {
      const Vec3d dir = camera.ray_direction(col, row);
      const auto t = analytic_intersect(shape, center, dir, 0.0, inf);
      if (!t) continue;
      const Vec3d x = center + *t * dir;
      const Vec3d n = analytic_sdf(shape, x).gradient.normalized();
      view.mask(col, row) = 1;
      view.normals(col, row) = n;
      view.depth(col, row) = *t;
      double phi;
      try {
        phi = azimuth_of_normal(camera.pose, n);
      } catch (const Error&) {
        continue;  // undefined azimuth stays invalid inside the mask
      }
      if (mode.kind != AmbiguityKind::Exact && flip(rng)) {
        phi += mode.kind == AmbiguityKind::PiRandom ? std::numbers::pi : 0.5 * std::numbers::pi;
      }
      if (mode.noise_sigma > 0.0) phi += noise(rng);
      view.azimuth(col, row) = wrap_two_pi(phi);
    }
  }
  return view;
}

std::vector<SyntheticView> render_views(const AnalyticShape& shape,
                                        std::span<const Camerad> cameras,
                                        const AmbiguityMode& mode) {
  std::vector<SyntheticView> views;
  views.reserve(cameras.size());
  for (std::size_t i = 0; i < cameras.size(); ++i) views.push_back(render_view(shape, cameras[i], mode, i));
  return views;
}

Dataset to_dataset(const std::vector<SyntheticView>& views, const DatasetInfo& info) {
  Dataset d;
  d.info = info;
  for (const auto& v : views) {
    d.cameras.push_back(v.camera);
    d.views.push_back(ViewData{v.azimuth, v.mask, v.normals, v.depth});
  }
  return d;
}

std::optional<Vec3d> first_hit(const AnalyticShape& shape, const Camerad& camera, const Vec3d& x) {
  const Vec3d center = camera.center();
  const Vec3d dir = (x - center).normalized();
  const auto t = analytic_intersect(shape, center, dir, 0.0, std::numeric_limits<double>::infinity());
  if (!t) return std::nullopt;
  return Vec3d(center + *t * dir);
}

std::optional<double> observed_azimuth(const AnalyticShape& shape, const Camerad& camera,
                                       const Vec3d& x) {
  const auto hit = first_hit(shape, camera, x);
  if (!hit) return std::nullopt;
  const Vec3d n = analytic_sdf(shape, *hit).gradient.normalized();
  try {
    return azimuth_of_normal(camera.pose, n);
  } catch (const Error&) {
    return std::nullopt;
  }
}

Dataset export_dataset(const std::vector<SyntheticView>& views, const fs::path& dir,
                       const DatasetInfo& info) {
  if (views.empty()) throw Error(ErrorCode::EmptyInput, "export_dataset: no views");
  Dataset d = to_dataset(views, info);
  save_dataset(d, dir);
  return d;
}

std::string shape_to_json(const AnalyticShape& shape) {
  const json j = std::visit(
      Overloaded{[](const Sphere& s) {
                   return json{{"type", "sphere"}, {"center", vec_json(s.center)}, {"radius", s.radius}};
                 },
                 [](const Torus& t) {
                   return json{{"type", "torus"},
                               {"center", vec_json(t.center)},
                               {"axis", vec_json(t.axis)},
                               {"major_radius", t.major_radius},
                               {"minor_radius", t.minor_radius}};
                 },
                 [](const RoundedBox& b) {
                   return json{{"type", "box"},
                               {"center", vec_json(b.center)},
                               {"half_extents", vec_json(b.half_extents)},
                               {"corner_radius", b.corner_radius}};
                 }},
      shape);
  return j.dump();
}

AnalyticShape shape_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    const std::string type = j.at("type").get<std::string>();
    AnalyticShape shape;
    if (type == "sphere") {
      Sphere s;
      if (j.contains("center")) s.center = vec_from(j["center"]);
      s.radius = j.value("radius", s.radius);
      shape = s;
    } else if (type == "torus") {
      Torus t;
      if (j.contains("center")) t.center = vec_from(j["center"]);
      if (j.contains("axis")) t.axis = vec_from(j["axis"]);
      t.major_radius = j.value("major_radius", t.major_radius);
      t.minor_radius = j.value("minor_radius", t.minor_radius);
      shape = t;
    } else if (type == "box") {
      RoundedBox b;
      if (j.contains("center")) b.center = vec_from(j["center"]);
      if (j.contains("half_extents")) b.half_extents = vec_from(j["half_extents"]);
      b.corner_radius = j.value("corner_radius", b.corner_radius);
      shape = b;
    } else {
      throw Error(ErrorCode::InvalidSpec, "shape: unknown type '" + type + "'");
    }
    validate(shape);
    return shape;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidSpec, std::string("shape: ") + e.what());
  }
}

AnalyticShape preset_shape(const std::string& name) {
  if (name == "sphere") return Sphere{};
  if (name == "torus") return Torus{};
  if (name == "box") return RoundedBox{};
  throw Error(ErrorCode::InvalidSpec, "unknown shape '" + name + "' (sphere, torus, box)");
}

}  // namespace mvas
