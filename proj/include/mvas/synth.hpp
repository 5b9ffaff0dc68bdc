#pragma once

// Synthetic ground truth: camera rigs (including the degenerate layouts),
// azimuth maps rendered from analytic shapes, and the ambiguity models that
// emulate what photometric stereo and polarization cameras report.

#include "mvas/dataset.hpp"
#include "mvas/field.hpp"
#include "mvas/geom.hpp"
#include "mvas/image.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mvas {

enum class RigKind { GenericRing, TwoView, ParallelAxes, CoplanarAxes };

const char* to_string(RigKind kind);
RigKind parse_rig_kind(const std::string& name);

struct RigSpec {
  RigKind kind = RigKind::GenericRing;
  int count = 12;
  /// Distance of the camera centres from the target.
  double radius = 2.5;
  /// Elevations in radians, cycled over the cameras. GenericRing alternates
  /// so that no two optical axes are parallel or all coplanar; CoplanarAxes
  /// ignores this and keeps every camera at elevation 0.
  std::vector<double> elevations{0.5, -0.3};
  Vec3d target = Vec3d::Zero();
  int width = 64;
  int height = 64;
  /// Horizontal field of view in degrees.
  double fov_deg = 36.0;
  /// ParallelAxes: offset of each centre from the base eye, in world units.
  double spread = 0.15;
};

/// Throws InvalidSpec for count < 1, TwoView with count != 2, or bad sizes.
std::vector<Camerad> make_rig(const RigSpec& spec);

enum class AmbiguityKind { Exact, PiRandom, HalfPiRandom };

const char* to_string(AmbiguityKind kind);
AmbiguityKind parse_ambiguity(const std::string& name);

struct AmbiguityMode {
  AmbiguityKind kind = AmbiguityKind::Exact;
  /// Per-pixel probability of the offset (pi or +pi/2).
  double probability = 0.5;
  /// Standard deviation of zero-mean Gaussian azimuth noise, radians.
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
};

struct SyntheticView {
  Camerad camera;
  AzimuthMap azimuth;
  SilhouetteMask mask;
  NormalMap normals;
  DepthMap depth;
};

/// Renders one view. `view_index` decorrelates the per-pixel random streams
/// of different views that share a seed. Throws Render if the camera centre
/// lies inside the shape.
SyntheticView render_view(const AnalyticShape& shape, const Camerad& camera,
                          const AmbiguityMode& mode, std::uint64_t view_index = 0);

/// Renders every camera, view i with view_index i.
std::vector<SyntheticView> render_views(const AnalyticShape& shape,
                                        std::span<const Camerad> cameras,
                                        const AmbiguityMode& mode);

/// In-memory dataset with ground-truth normals and depth.
Dataset to_dataset(const std::vector<SyntheticView>& views, const DatasetInfo& info = {});

/// First surface point on the ray from the camera centre toward x.
std::optional<Vec3d> first_hit(const AnalyticShape& shape, const Camerad& camera, const Vec3d& x);

/// Azimuth the exact renderer would report for the surface point seen along
/// the ray from the camera centre through x (not through a pixel centre), or
/// nothing if the ray misses or the azimuth is undefined.
std::optional<double> observed_azimuth(const AnalyticShape& shape, const Camerad& camera,
                                       const Vec3d& x);

/// Writes cameras.json, per-view map files and manifest.json into `dir`.
/// Throws EmptyInput for no views and Io if the directory is not writable.
Dataset export_dataset(const std::vector<SyntheticView>& views, const fs::path& dir,
                       const DatasetInfo& info);

std::string shape_to_json(const AnalyticShape& shape);
AnalyticShape shape_from_json(const std::string& text);
/// "sphere", "torus" or "box" with default dimensions.
AnalyticShape preset_shape(const std::string& name);

}  // namespace mvas
