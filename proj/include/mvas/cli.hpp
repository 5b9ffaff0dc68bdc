#pragma once

// The mvas command line: synth, normalize-cameras, train, reconstruct, eval
// and tsc-analyze. Commands run in-process so tests can drive them directly.

#include "mvas/dataset.hpp"
#include "mvas/geom.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace mvas::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInput = 2;
inline constexpr int kExitNumeric = 3;

/// Exit status for a library error: 3 for numeric failures, 2 otherwise.
int exit_code(const Error& e);

/// Runs one command line; `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// ---------------------------------------------------------------------------
// tsc-analyze

enum class VisibilitySource { Depth, None };

struct TscQueryOptions {
  VisibilitySource visibility = VisibilitySource::Depth;
  /// A point counts as seen when its distance from the camera is within
  /// depth * (1 + tolerance) of the depth map.
  double depth_tolerance = 0.02;
  RankTolerances rank;
};

struct TscRow {
  Vec3d x = Vec3d::Zero();
  int views = 0;
  Vec3d singular_values = Vec3d::Zero();
  std::optional<RankClass> rank;  // empty when no view sees the point
  bool ambiguous = false;
  std::optional<Vec3d> normal;    // set for TangentPlane rows
};

/// Tangent of view `view` at world point x from the bilinearly interpolated
/// (doubled-angle) azimuth of the four pixels around its projection. Empty
/// when any of them is off the mask or invalid, or when the depth test says
/// x is hidden.
std::optional<Vec3d> observed_tangent(const Dataset& data, std::size_t view, const Vec3d& x,
                                      const TscQueryOptions& options);

std::vector<TscRow> tsc_analyze(const Dataset& data, const Points3d& points,
                                const TscQueryOptions& options);

/// Regular n^3 grid over [-half, half]^3.
Points3d grid_points(int n, double half);

/// Whitespace-separated x y z per line; '#' starts a comment.
Points3d read_points(const fs::path& path);

}  // namespace mvas::cli
