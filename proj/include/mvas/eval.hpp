#pragma once

// Reconstruction quality: point-set Chamfer distance and F-score, normal
// angular error, marching-cubes extraction, and the visible-surface samples
// and normal maps the metrics are computed on.

#include "mvas/field.hpp"
#include "mvas/geom.hpp"
#include "mvas/image.hpp"
#include "mvas/io.hpp"
#include "mvas/tracing.hpp"

#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mvas {

/// Exact nearest-neighbour queries on a fixed point set.
class KdTree {
 public:
  explicit KdTree(Points3d points);

  /// Index and Euclidean distance of the closest point to q.
  std::pair<Eigen::Index, double> nearest(const Vec3d& q) const;
  const Points3d& points() const { return points_; }

 private:
  struct Node {
    int axis = -1;  // -1 for leaves
    double split = 0.0;
    int left = -1;
    int right = -1;
    int begin = 0;
    int end = 0;
  };

  int build(int begin, int end, int depth);
  void search(int node, const Vec3d& q, Eigen::Index& best, double& best_d2) const;

  Points3d points_;
  std::vector<int> index_;
  std::vector<Node> nodes_;
};

/// Distance from every point of `from` to its nearest neighbour in `to`.
Eigen::VectorXd nearest_distances(const Points3d& from, const Points3d& to);

/// Mean of the two directed mean nearest-neighbour distances.
/// Throws Metric for an empty set.
double chamfer(const Points3d& a, const Points3d& b);

struct FScore {
  double precision = 0.0;
  double recall = 0.0;
  double fscore = 0.0;
};

/// Throws Metric for an empty set or tau <= 0.
FScore fscore(const Points3d& a, const Points3d& b, double tau);

/// Mean angle in degrees between predicted and true normals over the pixels
/// where the mask is set and both normals are valid. Throws Metric on size
/// mismatch or when no pixel qualifies.
double normal_mae(const NormalMap& pred, const NormalMap& gt, const SilhouetteMask& mask);

/// Summed angle in degrees and pixel count behind normal_mae, for pooling
/// several views. Throws Metric on size mismatch only.
struct AngularErrors {
  double sum_deg = 0.0;
  long count = 0;
};
AngularErrors normal_errors(const NormalMap& pred, const NormalMap& gt, const SilhouetteMask& mask);

struct Metrics {
  double chamfer = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double fscore = 0.0;
  double mae_deg = 0.0;
  std::vector<double> view_mae_deg;  // NaN for a view without valid pixels
  /// Fraction of masked ground-truth pixels with a predicted normal.
  double coverage = 0.0;
};

std::string to_json(const Metrics& m);

// ---------------------------------------------------------------------------
// Meshes

/// Zero level set on a regular grid of resolution^3 samples spanning `box`.
/// Vertices on shared cell edges are merged (crossings within 1e-6 of a
/// grid corner snap to it), collapsed triangles are dropped,
/// and triangles wind counter-clockwise seen from outside (f > 0).
Mesh marching_cubes(const SdfField& field, const Eigen::AlignedBox3d& box, int resolution);

struct MeshTopology {
  std::size_t vertices = 0;
  std::size_t edges = 0;
  std::size_t faces = 0;
  /// Edges used by exactly one triangle, and by more than two.
  std::size_t boundary_edges = 0;
  std::size_t nonmanifold_edges = 0;

  long euler() const {
    return static_cast<long>(vertices) - static_cast<long>(edges) + static_cast<long>(faces);
  }
  bool watertight() const { return boundary_edges == 0 && nonmanifold_edges == 0; }
};

MeshTopology topology(const Mesh& mesh);

/// Maps every vertex through x -> x * scale + offset.
Mesh transformed(Mesh mesh, const Normalization<double>& n);

/// Ray queries against a triangle mesh through a bounding volume hierarchy.
class MeshIntersector {
 public:
  explicit MeshIntersector(const Mesh& mesh);
  ~MeshIntersector();
  MeshIntersector(const MeshIntersector&) = delete;
  MeshIntersector& operator=(const MeshIntersector&) = delete;

  struct Hit {
    double t = 0.0;
    int triangle = -1;
  };

  /// Closest hit with t in (t_min, t_max).
  std::optional<Hit> intersect(const Vec3d& origin, const Vec3d& dir, double t_min = 0.0,
                               double t_max = std::numeric_limits<double>::infinity()) const;
  Vec3d face_normal(int triangle) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// ---------------------------------------------------------------------------
// Visible surface

/// First ray-surface intersections of every pixel of every camera.
Points3d visible_points(const SdfField& field, std::span<const Camerad> cameras,
                        TraceConfig config = {}, double scene_radius = 1.0);
Points3d visible_points(const Mesh& mesh, std::span<const Camerad> cameras);

/// Back-projects every masked pixel with finite depth.
Points3d points_from_depth(const Camerad& camera, const DepthMap& depth, const SilhouetteMask& mask);

struct NormalRender {
  NormalMap normals;
  SilhouetteMask mask;
};

/// Unit normals facing the camera; misses are NaN with mask 0.
NormalRender render_normal_map(const SdfField& field, const Camerad& camera,
                               TraceConfig config = {}, double scene_radius = 1.0);
NormalRender render_normal_map(const MeshIntersector& mesh, const Camerad& camera);

}  // namespace mvas
