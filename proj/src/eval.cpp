#include "mvas/eval.hpp"

#include "json.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <unordered_map>

namespace mvas {

namespace {

#include "mc_tables.inc"

// Cell corners in the order the tables expect.
constexpr int kCorner[8][3] = {{0, 0, 0}, {1, 0, 0}, {1, 1, 0}, {0, 1, 0},
                               {0, 0, 1}, {1, 0, 1}, {1, 1, 1}, {0, 1, 1}};
constexpr int kEdgeCorners[12][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {4, 5}, {5, 6},
                                     {6, 7}, {7, 4}, {0, 4}, {1, 5}, {2, 6}, {3, 7}};

constexpr int kLeafSize = 8;

void require_points(const Points3d& p, const char* what) {
  if (p.cols() == 0) throw Error(ErrorCode::Metric, std::string(what) + ": empty point set");
}

}  // namespace

// ---------------------------------------------------------------------------

KdTree::KdTree(Points3d points) : points_(std::move(points)) {
  index_.resize(static_cast<std::size_t>(points_.cols()));
  std::iota(index_.begin(), index_.end(), 0);
  if (!index_.empty()) build(0, static_cast<int>(index_.size()), 0);
}

int KdTree::build(int begin, int end, int depth) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({});
  nodes_[static_cast<std::size_t>(id)].begin = begin;
  nodes_[static_cast<std::size_t>(id)].end = end;
  if (end - begin <= kLeafSize) return id;

  Vec3d lo = Vec3d::Constant(std::numeric_limits<double>::infinity());
  Vec3d hi = -lo;
  for (int i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_.col(index_[static_cast<std::size_t>(i)]));
    hi = hi.cwiseMax(points_.col(index_[static_cast<std::size_t>(i)]));
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  (void)depth;
  const int mid = (begin + end) / 2;
  std::nth_element(index_.begin() + begin, index_.begin() + mid, index_.begin() + end,
                   [&](int a, int b) { return points_(axis, a) < points_(axis, b); });
  const double split = points_(axis, index_[static_cast<std::size_t>(mid)]);
  const int left = build(begin, mid, depth + 1);
  const int right = build(mid, end, depth + 1);
  Node& n = nodes_[static_cast<std::size_t>(id)];
  n.axis = axis;
  n.split = split;
  n.left = left;
  n.right = right;
  return id;
}

void KdTree::search(int node, const Vec3d& q, Eigen::Index& best, double& best_d2) const {
  const Node& n = nodes_[static_cast<std::size_t>(node)];
  if (n.axis < 0) {
    for (int i = n.begin; i < n.end; ++i) {
      const int k = index_[static_cast<std::size_t>(i)];
      const double d2 = (points_.col(k) - q).squaredNorm();
      if (d2 < best_d2 || (d2 == best_d2 && k < best)) {
        best_d2 = d2;
        best = k;
      }
    }
    return;
  }
  const double diff = q[n.axis] - n.split;
  const int near = diff < 0.0 ? n.left : n.right;
  const int far = diff < 0.0 ? n.right : n.left;
  search(near, q, best, best_d2);
  if (diff * diff <= best_d2) search(far, q, best, best_d2);
}

std::pair<Eigen::Index, double> KdTree::nearest(const Vec3d& q) const {
  if (nodes_.empty()) throw Error(ErrorCode::Metric, "nearest neighbour in an empty set");
  Eigen::Index best = -1;
  double best_d2 = std::numeric_limits<double>::infinity();
  search(0, q, best, best_d2);
  return {best, std::sqrt(best_d2)};
}

Eigen::VectorXd nearest_distances(const Points3d& from, const Points3d& to) {
  const KdTree tree(to);
  Eigen::VectorXd d(from.cols());
  for (Eigen::Index i = 0; i < from.cols(); ++i) d[i] = tree.nearest(from.col(i)).second;
  return d;
}

double chamfer(const Points3d& a, const Points3d& b) {
  require_points(a, "chamfer");
  require_points(b, "chamfer");
  return 0.5 * nearest_distances(a, b).mean() + 0.5 * nearest_distances(b, a).mean();
}

FScore fscore(const Points3d& a, const Points3d& b, double tau) {
  require_points(a, "fscore");
  require_points(b, "fscore");
  if (!(tau > 0.0)) throw Error(ErrorCode::Metric, "fscore: threshold must be positive");
  FScore s;
  s.precision = (nearest_distances(a, b).array() < tau).cast<double>().mean();
  s.recall = (nearest_distances(b, a).array() < tau).cast<double>().mean();
  const double sum = s.precision + s.recall;
  s.fscore = sum > 0.0 ? 2.0 * s.precision * s.recall / sum : 0.0;
  return s;
}

AngularErrors normal_errors(const NormalMap& pred, const NormalMap& gt, const SilhouetteMask& mask) {
  if (!pred.same_shape(gt.width(), gt.height()) || !mask.same_shape(gt.width(), gt.height())) {
    throw Error(ErrorCode::Metric, "normal_mae: map sizes differ");
  }
  AngularErrors e;
  for (int row = 0; row < gt.height(); ++row) {
    for (int col = 0; col < gt.width(); ++col) {
      if (!mask(col, row) || !is_valid_normal(pred(col, row)) || !is_valid_normal(gt(col, row))) continue;
      // atan2 stays accurate near 0 and 180 degrees, where acos does not
      const Vec3d& a = pred(col, row);
      const Vec3d& b = gt(col, row);
      e.sum_deg += std::atan2(a.cross(b).norm(), a.dot(b)) * 180.0 / std::numbers::pi;
      ++e.count;
    }
  }
  return e;
}

double normal_mae(const NormalMap& pred, const NormalMap& gt, const SilhouetteMask& mask) {
  const AngularErrors e = normal_errors(pred, gt, mask);
  if (e.count == 0) throw Error(ErrorCode::Metric, "normal_mae: no valid pixels");
  return e.sum_deg / static_cast<double>(e.count);
}

std::string to_json(const Metrics& m) {
  nlohmann::json j;
  j["chamfer"] = m.chamfer;
  j["precision"] = m.precision;
  j["recall"] = m.recall;
  j["fscore"] = m.fscore;
  j["mae_deg"] = m.mae_deg;
  nlohmann::json views = nlohmann::json::array();
  for (double v : m.view_mae_deg) views.push_back(std::isfinite(v) ? nlohmann::json(v) : nlohmann::json());
  j["view_mae_deg"] = views;
  j["coverage"] = m.coverage;
  return j.dump(2);
}

// ---------------------------------------------------------------------------

Mesh marching_cubes(const SdfField& field, const Eigen::AlignedBox3d& box, int resolution) {
  if (resolution < 8) throw Error(ErrorCode::InvalidSpec, "marching_cubes: resolution must be >= 8");
  if (box.isEmpty()) throw Error(ErrorCode::InvalidSpec, "marching_cubes: empty box");
  const int n = resolution;
  const Vec3d lo = box.min();
  const Vec3d step = box.sizes() / static_cast<double>(n - 1);
  const auto grid = [&](int i, int j, int k) {
    return Vec3d(lo.x() + i * step.x(), lo.y() + j * step.y(), lo.z() + k * step.z());
  };

  // one z-slice at a time keeps memory at two slices
  auto slice = [&](int k) {
    Points3d p(3, static_cast<Eigen::Index>(n) * n);
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) p.col(static_cast<Eigen::Index>(j) * n + i) = grid(i, j, k);
    Eigen::RowVectorXd v = field.values(p);
    if (!v.allFinite()) throw Error(ErrorCode::NumericFailure, "marching_cubes: non-finite field value");
    return v;
  };

  Mesh mesh;
  std::unordered_map<std::int64_t, int> edge_vertex;
  // A crossing within kSnap of a grid corner is moved onto the corner and
  // shared by every edge that meets there; the triangles this collapses are
  // dropped below without opening the surface.
  constexpr double kSnap = 1e-6;
  const auto vertex_on_edge = [&](int i, int j, int k, int axis, double f0, double f1) {
    const double denom = f0 - f1;
    double t = denom != 0.0 ? std::clamp(f0 / denom, 0.0, 1.0) : 0.5;
    std::int64_t key = 0;
    if (t < kSnap || t > 1.0 - kSnap) {
      int c[3] = {i, j, k};
      if (t > 0.5) ++c[axis];
      t = t > 0.5 ? 1.0 : 0.0;
      key = -1 - ((static_cast<std::int64_t>(c[2]) * n + c[1]) * n + c[0]);
    } else {
      key = ((static_cast<std::int64_t>(k) * n + j) * n + i) * 3 + axis;
    }
    if (auto it = edge_vertex.find(key); it != edge_vertex.end()) return it->second;
    const Vec3d p0 = grid(i, j, k);
    Vec3d p1 = p0;
    p1[axis] += step[axis];
    const int id = static_cast<int>(mesh.vertices.size());
    mesh.vertices.push_back(p0 + t * (p1 - p0));
    edge_vertex.emplace(key, id);
    return id;
  };

  std::array<Eigen::RowVectorXd, 2> vals{slice(0), Eigen::RowVectorXd()};
  for (int k = 0; k + 1 < n; ++k) {
    vals[1] = slice(k + 1);
    for (int j = 0; j + 1 < n; ++j) {
      for (int i = 0; i + 1 < n; ++i) {
        std::array<double, 8> f{};
        int index = 0;
        for (int c = 0; c < 8; ++c) {
          const auto& o = kCorner[c];
          f[static_cast<std::size_t>(c)] = vals[static_cast<std::size_t>(o[2])][static_cast<Eigen::Index>(j + o[1]) * n + i + o[0]];
          if (f[static_cast<std::size_t>(c)] < 0.0) index |= 1 << c;
        }
        if (kEdgeTable[index] == 0) continue;
        std::array<int, 12> ev{};
        for (int e = 0; e < 12; ++e) {
          if (!(kEdgeTable[index] & (1 << e))) continue;
          int a = kEdgeCorners[e][0];
          int b = kEdgeCorners[e][1];
          // canonical direction along +axis so both neighbouring cells agree
          int axis = 0;
          for (int d = 0; d < 3; ++d) {
            if (kCorner[a][d] != kCorner[b][d]) axis = d;
          }
          if (kCorner[a][axis] > kCorner[b][axis]) std::swap(a, b);
          ev[static_cast<std::size_t>(e)] =
              vertex_on_edge(i + kCorner[a][0], j + kCorner[a][1], k + kCorner[a][2], axis,
                             f[static_cast<std::size_t>(a)], f[static_cast<std::size_t>(b)]);
        }
        for (int t = 0; kTriTable[index][t] != -1; t += 3) {
          // the tables wind clockwise seen from the positive side
          mesh.triangles.emplace_back(ev[static_cast<std::size_t>(kTriTable[index][t])],
                                      ev[static_cast<std::size_t>(kTriTable[index][t + 2])],
                                      ev[static_cast<std::size_t>(kTriTable[index][t + 1])]);
        }
      }
    }
    std::swap(vals[0], vals[1]);
  }

  // drop collapsed triangles, then vertices nothing refers to
  std::vector<Eigen::Vector3i> kept;
  kept.reserve(mesh.triangles.size());
  for (const auto& t : mesh.triangles) {
    if (t[0] == t[1] || t[1] == t[2] || t[0] == t[2]) continue;
    kept.push_back(t);
  }
  std::vector<int> remap(mesh.vertices.size(), -1);
  Mesh out;
  for (auto& t : kept) {
    for (int c = 0; c < 3; ++c) {
      int& r = remap[static_cast<std::size_t>(t[c])];
      if (r < 0) {
        r = static_cast<int>(out.vertices.size());
        out.vertices.push_back(mesh.vertices[static_cast<std::size_t>(t[c])]);
      }
      t[c] = r;
    }
    out.triangles.push_back(t);
  }
  return out;
}

MeshTopology topology(const Mesh& mesh) {
  std::map<std::pair<int, int>, int> uses;
  for (const auto& t : mesh.triangles) {
    for (int c = 0; c < 3; ++c) {
      int a = t[c];
      int b = t[(c + 1) % 3];
      if (a > b) std::swap(a, b);
      ++uses[{a, b}];
    }
  }
  MeshTopology top;
  std::vector<bool> used(mesh.vertices.size(), false);
  for (const auto& t : mesh.triangles)
    for (int c = 0; c < 3; ++c) used[static_cast<std::size_t>(t[c])] = true;
  top.vertices = static_cast<std::size_t>(std::count(used.begin(), used.end(), true));
  top.edges = uses.size();
  top.faces = mesh.triangles.size();
  for (const auto& [edge, count] : uses) {
    if (count == 1) ++top.boundary_edges;
    if (count > 2) ++top.nonmanifold_edges;
  }
  return top;
}

Mesh transformed(Mesh mesh, const Normalization<double>& n) {
  for (Vec3d& v : mesh.vertices) v = n.to_world(v);
  return mesh;
}

// ---------------------------------------------------------------------------

struct MeshIntersector::Impl {
  struct Node {
    Eigen::AlignedBox3d box;
    int left = -1;
    int right = -1;
    int begin = 0;
    int end = 0;
  };

  std::vector<Vec3d> a, e1, e2;
  std::vector<int> order;
  std::vector<Node> nodes;

  int build(int begin, int end, const std::vector<Vec3d>& centroids) {
    Node node;
    node.begin = begin;
    node.end = end;
    for (int i = begin; i < end; ++i) {
      const int t = order[static_cast<std::size_t>(i)];
      node.box.extend(a[static_cast<std::size_t>(t)]);
      node.box.extend(Vec3d(a[static_cast<std::size_t>(t)] + e1[static_cast<std::size_t>(t)]));
      node.box.extend(Vec3d(a[static_cast<std::size_t>(t)] + e2[static_cast<std::size_t>(t)]));
    }
    const int id = static_cast<int>(nodes.size());
    nodes.push_back(node);
    if (end - begin <= kLeafSize) return id;
    int axis = 0;
    nodes[static_cast<std::size_t>(id)].box.sizes().maxCoeff(&axis);
    const int mid = (begin + end) / 2;
    std::nth_element(order.begin() + begin, order.begin() + mid, order.begin() + end, [&](int x, int y) {
      return centroids[static_cast<std::size_t>(x)][axis] < centroids[static_cast<std::size_t>(y)][axis];
    });
    const int l = build(begin, mid, centroids);
    const int r = build(mid, end, centroids);
    nodes[static_cast<std::size_t>(id)].left = l;
    nodes[static_cast<std::size_t>(id)].right = r;
    return id;
  }

  static bool slab(const Eigen::AlignedBox3d& box, const Vec3d& o, const Vec3d& inv, double t0, double t1) {
    for (int c = 0; c < 3; ++c) {
      double ta = (box.min()[c] - o[c]) * inv[c];
      double tb = (box.max()[c] - o[c]) * inv[c];
      if (ta > tb) std::swap(ta, tb);
      t0 = std::max(t0, ta);
      t1 = std::min(t1, tb);
      if (t0 > t1) return false;
    }
    return true;
  }

  // Moller-Trumbore
  bool triangle(int t, const Vec3d& o, const Vec3d& d, double& out_t) const {
    const auto i = static_cast<std::size_t>(t);
    const Vec3d p = d.cross(e2[i]);
    const double det = e1[i].dot(p);
    if (std::abs(det) < 1e-300) return false;
    const double inv = 1.0 / det;
    const Vec3d s = o - a[i];
    const double u = s.dot(p) * inv;
    if (u < 0.0 || u > 1.0) return false;
    const Vec3d q = s.cross(e1[i]);
    const double v = d.dot(q) * inv;
    if (v < 0.0 || u + v > 1.0) return false;
    out_t = e2[i].dot(q) * inv;
    return true;
  }
};

MeshIntersector::MeshIntersector(const Mesh& mesh) : impl_(std::make_unique<Impl>()) {
  std::vector<Vec3d> centroids;
  for (const auto& t : mesh.triangles) {
    for (int c = 0; c < 3; ++c) {
      if (t[c] < 0 || static_cast<std::size_t>(t[c]) >= mesh.vertices.size()) {
        throw Error(ErrorCode::Format, "mesh: triangle index out of range");
      }
    }
    const Vec3d& a = mesh.vertices[static_cast<std::size_t>(t[0])];
    const Vec3d& b = mesh.vertices[static_cast<std::size_t>(t[1])];
    const Vec3d& c = mesh.vertices[static_cast<std::size_t>(t[2])];
    impl_->a.push_back(a);
    impl_->e1.push_back(b - a);
    impl_->e2.push_back(c - a);
    centroids.push_back((a + b + c) / 3.0);
  }
  impl_->order.resize(centroids.size());
  std::iota(impl_->order.begin(), impl_->order.end(), 0);
  if (!centroids.empty()) impl_->build(0, static_cast<int>(centroids.size()), centroids);
}

MeshIntersector::~MeshIntersector() = default;

std::optional<MeshIntersector::Hit> MeshIntersector::intersect(const Vec3d& origin, const Vec3d& dir,
                                                               double t_min, double t_max) const {
  if (impl_->nodes.empty()) return std::nullopt;
  const Vec3d inv = dir.cwiseInverse();
  std::optional<Hit> best;
  double limit = t_max;
  std::vector<int> stack{0};
  while (!stack.empty()) {
    const Impl::Node& n = impl_->nodes[static_cast<std::size_t>(stack.back())];
    stack.pop_back();
    if (!Impl::slab(n.box, origin, inv, t_min, limit)) continue;
    if (n.left < 0) {
      for (int i = n.begin; i < n.end; ++i) {
        const int t = impl_->order[static_cast<std::size_t>(i)];
        double th = 0.0;
        if (impl_->triangle(t, origin, dir, th) && th > t_min && th < limit) {
          limit = th;
          best = Hit{th, t};
        }
      }
    } else {
      stack.push_back(n.left);
      stack.push_back(n.right);
    }
  }
  return best;
}

Vec3d MeshIntersector::face_normal(int triangle) const {
  const auto i = static_cast<std::size_t>(triangle);
  return impl_->e1[i].cross(impl_->e2[i]).normalized();
}

// ---------------------------------------------------------------------------

namespace {

std::vector<Ray> pixel_rays(const Camerad& cam, double scene_radius) {
  std::vector<Ray> rays;
  rays.reserve(static_cast<std::size_t>(cam.intrinsics.width) * cam.intrinsics.height);
  for (int row = 0; row < cam.intrinsics.height; ++row)
    for (int col = 0; col < cam.intrinsics.width; ++col) rays.push_back(camera_ray(cam, col, row, scene_radius));
  return rays;
}

}  // namespace

Points3d visible_points(const SdfField& field, std::span<const Camerad> cameras, TraceConfig config,
                        double scene_radius) {
  std::vector<Vec3d> pts;
  for (const Camerad& cam : cameras) {
    const auto rays = pixel_rays(cam, scene_radius);
    for (const TraceResult& r : sphere_trace_batch(field, rays, config)) {
      if (r.status == TraceStatus::Hit) pts.push_back(r.hit.x);
    }
  }
  Points3d out(3, static_cast<Eigen::Index>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = pts[i];
  return out;
}

Points3d visible_points(const Mesh& mesh, std::span<const Camerad> cameras) {
  const MeshIntersector bvh(mesh);
  std::vector<Vec3d> pts;
  for (const Camerad& cam : cameras) {
    const Vec3d o = cam.center();
    for (int row = 0; row < cam.intrinsics.height; ++row) {
      for (int col = 0; col < cam.intrinsics.width; ++col) {
        const Vec3d d = cam.ray_direction(col, row);
        if (const auto hit = bvh.intersect(o, d)) pts.push_back(o + hit->t * d);
      }
    }
  }
  Points3d out(3, static_cast<Eigen::Index>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = pts[i];
  return out;
}

Points3d points_from_depth(const Camerad& camera, const DepthMap& depth, const SilhouetteMask& mask) {
  std::vector<Vec3d> pts;
  const Vec3d o = camera.center();
  for (int row = 0; row < depth.height(); ++row) {
    for (int col = 0; col < depth.width(); ++col) {
      if (!mask(col, row) || !std::isfinite(depth(col, row))) continue;
      pts.push_back(o + depth(col, row) * camera.ray_direction(col, row));
    }
  }
  Points3d out(3, static_cast<Eigen::Index>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = pts[i];
  return out;
}

NormalRender render_normal_map(const SdfField& field, const Camerad& camera, TraceConfig config,
                               double scene_radius) {
  const int w = camera.intrinsics.width;
  const int h = camera.intrinsics.height;
  NormalRender out{NormalMap(w, h, invalid_normal()), SilhouetteMask(w, h, 0)};
  const auto rays = pixel_rays(camera, scene_radius);
  const auto traced = sphere_trace_batch(field, rays, config);
  std::vector<std::size_t> hits;
  for (std::size_t i = 0; i < traced.size(); ++i) {
    if (traced[i].status == TraceStatus::Hit) hits.push_back(i);
  }
  Points3d X(3, static_cast<Eigen::Index>(hits.size()));
  for (std::size_t k = 0; k < hits.size(); ++k) X.col(static_cast<Eigen::Index>(k)) = traced[hits[k]].hit.x;
  const BatchEval ev = field.evaluate(X);
  for (std::size_t k = 0; k < hits.size(); ++k) {
    Vec3d n = ev.gradients.col(static_cast<Eigen::Index>(k));
    if (!(n.norm() > 0.0)) continue;
    n.normalize();
    if (n.dot(rays[hits[k]].dir) > 0.0) n = -n;
    const int col = static_cast<int>(hits[k] % static_cast<std::size_t>(w));
    const int row = static_cast<int>(hits[k] / static_cast<std::size_t>(w));
    out.normals(col, row) = n;
    out.mask(col, row) = 1;
  }
  return out;
}

NormalRender render_normal_map(const MeshIntersector& mesh, const Camerad& camera) {
  const int w = camera.intrinsics.width;
  const int h = camera.intrinsics.height;
  NormalRender out{NormalMap(w, h, invalid_normal()), SilhouetteMask(w, h, 0)};
  const Vec3d o = camera.center();
  for (int row = 0; row < h; ++row) {
    for (int col = 0; col < w; ++col) {
      const Vec3d d = camera.ray_direction(col, row);
      const auto hit = mesh.intersect(o, d);
      if (!hit) continue;
      Vec3d n = mesh.face_normal(hit->triangle);
      if (n.dot(d) > 0.0) n = -n;
      out.normals(col, row) = n;
      out.mask(col, row) = 1;
    }
  }
  return out;
}

}  // namespace mvas
