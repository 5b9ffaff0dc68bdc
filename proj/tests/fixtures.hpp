#pragma once

// Small synthetic scenes shared by the training, evaluation and acceptance
// tests.

#include "mvas/synth.hpp"
#include "mvas/train.hpp"

#include <random>

namespace mvas::testing {

/// Sphere off the rig target, so that rank and TSC tests are not helped by
/// the symmetry of a centred sphere.
inline Sphere offset_sphere() { return Sphere{Vec3d(0.15, -0.1, 0.05), 0.5}; }

inline Dataset ring_dataset(const AnalyticShape& shape, int views, int size,
                            AmbiguityKind kind = AmbiguityKind::Exact, std::uint64_t seed = 1,
                            bool normalize = true) {
  RigSpec rig;
  rig.count = views;
  rig.width = rig.height = size;
  AmbiguityMode mode;
  mode.kind = kind;
  mode.seed = seed;
  const auto cams = make_rig(rig);
  Dataset d = to_dataset(render_views(shape, cams, mode));
  return normalize ? normalize_dataset(std::move(d), 3.0) : d;
}

inline Architecture tiny_arch(int width = 8) {
  Architecture a;
  a.width = width;
  return a;
}

/// Geometric initialisation plus noise, so no weight sits at a symmetric
/// special value.
inline FieldParams jittered_sphere(const Architecture& arch, std::uint64_t seed, double scale = 1e-5) {
  FieldParams p = init_sphere(arch, seed);
  std::mt19937_64 rng(seed + 17);
  std::normal_distribution<double> n(0.0, scale);
  for (Eigen::Index i = 0; i < p.size(); ++i) p.flat()[i] += n(rng);
  return p;
}

inline std::vector<PixelSample> all_pixels(const Dataset& d, int view) {
  std::vector<PixelSample> out;
  const auto& K = d.cameras[static_cast<std::size_t>(view)].intrinsics;
  for (int row = 0; row < K.height; ++row) {
    for (int col = 0; col < K.width; ++col) out.push_back({view, col, row});
  }
  return out;
}

/// A 4-pixel batch with two surface samples seen by at least two views and
/// two background samples.
inline std::vector<PixelSample> mixed_pixels(const SdfField& field, const Dataset& d,
                                             const TrainConfig& config) {
  const PreparedBatch full = prepare_batch(field, d, all_pixels(d, 0), config);
  std::vector<PixelSample> out;
  for (const auto& s : full.surface) {
    if (s.tangents.size() >= 2 && out.size() < 2 && s.pixel % 7 == 0) {
      out.push_back(full.pixels[static_cast<std::size_t>(s.pixel)]);
    }
  }
  int label0 = 0;
  int label1 = 0;
  for (const auto& b : full.background) {
    const auto& p = full.pixels[static_cast<std::size_t>(b.pixel)];
    if (b.label > 0.0 && label1 == 0) {
      out.push_back(p);
      ++label1;
    } else if (b.label == 0.0 && label0 == 0 && p.col > 2 && p.row > 2) {
      out.push_back(p);
      ++label0;
    }
  }
  return out;
}

/// Central differences of the frozen-batch loss over every parameter.
inline Eigen::VectorXd fd_gradient(const FieldParams& params, const PreparedBatch& batch,
                                   const Points3d& eik, const LossWeights& w, double h = 1e-6) {
  FieldParams p = params;
  Eigen::VectorXd g(p.size());
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    const double x = p.flat()[i];
    p.flat()[i] = x + h;
    const double up = batch_loss(p, batch, eik, w).total;
    p.flat()[i] = x - h;
    const double dn = batch_loss(p, batch, eik, w).total;
    p.flat()[i] = x;
    g[i] = (up - dn) / (2.0 * h);
  }
  return g;
}

}  // namespace mvas::testing
