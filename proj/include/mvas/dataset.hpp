#pragma once

// A dataset directory: manifest.json naming cameras.json and, per view, an
// azimuth map, a silhouette mask and optional ground-truth normals and depth.

#include "mvas/geom.hpp"
#include "mvas/image.hpp"
#include "mvas/io.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace mvas {

struct ViewFiles {
  std::string azimuth;
  std::string mask;
  std::string normals;  // empty when absent
  std::string depth;    // empty when absent
};

struct DatasetInfo {
  std::uint64_t seed = 0;
  /// JSON objects describing the generator; empty when unknown.
  std::string shape_json;
  std::string ambiguity_json;
  std::optional<Normalization<double>> normalization;
};

struct ViewData {
  AzimuthMap azimuth;
  SilhouetteMask mask;
  std::optional<NormalMap> normals;
  std::optional<DepthMap> depth;
};

struct Dataset {
  std::vector<Camerad> cameras;
  std::vector<ViewData> views;
  DatasetInfo info;

  std::size_t size() const { return views.size(); }
  bool has_normals() const;
  bool has_depth() const;
};

inline constexpr const char* kManifestName = "manifest.json";

/// Checks shapes: one camera per view, maps matching the camera resolution.
/// Throws Dataset on any inconsistency.
void validate(const Dataset& dataset);

/// Writes maps as view_NNN.{azm,msk,nrm,dep}, cameras.json and the manifest.
void save_dataset(const Dataset& dataset, const fs::path& dir);

/// Recentres and rescales the cameras, rescales depth (the other maps are
/// unchanged by a similarity) and records the normalization. A dataset that
/// already carries one is returned as is.
Dataset normalize_dataset(Dataset dataset, double scale_ratio);

/// Inverse of normalize_dataset: cameras and depth back in world units.
Dataset denormalize_dataset(Dataset dataset);

/// Missing or malformed files raise Io, Format or Dataset errors.
Dataset load_dataset(const fs::path& dir);

}  // namespace mvas
