#pragma once

// Binary map formats, cameras.json, checkpoints and OBJ meshes. All binary
// payloads are little-endian; every reader validates magic, sizes and
// trailing bytes and throws Error(Io) for unreadable files or Error(Format)
// for malformed ones.

#include "mvas/field.hpp"
#include "mvas/geom.hpp"
#include "mvas/image.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace mvas {

namespace fs = std::filesystem;

// "AZMP", u32 version = 1, u32 width, u32 height, float32 radians, NaN invalid.
void write_azimuth(const fs::path& path, const AzimuthMap& map);
AzimuthMap read_azimuth(const fs::path& path);

// "MSK1", u32 width, u32 height, one byte (0/1) per pixel.
void write_mask(const fs::path& path, const SilhouetteMask& mask);
SilhouetteMask read_mask(const fs::path& path);

// "NRM3", u32 width, u32 height, 3 float32 per pixel.
void write_normals(const fs::path& path, const NormalMap& normals);
NormalMap read_normals(const fs::path& path);

// "DEP1", u32 width, u32 height, float32 ray parameter per pixel, NaN = miss.
void write_depth(const fs::path& path, const DepthMap& depth);
DepthMap read_depth(const fs::path& path);

/// JSON array of {"fx","fy","cx","cy","width","height","R":[9],"t":[3]}, R row-major.
std::string cameras_to_json(const std::vector<Camerad>& cameras);
std::vector<Camerad> cameras_from_json(const std::string& text);
void write_cameras(const fs::path& path, const std::vector<Camerad>& cameras);
std::vector<Camerad> read_cameras(const fs::path& path);

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  FieldParams params;
  /// Maps normalized scene coordinates back to world units when present.
  std::optional<Normalization<double>> normalization;
  std::int64_t iteration = 0;
  int epoch = 0;
};

// "MVASCKPT", u32 version, architecture, u64 count, f64 parameters, then the
// training position and an optional normalization record.
void write_checkpoint(const fs::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const fs::path& path);

struct Mesh {
  std::vector<Vec3d> vertices;
  std::vector<Eigen::Vector3i> triangles;
};

void write_obj(const fs::path& path, const Mesh& mesh);
Mesh read_obj(const fs::path& path);

std::string read_text(const fs::path& path);
/// Writes through a temporary file and renames, so readers never see a partial file.
void write_text(const fs::path& path, const std::string& text);

}  // namespace mvas
