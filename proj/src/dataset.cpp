#include "mvas/dataset.hpp"

#include "json.hpp"

#include <algorithm>
#include <cstdio>

namespace mvas {

namespace {

using json = nlohmann::json;

std::string view_name(std::size_t i, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "view_%03zu.%s", i, ext);
  return buf;
}

json normalization_json(const Normalization<double>& n) {
  return {{"offset", {n.offset.x(), n.offset.y(), n.offset.z()}},
          {"scale", n.scale},
          {"scale_ratio", n.scale_ratio}};
}

Normalization<double> normalization_from(const json& j) {
  Normalization<double> n;
  const auto o = j.at("offset").get<std::vector<double>>();
  if (o.size() != 3) throw Error(ErrorCode::Format, "normalization offset needs 3 entries");
  n.offset = Vec3d(o[0], o[1], o[2]);
  n.scale = j.at("scale").get<double>();
  n.scale_ratio = j.at("scale_ratio").get<double>();
  return n;
}

}  // namespace

bool Dataset::has_normals() const {
  return !views.empty() &&
         std::all_of(views.begin(), views.end(), [](const ViewData& v) { return v.normals.has_value(); });
}

bool Dataset::has_depth() const {
  return !views.empty() &&
         std::all_of(views.begin(), views.end(), [](const ViewData& v) { return v.depth.has_value(); });
}

void validate(const Dataset& dataset) {
  if (dataset.views.empty()) throw Error(ErrorCode::Dataset, "dataset has no views");
  if (dataset.cameras.size() != dataset.views.size()) {
    throw Error(ErrorCode::Dataset, "dataset: " + std::to_string(dataset.cameras.size()) +
                                        " cameras for " + std::to_string(dataset.views.size()) +
                                        " views");
  }
  for (std::size_t i = 0; i < dataset.views.size(); ++i) {
    const auto& K = dataset.cameras[i].intrinsics;
    const ViewData& v = dataset.views[i];
    const std::string where = "dataset view " + std::to_string(i) + ": ";
    if (!v.azimuth.same_shape(K.width, K.height) || !v.mask.same_shape(K.width, K.height)) {
      throw Error(ErrorCode::Dataset, where + "map size does not match camera resolution");
    }
    if (v.normals && !v.normals->same_shape(K.width, K.height)) {
      throw Error(ErrorCode::Dataset, where + "normal map size mismatch");
    }
    if (v.depth && !v.depth->same_shape(K.width, K.height)) {
      throw Error(ErrorCode::Dataset, where + "depth map size mismatch");
    }
  }
}

void save_dataset(const Dataset& dataset, const fs::path& dir) {
  validate(dataset);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + dir.string() + ": " + ec.message());

  write_cameras(dir / "cameras.json", dataset.cameras);
  json views = json::array();
  for (std::size_t i = 0; i < dataset.views.size(); ++i) {
    const ViewData& v = dataset.views[i];
    json entry;
    entry["azimuth"] = view_name(i, "azm");
    entry["mask"] = view_name(i, "msk");
    write_azimuth(dir / view_name(i, "azm"), v.azimuth);
    write_mask(dir / view_name(i, "msk"), v.mask);
    if (v.normals) {
      entry["normals"] = view_name(i, "nrm");
      write_normals(dir / view_name(i, "nrm"), *v.normals);
    }
    if (v.depth) {
      entry["depth"] = view_name(i, "dep");
      write_depth(dir / view_name(i, "dep"), *v.depth);
    }
    views.push_back(entry);
  }

  json m;
  m["format"] = "mvas-dataset";
  m["version"] = 1;
  m["seed"] = dataset.info.seed;
  m["cameras"] = "cameras.json";
  m["views"] = views;
  if (!dataset.info.shape_json.empty()) m["shape"] = json::parse(dataset.info.shape_json);
  if (!dataset.info.ambiguity_json.empty()) m["ambiguity"] = json::parse(dataset.info.ambiguity_json);
  if (dataset.info.normalization) m["normalization"] = normalization_json(*dataset.info.normalization);
  write_text(dir / kManifestName, m.dump(2) + "\n");
}

Dataset normalize_dataset(Dataset dataset, double scale_ratio) {
  if (dataset.info.normalization) return dataset;
  const NormalizedRig<double> rig = normalize_cameras<double>(dataset.cameras, scale_ratio);
  dataset.cameras = rig.cameras;
  dataset.info.normalization = rig.normalization;
  for (ViewData& v : dataset.views) {
    if (v.depth) {
      for (double& d : v.depth->data()) d /= rig.normalization.scale;
    }
  }
  return dataset;
}

Dataset denormalize_dataset(Dataset dataset) {
  if (!dataset.info.normalization) return dataset;
  const Normalization<double> n = *dataset.info.normalization;
  for (Camerad& cam : dataset.cameras) {
    cam.pose.t = -cam.pose.R * n.to_world(cam.center());
  }
  for (ViewData& v : dataset.views) {
    if (v.depth) {
      for (double& d : v.depth->data()) d *= n.scale;
    }
  }
  dataset.info.normalization.reset();
  return dataset;
}

Dataset load_dataset(const fs::path& dir) {
  const fs::path manifest_path = dir / kManifestName;
  json m;
  try {
    m = json::parse(read_text(manifest_path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Format, manifest_path.string() + ": " + e.what());
  }

  Dataset d;
  try {
    if (m.value("format", std::string()) != "mvas-dataset") {
      throw Error(ErrorCode::Format, manifest_path.string() + ": not a dataset manifest");
    }
    d.info.seed = m.value("seed", std::uint64_t{0});
    if (m.contains("shape")) d.info.shape_json = m["shape"].dump();
    if (m.contains("ambiguity")) d.info.ambiguity_json = m["ambiguity"].dump();
    if (m.contains("normalization")) d.info.normalization = normalization_from(m["normalization"]);
    d.cameras = read_cameras(dir / m.at("cameras").get<std::string>());
    for (const auto& entry : m.at("views")) {
      ViewData v;
      v.azimuth = read_azimuth(dir / entry.at("azimuth").get<std::string>());
      v.mask = read_mask(dir / entry.at("mask").get<std::string>());
      if (entry.contains("normals")) v.normals = read_normals(dir / entry["normals"].get<std::string>());
      if (entry.contains("depth")) v.depth = read_depth(dir / entry["depth"].get<std::string>());
      d.views.push_back(std::move(v));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Format, manifest_path.string() + ": " + e.what());
  }
  validate(d);
  return d;
}

}  // namespace mvas
