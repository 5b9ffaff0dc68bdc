#include "mvas/cli.hpp"

#include "mvas/eval.hpp"
#include "mvas/io.hpp"
#include "mvas/synth.hpp"
#include "mvas/train.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>

namespace mvas::cli {

namespace {

using nlohmann::json;

inline constexpr const char* kReconstructionName = "reconstruction.json";
inline constexpr const char* kMeshName = "mesh.obj";

struct Globals {
  std::optional<std::uint64_t> seed;
  int threads = 1;
  std::string config;
};

std::string view_file(std::size_t i, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "view_%03zu.%s", i, ext);
  return buf;
}

TrainConfig load_config(const Globals& g) {
  TrainConfig c;
  if (!g.config.empty()) c = train_config_from_json(read_text(g.config));
  if (g.seed) c.seed = *g.seed;
  return c;
}

/// Camera expressed in the normalized frame of `n`.
Camerad normalized_camera(Camerad cam, const Normalization<double>& n) {
  cam.pose.t = -cam.pose.R * n.to_normalized(cam.center());
  return cam;
}

Points3d concat(const std::vector<Points3d>& parts) {
  Eigen::Index total = 0;
  for (const auto& p : parts) total += p.cols();
  Points3d out(3, total);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.cols()) = p;
    at += p.cols();
  }
  return out;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  std::string shape = "sphere";
  std::string shape_json;
  std::string rig = "generic-ring";
  int views = 12;
  int width = 64;
  int height = 0;
  double fov = 36.0;
  double distance = 2.5;
  std::string ambiguity = "exact";
  double probability = 0.5;
  double noise = 0.0;
  bool normalize = false;
  double scale_ratio = 3.0;
};

int cmd_synth(const SynthArgs& a, const Globals& g, std::ostream& out) {
  const AnalyticShape shape = a.shape_json.empty() ? preset_shape(a.shape)
                                                   : shape_from_json(read_text(a.shape_json));
  validate(shape);
  RigSpec rig;
  rig.kind = parse_rig_kind(a.rig);
  rig.count = a.views;
  rig.width = a.width;
  rig.height = a.height > 0 ? a.height : a.width;
  rig.fov_deg = a.fov;
  rig.radius = a.distance;
  AmbiguityMode mode;
  mode.kind = parse_ambiguity(a.ambiguity);
  mode.probability = a.probability;
  mode.noise_sigma = a.noise;
  mode.seed = g.seed.value_or(0);
  if (!(mode.probability >= 0.0 && mode.probability <= 1.0) || !(mode.noise_sigma >= 0.0)) {
    throw Error(ErrorCode::InvalidSpec, "synth: probability must lie in [0, 1] and noise be >= 0");
  }

  const auto cams = make_rig(rig);
  DatasetInfo info;
  info.seed = mode.seed;
  info.shape_json = shape_to_json(shape);
  info.ambiguity_json = json{{"kind", to_string(mode.kind)},
                             {"probability", mode.probability},
                             {"noise_sigma", mode.noise_sigma},
                             {"seed", mode.seed}}
                            .dump();
  Dataset d = to_dataset(render_views(shape, cams, mode), info);
  if (a.normalize) d = normalize_dataset(std::move(d), a.scale_ratio);
  fs::create_directories(a.out);
  save_dataset(d, a.out);
  out << "wrote " << d.size() << " views of " << rig.width << "x" << rig.height << " to " << a.out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct NormalizeArgs {
  std::string dataset;
  std::string out;
  double scale_ratio = 3.0;
};

void print_normalization(std::ostream& out, const Normalization<double>& n) {
  out << std::setprecision(17) << "offset " << n.offset.x() << " " << n.offset.y() << " " << n.offset.z()
      << "\nscale " << n.scale << "\nscale_ratio " << n.scale_ratio << "\n";
}

int cmd_normalize(const NormalizeArgs& a, std::ostream& out, std::ostream& err) {
  Dataset d = load_dataset(a.dataset);
  if (d.info.normalization) {
    err << "dataset is already normalized; cameras left unchanged\n";
  } else {
    d = normalize_dataset(std::move(d), a.scale_ratio);
  }
  const fs::path target = a.out.empty() ? fs::path(a.dataset) : fs::path(a.out);
  fs::create_directories(target);
  save_dataset(d, target);
  print_normalization(out, *d.info.normalization);
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string dataset;
  std::string out;
  double scale_ratio = 3.0;
  std::optional<std::int64_t> iterations;
  std::optional<int> epochs;
  std::optional<int> width;
  std::optional<int> batch_size;
  std::optional<double> lr;
  std::string tsc_mode;
  std::string intersection;
  int log_every = 100;
};

int cmd_train(const TrainArgs& a, const Globals& g, std::ostream& out) {
  TrainConfig config = load_config(g);
  if (a.iterations) config.max_iterations = *a.iterations;
  if (a.epochs) config.epochs = *a.epochs;
  if (a.width) config.arch.width = *a.width;
  if (a.batch_size) config.batch_size = *a.batch_size;
  if (a.lr) config.lr = *a.lr;
  if (!a.tsc_mode.empty()) config.tsc_mode = parse_tsc_mode(a.tsc_mode);
  if (!a.intersection.empty()) config.intersection = parse_intersection_mode(a.intersection);
  config.validate();

  const Dataset data = normalize_dataset(load_dataset(a.dataset), a.scale_ratio);
  const fs::path dir(a.out);
  fs::create_directories(dir);
  write_text(dir / "config.json", to_json(config) + "\n");

  std::vector<IterationLog> log;
  TrainOptions options;
  options.checkpoint_dir = dir;
  options.normalization = data.info.normalization;
  options.on_iteration = [&](const IterationLog& it) {
    log.push_back(it);
    if (a.log_every > 0 && (it.iteration % a.log_every == 0)) {
      out << "iter " << it.iteration << " epoch " << it.epoch << " loss " << it.loss.total << " (tsc "
          << it.loss.tsc << ", silhouette " << it.loss.silhouette << ", eikonal " << it.loss.eikonal << ")" << std::endl;
    }
  };
  try {
    const TrainResult r = train(config, data, options);
    write_loss_csv(dir / "loss.csv", log);
    if (r.visibility_queries > 0) {
      out << "visibility: " << r.visibility_queries << " queries, mean "
          << static_cast<double>(r.visibility_steps) / static_cast<double>(r.visibility_queries)
          << " steps, " << r.visibility_capped << " at the step cap\n";
    }
  } catch (const Error&) {
    write_loss_csv(dir / "loss.csv", log);
    throw;
  }
  out << "trained " << log.size() << " iterations; checkpoint " << (dir / kCheckpointName).string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct ReconstructArgs {
  std::string checkpoint;
  std::string dataset;
  std::string cameras;
  std::string out;
  int resolution = 256;
  std::optional<double> bbox_half;
  bool normals = true;
};

int cmd_reconstruct(const ReconstructArgs& a, const Globals& g, std::ostream& out) {
  const TrainConfig config = load_config(g);
  const Checkpoint ckpt = read_checkpoint(a.checkpoint);
  const Normalization<double> n = ckpt.normalization.value_or(Normalization<double>{});

  std::vector<Camerad> world;
  if (!a.dataset.empty()) {
    world = denormalize_dataset(load_dataset(a.dataset)).cameras;
  } else if (!a.cameras.empty()) {
    world = read_cameras(a.cameras);
  }

  const NeuralSdf field(ckpt.params);
  const double half = a.bbox_half.value_or(config.bbox_half);
  if (!(half > 0.0)) throw Error(ErrorCode::InvalidSpec, "reconstruct: bounding box must be positive");
  const Eigen::AlignedBox3d box(Vec3d::Constant(-half), Vec3d::Constant(half));
  const Mesh mesh = transformed(marching_cubes(field, box, a.resolution), n);

  const fs::path dir(a.out);
  fs::create_directories(dir);
  write_obj(dir / kMeshName, mesh);

  json manifest;
  manifest["format"] = "mvas-reconstruction";
  manifest["version"] = 1;
  manifest["mesh"] = kMeshName;
  manifest["resolution"] = a.resolution;
  manifest["iteration"] = ckpt.iteration;
  json normals = json::array();
  if (a.normals) {
    for (std::size_t i = 0; i < world.size(); ++i) {
      const NormalRender r =
          render_normal_map(field, normalized_camera(world[i], n), config.trace, config.scene_radius);
      write_normals(dir / view_file(i, "nrm"), r.normals);
      normals.push_back(view_file(i, "nrm"));
    }
  }
  manifest["normals"] = normals;
  if (!world.empty()) {
    write_cameras(dir / "cameras.json", world);
    manifest["cameras"] = "cameras.json";
  }
  write_text(dir / kReconstructionName, manifest.dump(2) + "\n");

  const MeshTopology top = topology(mesh);
  out << "mesh: " << top.vertices << " vertices, " << top.faces << " triangles, "
      << (top.watertight() ? "watertight" : "open") << "; " << normals.size() << " normal maps\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string reconstruction;
  std::string dataset;
  std::string out;
  double tau = 0.01;
};

struct Prediction {
  Points3d points;
  std::vector<NormalMap> normals;
};

Prediction load_prediction(const fs::path& dir, const std::vector<Camerad>& cameras) {
  Prediction p;
  if (fs::exists(dir / kReconstructionName)) {
    json m;
    try {
      m = json::parse(read_text(dir / kReconstructionName));
    } catch (const json::exception& e) {
      throw Error(ErrorCode::Format, (dir / kReconstructionName).string() + ": " + e.what());
    }
    if (m.value("format", std::string()) != "mvas-reconstruction") {
      throw Error(ErrorCode::Format, (dir / kReconstructionName).string() + ": not a reconstruction manifest");
    }
    const Mesh mesh = read_obj(dir / m.value("mesh", std::string(kMeshName)));
    p.points = visible_points(mesh, cameras);
    const auto files = m.value("normals", json::array());
    if (files.size() == cameras.size()) {
      for (const auto& f : files) p.normals.push_back(read_normals(dir / f.get<std::string>()));
    } else if (files.empty()) {
      const MeshIntersector bvh(mesh);
      for (const Camerad& cam : cameras) p.normals.push_back(render_normal_map(bvh, cam).normals);
    } else {
      throw Error(ErrorCode::Dataset, "eval: reconstruction has " + std::to_string(files.size()) +
                                          " normal maps for " + std::to_string(cameras.size()) + " views");
    }
    return p;
  }
  if (fs::exists(dir / kManifestName)) {
    const Dataset d = denormalize_dataset(load_dataset(dir));
    if (d.size() != cameras.size()) throw Error(ErrorCode::Dataset, "eval: view counts differ");
    if (!d.has_normals() || !d.has_depth()) {
      throw Error(ErrorCode::Dataset, "eval: predicted dataset lacks normals or depth");
    }
    std::vector<Points3d> parts;
    for (std::size_t i = 0; i < d.size(); ++i) {
      parts.push_back(points_from_depth(d.cameras[i], *d.views[i].depth, d.views[i].mask));
      p.normals.push_back(*d.views[i].normals);
    }
    p.points = concat(parts);
    return p;
  }
  throw Error(ErrorCode::Io, dir.string() + ": neither a reconstruction nor a dataset");
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const Dataset gt = denormalize_dataset(load_dataset(a.dataset));
  if (!gt.has_normals()) throw Error(ErrorCode::Dataset, "eval: ground truth has no normal maps");
  if (!gt.has_depth()) throw Error(ErrorCode::Dataset, "eval: ground truth has no depth maps");

  std::vector<Points3d> parts;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    parts.push_back(points_from_depth(gt.cameras[i], *gt.views[i].depth, gt.views[i].mask));
  }
  const Points3d gt_points = concat(parts);
  const Prediction pred = load_prediction(a.reconstruction, gt.cameras);

  Metrics m;
  m.chamfer = chamfer(pred.points, gt_points);
  const FScore f = fscore(pred.points, gt_points, a.tau);
  m.precision = f.precision;
  m.recall = f.recall;
  m.fscore = f.fscore;

  AngularErrors pooled;
  long masked = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    const NormalMap& gn = *gt.views[i].normals;
    if (!pred.normals[i].same_shape(gn)) {
      throw Error(ErrorCode::Dataset, "eval: view " + std::to_string(i) + " normal map is " +
                                          std::to_string(pred.normals[i].width()) + "x" +
                                          std::to_string(pred.normals[i].height()) + ", ground truth " +
                                          std::to_string(gn.width()) + "x" + std::to_string(gn.height()));
    }
    const AngularErrors e = normal_errors(pred.normals[i], gn, gt.views[i].mask);
    pooled.sum_deg += e.sum_deg;
    pooled.count += e.count;
    for (std::size_t k = 0; k < gn.size(); ++k) masked += gt.views[i].mask[k] && is_valid_normal(gn[k]);
    m.view_mae_deg.push_back(e.count > 0 ? e.sum_deg / static_cast<double>(e.count)
                                         : std::numeric_limits<double>::quiet_NaN());
  }
  if (pooled.count == 0) throw Error(ErrorCode::Metric, "eval: no pixel has both normals");
  m.mae_deg = pooled.sum_deg / static_cast<double>(pooled.count);
  m.coverage = masked > 0 ? static_cast<double>(pooled.count) / static_cast<double>(masked) : 0.0;

  const std::string text = to_json(m);
  const fs::path target = a.out.empty() ? fs::path(a.reconstruction) / "metrics.json" : fs::path(a.out);
  write_text(target, text + "\n");
  out << text << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct AnalyzeArgs {
  std::string dataset;
  std::string points;
  int grid = 0;
  double grid_half = 1.0;
  std::string visibility = "depth";
  double depth_tolerance = 0.02;
  double rank_lo = RankTolerances{}.lo;
  double rank_hi = RankTolerances{}.hi;
  std::string out;
};

int cmd_tsc_analyze(const AnalyzeArgs& a, std::ostream& out, std::ostream& err) {
  const Dataset d = load_dataset(a.dataset);
  if (d.size() == 0) throw Error(ErrorCode::Dataset, "tsc-analyze: dataset has no views");
  TscQueryOptions opt;
  if (a.visibility == "depth") {
    opt.visibility = VisibilitySource::Depth;
    if (!d.has_depth()) throw Error(ErrorCode::Dataset, "tsc-analyze: depth visibility needs depth maps");
  } else if (a.visibility == "none") {
    opt.visibility = VisibilitySource::None;
  } else {
    throw Error(ErrorCode::InvalidSpec, "tsc-analyze: visibility must be depth or none");
  }
  opt.depth_tolerance = a.depth_tolerance;
  opt.rank = {a.rank_lo, a.rank_hi};

  Points3d pts;
  if (!a.points.empty()) {
    pts = read_points(a.points);
  } else if (a.grid > 0) {
    pts = grid_points(a.grid, a.grid_half);
  } else {
    throw Error(ErrorCode::InvalidSpec, "tsc-analyze: give --points or --grid");
  }

  const auto rows = tsc_analyze(d, pts, opt);
  std::ostringstream table;
  table << std::setprecision(9) << "x,y,z,views,s1,s2,s3,rank,ambiguous,nx,ny,nz\n";
  std::map<std::string, int> counts;
  for (const TscRow& r : rows) {
    const std::string rank = r.rank ? to_string(*r.rank) : "none";
    ++counts[rank];
    table << r.x.x() << ',' << r.x.y() << ',' << r.x.z() << ',' << r.views << ',' << r.singular_values[0] << ','
          << r.singular_values[1] << ',' << r.singular_values[2] << ',' << rank << ',' << (r.ambiguous ? 1 : 0);
    if (r.normal) {
      table << ',' << r.normal->x() << ',' << r.normal->y() << ',' << r.normal->z() << '\n';
    } else {
      table << ",,,\n";
    }
  }
  if (a.out.empty()) {
    out << table.str();
  } else {
    write_text(a.out, table.str());
  }
  if (counts["none"] == static_cast<int>(rows.size())) {
    err << "warning: no view sees any query point\n";
  }
  out << "# points " << rows.size();
  for (const auto& [name, c] : counts) out << ", " << name << " " << c;
  out << "\n";
  return kExitOk;
}

}  // namespace

// ---------------------------------------------------------------------------

int exit_code(const Error& e) {
  switch (e.code()) {
    case ErrorCode::NumericFailure:
    case ErrorCode::UnstableIntersection:
      return kExitNumeric;
    default:
      return kExitInput;
  }
}

std::optional<Vec3d> observed_tangent(const Dataset& data, std::size_t view, const Vec3d& x,
                                      const TscQueryOptions& options) {
  const Camerad& cam = data.cameras[view];
  const ViewData& v = data.views[view];
  const int w = cam.intrinsics.width;
  const int h = cam.intrinsics.height;
  const Vec3d xc = cam.pose.R * x + cam.pose.t;
  if (!(xc.z() > 0.0)) return std::nullopt;
  const Projection<double> p = project(cam, x);
  int col = 0;
  int row = 0;
  if (!nearest_pixel(p.u, p.v, w, h, col, row)) return std::nullopt;
  if (options.visibility == VisibilitySource::Depth) {
    if (!v.depth) throw Error(ErrorCode::Dataset, "tsc-analyze: view has no depth map");
    const double depth = (*v.depth)(col, row);
    if (!std::isfinite(depth) || (x - cam.center()).norm() > depth * (1.0 + options.depth_tolerance)) {
      return std::nullopt;
    }
  }

  // doubled angles make the average blind to the pi ambiguity
  const int c0 = static_cast<int>(std::floor(p.u));
  const int r0 = static_cast<int>(std::floor(p.v));
  if (c0 < 0 || r0 < 0 || c0 + 1 >= w || r0 + 1 >= h) return std::nullopt;
  const double fu = p.u - c0;
  const double fv = p.v - r0;
  Eigen::Vector2d s = Eigen::Vector2d::Zero();
  for (int k = 0; k < 4; ++k) {
    const int cc = c0 + (k & 1);
    const int rr = r0 + (k >> 1);
    if (!v.mask(cc, rr) || !v.azimuth.valid(cc, rr)) return std::nullopt;
    const double wt = ((k & 1) ? fu : 1.0 - fu) * ((k >> 1) ? fv : 1.0 - fv);
    s += wt * Eigen::Vector2d(std::cos(2.0 * v.azimuth(cc, rr)), std::sin(2.0 * v.azimuth(cc, rr)));
  }
  if (!(s.norm() > 1e-9)) return std::nullopt;
  const double phi = 0.5 * std::atan2(s.y(), s.x());
  return azimuth_to_tangent(cam.pose, phi);
}

std::vector<TscRow> tsc_analyze(const Dataset& data, const Points3d& points, const TscQueryOptions& options) {
  std::vector<TscRow> rows;
  rows.reserve(static_cast<std::size_t>(points.cols()));
  for (Eigen::Index i = 0; i < points.cols(); ++i) {
    TscRow r;
    r.x = points.col(i);
    std::vector<Vec3d> tangents;
    for (std::size_t v = 0; v < data.size(); ++v) {
      if (auto t = observed_tangent(data, v, r.x, options)) tangents.push_back(*t);
    }
    r.views = static_cast<int>(tangents.size());
    if (!tangents.empty()) {
      const auto stack = make_stack<double>(tangents);
      const auto report = classify_rank(stack, options.rank);
      r.rank = report.rank;
      r.ambiguous = report.ambiguous;
      r.singular_values = report.singular_values;
      if (report.rank == RankClass::TangentPlane) r.normal = normal_from_tangents(stack, options.rank);
    }
    rows.push_back(r);
  }
  return rows;
}

Points3d grid_points(int n, double half) {
  if (n < 1) throw Error(ErrorCode::InvalidSpec, "grid: need at least one sample per axis");
  Points3d p(3, static_cast<Eigen::Index>(n) * n * n);
  const double step = n > 1 ? 2.0 * half / (n - 1) : 0.0;
  const double lo = n > 1 ? -half : 0.0;
  Eigen::Index k = 0;
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) p.col(k++) = Vec3d(lo + x * step, lo + y * step, lo + z * step);
  return p;
}

Points3d read_points(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::vector<Vec3d> pts;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    std::istringstream ls(line);
    Vec3d p;
    if (!(ls >> p.x())) continue;
    std::string rest;
    if (!(ls >> p.y() >> p.z()) || (ls >> rest) || !p.allFinite()) {
      throw Error(ErrorCode::Format, path.string() + ":" + std::to_string(lineno) + ": expected three numbers");
    }
    pts.push_back(p);
  }
  Points3d out(3, static_cast<Eigen::Index>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) out.col(static_cast<Eigen::Index>(i)) = pts[i];
  return out;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-view azimuth stereo: synthetic data, neural SDF training and evaluation.\n"
               "Defaults favour small runs on 64x64 maps.",
               "mvas"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Seed for synthesis noise and training (default 0)");
  app.add_option("--threads", g.threads, "Worker cap; computation is single-threaded")
      ->check(CLI::NonNegativeNumber);
  app.add_option("--config", g.config, "Training config JSON (train, reconstruct)")->check(CLI::ExistingFile);

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Render a synthetic dataset from an analytic shape");
  synth->fallthrough();
  synth->add_option("--out", sa.out, "Output directory")->required();
  synth->add_option("--shape", sa.shape, "sphere, torus or box")->capture_default_str();
  synth->add_option("--shape-json", sa.shape_json, "Shape description file")->check(CLI::ExistingFile);
  synth->add_option("--rig", sa.rig, "generic-ring, two-view, parallel-axes, coplanar-axes")
      ->capture_default_str();
  synth->add_option("--views", sa.views, "Number of cameras")->capture_default_str();
  synth->add_option("--resolution", sa.width, "Image width in pixels")->capture_default_str();
  synth->add_option("--height", sa.height, "Image height (default: square)");
  synth->add_option("--fov", sa.fov, "Horizontal field of view, degrees")->capture_default_str();
  synth->add_option("--distance", sa.distance, "Camera distance from the target")->capture_default_str();
  synth->add_option("--ambiguity", sa.ambiguity, "exact, pi or half-pi")->capture_default_str();
  synth->add_option("--probability", sa.probability, "Per-pixel offset probability")->capture_default_str();
  synth->add_option("--noise", sa.noise, "Gaussian azimuth noise, radians")->capture_default_str();
  synth->add_flag("--normalize", sa.normalize, "Store normalized cameras and the normalization record");
  synth->add_option("--scale-ratio", sa.scale_ratio, "Farthest camera distance after normalization")
      ->capture_default_str();

  NormalizeArgs na;
  auto* norm = app.add_subcommand("normalize-cameras", "Recentre and rescale a dataset's cameras");
  norm->fallthrough();
  norm->add_option("--dataset", na.dataset, "Dataset directory")->required();
  norm->add_option("--out", na.out, "Output directory (default: rewrite in place)");
  norm->add_option("--scale-ratio", na.scale_ratio, "Farthest camera distance after normalization")
      ->capture_default_str();

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "Fit a neural SDF to a dataset");
  tr->fallthrough();
  tr->add_option("--dataset", ta.dataset, "Dataset directory")->required();
  tr->add_option("--out", ta.out, "Output directory for checkpoint.mvas, loss.csv, config.json")->required();
  tr->add_option("--scale-ratio", ta.scale_ratio, "Camera normalization ratio")->capture_default_str();
  tr->add_option("--iterations", ta.iterations, "Stop after this many iterations");
  tr->add_option("--epochs", ta.epochs, "Epoch count");
  tr->add_option("--width", ta.width, "Hidden layer width");
  tr->add_option("--batch-size", ta.batch_size, "Pixels per iteration");
  tr->add_option("--lr", ta.lr, "Initial learning rate");
  tr->add_option("--tsc-mode", ta.tsc_mode, "multi-view, half-pi or single-view");
  tr->add_option("--intersection", ta.intersection, "detached or differentiable");
  tr->add_option("--log-every", ta.log_every, "Progress line interval (0: quiet)")->capture_default_str();

  ReconstructArgs ra;
  auto* rec = app.add_subcommand("reconstruct", "Extract a mesh and normal maps from a checkpoint");
  rec->fallthrough();
  rec->add_option("--checkpoint", ra.checkpoint, "checkpoint.mvas")->required();
  auto* rds = rec->add_option("--dataset", ra.dataset, "Dataset whose cameras get normal maps");
  rec->add_option("--cameras", ra.cameras, "cameras.json in world units")->excludes(rds);
  rec->add_option("--out", ra.out, "Output directory")->required();
  rec->add_option("--resolution", ra.resolution, "Marching-cubes samples per axis")->capture_default_str();
  rec->add_option("--bbox-half", ra.bbox_half, "Half extent of the normalized extraction box");
  rec->add_flag("!--no-normals", ra.normals, "Skip the normal maps");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "Score a reconstruction against a ground-truth dataset");
  ev->fallthrough();
  ev->add_option("--reconstruction", ea.reconstruction, "Reconstruction or dataset directory")->required();
  ev->add_option("--dataset", ea.dataset, "Ground-truth dataset with normals and depth")->required();
  ev->add_option("--out", ea.out, "Metrics JSON (default: <reconstruction>/metrics.json)");
  ev->add_option("--tau", ea.tau, "F-score threshold in world units")->capture_default_str();

  AnalyzeArgs aa;
  auto* an = app.add_subcommand("tsc-analyze", "Rank of the tangent stack at query points");
  an->fallthrough();
  an->add_option("--dataset", aa.dataset, "Dataset directory")->required();
  auto* pts = an->add_option("--points", aa.points, "Text file with x y z per line");
  an->add_option("--grid", aa.grid, "Sample an n^3 grid instead")->excludes(pts);
  an->add_option("--grid-half", aa.grid_half, "Half extent of the grid")->capture_default_str();
  an->add_option("--visibility", aa.visibility, "depth or none")->capture_default_str();
  an->add_option("--depth-tolerance", aa.depth_tolerance, "Relative slack of the depth test")
      ->capture_default_str();
  an->add_option("--rank-lo", aa.rank_lo, "Singular-value ratio below which a direction is absent")
      ->capture_default_str();
  an->add_option("--rank-hi", aa.rank_hi, "Singular-value ratio above which a direction is present")
      ->capture_default_str();
  an->add_option("--out", aa.out, "Write the table as CSV here instead of stdout");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(std::move(reversed));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitInput;
  }
  if (seed_opt->count() > 0) g.seed = seed;
  Eigen::setNbThreads(g.threads);

  try {
    if (synth->parsed()) return cmd_synth(sa, g, out);
    if (norm->parsed()) return cmd_normalize(na, out, err);
    if (tr->parsed()) return cmd_train(ta, g, out);
    if (rec->parsed()) return cmd_reconstruct(ra, g, out);
    if (ev->parsed()) return cmd_eval(ea, out);
    if (an->parsed()) return cmd_tsc_analyze(aa, out, err);
  } catch (const Error& e) {
    err << "error (" << to_string(e.code()) << "): " << e.what() << "\n";
    return exit_code(e);
  } catch (const fs::filesystem_error& e) {
    err << "error (io): " << e.what() << "\n";
    return kExitInput;
  }
  return kExitInput;
}

}  // namespace mvas::cli
