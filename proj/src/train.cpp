#include "mvas/train.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

namespace mvas {

namespace {

using json = nlohmann::json;

void require(bool ok, const char* what) {
  if (!ok) throw Error(ErrorCode::InvalidSpec, std::string("train config: ") + what);
}

}  // namespace

const char* to_string(TscMode mode) {
  switch (mode) {
    case TscMode::MultiView: return "multi-view";
    case TscMode::HalfPi: return "half-pi";
    case TscMode::SingleViewAblation: return "single-view";
  }
  return "unknown";
}

TscMode parse_tsc_mode(const std::string& name) {
  for (const TscMode m : {TscMode::MultiView, TscMode::HalfPi, TscMode::SingleViewAblation}) {
    if (name == to_string(m)) return m;
  }
  throw Error(ErrorCode::InvalidSpec,
              "unknown tsc mode '" + name + "' (multi-view, half-pi, single-view)");
}

const char* to_string(IntersectionMode mode) {
  return mode == IntersectionMode::Detached ? "detached" : "differentiable";
}

IntersectionMode parse_intersection_mode(const std::string& name) {
  if (name == "detached") return IntersectionMode::Detached;
  if (name == "differentiable") return IntersectionMode::Differentiable;
  throw Error(ErrorCode::InvalidSpec,
              "unknown intersection mode '" + name + "' (detached, differentiable)");
}

void TrainConfig::validate() const {
  arch.validate();
  require(lambda1 >= 0.0 && lambda2 >= 0.0, "lambda1 and lambda2 must be >= 0");
  require(lr > 0.0 && std::isfinite(lr), "lr must be positive");
  require(epochs >= 1, "epochs must be >= 1");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(alpha0 > 0.0, "alpha0 must be positive");
  require(schedule_epochs >= 1, "schedule_epochs must be >= 1");
  require(lr_factor > 0.0 && alpha_factor > 0.0, "schedule factors must be positive");
  require(dilation >= 0, "dilation must be >= 0");
  require(eikonal_samples >= 0, "eikonal_samples must be >= 0");
  require(bbox_half > 0.0 && scene_radius > 0.0, "bbox_half and scene_radius must be positive");
  require(max_iterations >= 0, "max_iterations must be >= 0");
  require(trace.epsilon > 0.0 && trace.max_steps >= 1, "bad sphere tracing settings");
  require(visibility.epsilon > 0.0 && visibility.max_steps >= 1 && visibility.push >= 0.0,
          "bad visibility settings");
  require(min_sdf.samples >= 2 && min_sdf.refine_iterations >= 0, "bad min-sdf settings");
}

TrainConfig train_config_from_json(const std::string& text, TrainConfig base) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidSpec, std::string("train config: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::InvalidSpec, "train config: expected an object");

  TrainConfig c = base;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "width") c.arch.width = value.get<int>();
      else if (key == "num_layers") c.arch.num_layers = value.get<int>();
      else if (key == "frequencies") c.arch.frequencies = value.get<int>();
      else if (key == "beta") c.arch.beta = value.get<double>();
      else if (key == "skip_layer") c.arch.skip_layer = value.get<int>();
      else if (key == "init_radius") c.arch.init_radius = value.get<double>();
      else if (key == "lambda1") c.lambda1 = value.get<double>();
      else if (key == "lambda2") c.lambda2 = value.get<double>();
      else if (key == "lr") c.lr = value.get<double>();
      else if (key == "epochs") c.epochs = value.get<int>();
      else if (key == "batch_size") c.batch_size = value.get<int>();
      else if (key == "alpha0") c.alpha0 = value.get<double>();
      else if (key == "schedule_epochs") c.schedule_epochs = value.get<int>();
      else if (key == "lr_factor") c.lr_factor = value.get<double>();
      else if (key == "alpha_factor") c.alpha_factor = value.get<double>();
      else if (key == "dilation") c.dilation = value.get<int>();
      else if (key == "eikonal_samples") c.eikonal_samples = value.get<int>();
      else if (key == "bbox_half") c.bbox_half = value.get<double>();
      else if (key == "scene_radius") c.scene_radius = value.get<double>();
      else if (key == "tsc_mode") c.tsc_mode = parse_tsc_mode(value.get<std::string>());
      else if (key == "intersection") c.intersection = parse_intersection_mode(value.get<std::string>());
      else if (key == "max_iterations") c.max_iterations = value.get<std::int64_t>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "trace_epsilon") c.trace.epsilon = value.get<double>();
      else if (key == "trace_max_steps") c.trace.max_steps = value.get<int>();
      else if (key == "visibility_push") c.visibility.push = value.get<double>();
      else if (key == "visibility_epsilon") c.visibility.epsilon = value.get<double>();
      else if (key == "visibility_max_steps") c.visibility.max_steps = value.get<int>();
      else if (key == "min_sdf_samples") c.min_sdf.samples = value.get<int>();
      else if (key == "min_sdf_refine") c.min_sdf.refine_iterations = value.get<int>();
      else throw Error(ErrorCode::InvalidSpec, "train config: unknown key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidSpec, std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string to_json(const TrainConfig& c) {
  json j;
  j["width"] = c.arch.width;
  j["num_layers"] = c.arch.num_layers;
  j["frequencies"] = c.arch.frequencies;
  j["beta"] = c.arch.beta;
  j["skip_layer"] = c.arch.skip_layer;
  j["init_radius"] = c.arch.init_radius;
  j["lambda1"] = c.lambda1;
  j["lambda2"] = c.lambda2;
  j["lr"] = c.lr;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["alpha0"] = c.alpha0;
  j["schedule_epochs"] = c.schedule_epochs;
  j["lr_factor"] = c.lr_factor;
  j["alpha_factor"] = c.alpha_factor;
  j["dilation"] = c.dilation;
  j["eikonal_samples"] = c.eikonal_samples;
  j["bbox_half"] = c.bbox_half;
  j["scene_radius"] = c.scene_radius;
  j["tsc_mode"] = to_string(c.tsc_mode);
  j["intersection"] = to_string(c.intersection);
  j["max_iterations"] = c.max_iterations;
  j["seed"] = c.seed;
  j["trace_epsilon"] = c.trace.epsilon;
  j["trace_max_steps"] = c.trace.max_steps;
  j["visibility_push"] = c.visibility.push;
  j["visibility_epsilon"] = c.visibility.epsilon;
  j["visibility_max_steps"] = c.visibility.max_steps;
  j["min_sdf_samples"] = c.min_sdf.samples;
  j["min_sdf_refine"] = c.min_sdf.refine_iterations;
  return j.dump(2);
}

// ---------------------------------------------------------------------------

SilhouetteMask dilate(const SilhouetteMask& mask, int iterations) {
  const int w = mask.width();
  const int h = mask.height();
  if (iterations <= 0) return mask;
  // Repeated 3x3 dilation is a Chebyshev ball of radius `iterations`, which
  // separates into a horizontal and a vertical running maximum.
  auto pass = [&](const SilhouetteMask& in, bool horizontal) {
    SilhouetteMask out(w, h, 0);
    const int outer = horizontal ? h : w;
    const int inner = horizontal ? w : h;
    std::vector<int> prefix(static_cast<std::size_t>(inner) + 1);
    for (int o = 0; o < outer; ++o) {
      for (int i = 0; i < inner; ++i) {
        const bool on = horizontal ? in(i, o) != 0 : in(o, i) != 0;
        prefix[static_cast<std::size_t>(i) + 1] = prefix[static_cast<std::size_t>(i)] + (on ? 1 : 0);
      }
      for (int i = 0; i < inner; ++i) {
        const int lo = std::max(0, i - iterations);
        const int hi = std::min(inner, i + iterations + 1);
        if (prefix[static_cast<std::size_t>(hi)] > prefix[static_cast<std::size_t>(lo)]) {
          (horizontal ? out(i, o) : out(o, i)) = 1;
        }
      }
    }
    return out;
  };
  return pass(pass(mask, true), false);
}

std::vector<PixelSample> dilated_pixels(std::span<const SilhouetteMask> masks, int dilation) {
  std::vector<PixelSample> out;
  for (std::size_t v = 0; v < masks.size(); ++v) {
    const SilhouetteMask d = dilate(masks[v], dilation);
    for (int row = 0; row < d.height(); ++row) {
      for (int col = 0; col < d.width(); ++col) {
        if (d(col, row)) out.push_back({static_cast<int>(v), col, row});
      }
    }
  }
  return out;
}

PixelSampler::PixelSampler(std::span<const SilhouetteMask> masks, int dilation, std::uint64_t seed)
    : pixels_(dilated_pixels(masks, dilation)), seed_(seed) {
  if (pixels_.empty()) throw Error(ErrorCode::Dataset, "no pixels inside the dilated silhouettes");
}

std::int64_t PixelSampler::iterations_per_epoch(int batch_size) const {
  const auto n = static_cast<std::int64_t>(pixels_.size());
  return (n + batch_size - 1) / batch_size;
}

std::vector<PixelSample> PixelSampler::sample(int batch_size, int epoch, std::int64_t iteration) {
  if (batch_size < 1) throw Error(ErrorCode::InvalidSpec, "sample_pixels: batch size must be >= 1");
  if (epoch != cached_epoch_) {
    order_.resize(pixels_.size());
    std::iota(order_.begin(), order_.end(), 0u);
    std::mt19937_64 rng(mix_seed(seed_ ^ mix_seed(0x5eed0000ULL + static_cast<std::uint64_t>(epoch))));
    for (std::size_t i = order_.size(); i > 1; --i) {
      std::swap(order_[i - 1], order_[rng() % i]);
    }
    cached_epoch_ = epoch;
  }
  const std::size_t n = pixels_.size();
  std::vector<PixelSample> out;
  out.reserve(static_cast<std::size_t>(batch_size));
  std::size_t k = static_cast<std::size_t>(iteration) * static_cast<std::size_t>(batch_size) % n;
  for (int i = 0; i < batch_size; ++i, k = (k + 1) % n) out.push_back(pixels_[order_[k]]);
  return out;
}

std::vector<PixelSample> sample_pixels(std::span<const SilhouetteMask> masks, int batch_size,
                                       int dilation, std::uint64_t seed, int epoch,
                                       std::int64_t iteration) {
  PixelSampler sampler(masks, dilation, seed);
  return sampler.sample(batch_size, epoch, iteration);
}

// ---------------------------------------------------------------------------

namespace {

struct TangentCandidate {
  std::size_t sample;
  ViewTangent tangent;
};

// Cheap per-view tests; the reverse march is left to the caller so it can be
// batched.
std::optional<ViewTangent> lookup_tangent(const Dataset& data, std::size_t view, const Vec3d& x) {
  const Camerad& cam = data.cameras[view];
  const Vec3d xc = cam.pose.R * x + cam.pose.t;
  if (!(xc.z() > 0.0)) return std::nullopt;
  const Projection<double> p = project(cam, x);
  int col = 0;
  int row = 0;
  if (!nearest_pixel(p.u, p.v, cam.intrinsics.width, cam.intrinsics.height, col, row)) {
    return std::nullopt;
  }
  const ViewData& vd = data.views[view];
  if (!vd.mask(col, row) || !vd.azimuth.valid(col, row)) return std::nullopt;
  const double phi = vd.azimuth(col, row);
  return ViewTangent{static_cast<int>(view), azimuth_to_tangent(cam.pose, phi),
                     tangent_half_pi(cam.pose, phi)};
}

// Tangent at the pixel a surface sample was traced from.
std::optional<ViewTangent> pixel_tangent(const Dataset& data, const PixelSample& p) {
  const ViewData& vd = data.views[static_cast<std::size_t>(p.view)];
  if (!vd.azimuth.valid(p.col, p.row)) return std::nullopt;
  const auto& pose = data.cameras[static_cast<std::size_t>(p.view)].pose;
  const double phi = vd.azimuth(p.col, p.row);
  return ViewTangent{p.view, azimuth_to_tangent(pose, phi), tangent_half_pi(pose, phi)};
}

// `origin[s]` is the view sample s was traced from, or -1. That view sees the
// point by construction, so it is not marched again.
void gather_visible(const SdfField& field, const Dataset& data, const VisibilityConfig& config,
                    std::vector<SurfaceSample>& samples, std::span<const int> origin,
                    PreparedBatch* stats) {
  std::vector<TangentCandidate> candidates;
  std::vector<VisibilityQuery> queries;
  for (std::size_t s = 0; s < samples.size(); ++s) {
    for (std::size_t v = 0; v < data.size(); ++v) {
      if (!origin.empty() && origin[s] == static_cast<int>(v)) continue;
      if (auto t = lookup_tangent(data, v, samples[s].x)) {
        candidates.push_back({s, *t});
        queries.push_back({samples[s].x, data.cameras[v].center()});
      }
    }
  }
  const auto outcomes = visibility_batch(field, queries, config);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (stats) {
      ++stats->visibility_queries;
      stats->visibility_steps += outcomes[i].steps;
      if (outcomes[i].status == Visibility::MaxStepsExceeded) ++stats->visibility_capped;
    }
    if (outcomes[i].visible()) samples[candidates[i].sample].tangents.push_back(candidates[i].tangent);
  }
}

}  // namespace

std::vector<ViewTangent> visible_tangents(const SdfField& field, const Dataset& data,
                                          const Vec3d& x, const VisibilityConfig& config) {
  std::vector<SurfaceSample> one(1);
  one[0].x = x;
  gather_visible(field, data, config, one, {}, nullptr);
  return one[0].tangents;
}

PreparedBatch prepare_batch(const SdfField& field, const Dataset& data,
                            std::vector<PixelSample> pixels, const TrainConfig& config) {
  PreparedBatch batch;
  batch.batch_size = static_cast<int>(pixels.size());
  batch.pixels = std::move(pixels);

  std::vector<Ray> rays;
  rays.reserve(batch.pixels.size());
  for (const PixelSample& p : batch.pixels) {
    if (p.view < 0 || static_cast<std::size_t>(p.view) >= data.size()) {
      throw Error(ErrorCode::Dataset, "prepare_batch: pixel refers to a missing view");
    }
    rays.push_back(camera_ray(data.cameras[static_cast<std::size_t>(p.view)], p.col, p.row,
                              config.scene_radius));
  }
  const auto traced = sphere_trace_batch(field, rays, config.trace);

  std::vector<Ray> background_rays;
  for (std::size_t i = 0; i < batch.pixels.size(); ++i) {
    const PixelSample& p = batch.pixels[i];
    const double label = data.views[static_cast<std::size_t>(p.view)].mask(p.col, p.row) ? 1.0 : 0.0;
    if (traced[i].status == TraceStatus::Hit && label > 0.0) {
      SurfaceSample s;
      s.pixel = static_cast<int>(i);
      s.x = traced[i].hit.x;
      s.dir = rays[i].dir;
      batch.surface.push_back(std::move(s));
    } else {
      BackgroundSample b;
      b.pixel = static_cast<int>(i);
      b.label = label;
      batch.background.push_back(b);
      background_rays.push_back(rays[i]);
    }
  }

  if (!batch.surface.empty()) {
    Points3d X(3, static_cast<Eigen::Index>(batch.surface.size()));
    for (std::size_t j = 0; j < batch.surface.size(); ++j) X.col(static_cast<Eigen::Index>(j)) = batch.surface[j].x;
    const BatchEval ev = field.evaluate(X);
    std::vector<SurfaceSample> kept;
    kept.reserve(batch.surface.size());
    for (std::size_t j = 0; j < batch.surface.size(); ++j) {
      SurfaceSample& s = batch.surface[j];
      s.f0 = ev.values[static_cast<Eigen::Index>(j)];
      s.g0 = ev.gradients.col(static_cast<Eigen::Index>(j));
      if (config.intersection == IntersectionMode::Differentiable &&
          !(std::abs(s.g0.dot(s.dir)) > kGrazingThreshold)) {
        ++batch.grazing;
        continue;
      }
      kept.push_back(std::move(s));
    }
    batch.surface = std::move(kept);

    std::vector<int> origin;
    origin.reserve(batch.surface.size());
    for (SurfaceSample& s : batch.surface) {
      const PixelSample& p = batch.pixels[static_cast<std::size_t>(s.pixel)];
      if (auto t = pixel_tangent(data, p)) s.tangents.push_back(*t);
      origin.push_back(p.view);
    }
    if (config.tsc_mode != TscMode::SingleViewAblation) {
      gather_visible(field, data, config.visibility, batch.surface, origin, &batch);
    }
    for (const SurfaceSample& s : batch.surface) {
      if (s.tangents.empty()) ++batch.no_views;
    }
  }

  if (!background_rays.empty()) {
    const auto mins = min_sdf_batch(field, background_rays, config.min_sdf);
    for (std::size_t k = 0; k < mins.size(); ++k) {
      batch.background[k].x_star = background_rays[k].at(mins[k].t);
    }
  }
  return batch;
}

// ---------------------------------------------------------------------------

double tsc_point(const Vec3d& n, std::span<const ViewTangent> tangents, TscMode mode, Vec3d* n_bar) {
  if (tangents.empty()) {
    if (n_bar) n_bar->setZero();
    return 0.0;
  }
  if (mode == TscMode::HalfPi) {
    double sum = 0.0;
    Vec3d g = Vec3d::Zero();
    for (const ViewTangent& vt : tangents) {
      const double a = n.dot(vt.t);
      const double b = n.dot(vt.t_half);
      sum += a * a * b * b;
      g += 2.0 * a * b * b * vt.t + 2.0 * a * a * b * vt.t_half;
    }
    const double count = static_cast<double>(tangents.size());
    if (n_bar) *n_bar = g / count;
    return sum / count;
  }
  TscAccumulator<double> acc;
  for (const ViewTangent& vt : tangents) acc.add(vt.t);
  const Mat3d T = acc.averaged();
  const Vec3d Tn = T * n;
  if (n_bar) *n_bar = 2.0 * Tn;
  return n.dot(Tn);
}

double silhouette_point(double label, double f_star, double alpha, double* f_bar) {
  constexpr double kClamp = 1e-12;
  const double z = -alpha * f_star;
  // sigma(z) and 1 - sigma(z) without cancellation
  const double e = std::exp(-std::abs(z));
  const double p = z >= 0.0 ? 1.0 / (1.0 + e) : e / (1.0 + e);
  const double q = z >= 0.0 ? e / (1.0 + e) : 1.0 / (1.0 + e);
  const double pc = std::clamp(p, kClamp, 1.0 - kClamp);
  const double qc = std::clamp(q, kClamp, 1.0 - kClamp);
  const double loss = -(label * std::log(pc) + (1.0 - label) * std::log(qc));
  if (f_bar) {
    // chain rule through p = sigma(z), q = 1 - p; a clamped log has zero slope
    const double dp = (p == pc ? label * (-1.0 / pc) : 0.0) + (q == qc ? (1.0 - label) / qc : 0.0);
    *f_bar = dp * p * q * (-alpha);
  }
  return loss;
}

double tsc_loss(const SdfField& field, const PreparedBatch& batch, TscMode mode) {
  if (batch.surface.empty() || batch.batch_size == 0) return 0.0;
  Points3d X(3, static_cast<Eigen::Index>(batch.surface.size()));
  for (std::size_t j = 0; j < batch.surface.size(); ++j) X.col(static_cast<Eigen::Index>(j)) = batch.surface[j].x;
  const BatchEval ev = field.evaluate(X);
  double sum = 0.0;
  for (std::size_t j = 0; j < batch.surface.size(); ++j) {
    sum += tsc_point(ev.gradients.col(static_cast<Eigen::Index>(j)), batch.surface[j].tangents, mode);
  }
  const double loss = sum / batch.batch_size;
  if (!std::isfinite(loss)) throw Error(ErrorCode::NumericFailure, "tsc loss is not finite");
  return loss;
}

double silhouette_loss(const SdfField& field, const PreparedBatch& batch, double alpha) {
  if (batch.background.empty() || batch.batch_size == 0) return 0.0;
  Points3d X(3, static_cast<Eigen::Index>(batch.background.size()));
  for (std::size_t k = 0; k < batch.background.size(); ++k) X.col(static_cast<Eigen::Index>(k)) = batch.background[k].x_star;
  const Eigen::RowVectorXd f = field.values(X);
  double sum = 0.0;
  for (std::size_t k = 0; k < batch.background.size(); ++k) {
    sum += silhouette_point(batch.background[k].label, f[static_cast<Eigen::Index>(k)], alpha);
  }
  return sum / (alpha * batch.batch_size);
}

Points3d eikonal_points(const Eigen::AlignedBox3d& box, int count, std::uint64_t seed) {
  if (count < 1) throw Error(ErrorCode::InvalidSpec, "eikonal: count must be >= 1");
  std::mt19937_64 rng(mix_seed(seed));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Points3d P(3, count);
  const Vec3d lo = box.min();
  const Vec3d ext = box.sizes();
  for (int i = 0; i < count; ++i) {
    for (int c = 0; c < 3; ++c) P(c, i) = lo[c] + ext[c] * u(rng);
  }
  return P;
}

double eikonal_loss(const SdfField& field, const Points3d& points) {
  if (points.cols() == 0) throw Error(ErrorCode::InvalidSpec, "eikonal: no sample points");
  const BatchEval ev = field.evaluate(points);
  return (ev.gradients.colwise().norm().array() - 1.0).square().mean();
}

double eikonal_loss(const SdfField& field, const Eigen::AlignedBox3d& box, int count,
                    std::uint64_t seed) {
  return eikonal_loss(field, eikonal_points(box, count, seed));
}

LossBreakdown batch_loss(const FieldParams& params, const PreparedBatch& batch,
                         const Points3d& eikonal, const LossWeights& weights,
                         Eigen::VectorXd* grad) {
  const auto nS = static_cast<Eigen::Index>(batch.surface.size());
  const auto nB = static_cast<Eigen::Index>(batch.background.size());
  const Eigen::Index nE = eikonal.cols();
  const double P = batch.batch_size;
  const bool moving = weights.intersection == IntersectionMode::Differentiable && nS > 0;

  Points3d X0(3, nS);
  for (Eigen::Index j = 0; j < nS; ++j) X0.col(j) = batch.surface[static_cast<std::size_t>(j)].x;

  // Surface points follow the field in differentiable mode; at the tracing
  // parameters f(x0) = f0 and they stay put.
  Points3d Xs = X0;
  bool displaced = false;
  if (moving) {
    const Eigen::RowVectorXd f = forward_values(params, X0);
    for (Eigen::Index j = 0; j < nS; ++j) {
      const SurfaceSample& s = batch.surface[static_cast<std::size_t>(j)];
      const double df = f[j] - s.f0;
      if (df != 0.0) {
        Xs.col(j) = s.x - s.dir * (df / s.g0.dot(s.dir));
        displaced = true;
      }
    }
  }

  Points3d all(3, nS + nB + nE);
  all.leftCols(nS) = Xs;
  for (Eigen::Index k = 0; k < nB; ++k) all.col(nS + k) = batch.background[static_cast<std::size_t>(k)].x_star;
  all.rightCols(nE) = eikonal;

  ForwardCache cache;
  const BatchEval ev = forward(params, all, grad ? &cache : nullptr);

  Eigen::RowVectorXd f_bar = Eigen::RowVectorXd::Zero(all.cols());
  Points3d g_bar = Points3d::Zero(3, all.cols());

  LossBreakdown out;
  for (Eigen::Index j = 0; j < nS; ++j) {
    Vec3d nb;
    out.tsc += tsc_point(ev.gradients.col(j), batch.surface[static_cast<std::size_t>(j)].tangents,
                         weights.mode, &nb);
    g_bar.col(j) = nb / P;
  }
  if (P > 0) out.tsc /= P;

  for (Eigen::Index k = 0; k < nB; ++k) {
    double fb = 0.0;
    out.silhouette += silhouette_point(batch.background[static_cast<std::size_t>(k)].label,
                                       ev.values[nS + k], weights.alpha, &fb);
    f_bar[nS + k] = weights.lambda1 * fb / (weights.alpha * P);
  }
  if (P > 0) out.silhouette /= weights.alpha * P;

  if (nE > 0) {
    for (Eigen::Index e = 0; e < nE; ++e) {
      const Vec3d g = ev.gradients.col(nS + nB + e);
      const double norm = g.norm();
      out.eikonal += (norm - 1.0) * (norm - 1.0);
      if (norm > 0.0) g_bar.col(nS + nB + e) = weights.lambda2 * 2.0 * (norm - 1.0) / nE * g / norm;
    }
    out.eikonal /= static_cast<double>(nE);
  }

  out.total = out.tsc + weights.lambda1 * out.silhouette + weights.lambda2 * out.eikonal;
  if (!std::isfinite(out.total)) throw Error(ErrorCode::NumericFailure, "training loss is not finite");

  if (grad) {
    const FieldVjp vjp = backward(params, cache, f_bar, g_bar);
    *grad = vjp.params;
    if (moving) {
      // x = x0 - dir (f(x0) - f0) / (g0 . dir)  =>  f_bar(x0) = -(x_bar . dir) / (g0 . dir)
      Eigen::RowVectorXd f0_bar(nS);
      for (Eigen::Index j = 0; j < nS; ++j) {
        const SurfaceSample& s = batch.surface[static_cast<std::size_t>(j)];
        f0_bar[j] = -vjp.points.col(j).dot(s.dir) / s.g0.dot(s.dir);
      }
      if (!displaced) {
        Eigen::RowVectorXd fb = Eigen::RowVectorXd::Zero(all.cols());
        fb.leftCols(nS) = f0_bar;
        *grad += backward(params, cache, fb, Points3d::Zero(3, all.cols())).params;
      } else {
        ForwardCache c0;
        forward(params, X0, &c0);
        *grad += backward(params, c0, f0_bar, Points3d::Zero(3, nS)).params;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

void adam_step(AdamState& state, Eigen::VectorXd& params, const Eigen::VectorXd& grads, double lr) {
  if (params.size() != grads.size()) {
    throw Error(ErrorCode::InvalidSpec, "adam: gradient and parameter sizes differ");
  }
  if (state.m.size() == 0 && state.step == 0) state = AdamState(params.size());
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw Error(ErrorCode::InvalidSpec, "adam: moment and parameter sizes differ");
  }
  if (!grads.allFinite()) throw Error(ErrorCode::NumericFailure, "adam: non-finite gradient");
  ++state.step;
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads;
  state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads.cwiseAbs2();
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  params.array() -= lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + state.epsilon);
}

double scheduled(double initial, double factor, int epoch, int schedule_epochs) {
  return initial * std::pow(factor, epoch / schedule_epochs);
}

TrainResult train(const TrainConfig& config, const Dataset& data, const TrainOptions& options) {
  config.validate();
  validate(data);

  TrainResult result;
  result.params = options.initial ? *options.initial : init_sphere(config.arch, config.seed);
  if (!(result.params.arch() == config.arch)) {
    throw Error(ErrorCode::InvalidSpec, "train: initial parameters do not match the architecture");
  }
  if (!result.params.flat().allFinite()) {
    throw Error(ErrorCode::NumericFailure, "train: initial parameters are not finite");
  }

  std::vector<SilhouetteMask> masks;
  for (const ViewData& v : data.views) masks.push_back(v.mask);
  PixelSampler sampler(masks, config.dilation, config.seed);
  const std::int64_t per_epoch = sampler.iterations_per_epoch(config.batch_size);
  std::int64_t total = per_epoch * config.epochs;
  if (config.max_iterations > 0) total = std::min(total, config.max_iterations);

  const Eigen::AlignedBox3d box(Vec3d::Constant(-config.bbox_half), Vec3d::Constant(config.bbox_half));
  AdamState adam(result.params.size());

  auto save = [&](std::int64_t iteration, int epoch) {
    if (!options.checkpoint_dir) return;
    std::error_code ec;
    fs::create_directories(*options.checkpoint_dir, ec);
    if (ec) throw Error(ErrorCode::Io, "cannot create " + options.checkpoint_dir->string());
    write_checkpoint(*options.checkpoint_dir / kCheckpointName,
                     Checkpoint{result.params, options.normalization, iteration, epoch});
  };
  save(0, 0);

  for (std::int64_t it = 0; it < total; ++it) {
    const int epoch = static_cast<int>(it / per_epoch);
    IterationLog entry;
    entry.iteration = it;
    entry.epoch = epoch;
    entry.lr = scheduled(config.lr, config.lr_factor, epoch, config.schedule_epochs);
    entry.alpha = scheduled(config.alpha0, config.alpha_factor, epoch, config.schedule_epochs);

    const NeuralSdf field(result.params);
    PreparedBatch batch =
        prepare_batch(field, data, sampler.sample(config.batch_size, epoch, it % per_epoch), config);
    result.visibility_queries += batch.visibility_queries;
    result.visibility_steps += batch.visibility_steps;
    result.visibility_capped += batch.visibility_capped;

    const Points3d eik = eikonal_points(box, config.eikonal_count(),
                                        config.seed ^ mix_seed(0xe1c0000000ULL + static_cast<std::uint64_t>(it)));
    const LossWeights weights{config.lambda1, config.lambda2, entry.alpha, config.tsc_mode,
                              config.intersection};
    Eigen::VectorXd grad;
    entry.loss = batch_loss(result.params, batch, eik, weights, &grad);
    entry.surface = static_cast<int>(batch.surface.size());
    entry.background = static_cast<int>(batch.background.size());
    result.log.push_back(entry);
    if (options.on_iteration) options.on_iteration(entry);

    adam_step(adam, result.params.flat(), grad, entry.lr);
    if (!result.params.flat().allFinite()) {
      throw Error(ErrorCode::NumericFailure, "train: parameters became non-finite");
    }
    if ((it + 1) % per_epoch == 0 || it + 1 == total) {
      save(it + 1, static_cast<int>((it + 1) / per_epoch));
    }
  }
  return result;
}

void write_loss_csv(const fs::path& path, std::span<const IterationLog> log) {
  std::string text = "iteration,epoch,tsc,silhouette,eikonal,total,lr,alpha\n";
  char buf[512];
  for (const IterationLog& e : log) {
    std::snprintf(buf, sizeof buf, "%lld,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  static_cast<long long>(e.iteration), e.epoch, e.loss.tsc, e.loss.silhouette,
                  e.loss.eikonal, e.loss.total, e.lr, e.alpha);
    text += buf;
  }
  write_text(path, text);
}

}  // namespace mvas
