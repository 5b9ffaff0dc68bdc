#include "mvas/field.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <string>

namespace mvas {

FieldEval SdfField::eval(const Vec3d& x) const {
  const BatchEval b = evaluate(x);
  FieldEval out;
  out.value = b.values[0];
  out.gradient = b.gradients.col(0);
  return out;
}

int Architecture::layer_in(int l) const {
  int in = l == 0 ? input_dim() : width;
  if (has_skip() && l == skip_layer) in += input_dim();
  return in;
}

int Architecture::layer_out(int l) const { return l == num_layers - 1 ? 1 : width; }

std::int64_t Architecture::parameter_count() const {
  std::int64_t n = 0;
  for (int l = 0; l < num_layers; ++l) {
    n += static_cast<std::int64_t>(layer_in(l)) * layer_out(l) + layer_out(l);
  }
  return n;
}

void Architecture::validate() const {
  if (num_layers < 1 || width < 1 || frequencies < 0 || !(beta > 0.0) ||
      !(init_radius > 0.0)) {
    throw Error(ErrorCode::InvalidSpec, "architecture: invalid layer sizes or constants");
  }
}

Eigen::VectorXd positional_encoding(const Vec3d& x, int frequencies) {
  Eigen::VectorXd out(6 * frequencies);
  double omega = std::numbers::pi;
  for (int k = 0; k < frequencies; ++k, omega *= 2.0) {
    for (int c = 0; c < 3; ++c) {
      out[6 * k + c] = std::sin(omega * x[c]);
      out[6 * k + 3 + c] = std::cos(omega * x[c]);
    }
  }
  return out;
}

FieldParams::FieldParams(Architecture arch) : arch_(arch) {
  arch_.validate();
  Eigen::Index offset = 0;
  for (int l = 0; l < arch_.num_layers; ++l) {
    offsets_.push_back(offset);
    offset += static_cast<Eigen::Index>(arch_.layer_in(l)) * arch_.layer_out(l) + arch_.layer_out(l);
  }
  theta_ = Eigen::VectorXd::Zero(offset);
}

Eigen::Map<Eigen::MatrixXd> FieldParams::weight(int l) {
  return {theta_.data() + weight_offset(l), arch_.layer_out(l), arch_.layer_in(l)};
}

Eigen::Map<const Eigen::MatrixXd> FieldParams::weight(int l) const {
  return {theta_.data() + weight_offset(l), arch_.layer_out(l), arch_.layer_in(l)};
}

Eigen::Map<Eigen::VectorXd> FieldParams::bias(int l) {
  const Eigen::Index n = static_cast<Eigen::Index>(arch_.layer_in(l)) * arch_.layer_out(l);
  return {theta_.data() + weight_offset(l) + n, arch_.layer_out(l)};
}

Eigen::Map<const Eigen::VectorXd> FieldParams::bias(int l) const {
  const Eigen::Index n = static_cast<Eigen::Index>(arch_.layer_in(l)) * arch_.layer_out(l);
  return {theta_.data() + weight_offset(l) + n, arch_.layer_out(l)};
}

FieldParams init_sphere(const Architecture& arch, std::uint64_t seed) {
  FieldParams p(arch);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int last = arch.num_layers - 1;

  // First layer: pairs of units relu(a.x), relu(-a.x) whose directions a
  // cover the sphere evenly (a randomly rotated Fibonacci lattice), so the
  // sum of all units is proportional to |x| in every direction.
  Eigen::Quaterniond q(gauss(rng), gauss(rng), gauss(rng), gauss(rng));
  const Mat3d rot = q.normalized().toRotationMatrix();
  if (last > 0) {
    auto W = p.weight(0);
    W.setZero();
    const int pairs = arch.width / 2;
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    for (int j = 0; j < pairs; ++j) {
      const double z = 1.0 - (2.0 * j + 1.0) / pairs;
      const double rad = std::sqrt(std::max(0.0, 1.0 - z * z));
      const Vec3d a = rot * Vec3d(rad * std::cos(golden * j), rad * std::sin(golden * j), z);
      W.block(2 * j, 0, 1, 3) = a.transpose();
      W.block(2 * j + 1, 0, 1, 3) = -a.transpose();
    }
  }
  // Hidden layers pass activations through unchanged; softplus is close to
  // the identity on the non-negative activations they receive.
  for (int l = 1; l < last; ++l) {
    auto W = p.weight(l);
    W.setZero();
    const double scale = (arch.has_skip() && l == arch.skip_layer) ? std::sqrt(2.0) : 1.0;
    W.leftCols(arch.width).diagonal().setConstant(scale);
  }
  p.weight(last).setConstant(1.0);

  // Fit the output scale and offset so that f(x) ~ |x| - r over the unit
  // ball; this also absorbs the softplus floor log(2)/beta of inactive units.
  constexpr int kSamples = 512;
  Points3d pts(3, kSamples);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int i = 0; i < kSamples; ++i) {
    Vec3d d(gauss(rng), gauss(rng), gauss(rng));
    pts.col(i) = d.normalized() * std::cbrt(unif(rng));
  }
  const Eigen::RowVectorXd raw = forward_values(p, pts);
  Eigen::MatrixXd A(kSamples, 2);
  A.col(0) = raw.transpose();
  A.col(1).setOnes();
  const Eigen::VectorXd target = pts.colwise().norm().transpose().array() - arch.init_radius;
  const Eigen::Vector2d fit = A.colPivHouseholderQr().solve(target);
  p.weight(last) *= fit[0];
  p.bias(last)[0] = fit[1];
  return p;
}

FieldParams init_random(const Architecture& arch, std::uint64_t seed, double scale) {
  FieldParams p(arch);
  std::mt19937_64 rng(seed);
  for (int l = 0; l < arch.num_layers; ++l) {
    std::normal_distribution<double> dist(0.0, scale / std::sqrt(double(arch.layer_in(l))));
    auto W = p.weight(l);
    for (Eigen::Index i = 0; i < W.size(); ++i) W.data()[i] = dist(rng);
    std::normal_distribution<double> bdist(0.0, 0.1 * scale);
    auto b = p.bias(l);
    for (Eigen::Index i = 0; i < b.size(); ++i) b[i] = bdist(rng);
  }
  return p;
}

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;

struct Encoding {
  Eigen::MatrixXd e;                   // D x N
  std::array<Eigen::MatrixXd, 3> jac;  // de/dx_c
};

Encoding encode(const Points3d& x, int frequencies) {
  const Eigen::Index N = x.cols();
  const int D = 3 + 6 * frequencies;
  Encoding enc;
  enc.e.resize(D, N);
  for (auto& J : enc.jac) J = Eigen::MatrixXd::Zero(D, N);
  enc.e.topRows(3) = x;
  for (int c = 0; c < 3; ++c) enc.jac[c].row(c).setOnes();
  double omega = std::numbers::pi;
  for (int k = 0; k < frequencies; ++k, omega *= 2.0) {
    for (int c = 0; c < 3; ++c) {
      const int si = 3 + 6 * k + c;
      const int ci = si + 3;
      for (Eigen::Index n = 0; n < N; ++n) {
        const double s = std::sin(omega * x(c, n));
        const double co = std::cos(omega * x(c, n));
        enc.e(si, n) = s;
        enc.e(ci, n) = co;
        enc.jac[c](si, n) = omega * co;
        enc.jac[c](ci, n) = -omega * s;
      }
    }
  }
  return enc;
}

Eigen::MatrixXd encode_values(const Points3d& x, int frequencies) {
  const Eigen::Index N = x.cols();
  Eigen::MatrixXd e(3 + 6 * frequencies, N);
  e.topRows(3) = x;
  double omega = std::numbers::pi;
  for (int k = 0; k < frequencies; ++k, omega *= 2.0) {
    for (int c = 0; c < 3; ++c) {
      for (Eigen::Index n = 0; n < N; ++n) {
        e(3 + 6 * k + c, n) = std::sin(omega * x(c, n));
        e(3 + 6 * k + 3 + c, n) = std::cos(omega * x(c, n));
      }
    }
  }
  return e;
}

// softplus(z) = log(1 + exp(beta z)) / beta, and its first two derivatives.
// Written as array expressions so Eigen vectorises exp and log; log(1 + e)
// instead of log1p(e) costs at most ~1e-18 absolute after the 1/beta.
Eigen::MatrixXd softplus(const Eigen::MatrixXd& z, double beta) {
  const auto e = (-beta * z.array().abs()).exp();
  return (z.array().max(0.0) + (1.0 + e).log() / beta).matrix();
}

Eigen::MatrixXd softplus_d1(const Eigen::MatrixXd& z, double beta) {
  return (1.0 / (1.0 + (-beta * z.array()).exp())).matrix();
}

Eigen::MatrixXd softplus_d2(const Eigen::MatrixXd& s1, double beta) {
  return (beta * s1.array() * (1.0 - s1.array())).matrix();
}

Eigen::MatrixXd stack_rows(const Eigen::MatrixXd& top, const Eigen::MatrixXd& bottom) {
  Eigen::MatrixXd out(top.rows() + bottom.rows(), top.cols());
  out.topRows(top.rows()) = top * kInvSqrt2;
  out.bottomRows(bottom.rows()) = bottom * kInvSqrt2;
  return out;
}

void check_finite(const Eigen::MatrixXd& z, int layer) {
  if (!z.allFinite()) {
    throw Error(ErrorCode::NumericFailure,
                "neural sdf: non-finite activation in layer " + std::to_string(layer));
  }
}

}  // namespace

BatchEval forward(const FieldParams& params, const Points3d& x, ForwardCache* cache) {
  const Architecture& arch = params.arch();
  const Encoding enc = encode(x, arch.frequencies);
  Eigen::MatrixXd a = enc.e;
  std::array<Eigen::MatrixXd, 3> J = enc.jac;
  if (cache) {
    cache->points = x;
    cache->inputs.assign(static_cast<std::size_t>(arch.num_layers), {});
    cache->input_jac.assign(static_cast<std::size_t>(arch.num_layers), {});
    cache->pre.assign(static_cast<std::size_t>(arch.num_layers), {});
    cache->pre_jac.assign(static_cast<std::size_t>(arch.num_layers), {});
  }

  BatchEval out;
  for (int l = 0; l < arch.num_layers; ++l) {
    if (arch.has_skip() && l == arch.skip_layer) {
      a = stack_rows(a, enc.e);
      for (int c = 0; c < 3; ++c) J[c] = stack_rows(J[c], enc.jac[c]);
    }
    const auto W = params.weight(l);
    Eigen::MatrixXd z = W * a;
    z.colwise() += params.bias(l);
    check_finite(z, l);
    std::array<Eigen::MatrixXd, 3> Jz;
    for (int c = 0; c < 3; ++c) Jz[c].noalias() = W * J[c];

    const bool last = l == arch.num_layers - 1;
    if (last) {
      out.values = z.row(0);
      out.gradients.resize(3, x.cols());
      for (int c = 0; c < 3; ++c) out.gradients.row(c) = Jz[c].row(0);
    }
    if (cache) {
      const auto i = static_cast<std::size_t>(l);
      cache->inputs[i] = std::move(a);
      cache->input_jac[i] = std::move(J);
      cache->pre[i] = z;
      cache->pre_jac[i] = Jz;
    }
    if (!last) {
      const Eigen::MatrixXd s1 = softplus_d1(z, arch.beta);
      a = softplus(z, arch.beta);
      for (int c = 0; c < 3; ++c) J[c] = s1.cwiseProduct(Jz[c]);
    }
  }
  return out;
}

Eigen::RowVectorXd forward_values(const FieldParams& params, const Points3d& x) {
  const Architecture& arch = params.arch();
  const Eigen::MatrixXd e = encode_values(x, arch.frequencies);
  Eigen::MatrixXd a = e;
  for (int l = 0; l < arch.num_layers; ++l) {
    if (arch.has_skip() && l == arch.skip_layer) a = stack_rows(a, e);
    Eigen::MatrixXd z = params.weight(l) * a;
    z.colwise() += params.bias(l);
    check_finite(z, l);
    if (l == arch.num_layers - 1) return z.row(0);
    a = softplus(z, arch.beta);
  }
  return {};
}

FieldVjp backward(const FieldParams& params, const ForwardCache& cache,
                  const Eigen::RowVectorXd& f_bar, const Points3d& g_bar) {
  const Architecture& arch = params.arch();
  const Eigen::Index N = cache.points.cols();
  const int D = arch.input_dim();

  FieldVjp out;
  out.params = Eigen::VectorXd::Zero(params.size());

  Eigen::MatrixXd z_bar = f_bar;
  std::array<Eigen::MatrixXd, 3> Jz_bar;
  for (int c = 0; c < 3; ++c) Jz_bar[c] = g_bar.row(c);

  Eigen::MatrixXd e_bar = Eigen::MatrixXd::Zero(D, N);
  std::array<Eigen::MatrixXd, 3> Je_bar;
  for (auto& m : Je_bar) m = Eigen::MatrixXd::Zero(D, N);

  for (int l = arch.num_layers - 1; l >= 0; --l) {
    const auto i = static_cast<std::size_t>(l);
    const Eigen::MatrixXd& in = cache.inputs[i];
    const auto& Jin = cache.input_jac[i];
    const auto W = params.weight(l);

    Eigen::Map<Eigen::MatrixXd> gW(out.params.data() + params.weight_offset(l), W.rows(),
                                   W.cols());
    Eigen::Map<Eigen::VectorXd> gb(out.params.data() + params.weight_offset(l) + W.size(),
                                   W.rows());
    gW.noalias() += z_bar * in.transpose();
    for (int c = 0; c < 3; ++c) gW.noalias() += Jz_bar[c] * Jin[c].transpose();
    gb += z_bar.rowwise().sum();

    Eigen::MatrixXd in_bar = W.transpose() * z_bar;
    std::array<Eigen::MatrixXd, 3> Jin_bar;
    for (int c = 0; c < 3; ++c) Jin_bar[c].noalias() = W.transpose() * Jz_bar[c];

    Eigen::MatrixXd a_bar;
    std::array<Eigen::MatrixXd, 3> Ja_bar;
    if (arch.has_skip() && l == arch.skip_layer) {
      const Eigen::Index h = in_bar.rows() - D;
      a_bar = in_bar.topRows(h) * kInvSqrt2;
      e_bar += in_bar.bottomRows(D) * kInvSqrt2;
      for (int c = 0; c < 3; ++c) {
        Ja_bar[c] = Jin_bar[c].topRows(h) * kInvSqrt2;
        Je_bar[c] += Jin_bar[c].bottomRows(D) * kInvSqrt2;
      }
    } else {
      a_bar = std::move(in_bar);
      Ja_bar = std::move(Jin_bar);
    }

    if (l == 0) {
      e_bar += a_bar;
      for (int c = 0; c < 3; ++c) Je_bar[c] += Ja_bar[c];
      break;
    }

    // a_l = softplus(z_{l-1}),  J_l = softplus'(z_{l-1}) * Jz_{l-1}
    const Eigen::MatrixXd& z = cache.pre[i - 1];
    const auto& Jz = cache.pre_jac[i - 1];
    const Eigen::MatrixXd s1 = softplus_d1(z, arch.beta);
    const Eigen::MatrixXd s2 = softplus_d2(s1, arch.beta);
    Eigen::MatrixXd mixed = Eigen::MatrixXd::Zero(z.rows(), z.cols());
    for (int c = 0; c < 3; ++c) mixed += Ja_bar[c].cwiseProduct(Jz[c]);
    z_bar = s1.cwiseProduct(a_bar) + s2.cwiseProduct(mixed);
    for (int c = 0; c < 3; ++c) Jz_bar[c] = s1.cwiseProduct(Ja_bar[c]);
  }

  // Encoding feature j depends on one coordinate only, so its Jacobian
  // column for any other coordinate is constant and does not feed x_bar.
  out.points = Points3d::Zero(3, N);
  for (int c = 0; c < 3; ++c) out.points.row(c) += e_bar.row(c);
  double omega = std::numbers::pi;
  for (int k = 0; k < arch.frequencies; ++k, omega *= 2.0) {
    for (int c = 0; c < 3; ++c) {
      const int si = 3 + 6 * k + c;
      const int ci = si + 3;
      for (Eigen::Index n = 0; n < N; ++n) {
        const double xv = cache.points(c, n);
        const double s = std::sin(omega * xv);
        const double co = std::cos(omega * xv);
        out.points(c, n) += e_bar(si, n) * omega * co - e_bar(ci, n) * omega * s;
        out.points(c, n) += -omega * omega * (Je_bar[c](si, n) * s + Je_bar[c](ci, n) * co);
      }
    }
  }

  if (!out.params.allFinite()) {
    throw Error(ErrorCode::NumericFailure, "neural sdf: non-finite parameter gradient");
  }
  return out;
}

Eigen::RowVectorXd NeuralSdf::values(const Points3d& x) const {
  return forward_values(*params_, x);
}

BatchEval NeuralSdf::evaluate(const Points3d& x) const { return forward(*params_, x); }

}  // namespace mvas
