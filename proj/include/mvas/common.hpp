#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mvas {

template <typename Scalar>
using Vec3 = Eigen::Matrix<Scalar, 3, 1>;
template <typename Scalar>
using Mat3 = Eigen::Matrix<Scalar, 3, 3>;

using Vec3d = Vec3<double>;
using Mat3d = Mat3<double>;
using Points3d = Eigen::Matrix<double, 3, Eigen::Dynamic>;

enum class ErrorCode {
  BehindCamera,
  UndefinedAzimuth,
  EmptyInput,
  DegenerateNormal,
  DegenerateRig,
  NumericFailure,
  InvalidStart,
  UnstableIntersection,
  Render,
  Io,
  Format,
  Dataset,
  Metric,
  InvalidSpec,
};

const char* to_string(ErrorCode code);

/// Every library failure carries a machine-readable code so the CLI can map
/// it onto an exit status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// splitmix64 finaliser; spreads related seeds over independent streams.
inline std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace mvas
