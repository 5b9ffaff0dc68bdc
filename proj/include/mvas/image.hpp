#pragma once

#include "mvas/common.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

namespace mvas {

/// Dense row-major image; pixel (col, row) has its centre at pixel
/// coordinates (u, v) = (col, row).
template <typename T>
class Image {
 public:
  Image() = default;
  Image(int width, int height, T fill = T{})
      : width_(width), height_(height),
        data_(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill) {}

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return data_.size(); }

  bool contains(int col, int row) const {
    return col >= 0 && row >= 0 && col < width_ && row < height_;
  }

  T& operator()(int col, int row) { return data_[index(col, row)]; }
  const T& operator()(int col, int row) const { return data_[index(col, row)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  bool same_shape(int w, int h) const { return w == width_ && h == height_; }
  template <typename U>
  bool same_shape(const Image<U>& other) const {
    return same_shape(other.width(), other.height());
  }

  bool operator==(const Image&) const = default;

 private:
  std::size_t index(int col, int row) const {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(width_) +
           static_cast<std::size_t>(col);
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<T> data_;
};

// In-memory maps are double precision; the file formats store float32.

/// Azimuth in radians, [0, 2pi); NaN marks an undefined pixel.
class AzimuthMap : public Image<double> {
 public:
  using Image<double>::Image;
  static constexpr double invalid() { return std::numeric_limits<double>::quiet_NaN(); }
  bool valid(int col, int row) const { return !std::isnan((*this)(col, row)); }
};

using SilhouetteMask = Image<std::uint8_t>;

/// World-frame unit normals; NaN triplets where undefined.
using NormalMap = Image<Eigen::Vector3d>;

/// Ray parameter of the first hit along each pixel ray; NaN where missed.
using DepthMap = Image<double>;

inline bool is_valid_normal(const Eigen::Vector3d& n) { return !n.hasNaN(); }

inline Eigen::Vector3d invalid_normal() {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  return {nan, nan, nan};
}

/// Nearest-neighbour pixel for continuous pixel coordinates; false if outside.
inline bool nearest_pixel(double u, double v, int width, int height, int& col, int& row) {
  if (!std::isfinite(u) || !std::isfinite(v)) return false;
  const double cu = std::floor(u + 0.5);
  const double cv = std::floor(v + 0.5);
  if (cu < 0 || cv < 0 || cu >= width || cv >= height) return false;
  col = static_cast<int>(cu);
  row = static_cast<int>(cv);
  return true;
}

}  // namespace mvas
