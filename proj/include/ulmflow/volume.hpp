#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "ulmflow/geometry.hpp"

namespace ulmflow {

/// Grid extent as (rows h, cols w, slices t). Storage is row-major with t
/// fastest: index = (h * W + w) * T + t.
struct Dims {
  int h = 0;
  int w = 0;
  int t = 0;

  std::size_t voxel_count() const {
    return static_cast<std::size_t>(h) * static_cast<std::size_t>(w) * static_cast<std::size_t>(t);
  }
  std::size_t index(int ih, int iw, int it) const {
    return (static_cast<std::size_t>(ih) * static_cast<std::size_t>(w) + static_cast<std::size_t>(iw)) *
               static_cast<std::size_t>(t) +
           static_cast<std::size_t>(it);
  }
  bool contains(int ih, int iw, int it) const {
    return ih >= 0 && ih < h && iw >= 0 && iw < w && it >= 0 && it < t;
  }
  int extent(int axis) const { return axis == 0 ? h : (axis == 1 ? w : t); }
  std::array<int, 3> coords(std::size_t idx) const {
    const int it = static_cast<int>(idx % static_cast<std::size_t>(t));
    const std::size_t rest = idx / static_cast<std::size_t>(t);
    return {static_cast<int>(rest / static_cast<std::size_t>(w)),
            static_cast<int>(rest % static_cast<std::size_t>(w)), it};
  }
  friend bool operator==(const Dims&, const Dims&) = default;
};

template <typename T>
class Volume {
 public:
  Volume() = default;
  explicit Volume(Dims dims, T fill = T{}) : dims_(dims), data_(dims.voxel_count(), fill) {}

  const Dims& dims() const { return dims_; }
  std::size_t size() const { return data_.size(); }

  T& operator()(int ih, int iw, int it) { return data_[dims_.index(ih, iw, it)]; }
  const T& operator()(int ih, int iw, int it) const { return data_[dims_.index(ih, iw, it)]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  friend bool operator==(const Volume&, const Volume&) = default;

 private:
  Dims dims_{};
  std::vector<T> data_;
};

struct Vec3f {
  float x = 0.0f;
  float y = 0.0f;
  float z = 0.0f;
  friend bool operator==(const Vec3f&, const Vec3f&) = default;
};

using ScalarVolume = Volume<float>;
using DoubleVolume = Volume<double>;
using MaskVolume = Volume<std::uint8_t>;

/// Sparse ULM acquisition: mean trajectory speed (m/s, 0 = empty), number
/// of trajectory events per voxel, and optionally the mean unit direction.
struct VolumeBundle {
  Dims dims{};
  std::array<double, 3> voxel_size_um{5.0, 5.0, 5.0};
  ScalarVolume speed;
  ScalarVolume count;
  std::optional<Volume<Vec3f>> direction;

  VolumeBundle() = default;
  VolumeBundle(Dims d, std::array<double, 3> voxel_um)
      : dims(d), voxel_size_um(voxel_um), speed(d), count(d) {}

  /// Isotropic voxel pitch in meters (geometric mean of the three sizes).
  double pitch_m() const;
  /// Throws std::runtime_error when a field disagrees with `dims` or the
  /// speed/count/direction invariants do not hold.
  void validate() const;
};

template <typename T>
std::size_t count_nonzero(const Volume<T>& v) {
  std::size_t n = 0;
  for (const auto& x : v.values())
    if (x != T{}) ++n;
  return n;
}

}  // namespace ulmflow
