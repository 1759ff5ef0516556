#include "ulmflow/volume.hpp"

#include <cmath>
#include <string>

namespace ulmflow {

double VolumeBundle::pitch_m() const {
  return std::cbrt(voxel_size_um[0] * voxel_size_um[1] * voxel_size_um[2]) * 1e-6;
}

void VolumeBundle::validate() const {
  auto fail = [](const std::string& msg) { throw std::runtime_error("VolumeBundle: " + msg); };
  if (dims.h <= 0 || dims.w <= 0 || dims.t <= 0) fail("dims must be positive");
  for (double v : voxel_size_um)
    if (!(v > 0.0)) fail("voxel size must be positive");
  if (speed.dims() != dims) fail("speed field dims mismatch");
  if (count.dims() != dims) fail("count field dims mismatch");
  if (direction && direction->dims() != dims) fail("direction field dims mismatch");
  for (std::size_t i = 0; i < speed.size(); ++i) {
    const bool has_speed = speed[i] > 0.0f;
    const bool has_count = count[i] >= 1.0f;
    if (has_speed != has_count)
      fail("speed > 0 must coincide with count >= 1 (voxel " + std::to_string(i) + ")");
    if (direction) {
      const Vec3f d = (*direction)[i];
      const double n = std::sqrt(double(d.x) * d.x + double(d.y) * d.y + double(d.z) * d.z);
      if (has_speed && std::abs(n - 1.0) > 1e-6) fail("direction must be unit length on non-zero voxels");
      if (!has_speed && n != 0.0) fail("direction must be zero on empty voxels");
    }
  }
}

}  // namespace ulmflow
