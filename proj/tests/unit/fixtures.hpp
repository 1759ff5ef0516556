#pragma once

// Synthetic volumes shared by several test files.

#include <cmath>

#include "ulmflow/volume.hpp"

namespace fixture {

/// Parabolic tube of `radius` voxels whose axis runs along `axis` through
/// voxel centers (c0, c1) of the two remaining axes; one count per voxel and
/// directions along the axis.
inline ulmflow::VolumeBundle tube(ulmflow::Dims dims, int axis, double c0, double c1, double radius,
                                  double peak = 0.03, double voxel_um = 5.0) {
  using namespace ulmflow;
  VolumeBundle b(dims, {voxel_um, voxel_um, voxel_um});
  b.direction = Volume<Vec3f>(dims);
  for (int h = 0; h < dims.h; ++h)
    for (int w = 0; w < dims.w; ++w)
      for (int t = 0; t < dims.t; ++t) {
        const int c[3] = {h, w, t};
        const int a0 = (axis + 1) % 3, a1 = (axis + 2) % 3;
        const double d0 = c[a0] - c0, d1 = c[a1] - c1;
        const double rho2 = (d0 * d0 + d1 * d1) / (radius * radius);
        if (rho2 >= 1.0) continue;
        b.speed(h, w, t) = static_cast<float>(peak * (1.0 - rho2));
        b.count(h, w, t) = 1.0f;
        Vec3f dir{};
        (axis == 0 ? dir.x : axis == 1 ? dir.y : dir.z) = 1.0f;
        (*b.direction)(h, w, t) = dir;
      }
  return b;
}

}  // namespace fixture
