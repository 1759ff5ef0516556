#pragma once

#include <algorithm>

namespace ulmflow {

template <typename Fn>
void SparseIndex::for_each_in_box(std::array<int, 3> lo, std::array<int, 3> hi, Fn&& fn) const {
  std::array<int, 3> blo{}, bhi{};
  for (int ax = 0; ax < 3; ++ax) {
    lo[ax] = std::max(lo[ax], 0);
    hi[ax] = std::min(hi[ax], dims_.extent(ax) - 1);
    if (lo[ax] > hi[ax]) return;
    blo[ax] = lo[ax] / kBrick;
    bhi[ax] = hi[ax] / kBrick;
  }
  for (int bh = blo[0]; bh <= bhi[0]; ++bh)
    for (int bw = blo[1]; bw <= bhi[1]; ++bw)
      for (int bt = blo[2]; bt <= bhi[2]; ++bt) {
        const std::size_t b =
            (static_cast<std::size_t>(bh) * bricks_[1] + static_cast<std::size_t>(bw)) * bricks_[2] +
            static_cast<std::size_t>(bt);
        const bool inner = bh > blo[0] && bh < bhi[0] && bw > blo[1] && bw < bhi[1] &&
                           bt > blo[2] && bt < bhi[2];
        for (std::uint32_t k = brick_start_[b]; k < brick_start_[b + 1]; ++k) {
          const std::size_t idx = brick_members_[k];
          if (!inner) {
            const auto c = dims_.coords(idx);
            if (c[0] < lo[0] || c[0] > hi[0] || c[1] < lo[1] || c[1] > hi[1] || c[2] < lo[2] ||
                c[2] > hi[2])
              continue;
          }
          fn(idx);
        }
      }
}

}  // namespace ulmflow
