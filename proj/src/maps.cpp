#include "ulmflow/maps.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <stdexcept>
#include <tuple>

#include "ulmflow/random.hpp"
#include "ulmflow/simd/kernels.hpp"

namespace ulmflow {

MapAccumulators& MapAccumulators::operator+=(const MapAccumulators& o) {
  if (o.dims() != dims()) throw std::invalid_argument("MapAccumulators: dims mismatch");
  const auto& k = simd::kernels();
  const std::size_t n = hit_count.size();
  k.axpy(speed_sum.data(), o.speed_sum.data(), 1.0, n);
  k.axpy(pressure_sum.data(), o.pressure_sum.data(), 1.0, n);
  k.axpy(uncert_sum.data(), o.uncert_sum.data(), 1.0, n);
  k.axpy(hit_count.data(), o.hit_count.data(), 1.0, n);
  return *this;
}

void EnhanceConfig::validate() const {
  if (!(count_threshold >= 0.0)) throw std::invalid_argument("EnhanceConfig: count_threshold must be >= 0");
  if (!(pressure_smooth_sigma >= 0.0))
    throw std::invalid_argument("EnhanceConfig: pressure_smooth_sigma must be >= 0");
}

std::optional<TrilinearStencil> trilinear_stencil(Vec3 p, Dims dims) {
  std::array<int, 3> base{};
  std::array<double, 3> frac{};
  for (int ax = 0; ax < 3; ++ax) {
    const double top = dims.extent(ax) - 1;
    if (!(p[ax] >= 0.0 && p[ax] <= top)) return std::nullopt;
    int b = static_cast<int>(std::floor(p[ax]));
    if (b >= dims.extent(ax) - 1) b = std::max(0, dims.extent(ax) - 2);
    base[ax] = b;
    frac[ax] = p[ax] - b;
  }
  TrilinearStencil s;
  int k = 0;
  for (int dh = 0; dh < 2; ++dh)
    for (int dw = 0; dw < 2; ++dw)
      for (int dt = 0; dt < 2; ++dt, ++k) {
        const double w = (dh ? frac[0] : 1.0 - frac[0]) * (dw ? frac[1] : 1.0 - frac[1]) *
                         (dt ? frac[2] : 1.0 - frac[2]);
        // single-voxel axes keep all weight on index 0
        const int h = std::min(base[0] + dh, dims.h - 1);
        const int wi = std::min(base[1] + dw, dims.w - 1);
        const int t = std::min(base[2] + dt, dims.t - 1);
        s.index[static_cast<std::size_t>(k)] = dims.index(h, wi, t);
        s.weight[static_cast<std::size_t>(k)] = w;
      }
  return s;
}

SectionGeometry section_geometry(const SectionCandidate& c) {
  return {c.center, c.normal, c.in_plane_basis, c.search_radius, c.radius_index, c.shift_index, c.seed_voxel};
}

SplatResult splat_section(MapAccumulators& acc, const SectionGeometry& section,
                          const PosteriorEstimate& estimate, double pitch_m) {
  if (!estimate.valid) throw std::invalid_argument("splat_section: estimate is not valid");
  if (!(pitch_m > 0.0)) throw std::invalid_argument("splat_section: pitch must be > 0");
  const PoiseuilleParams& p = estimate.params_physical;
  const double radius_vox = p.radius / pitch_m;
  const int reach = static_cast<int>(std::floor(radius_vox));
  const Vec3 disk_center = section.center + (p.center.x / pitch_m) * section.in_plane_basis[0] +
                           (p.center.y / pitch_m) * section.in_plane_basis[1];
  const double g = p.g_sharp;
  const double u = estimate.uncertainty_geo;
  const Dims dims = acc.dims();

  SplatResult res;
  for (int i = -reach; i <= reach; ++i)
    for (int j = -reach; j <= reach; ++j) {
      const double rho2 = double(i) * i + double(j) * j;
      if (rho2 > radius_vox * radius_vox) continue;
      const Vec3 pt = disk_center + double(i) * section.in_plane_basis[0] + double(j) * section.in_plane_basis[1];
      const auto st = trilinear_stencil(pt, dims);
      if (!st) {
        ++res.dropped;
        continue;
      }
      const double speed = g * (p.radius * p.radius - rho2 * pitch_m * pitch_m);
      for (int k = 0; k < 8; ++k) {
        const double w = st->weight[static_cast<std::size_t>(k)];
        if (w == 0.0) continue;
        const std::size_t idx = st->index[static_cast<std::size_t>(k)];
        acc.speed_sum[idx] += w * speed;
        acc.pressure_sum[idx] += w * g;
        acc.uncert_sum[idx] += w * u;
        acc.hit_count[idx] += w;
      }
      ++res.deposited;
    }
  return res;
}

EnhancedMaps finalize_maps(const MapAccumulators& acc, const EnhanceConfig& cfg,
                           const ScalarVolume* original) {
  cfg.validate();
  const Dims d = acc.dims();
  if (cfg.copy_back_original && (original == nullptr || original->dims() != d))
    throw std::invalid_argument("finalize_maps: copy-back needs the original speed volume");
  EnhancedMaps out{ScalarVolume(d), ScalarVolume(d), ScalarVolume(d)};
  for (std::size_t i = 0; i < acc.hit_count.size(); ++i) {
    const double h = acc.hit_count[i];
    if (h > cfg.count_threshold && h > 0.0) {
      out.speed[i] = static_cast<float>(acc.speed_sum[i] / h);
      out.pressure[i] = static_cast<float>(acc.pressure_sum[i] / h);
      out.uncertainty[i] = static_cast<float>(acc.uncert_sum[i] / h);
    } else if (cfg.copy_back_original && (*original)[i] > 0.0f) {
      out.speed[i] = (*original)[i];
    }
  }
  if (cfg.pressure_smooth_sigma > 0.0)
    out.pressure = support_gaussian_smooth(out.pressure, cfg.pressure_smooth_sigma);
  return out;
}

namespace {

/// In-place separable correlation with a symmetric 1D kernel along one axis.
void convolve_axis(DoubleVolume& v, const std::vector<double>& kernel, int axis) {
  const Dims d = v.dims();
  const int radius = static_cast<int>(kernel.size() / 2);
  const int len = d.extent(axis);
  const std::size_t stride = axis == 0 ? std::size_t(d.w) * d.t : (axis == 1 ? std::size_t(d.t) : 1);
  std::vector<double> line(static_cast<std::size_t>(len)), res(static_cast<std::size_t>(len));
  const int a1 = axis == 0 ? 1 : 0;
  const int a2 = axis == 2 ? 1 : 2;
  for (int i = 0; i < d.extent(a1); ++i)
    for (int j = 0; j < d.extent(a2); ++j) {
      std::array<int, 3> c{};
      c[static_cast<std::size_t>(a1)] = i;
      c[static_cast<std::size_t>(a2)] = j;
      c[static_cast<std::size_t>(axis)] = 0;
      const std::size_t base = d.index(c[0], c[1], c[2]);
      for (int k = 0; k < len; ++k) line[static_cast<std::size_t>(k)] = v[base + stride * static_cast<std::size_t>(k)];
      for (int k = 0; k < len; ++k) {
        double s = 0.0;
        for (int o = -radius; o <= radius; ++o) {
          const int q = k + o;
          if (q < 0 || q >= len) continue;
          s += kernel[static_cast<std::size_t>(o + radius)] * line[static_cast<std::size_t>(q)];
        }
        res[static_cast<std::size_t>(k)] = s;
      }
      for (int k = 0; k < len; ++k) v[base + stride * static_cast<std::size_t>(k)] = res[static_cast<std::size_t>(k)];
    }
}

}  // namespace

ScalarVolume support_gaussian_smooth(const ScalarVolume& v, double sigma) {
  if (!(sigma > 0.0)) return v;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  for (int i = -radius; i <= radius; ++i)
    kernel[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));

  const Dims d = v.dims();
  DoubleVolume num(d), den(d);
  for (std::size_t i = 0; i < v.size(); ++i)
    if (v[i] != 0.0f) {
      num[i] = v[i];
      den[i] = 1.0;
    }
  for (int ax = 0; ax < 3; ++ax) {
    convolve_axis(num, kernel, ax);
    convolve_axis(den, kernel, ax);
  }
  ScalarVolume out(d);
  for (std::size_t i = 0; i < v.size(); ++i)
    if (v[i] != 0.0f) out[i] = static_cast<float>(num[i] / den[i]);
  return out;
}

DoubleVolume box_smooth(const DoubleVolume& v, int h_a) {
  if (h_a < 0) throw std::invalid_argument("box_smooth: h_a must be >= 0");
  if (h_a == 0) return v;
  const Dims d = v.dims();
  const auto& k = simd::kernels();
  DoubleVolume cur = v;
  DoubleVolume next(d);

  // axes h and w: running sums over whole contiguous rows via add_sub
  for (int axis = 0; axis < 2; ++axis) {
    const int len = d.extent(axis);
    const std::size_t row = axis == 0 ? std::size_t(d.w) * d.t : std::size_t(d.t);
    const std::size_t outer = axis == 0 ? 1 : std::size_t(d.h);
    const std::size_t outer_stride = std::size_t(d.w) * d.t;
    std::vector<double> zero(row, 0.0);
    for (std::size_t o = 0; o < outer; ++o) {
      const double* src = cur.data() + o * outer_stride;
      double* dst = next.data() + o * outer_stride;
      auto at = [&](int i) -> const double* {
        return (i < 0 || i >= len) ? zero.data() : src + static_cast<std::size_t>(i) * row;
      };
      // first window: sum of rows [-h_a, h_a]
      std::fill(dst, dst + row, 0.0);
      for (int i = -h_a; i <= h_a; ++i) k.axpy(dst, at(i), 1.0, row);
      for (int i = 1; i < len; ++i)
        k.add_sub(dst + static_cast<std::size_t>(i) * row, dst + static_cast<std::size_t>(i - 1) * row,
                  at(i + h_a), at(i - h_a - 1), row);
    }
    std::swap(cur, next);
  }
  // axis t: contiguous, scalar running sum per line
  const int len = d.t;
  for (std::size_t line = 0; line < std::size_t(d.h) * d.w; ++line) {
    const double* src = cur.data() + line * static_cast<std::size_t>(len);
    double* dst = next.data() + line * static_cast<std::size_t>(len);
    auto at = [&](int i) { return (i < 0 || i >= len) ? 0.0 : src[i]; };
    double s = 0.0;
    for (int i = -h_a; i <= h_a; ++i) s += at(i);
    dst[0] = s;
    for (int i = 1; i < len; ++i) {
      s += at(i + h_a) - at(i - h_a - 1);
      dst[i] = s;
    }
  }
  const double inv = 1.0 / std::pow(2.0 * h_a + 1.0, 3);
  for (std::size_t i = 0; i < next.size(); ++i) next[i] *= inv;
  return next;
}

ScalarVolume box_smooth(const ScalarVolume& v, int h_a) {
  DoubleVolume dv(v.dims());
  for (std::size_t i = 0; i < v.size(); ++i) dv[i] = v[i];
  const DoubleVolume r = box_smooth(dv, h_a);
  ScalarVolume out(v.dims());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(r[i]);
  return out;
}

ScalarVolume smoothing_enhance(const VolumeBundle& bundle, int h_a) {
  if (h_a < 0) throw std::invalid_argument("smoothing_enhance: h_a must be >= 0");
  if (h_a == 0) return bundle.speed;
  const Dims d = bundle.dims;
  DoubleVolume mass(d), count(d), support(d);
  for (std::size_t i = 0; i < bundle.speed.size(); ++i) {
    if (!(bundle.count[i] > 0.0f)) continue;
    mass[i] = double(bundle.speed[i]) * double(bundle.count[i]);
    count[i] = bundle.count[i];
    support[i] = 1.0;
  }
  const DoubleVolume sm = box_smooth(mass, h_a);
  const DoubleVolume sc = box_smooth(count, h_a);
  // the indicator sums are small integers, so its window test is exact
  const DoubleVolume ss = box_smooth(support, h_a);
  const double half = 0.5 / std::pow(2.0 * h_a + 1.0, 3);
  ScalarVolume out(d);
  for (std::size_t i = 0; i < out.size(); ++i)
    if (ss[i] > half && sc[i] > 0.0) out[i] = static_cast<float>(sm[i] / sc[i]);
  return out;
}

std::uint64_t candidate_seed(std::uint64_t master, int radius_index, std::size_t seed_voxel,
                             int shift_index) {
  return derive_seed(master, {static_cast<std::uint64_t>(radius_index), static_cast<std::uint64_t>(seed_voxel),
                              static_cast<std::uint64_t>(shift_index)});
}

ModelSections estimate_sections(const VolumeBundle& bundle, const ModelPipelineConfig& cfg) {
  cfg.svi.validate();
  const double pitch = bundle.pitch_m();
  ModelSections out;
  std::mutex mu;
  auto visitor = [&](const SectionCandidate& cand, const DirectEstimate&) {
    SviConfig sc = cfg.svi;
    sc.rng_seed = candidate_seed(cfg.seed, cand.radius_index, cand.seed_voxel, cand.shift_index);
    const PosteriorEstimate pe = fit_svi(cand.samples, sc);
    const double r_m = cand.search_radius * pitch;
    const bool accepted = !pe.refused() && pe.valid && pe.params_physical.radius >= 0.5 * r_m &&
                          pe.params_physical.radius <= 2.0 * r_m;
    std::lock_guard lock(mu);
    ++out.fits;
    if (pe.refused()) ++out.fits_refused;
    if (accepted) out.sections.push_back({section_geometry(cand), pe});
    return accepted;
  };
  out.stats = group_trajectories(bundle, cfg.grouping, visitor, cfg.workers);
  std::sort(out.sections.begin(), out.sections.end(), [](const AcceptedSection& a, const AcceptedSection& b) {
    return std::tie(a.geometry.radius_index, a.geometry.seed_voxel, a.geometry.shift_index) <
           std::tie(b.geometry.radius_index, b.geometry.seed_voxel, b.geometry.shift_index);
  });
  return out;
}

MapAccumulators accumulate_sections(const std::vector<AcceptedSection>& sections, Dims dims,
                                    double pitch_m) {
  MapAccumulators acc(dims);
  for (const auto& s : sections) splat_section(acc, s.geometry, s.estimate, pitch_m);
  return acc;
}

EnhanceConfig stride_adjusted(EnhanceConfig cfg, const GroupingConfig& grouping) {
  cfg.count_threshold /= static_cast<double>(std::max(1, grouping.seed_stride));
  return cfg;
}

}  // namespace ulmflow
