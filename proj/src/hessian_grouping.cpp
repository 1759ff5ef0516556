#include "ulmflow/hessian_grouping.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

#include "ulmflow/parallel.hpp"
#include "ulmflow/simd/kernels.hpp"

namespace ulmflow {

GaussianKernels gaussian_derivative_kernels(double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma))
    throw std::invalid_argument("gaussian_derivative_kernels: sigma must be > 0");
  GaussianKernels k;
  k.sigma = sigma;
  k.radius = static_cast<int>(std::ceil(3.0 * sigma));
  const std::size_t n = static_cast<std::size_t>(2 * k.radius + 1);
  std::vector<double> g(n);
  double s0 = 0.0, s2 = 0.0;
  for (int i = -k.radius; i <= k.radius; ++i) {
    const double v = std::exp(-0.5 * i * i / (sigma * sigma));
    g[static_cast<std::size_t>(i + k.radius)] = v;
    s0 += v;
    s2 += double(i) * i * v;
  }
  const double c = s2 / s0;
  double s4c = 0.0;
  for (int i = -k.radius; i <= k.radius; ++i)
    s4c += double(i) * i * (double(i) * i - c) * g[static_cast<std::size_t>(i + k.radius)];

  k.g0.resize(n);
  k.g1.resize(n);
  k.g2.resize(n);
  for (int i = -k.radius; i <= k.radius; ++i) {
    const std::size_t j = static_cast<std::size_t>(i + k.radius);
    k.g0[j] = g[j] / s0;
    k.g1[j] = i * g[j] / s2;
    k.g2[j] = 2.0 * (double(i) * i - c) * g[j] / s4c;
  }
  return k;
}

// --- sparse index ------------------------------------------------------------

SparseIndex::SparseIndex(const ScalarVolume& field) : dims_(field.dims()) {
  for (int ax = 0; ax < 3; ++ax) bricks_[ax] = (dims_.extent(ax) + kBrick - 1) / kBrick;
  const std::size_t n_bricks = static_cast<std::size_t>(bricks_[0]) * bricks_[1] * bricks_[2];
  auto brick_of = [&](std::size_t idx) {
    const auto c = dims_.coords(idx);
    return (static_cast<std::size_t>(c[0] / kBrick) * bricks_[1] + static_cast<std::size_t>(c[1] / kBrick)) *
               bricks_[2] +
           static_cast<std::size_t>(c[2] / kBrick);
  };
  for (std::size_t i = 0; i < field.size(); ++i)
    if (field[i] != 0.0f) voxels_.push_back(i);
  brick_start_.assign(n_bricks + 1, 0);
  for (std::size_t idx : voxels_) ++brick_start_[brick_of(idx) + 1];
  for (std::size_t b = 0; b < n_bricks; ++b) brick_start_[b + 1] += brick_start_[b];
  brick_members_.resize(voxels_.size());
  std::vector<std::uint32_t> fill(brick_start_.begin(), brick_start_.end() - 1);
  for (std::size_t idx : voxels_) brick_members_[fill[brick_of(idx)]++] = idx;
}

// --- Hessian -----------------------------------------------------------------

namespace {

HessianResult assemble(const simd::DerivativeResponses& r) {
  HessianResult out;
  out.hessian = {{{r[0], r[3], r[4]}, {r[3], r[1], r[5]}, {r[4], r[5], r[2]}}};
  out.gradient = {r[6], r[7], r[8]};
  return out;
}

struct Stencil {
  std::vector<std::int32_t> ih, iw, it;
  std::vector<double> value;
  void clear() {
    ih.clear();
    iw.clear();
    it.clear();
    value.clear();
  }
  void push(std::int32_t a, std::int32_t b, std::int32_t c, double v) {
    ih.push_back(a);
    iw.push_back(b);
    it.push_back(c);
    value.push_back(v);
  }
};

HessianResult respond(const Stencil& s, const GaussianKernels& k) {
  const simd::StencilView view{s.ih.data(), s.iw.data(), s.it.data(), s.value.data(), s.value.size()};
  const simd::KernelTables tables{k.g0.data(), k.g1.data(), k.g2.data()};
  simd::DerivativeResponses r;
  simd::kernels().derivative_responses(view, tables, r);
  return assemble(r);
}

}  // namespace

HessianResult hessian_at(const ScalarVolume& field, const SparseIndex& index,
                         std::array<int, 3> voxel, const GaussianKernels& kernels) {
  if (!field.dims().contains(voxel[0], voxel[1], voxel[2]))
    throw std::out_of_range("hessian_at: voxel outside the volume");
  thread_local Stencil s;
  s.clear();
  const int rad = kernels.radius;
  const Dims& d = field.dims();
  index.for_each_in_box({voxel[0] - rad, voxel[1] - rad, voxel[2] - rad},
                        {voxel[0] + rad, voxel[1] + rad, voxel[2] + rad}, [&](std::size_t idx) {
                          const auto c = d.coords(idx);
                          s.push(c[0] - voxel[0] + rad, c[1] - voxel[1] + rad, c[2] - voxel[2] + rad,
                                 field[idx]);
                        });
  return respond(s, kernels);
}

HessianResult hessian_at_dense(const ScalarVolume& field, std::array<int, 3> voxel,
                               const GaussianKernels& kernels) {
  const Dims& d = field.dims();
  const int rad = kernels.radius;
  double r[9] = {};
  for (int a = -rad; a <= rad; ++a)
    for (int b = -rad; b <= rad; ++b)
      for (int c = -rad; c <= rad; ++c) {
        const int h = voxel[0] + a, w = voxel[1] + b, t = voxel[2] + c;
        if (!d.contains(h, w, t)) continue;
        const double v = field(h, w, t);
        if (v == 0.0) continue;
        const double h0 = kernels.at0(a), h1 = kernels.at1(a), h2 = kernels.at2(a);
        const double w0 = kernels.at0(b), w1 = kernels.at1(b), w2 = kernels.at2(b);
        const double t0 = kernels.at0(c), t1 = kernels.at1(c), t2 = kernels.at2(c);
        r[0] += v * h2 * w0 * t0;
        r[1] += v * h0 * w2 * t0;
        r[2] += v * h0 * w0 * t2;
        r[3] += v * h1 * w1 * t0;
        r[4] += v * h1 * w0 * t1;
        r[5] += v * h0 * w1 * t1;
        r[6] += v * h1 * w0 * t0;
        r[7] += v * h0 * w1 * t0;
        r[8] += v * h0 * w0 * t1;
      }
  return assemble(r);
}

// --- eigen decomposition -------------------------------------------------------

SymmetricEigen3 eigen3_symmetric(const Mat3& h) {
  Mat3 a = h;
  Mat3 v{{{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0}}};
  for (int sweep = 0; sweep < 64; ++sweep) {
    const double off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
    const double diag = a[0][0] * a[0][0] + a[1][1] * a[1][1] + a[2][2] * a[2][2];
    if (off == 0.0 || off <= 1e-36 * diag) break;
    for (int p = 0; p < 2; ++p)
      for (int q = p + 1; q < 3; ++q) {
        if (a[p][q] == 0.0) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < 3; ++k) {  // A <- A J
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (int k = 0; k < 3; ++k) {  // A <- J^T A
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        a[p][q] = a[q][p] = 0.0;
        for (int k = 0; k < 3; ++k) {
          const double vkp = v[k][p], vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
  }
  std::array<int, 3> order{0, 1, 2};
  std::sort(order.begin(), order.end(),
            [&](int x, int y) { return std::abs(a[x][x]) < std::abs(a[y][y]); });
  SymmetricEigen3 e;
  for (int k = 0; k < 3; ++k) {
    const int j = order[static_cast<std::size_t>(k)];
    e.values[static_cast<std::size_t>(k)] = a[j][j];
    e.vectors[static_cast<std::size_t>(k)] = {v[0][j], v[1][j], v[2][j]};
  }
  return e;
}

double eigen_residual(const Mat3& h, const SymmetricEigen3& e) {
  double num = 0.0, den = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double r = 0.0;
      for (int k = 0; k < 3; ++k) r += e.vectors[k][i] * e.values[k] * e.vectors[k][j];
      num += (r - h[i][j]) * (r - h[i][j]);
      den += h[i][j] * h[i][j];
    }
  return den == 0.0 ? std::sqrt(num) : std::sqrt(num / den);
}

Vec3 shift_direction(double lambda2, double lambda3, Vec3 v2, Vec3 v3, Vec3 gradient) {
  const double denom = lambda2 * lambda2 + lambda3 * lambda3;
  if (!(denom > 0.0)) throw std::invalid_argument("shift_direction: both eigenvalues are zero");
  const double s2 = dot(gradient, v2) < 0.0 ? -1.0 : 1.0;
  const double s3 = dot(gradient, v3) < 0.0 ? -1.0 : 1.0;
  const double a1 = s2 * std::sqrt(lambda2 * lambda2 / denom);
  const double a2 = s3 * std::sqrt(lambda3 * lambda3 / denom);
  return normalized(a1 * v2 + a2 * v3);
}

// --- grouping ----------------------------------------------------------------

void GroupingConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("GroupingConfig: " + m); };
  if (!(r_min > 0.0)) fail("r_min must be > 0");
  if (!(r_max >= r_min)) fail("r_max must be >= r_min");
  if (!(r_step > 0.0)) fail("r_step must be > 0");
  if (!(slab_half_thickness >= 0.0)) fail("slab_half_thickness must be >= 0");
  if (!(angle_threshold_deg >= 0.0 && angle_threshold_deg <= 90.0)) fail("angle_threshold_deg must be in [0, 90]");
  if (min_samples < 4) fail("min_samples must be >= 4");
  if (seed_stride < 1) fail("seed_stride must be >= 1");
}

std::vector<double> GroupingConfig::radii() const {
  std::vector<double> out;
  for (int k = 0;; ++k) {
    const double r = r_min + k * r_step;
    if (r > r_max + 1e-9 * r_max) break;
    out.push_back(r);
  }
  return out;
}

namespace {

template <typename Fn>
void for_each_section_voxel(const VolumeBundle& bundle, const SparseIndex& index, Vec3 center,
                            Vec3 normal, const std::array<Vec3, 2>& basis, double r, double slab,
                            Fn&& fn) {
  const double reach = r + slab;
  std::array<int, 3> lo{}, hi{};
  for (int ax = 0; ax < 3; ++ax) {
    lo[ax] = static_cast<int>(std::floor(center[ax] - reach));
    hi[ax] = static_cast<int>(std::ceil(center[ax] + reach));
  }
  const double r2 = r * r;
  index.for_each_in_box(lo, hi, [&](std::size_t idx) {
    const auto c = bundle.dims.coords(idx);
    const Vec3 d = Vec3{double(c[0]), double(c[1]), double(c[2])} - center;
    if (std::abs(dot(d, normal)) > slab) return;
    const double u = dot(d, basis[0]);
    const double v = dot(d, basis[1]);
    if (u * u + v * v > r2) return;
    fn(idx, u, v);
  });
}

}  // namespace

SampleSet collect_section_samples(const VolumeBundle& bundle, const SparseIndex& index,
                                  Vec3 center, Vec3 normal, const std::array<Vec3, 2>& basis,
                                  double r, double slab_half_thickness) {
  SampleSet out;
  const double pitch = bundle.pitch_m();
  for_each_section_voxel(bundle, index, center, normal, basis, r, slab_half_thickness,
                         [&](std::size_t idx, double u, double v) {
                           out.push_back({{u * pitch, v * pitch}, double(bundle.speed[idx]),
                                          double(bundle.count[idx])});
                         });
  return out;
}

double mean_direction_angle_deg(const VolumeBundle& bundle, const SparseIndex& index, Vec3 center,
                                Vec3 normal, const std::array<Vec3, 2>& basis, double r,
                                double slab_half_thickness) {
  if (!bundle.direction) return std::numeric_limits<double>::quiet_NaN();
  double sum = 0.0;
  std::size_t n = 0;
  for_each_section_voxel(bundle, index, center, normal, basis, r, slab_half_thickness,
                         [&](std::size_t idx, double, double) {
                           const Vec3f d = (*bundle.direction)[idx];
                           const double c = std::abs(d.x * normal.x + d.y * normal.y + d.z * normal.z);
                           sum += std::acos(std::min(1.0, c));
                           ++n;
                         });
  if (n == 0) return std::numeric_limits<double>::quiet_NaN();
  return sum / double(n) * 180.0 / std::numbers::pi;
}

GroupingStats& GroupingStats::operator+=(const GroupingStats& o) {
  seeds_tested += o.seeds_tested;
  seeds_tubular += o.seeds_tubular;
  rejected_too_few += o.rejected_too_few;
  rejected_angle += o.rejected_angle;
  candidates += o.candidates;
  accepted += o.accepted;
  direction_check_skipped = direction_check_skipped || o.direction_check_skipped;
  return *this;
}

GroupingStats group_trajectories(const VolumeBundle& bundle, const GroupingConfig& cfg,
                                 const CandidateVisitor& visitor, int workers) {
  cfg.validate();
  const SparseIndex index(bundle.speed);
  std::vector<std::size_t> seeds;
  for (std::size_t k = 0; k < index.voxels().size(); k += static_cast<std::size_t>(cfg.seed_stride))
    seeds.push_back(index.voxels()[k]);

  GroupingStats total;
  total.direction_check_skipped = !bundle.direction.has_value();
  const auto radii = cfg.radii();
  for (std::size_t ri = 0; ri < radii.size(); ++ri) {
    const double r = radii[ri];
    const GaussianKernels kernels = gaussian_derivative_kernels(r);
    std::vector<GroupingStats> per_seed(seeds.size());
    parallel_for(seeds.size(), workers, [&](std::size_t si) {
      GroupingStats& st = per_seed[si];
      const std::size_t seed = seeds[si];
      const auto c = bundle.dims.coords(seed);
      ++st.seeds_tested;
      const HessianResult hr = hessian_at(bundle.speed, index, c, kernels);
      const SymmetricEigen3 eig = eigen3_symmetric(hr.hessian);
      if (!(eig.values[1] < 0.0 && eig.values[2] < 0.0)) return;
      ++st.seeds_tubular;

      SectionCandidate cand;
      cand.normal = eig.vectors[0];
      cand.in_plane_basis = {eig.vectors[1], eig.vectors[2]};
      cand.search_radius = r;
      cand.radius_index = static_cast<int>(ri);
      cand.seed_voxel = seed;
      const Vec3 origin{double(c[0]), double(c[1]), double(c[2])};
      const Vec3 vm =
          shift_direction(eig.values[1], eig.values[2], eig.vectors[1], eig.vectors[2], hr.gradient);

      for (std::size_t di = 0; di < kShiftRatios.size(); ++di) {
        cand.shift_ratio = kShiftRatios[di];
        cand.shift_index = static_cast<int>(di);
        cand.center = origin + (cand.shift_ratio * r) * vm;
        cand.samples = collect_section_samples(bundle, index, cand.center, cand.normal,
                                               cand.in_plane_basis, r, cfg.slab_half_thickness);
        if (cand.samples.size() < static_cast<std::size_t>(cfg.min_samples)) {
          ++st.rejected_too_few;
          continue;
        }
        if (bundle.direction) {
          const double angle = mean_direction_angle_deg(bundle, index, cand.center, cand.normal,
                                                        cand.in_plane_basis, r,
                                                        cfg.slab_half_thickness);
          if (!(angle <= cfg.angle_threshold_deg)) {
            ++st.rejected_angle;
            continue;
          }
        }
        ++st.candidates;
        const DirectEstimate direct = direct_estimate(cand.samples);
        if (visitor(cand, direct)) {
          ++st.accepted;
          break;
        }
      }
    });
    for (const auto& st : per_seed) total += st;
  }
  return total;
}

}  // namespace ulmflow
