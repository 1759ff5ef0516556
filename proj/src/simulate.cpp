#include "ulmflow/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace ulmflow {
namespace {

/// Two unit vectors completing `dir` to a right-handed orthonormal frame.
std::pair<Vec3, Vec3> orthonormal_complement(Vec3 dir) {
  const Vec3 helper = std::abs(dir.x) < 0.9 ? Vec3{1.0, 0.0, 0.0} : Vec3{0.0, 1.0, 0.0};
  const Vec3 e1 = normalized(cross(helper, dir));
  return {e1, cross(dir, e1)};
}

double distance_to_line(Vec3 p, Vec3 origin, Vec3 dir) {
  const Vec3 d = p - origin;
  return norm(d - dot(d, dir) * dir);
}

double distance_to_segment(Vec3 p, const Branch& b) {
  const double s = std::clamp(dot(p - b.origin, b.direction), 0.0, b.length);
  return norm(p - (b.origin + s * b.direction));
}

Vec3 voxel_center(int ih, int iw, int it, double pitch) {
  return {(ih + 0.5) * pitch, (iw + 0.5) * pitch, (it + 0.5) * pitch};
}

}  // namespace

Vec2 sample_flux_weighted_offset(double radius, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (;;) {
    const double r = radius * std::sqrt(unit(rng));
    const double theta = 2.0 * std::numbers::pi * unit(rng);
    const double accept = 1.0 - (r * r) / (radius * radius);
    if (unit(rng) < accept) return {r * std::cos(theta), r * std::sin(theta)};
  }
}

double flux_weighted_radius_cdf(double r, double radius) {
  if (r <= 0.0) return 0.0;
  if (r >= radius) return 1.0;
  const double r2 = r * r;
  const double big = radius * radius;
  return (2.0 * r2 * big - r2 * r2) / (big * big);
}

CrossSectionDraw sample_cross_section(const PoiseuilleParams& p, int n, double noise_std,
                                      std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("sample_cross_section: n must be >= 1");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  CrossSectionDraw out;
  out.truth = p;
  out.samples.reserve(static_cast<std::size_t>(n));
  out.noiseless.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const Vec2 pos = p.center + sample_flux_weighted_offset(p.radius, rng);
    const double v = poiseuille_speed(p, pos);
    out.noiseless.push_back({pos, v, 1.0});
    Vec2 noisy = pos;
    if (noise_std > 0.0) {
      noisy.x += noise_std * noise(rng);
      noisy.y += noise_std * noise(rng);
    }
    out.samples.push_back({noisy, v, 1.0});
  }
  return out;
}

// --- tubes -----------------------------------------------------------------

std::array<TubeSpec, 2> tube_pair_specs(const TubePairConfig& cfg) {
  const double pitch = cfg.voxel_um * 1e-6;
  const Vec3 extent{cfg.dims.h * pitch, cfg.dims.w * pitch, cfg.dims.t * pitch};
  const double span = 2.0 * cfg.large_radius + cfg.edge_gap + 2.0 * cfg.small_radius;
  const double diag = norm(extent);

  // Axis on a voxel boundary: walls then fall on boundaries and the gap spans whole voxels.
  const double x_large = std::floor((0.5 * (extent.x - span) + cfg.large_radius) / pitch) * pitch;
  const Vec3 p_large{x_large, (cfg.dims.w / 2 + 0.5) * pitch,
                     (cfg.dims.t / 2 + 0.5) * pitch};
  const Vec3 p_small = p_large + Vec3{cfg.large_radius + cfg.small_radius + cfg.edge_gap, 0.0, 0.0};
  const double theta = cfg.angle_deg * std::numbers::pi / 180.0;
  const Vec3 d_large{0.0, 0.0, 1.0};
  const Vec3 d_small{0.0, std::sin(theta), std::cos(theta)};

  return {TubeSpec{p_large - 0.5 * diag * d_large, d_large, cfg.large_radius, cfg.large_peak, diag},
          TubeSpec{p_small - 0.5 * diag * d_small, d_small, cfg.small_radius, cfg.small_peak, diag}};
}

GroundTruth tube_ground_truth(std::span<const TubeSpec> tubes, Dims dims, double voxel_um) {
  const double pitch = voxel_um * 1e-6;
  GroundTruth gt{MaskVolume(dims), ScalarVolume(dims), ScalarVolume(dims)};
  for (int ih = 0; ih < dims.h; ++ih)
    for (int iw = 0; iw < dims.w; ++iw)
      for (int it = 0; it < dims.t; ++it) {
        const Vec3 c = voxel_center(ih, iw, it, pitch);
        double nearest = std::numeric_limits<double>::infinity();
        for (const auto& tube : tubes) {
          const double d = distance_to_line(c, tube.axis_origin, tube.axis_direction);
          if (d < nearest) {
            nearest = d;
            gt.centerline_speed(ih, iw, it) = static_cast<float>(tube.peak_speed);
          }
          if (d <= tube.radius) {
            gt.mask(ih, iw, it) = 1;
            const double rho2 = (d * d) / (tube.radius * tube.radius);
            gt.speed(ih, iw, it) = static_cast<float>(tube.peak_speed * (1.0 - rho2));
          }
        }
      }
  return gt;
}

TubePhantom generate_tube_pair(const std::array<TubeSpec, 2>& specs, int tracks_per_tube,
                               Dims dims, double voxel_um, std::uint64_t seed) {
  if (tracks_per_tube < 0) throw std::invalid_argument("generate_tube_pair: negative track count");
  for (const auto& t : specs)
    if (!(t.radius > 0.0) || !(t.peak_speed > 0.0))
      throw std::invalid_argument("generate_tube_pair: radius and peak speed must be positive");

  const Vec3 d1 = normalized(specs[0].axis_direction);
  const Vec3 d2 = normalized(specs[1].axis_direction);
  const Vec3 sep = specs[1].axis_origin - specs[0].axis_origin;
  const Vec3 n = cross(d1, d2);
  const double axis_distance =
      norm(n) < 1e-12 ? norm(sep - dot(sep, d1) * d1) : std::abs(dot(sep, n)) / norm(n);
  if (axis_distance < specs[0].radius + specs[1].radius)
    throw std::invalid_argument("generate_tube_pair: tube lumens overlap");

  TubePhantom out;
  out.tubes = specs;
  std::mt19937_64 rng(seed);
  int id = 0;
  for (const auto& tube : specs) {
    const Vec3 dir = normalized(tube.axis_direction);
    const auto [e1, e2] = orthonormal_complement(dir);
    for (int k = 0; k < tracks_per_tube; ++k) {
      const Vec2 o = sample_flux_weighted_offset(tube.radius, rng);
      const double speed =
          tube.peak_speed * (1.0 - squared_norm(o) / (tube.radius * tube.radius));
      const Vec3 start = tube.axis_origin + o.x * e1 + o.y * e2;
      Trajectory tr;
      tr.id = id++;
      tr.points.push_back({0.0, start, speed});
      tr.points.push_back({tube.length / speed, start + tube.length * dir, speed});
      out.tracks.push_back(std::move(tr));
    }
  }
  out.bundle = rasterize_trajectories(out.tracks, dims, {voxel_um, voxel_um, voxel_um});
  out.truth = tube_ground_truth(out.tubes, dims, voxel_um);
  return out;
}

TubePhantom generate_tube_pair(const TubePairConfig& cfg) {
  return generate_tube_pair(tube_pair_specs(cfg), cfg.tracks_per_tube, cfg.dims, cfg.voxel_um,
                            cfg.seed);
}

// --- bifurcation -----------------------------------------------------------

void BifurcationSpec::validate() const {
  if (!(domain_side > 0.0)) throw std::invalid_argument("BifurcationSpec: domain_side must be > 0");
  if (!(main_radius > 0.0 && daughter_radius > 0.0))
    throw std::invalid_argument("BifurcationSpec: radii must be > 0");
  for (double v : center_speeds)
    if (!(v > 0.0)) throw std::invalid_argument("BifurcationSpec: center speeds must be > 0");
  if (!(time_step > 0.0)) throw std::invalid_argument("BifurcationSpec: time_step must be > 0");
  if (!(duration > 0.0) || start_time < 0.0)
    throw std::invalid_argument("BifurcationSpec: invalid recording window");
  if (!(injection_rate > 0.0)) throw std::invalid_argument("BifurcationSpec: injection_rate must be > 0");
  if (!(junction_fraction > 0.0 && junction_fraction < 1.0))
    throw std::invalid_argument("BifurcationSpec: junction_fraction must be in (0, 1)");
  if (!(branch_angle > 0.0 && branch_angle < 0.5 * std::numbers::pi))
    throw std::invalid_argument("BifurcationSpec: branch_angle must be in (0, pi/2)");
}

std::array<Branch, 3> bifurcation_branches(const BifurcationSpec& spec) {
  const double s = spec.domain_side;
  const Vec3 origin{0.5 * s, 0.5 * s, 0.0};
  const double main_len = spec.junction_fraction * s;
  const Vec3 junction = origin + Vec3{0.0, 0.0, main_len};
  std::array<Branch, 3> b;
  b[0] = {origin, {0.0, 0.0, 1.0}, main_len, spec.main_radius, spec.center_speeds[0]};
  for (int k = 0; k < 2; ++k) {
    const double beta = k == 0 ? spec.branch_angle : -spec.branch_angle;
    const Vec3 dir{0.0, std::sin(beta), std::cos(beta)};
    const double to_side = (0.5 * s) / std::abs(dir.y);
    const double to_end = (s - junction.z) / dir.z;
    b[k + 1] = {junction, dir, std::min(to_side, to_end), spec.daughter_radius,
                spec.center_speeds[k + 1]};
  }
  return b;
}

std::vector<Trajectory> generate_bifurcation(const BifurcationSpec& spec, std::uint64_t seed) {
  spec.validate();
  const auto branches = bifurcation_branches(spec);
  const Branch& main = branches[0];
  const double q1 = branches[1].peak_speed * branches[1].radius * branches[1].radius;
  const double q2 = branches[2].peak_speed * branches[2].radius * branches[2].radius;
  const double p_first = q1 / (q1 + q2);

  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> gap(spec.injection_rate);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const double window_end = spec.start_time + spec.duration;
  std::vector<Trajectory> out;
  int id = 0;
  for (double t_inj = gap(rng); t_inj < window_end; t_inj += gap(rng), ++id) {
    const Vec2 o = sample_flux_weighted_offset(main.radius, rng);
    const double rho2 = squared_norm(o) / (main.radius * main.radius);
    const int d = unit(rng) < p_first ? 1 : 2;
    const Branch& daughter = branches[static_cast<std::size_t>(d)];

    const double v_main = main.peak_speed * (1.0 - rho2);
    const double v_daughter = daughter.peak_speed * (1.0 - rho2);
    const Vec3 main_start = main.origin + Vec3{o.x, o.y, 0.0};
    const Vec3 e2_daughter{0.0, daughter.direction.z, -daughter.direction.y};
    const double scale = daughter.radius / main.radius;
    const Vec3 daughter_start =
        daughter.origin + scale * o.x * Vec3{1.0, 0.0, 0.0} + scale * o.y * e2_daughter;
    const double t_junction = t_inj + main.length / v_main;
    const double t_exit = t_junction + daughter.length / v_daughter;

    const double t_first = std::max(t_inj, spec.start_time);
    const double t_last = std::min(t_exit, window_end);
    if (!(t_first < t_last)) continue;

    Trajectory tr;
    tr.id = id;
    for (auto f = static_cast<long long>(std::ceil(t_first / spec.time_step));; ++f) {
      const double t = static_cast<double>(f) * spec.time_step;
      if (t >= t_last) break;
      if (t < t_first) continue;
      if (t < t_junction) {
        tr.points.push_back({t, main_start + (v_main * (t - t_inj)) * main.direction, v_main});
      } else {
        tr.points.push_back(
            {t, daughter_start + (v_daughter * (t - t_junction)) * daughter.direction, v_daughter});
      }
    }
    if (!tr.points.empty()) out.push_back(std::move(tr));
  }
  return out;
}

std::vector<Trajectory> slice_trajectories(std::span<const Trajectory> trajectories, double t0,
                                           double t1) {
  std::vector<Trajectory> out;
  for (const auto& tr : trajectories) {
    Trajectory part;
    part.id = tr.id;
    for (const auto& p : tr.points)
      if (p.time >= t0 && p.time < t1) part.points.push_back(p);
    if (!part.points.empty()) out.push_back(std::move(part));
  }
  return out;
}

GroundTruth bifurcation_ground_truth(const BifurcationSpec& spec, Dims dims, double voxel_um) {
  const auto branches = bifurcation_branches(spec);
  const double pitch = voxel_um * 1e-6;
  GroundTruth gt{MaskVolume(dims), ScalarVolume(dims), ScalarVolume(dims)};
  for (int ih = 0; ih < dims.h; ++ih)
    for (int iw = 0; iw < dims.w; ++iw)
      for (int it = 0; it < dims.t; ++it) {
        const Vec3 c = voxel_center(ih, iw, it, pitch);
        double nearest = std::numeric_limits<double>::infinity();
        for (const auto& b : branches) {
          const double d = distance_to_segment(c, b);
          if (d < nearest) {
            nearest = d;
            gt.centerline_speed(ih, iw, it) = static_cast<float>(b.peak_speed);
          }
          if (d <= b.radius) {
            gt.mask(ih, iw, it) = 1;
            const float v = static_cast<float>(b.peak_speed * (1.0 - d * d / (b.radius * b.radius)));
            gt.speed(ih, iw, it) = std::max(gt.speed(ih, iw, it), v);
          }
        }
      }
  return gt;
}

// --- rasterisation ---------------------------------------------------------

std::vector<std::array<int, 3>> traverse_segment(Vec3 a, Vec3 b, Dims dims) {
  std::vector<std::array<int, 3>> out;
  const Vec3 d = b - a;
  const double hi[3] = {double(dims.h), double(dims.w), double(dims.t)};

  // Liang-Barsky clip against [0, dims]
  double t0 = 0.0, t1 = 1.0;
  for (int ax = 0; ax < 3; ++ax) {
    if (d[ax] == 0.0) {
      if (a[ax] < 0.0 || a[ax] >= hi[ax]) return out;
      continue;
    }
    double ta = (0.0 - a[ax]) / d[ax];
    double tb = (hi[ax] - a[ax]) / d[ax];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return out;
  }

  const Vec3 p0 = a + t0 * d;
  const Vec3 p1 = a + t1 * d;
  const Vec3 dc = p1 - p0;
  std::array<int, 3> cur{}, last{}, step{};
  double t_max[3], t_delta[3];
  for (int ax = 0; ax < 3; ++ax) {
    const int top = dims.extent(ax) - 1;
    // entry voxel: when moving downward from an upper face, use the voxel below
    double entry = p0[ax];
    if (dc[ax] < 0.0 && entry == std::floor(entry)) entry -= 0.5;
    cur[ax] = std::clamp(static_cast<int>(std::floor(entry)), 0, top);
    double exit = p1[ax];
    if (dc[ax] > 0.0 && exit == std::floor(exit)) exit -= 0.5;
    last[ax] = std::clamp(static_cast<int>(std::floor(exit)), 0, top);
    if (dc[ax] > 0.0) {
      step[ax] = 1;
      t_delta[ax] = 1.0 / dc[ax];
      t_max[ax] = (cur[ax] + 1 - p0[ax]) / dc[ax];
    } else if (dc[ax] < 0.0) {
      step[ax] = -1;
      t_delta[ax] = -1.0 / dc[ax];
      t_max[ax] = (cur[ax] - p0[ax]) / dc[ax];
    } else {
      step[ax] = 0;
      t_delta[ax] = std::numeric_limits<double>::infinity();
      t_max[ax] = std::numeric_limits<double>::infinity();
    }
  }

  const int max_steps = dims.h + dims.w + dims.t + 3;
  out.push_back(cur);
  for (int n = 0; n < max_steps && cur != last; ++n) {
    int ax = 0;
    if (t_max[1] < t_max[ax]) ax = 1;
    if (t_max[2] < t_max[ax]) ax = 2;
    if (t_max[ax] > 1.0) break;
    cur[ax] += step[ax];
    if (cur[ax] < 0 || cur[ax] >= dims.extent(ax)) break;
    t_max[ax] += t_delta[ax];
    out.push_back(cur);
  }
  return out;
}

VolumeBundle rasterize_trajectories(std::span<const Trajectory> trajectories, Dims dims,
                                    std::array<double, 3> voxel_size_um) {
  VolumeBundle bundle(dims, voxel_size_um);
  const std::size_t n = dims.voxel_count();
  std::vector<double> speed_sum(n, 0.0);
  std::vector<std::uint32_t> events(n, 0);
  Volume<Vec3f> dir_sum(dims);

  const Vec3 inv{1e6 / voxel_size_um[0], 1e6 / voxel_size_um[1], 1e6 / voxel_size_um[2]};
  auto to_voxel = [&](Vec3 p) { return Vec3{p.x * inv.x, p.y * inv.y, p.z * inv.z}; };

  for (const auto& tr : trajectories) {
    bool have_prev = false;
    std::array<int, 3> prev_last{};
    for (std::size_t k = 0; k + 1 < tr.points.size(); ++k) {
      const auto& p0 = tr.points[k];
      const auto& p1 = tr.points[k + 1];
      const Vec3 seg = p1.position - p0.position;
      const double len = norm(seg);
      if (!(len > 0.0)) continue;
      const Vec3 u = seg / len;
      const auto voxels = traverse_segment(to_voxel(p0.position), to_voxel(p1.position), dims);
      for (std::size_t j = 0; j < voxels.size(); ++j) {
        if (j == 0 && have_prev && voxels[0] == prev_last) continue;
        const std::size_t idx = dims.index(voxels[j][0], voxels[j][1], voxels[j][2]);
        speed_sum[idx] += p0.speed;
        events[idx] += 1;
        Vec3f& ds = dir_sum[idx];
        ds.x += static_cast<float>(u.x);
        ds.y += static_cast<float>(u.y);
        ds.z += static_cast<float>(u.z);
      }
      if (!voxels.empty()) {
        have_prev = true;
        prev_last = voxels.back();
      }
    }
  }

  bundle.direction = Volume<Vec3f>(dims);
  for (std::size_t i = 0; i < n; ++i) {
    if (events[i] == 0) continue;
    bundle.speed[i] = static_cast<float>(speed_sum[i] / events[i]);
    bundle.count[i] = static_cast<float>(events[i]);
    const Vec3f s = dir_sum[i];
    const double len = std::sqrt(double(s.x) * s.x + double(s.y) * s.y + double(s.z) * s.z);
    // opposing segments can cancel exactly; keep a unit vector so the field stays valid
    (*bundle.direction)[i] =
        len > 1e-6 ? Vec3f{float(s.x / len), float(s.y / len), float(s.z / len)} : Vec3f{1.0f, 0.0f, 0.0f};
  }
  return bundle;
}

}  // namespace ulmflow
