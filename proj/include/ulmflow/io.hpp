#pragma once

// On-disk formats. A volume set is a JSON sidecar `<stem>.json` plus one raw
// little-endian float32 file `<stem>.<field>.f32` per field, row-major in
// (h, w, t) with t fastest; vector fields interleave their components.

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "ulmflow/core_model.hpp"
#include "ulmflow/simulate.hpp"
#include "ulmflow/volume.hpp"

namespace ulmflow {

class IoError : public std::runtime_error {
 public:
  enum class Kind { missing, corrupt, mismatch };
  IoError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

inline constexpr int kVolumeFormatVersion = 1;

struct FieldSet {
  Dims dims{};
  std::array<double, 3> voxel_size_um{5.0, 5.0, 5.0};
  std::map<std::string, std::vector<float>> fields;  // component-interleaved
  std::map<std::string, int> components;              // 1 or 3 per field

  void add(const std::string& name, const ScalarVolume& v);
  void add(const std::string& name, const MaskVolume& v);
  void add(const std::string& name, const Volume<Vec3f>& v);
  bool has(const std::string& name) const { return fields.count(name) != 0; }
  /// Throws IoError(missing) when absent, IoError(corrupt) on a component mismatch.
  ScalarVolume scalar(const std::string& name) const;
  Volume<Vec3f> vector3(const std::string& name) const;
};

std::filesystem::path sidecar_path(const std::filesystem::path& stem);
std::filesystem::path field_path(const std::filesystem::path& stem, const std::string& field);

void write_field_set(const std::filesystem::path& stem, const FieldSet& set);
/// IoError(missing) for an absent sidecar; IoError(corrupt) for bad JSON, an
/// unknown version, or a payload whose size disagrees with the dims.
FieldSet read_field_set(const std::filesystem::path& stem);

FieldSet to_field_set(const VolumeBundle& b);
/// Requires speed and count; direction optional. Runs VolumeBundle::validate
/// and reports violations as IoError(corrupt).
VolumeBundle to_bundle(const FieldSet& set);

void write_bundle(const std::filesystem::path& stem, const VolumeBundle& b);
VolumeBundle read_bundle(const std::filesystem::path& stem);

FieldSet to_field_set(const GroundTruth& gt, Dims dims, double voxel_um);
GroundTruth to_ground_truth(const FieldSet& set);

/// Columns x1_m,x2_m,speed_mps,weight. Throws IoError(corrupt) on malformed rows.
SampleSet read_samples_csv(const std::filesystem::path& path);
void write_samples_csv(const std::filesystem::path& path, const SampleSet& samples);

/// Columns t_s,x_m,y_m,z_m,speed_mps,track_id.
void write_trajectories_csv(const std::filesystem::path& path, const std::vector<Trajectory>& trajs);

}  // namespace ulmflow
