#include "ulmflow/io.hpp"

#include <bit>
#include <charconv>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <json.hpp>

namespace ulmflow {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

[[noreturn]] void corrupt(const std::string& m) { throw IoError(IoError::Kind::corrupt, m); }

void to_little_endian(std::vector<float>& v) {
  if constexpr (std::endian::native == std::endian::big) {
    for (float& f : v) {
      std::uint32_t u;
      std::memcpy(&u, &f, 4);
      u = __builtin_bswap32(u);
      std::memcpy(&f, &u, 4);
    }
  }
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

void FieldSet::add(const std::string& name, const ScalarVolume& v) {
  fields[name] = v.values();
  components[name] = 1;
}

void FieldSet::add(const std::string& name, const MaskVolume& v) {
  std::vector<float> f(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) f[i] = v[i];
  fields[name] = std::move(f);
  components[name] = 1;
}

void FieldSet::add(const std::string& name, const Volume<Vec3f>& v) {
  std::vector<float> f(3 * v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    f[3 * i] = v[i].x;
    f[3 * i + 1] = v[i].y;
    f[3 * i + 2] = v[i].z;
  }
  fields[name] = std::move(f);
  components[name] = 3;
}

ScalarVolume FieldSet::scalar(const std::string& name) const {
  const auto it = fields.find(name);
  if (it == fields.end()) throw IoError(IoError::Kind::missing, "field '" + name + "' not present");
  if (components.at(name) != 1 || it->second.size() != dims.voxel_count())
    corrupt("field '" + name + "' is not a scalar field of the declared dims");
  ScalarVolume v(dims);
  v.values() = it->second;
  return v;
}

Volume<Vec3f> FieldSet::vector3(const std::string& name) const {
  const auto it = fields.find(name);
  if (it == fields.end()) throw IoError(IoError::Kind::missing, "field '" + name + "' not present");
  if (components.at(name) != 3 || it->second.size() != 3 * dims.voxel_count())
    corrupt("field '" + name + "' is not a 3-vector field of the declared dims");
  Volume<Vec3f> v(dims);
  for (std::size_t i = 0; i < v.size(); ++i)
    v[i] = {it->second[3 * i], it->second[3 * i + 1], it->second[3 * i + 2]};
  return v;
}

fs::path sidecar_path(const fs::path& stem) { return fs::path(stem.string() + ".json"); }

fs::path field_path(const fs::path& stem, const std::string& field) {
  return fs::path(stem.string() + "." + field + ".f32");
}

void write_field_set(const fs::path& stem, const FieldSet& set) {
  json side;
  side["format"] = "ulmflow-volume";
  side["version"] = kVolumeFormatVersion;
  side["dims"] = {set.dims.h, set.dims.w, set.dims.t};
  side["voxel_size_um"] = set.voxel_size_um;
  side["endianness"] = "little";
  side["dtype"] = "float32";
  json fields = json::object();
  for (const auto& [name, data] : set.fields) {
    const int comp = set.components.at(name);
    if (data.size() != set.dims.voxel_count() * static_cast<std::size_t>(comp))
      throw std::invalid_argument("write_field_set: field '" + name + "' has the wrong length");
    fields[name] = {{"file", field_path(stem, name).filename().string()}, {"components", comp}};
    std::vector<float> out = data;
    to_little_endian(out);
    std::ofstream f(field_path(stem, name), std::ios::binary | std::ios::trunc);
    if (!f) throw IoError(IoError::Kind::missing, "cannot write " + field_path(stem, name).string());
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size() * 4));
    if (!f) throw IoError(IoError::Kind::missing, "write failed for " + field_path(stem, name).string());
  }
  side["fields"] = fields;
  std::ofstream f(sidecar_path(stem), std::ios::trunc);
  if (!f) throw IoError(IoError::Kind::missing, "cannot write " + sidecar_path(stem).string());
  f << side.dump(2) << "\n";
}

FieldSet read_field_set(const fs::path& stem) {
  const fs::path sp = sidecar_path(stem);
  std::ifstream in(sp);
  if (!in) throw IoError(IoError::Kind::missing, "sidecar not found: " + sp.string());
  json side;
  try {
    in >> side;
  } catch (const json::exception& e) {
    corrupt("sidecar " + sp.string() + " is not valid JSON: " + e.what());
  }
  FieldSet set;
  try {
    if (side.at("version").get<int>() != kVolumeFormatVersion) corrupt("unsupported version in " + sp.string());
    if (side.value("endianness", "little") != "little") corrupt("only little-endian payloads are supported");
    const auto d = side.at("dims").get<std::vector<int>>();
    if (d.size() != 3 || d[0] <= 0 || d[1] <= 0 || d[2] <= 0) corrupt("dims must be 3 positive integers");
    set.dims = {d[0], d[1], d[2]};
    const auto vs = side.at("voxel_size_um").get<std::vector<double>>();
    if (vs.size() != 3 || !(vs[0] > 0 && vs[1] > 0 && vs[2] > 0)) corrupt("voxel_size_um must be 3 positive numbers");
    set.voxel_size_um = {vs[0], vs[1], vs[2]};
    for (const auto& [name, meta] : side.at("fields").items()) {
      const int comp = meta.at("components").get<int>();
      if (comp != 1 && comp != 3) corrupt("field '" + name + "' has unsupported component count");
      const fs::path fp = stem.parent_path() / meta.at("file").get<std::string>();
      std::ifstream f(fp, std::ios::binary);
      if (!f) corrupt("payload missing: " + fp.string());
      const std::size_t expect = set.dims.voxel_count() * static_cast<std::size_t>(comp);
      const auto bytes = static_cast<std::size_t>(fs::file_size(fp));
      if (bytes != 4 * expect)
        corrupt("payload " + fp.string() + " has " + std::to_string(bytes) + " bytes, expected " +
                std::to_string(4 * expect));
      std::vector<float> data(expect);
      f.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(bytes));
      if (!f) corrupt("short read on " + fp.string());
      to_little_endian(data);
      set.fields[name] = std::move(data);
      set.components[name] = comp;
    }
  } catch (const json::exception& e) {
    corrupt("sidecar " + sp.string() + " is malformed: " + e.what());
  }
  return set;
}

FieldSet to_field_set(const VolumeBundle& b) {
  FieldSet s;
  s.dims = b.dims;
  s.voxel_size_um = b.voxel_size_um;
  s.add("speed", b.speed);
  s.add("count", b.count);
  if (b.direction) s.add("direction", *b.direction);
  return s;
}

VolumeBundle to_bundle(const FieldSet& set) {
  VolumeBundle b(set.dims, set.voxel_size_um);
  try {
    b.speed = set.scalar("speed");
    b.count = set.scalar("count");
  } catch (const IoError& e) {
    corrupt(std::string("not a speed bundle: ") + e.what());
  }
  if (set.has("direction")) b.direction = set.vector3("direction");
  try {
    b.validate();
  } catch (const std::exception& e) {
    corrupt(e.what());
  }
  return b;
}

void write_bundle(const fs::path& stem, const VolumeBundle& b) { write_field_set(stem, to_field_set(b)); }

VolumeBundle read_bundle(const fs::path& stem) { return to_bundle(read_field_set(stem)); }

FieldSet to_field_set(const GroundTruth& gt, Dims dims, double voxel_um) {
  FieldSet s;
  s.dims = dims;
  s.voxel_size_um = {voxel_um, voxel_um, voxel_um};
  s.add("mask", gt.mask);
  s.add("speed", gt.speed);
  s.add("centerline_speed", gt.centerline_speed);
  return s;
}

GroundTruth to_ground_truth(const FieldSet& set) {
  GroundTruth gt{MaskVolume(set.dims), set.scalar("speed"), set.scalar("centerline_speed")};
  const ScalarVolume m = set.scalar("mask");
  for (std::size_t i = 0; i < m.size(); ++i) gt.mask[i] = m[i] != 0.0f ? 1 : 0;
  return gt;
}

SampleSet read_samples_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(IoError::Kind::missing, "samples file not found: " + path.string());
  std::string line;
  if (!std::getline(in, line)) corrupt("empty samples file: " + path.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "x1_m,x2_m,speed_mps,weight") corrupt("unexpected header '" + line + "' in " + path.string());
  SampleSet out;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    double v[4];
    std::size_t pos = 0;
    for (int k = 0; k < 4; ++k) {
      const std::size_t end = k < 3 ? line.find(',', pos) : line.size();
      if (end == std::string::npos) corrupt(path.string() + ":" + std::to_string(row) + ": expected 4 columns");
      const std::string cell = line.substr(pos, end - pos);
      try {
        std::size_t used = 0;
        v[k] = std::stod(cell, &used);
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        corrupt(path.string() + ":" + std::to_string(row) + ": bad number '" + cell + "'");
      }
      pos = end + 1;
    }
    if (!(v[3] > 0.0)) corrupt(path.string() + ":" + std::to_string(row) + ": weight must be > 0");
    out.push_back({{v[0], v[1]}, v[2], v[3]});
  }
  return out;
}

void write_samples_csv(const fs::path& path, const SampleSet& samples) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(IoError::Kind::missing, "cannot write " + path.string());
  out << "x1_m,x2_m,speed_mps,weight\n";
  for (const auto& s : samples)
    out << format_double(s.position.x) << ',' << format_double(s.position.y) << ','
        << format_double(s.speed) << ',' << format_double(s.weight) << '\n';
}

void write_trajectories_csv(const fs::path& path, const std::vector<Trajectory>& trajs) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(IoError::Kind::missing, "cannot write " + path.string());
  out << "t_s,x_m,y_m,z_m,speed_mps,track_id\n";
  for (const auto& tr : trajs)
    for (const auto& p : tr.points)
      out << format_double(p.time) << ',' << format_double(p.position.x) << ','
          << format_double(p.position.y) << ',' << format_double(p.position.z) << ','
          << format_double(p.speed) << ',' << tr.id << '\n';
}

}  // namespace ulmflow
