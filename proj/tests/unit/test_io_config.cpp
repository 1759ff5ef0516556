#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "ulmflow/config.hpp"
#include "ulmflow/io.hpp"

using namespace ulmflow;
namespace fs = std::filesystem;
using doctest::Approx;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ulmflow_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

VolumeBundle random_bundle(Dims d, std::uint64_t seed) {
  VolumeBundle b(d, {5.0, 5.0, 5.0});
  b.direction = Volume<Vec3f>(d);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 0.03f);
  for (std::size_t i = 0; i < b.speed.size(); i += 3) {
    b.speed[i] = u(rng);
    b.count[i] = float(1 + i % 4);
    (*b.direction)[i] = {0.0f, 0.6f, 0.8f};
  }
  return b;
}

}  // namespace

TEST_CASE("bundle round trip is exact") {
  const auto dir = scratch("bundle");
  const auto b = random_bundle({5, 6, 7}, 1);
  write_bundle(dir / "b", b);
  const auto r = read_bundle(dir / "b");
  CHECK(r.dims == b.dims);
  CHECK(r.voxel_size_um == b.voxel_size_um);
  CHECK(r.speed == b.speed);
  CHECK(r.count == b.count);
  REQUIRE(r.direction);
  CHECK(*r.direction == *b.direction);
}

TEST_CASE("truncated payload, bad sidecar and missing files are reported by kind") {
  const auto dir = scratch("corrupt");
  write_bundle(dir / "b", random_bundle({4, 4, 4}, 2));
  fs::resize_file(field_path(dir / "b", "speed"), 10);
  try {
    read_bundle(dir / "b");
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(e.kind() == IoError::Kind::corrupt);
  }

  { std::ofstream(sidecar_path(dir / "c")) << "{not json"; }
  try {
    read_field_set(dir / "c");
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(e.kind() == IoError::Kind::corrupt);
  }

  try {
    read_bundle(dir / "absent");
    FAIL("expected IoError");
  } catch (const IoError& e) {
    CHECK(e.kind() == IoError::Kind::missing);
  }
}

TEST_CASE("bundle invariants are enforced on read") {
  const auto dir = scratch("invariant");
  auto b = random_bundle({3, 3, 3}, 3);
  auto set = to_field_set(b);
  set.fields["speed"][1] = 0.02f;  // speed where count is zero
  write_field_set(dir / "b", set);
  CHECK_THROWS_AS(read_bundle(dir / "b"), IoError);
}

TEST_CASE("ground truth survives the field-set conversion") {
  const Dims d{3, 4, 5};
  GroundTruth gt{MaskVolume(d), ScalarVolume(d), ScalarVolume(d, 0.03f)};
  gt.mask[7] = 1;
  gt.speed[7] = 0.02f;
  const auto dir = scratch("truth");
  write_field_set(dir / "t", to_field_set(gt, d, 5.0));
  const auto back = to_ground_truth(read_field_set(dir / "t"));
  CHECK(back.mask == gt.mask);
  CHECK(back.speed == gt.speed);
  CHECK(back.centerline_speed == gt.centerline_speed);
}

TEST_CASE("sample CSV round trip and malformed rows") {
  const auto dir = scratch("csv");
  SampleSet s{{{1e-5, -2e-5}, 0.01, 1.0}, {{3.5e-4, 0.0}, 0.0, 2.0}};
  write_samples_csv(dir / "s.csv", s);
  const auto r = read_samples_csv(dir / "s.csv");
  REQUIRE(r.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(r[i].position == s[i].position);
    CHECK(r[i].speed == s[i].speed);
    CHECK(r[i].weight == s[i].weight);
  }
  { std::ofstream(dir / "bad.csv") << "x1_m,x2_m,speed_mps,weight\n1,2,abc,1\n"; }
  CHECK_THROWS_AS(read_samples_csv(dir / "bad.csv"), IoError);
  CHECK_THROWS_AS(read_samples_csv(dir / "none.csv"), IoError);
}

TEST_CASE("run config round trips through JSON with a stable hash") {
  RunConfig c;
  c.seed = 77;
  c.grouping.r_min = 6;
  c.svi.iterations = 123;
  c.enhance.count_threshold = 15;
  const auto j = to_json(c);
  const auto back = run_config_from_json(j);
  CHECK(to_json(back) == j);
  CHECK(config_hash(j) == config_hash(to_json(back)));
  CHECK(config_hash(j).size() == 16);
  c.seed = 78;
  CHECK(config_hash(to_json(c)) != config_hash(j));
}

TEST_CASE("missing keys keep defaults; unknown keys and bad values are collected") {
  const auto c = run_config_from_json(nlohmann::json::object());
  CHECK(to_json(c) == to_json(RunConfig{}));

  nlohmann::json bad = {{"seed", 1}, {"bogus", 2}, {"svi", {{"iterations", -5}, {"lr", 0.1}}},
                        {"grouping", {{"r_min", "four"}}}};
  try {
    run_config_from_json(bad);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.problems().size() >= 4);
  }
}

TEST_CASE("config file loading") {
  const auto dir = scratch("config");
  { std::ofstream(dir / "c.json") << R"({"seed": 5, "enhance": {"count_threshold": 20}})"; }
  const auto c = load_run_config(dir / "c.json");
  CHECK(c.seed == 5);
  CHECK(c.enhance.count_threshold == 20);
  { std::ofstream(dir / "bad.json") << "{"; }
  CHECK_THROWS(load_run_config(dir / "bad.json"));
  CHECK_THROWS(load_run_config(dir / "missing.json"));
}
