#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "ulmflow/io.hpp"

namespace fs = std::filesystem;
using namespace ulmflow;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "ulmflow");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run(int(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("ulmflow_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

// Small two-tube phantom at 10 um voxels, fast enough for the model pipeline.
fs::path small_tubes(const fs::path& dir) {
  const auto r = run({"simulate", "tubes", "--dims", "40", "20", "20", "--voxel-um", "10", "--tracks", "30",
                      "--seed", "3", "--out", dir.string()});
  REQUIRE(r.code == cli::kExitOk);
  return dir / "tubes";
}

const std::vector<std::string> kFastGrouping{"--r-min", "4", "--r-max", "8", "--r-step", "4",
                                             "--seed-stride", "4", "--workers", "1"};

}  // namespace

TEST_CASE("usage errors exit with 2") {
  CHECK(run({}).code == cli::kExitUsage);
  CHECK(run({"bogus"}).code == cli::kExitUsage);
  CHECK(run({"estimate", "--method", "nope", "--samples", "x", "--out", "y"}).code == cli::kExitUsage);
  CHECK(run({"--help"}).code == cli::kExitOk);

  const auto missing = run({"simulate", "section", "--out", "/nonexistent/dir/for/ulmflow"});
  CHECK(missing.code == cli::kExitUsage);
  CHECK(missing.err.find("/nonexistent/dir/for/ulmflow") != std::string::npos);

  const auto dir = scratch("usage");
  CHECK(run({"simulate", "section", "--n", "0", "--out", dir.string()}).code == cli::kExitUsage);
  { std::ofstream(dir / "cfg.json") << R"({"svi": {"iterations": 0}})"; }
  CHECK(run({"repro", "fig2", "--config", (dir / "cfg.json").string(), "--out", dir.string()}).code ==
        cli::kExitUsage);
}

TEST_CASE("simulate echoes identity and is byte-identical for a seed") {
  const auto a = scratch("sim_a"), b = scratch("sim_b");
  const auto ra = run({"simulate", "section", "--n", "50", "--seed", "9", "--out", a.string()});
  const auto rb = run({"simulate", "section", "--n", "50", "--seed", "9", "--out", b.string()});
  REQUIRE(ra.code == 0);
  REQUIRE(rb.code == 0);
  CHECK(ra.out.find("seed=9 config_hash=") == 0);
  CHECK(slurp(a / "section_samples.csv") == slurp(b / "section_samples.csv"));

  small_tubes(a);
  small_tubes(b);
  for (const auto& f : {"tubes.speed.f32", "tubes.count.f32", "tubes.direction.f32", "tubes_trajectories.csv"})
    CHECK(slurp(a / f) == slurp(b / f));
}

TEST_CASE("estimate refuses three samples but still writes a row") {
  const auto dir = scratch("estimate");
  REQUIRE(run({"simulate", "section", "--n", "3", "--out", dir.string(), "--prefix", "tiny"}).code == 0);
  REQUIRE(run({"simulate", "section", "--n", "40", "--noise", "0", "--out", dir.string(), "--prefix", "ok"}).code == 0);
  const auto r = run({"estimate", "--samples", (dir / "tiny_samples.csv").string(), "--samples",
                      (dir / "ok_samples.csv").string(), "--method", "svi", "--out", (dir / "est.csv").string()});
  REQUIRE(r.code == 0);
  const std::string csv = slurp(dir / "est.csv");
  CHECK(csv.find("refused_too_few_samples") != std::string::npos);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);

  const auto ev = run({"evaluate", "--estimates", (dir / "est.csv").string(), "--truth-params",
                       (dir / "ok_truth.json").string(), "--out", (dir / "err.csv").string()});
  CHECK(ev.code == 0);
  CHECK(slurp(dir / "err.csv").find("radius_err") != std::string::npos);

  { std::ofstream(dir / "broken.csv") << "x1_m,x2_m,speed_mps,weight\n1,2\n"; }
  CHECK(run({"estimate", "--samples", (dir / "broken.csv").string(), "--out", (dir / "e2.csv").string()}).code ==
        cli::kExitCorrupt);
}

TEST_CASE("enhance rejects a corrupt bundle with 3") {
  const auto dir = scratch("corrupt");
  const auto stem = small_tubes(dir);
  fs::resize_file(field_path(stem, "count"), 7);
  const auto r = run({"enhance", "--bundle", stem.string(), "--method", "smooth", "--out", (dir / "o").string()});
  CHECK(r.code == cli::kExitCorrupt);
}

TEST_CASE("smoothing with zero half width reproduces the input speed") {
  const auto dir = scratch("smooth0");
  const auto stem = small_tubes(dir);
  const auto r = run({"enhance", "--bundle", stem.string(), "--method", "smooth", "--h-a", "0", "--out",
                      (dir / "s").string()});
  REQUIRE(r.code == 0);
  CHECK(read_field_set(dir / "s").scalar("speed") == read_bundle(stem).speed);
}

TEST_CASE("evaluate: identical volumes score zero, mismatches exit 4") {
  const auto dir = scratch("evaluate");
  const auto stem = small_tubes(dir);
  const auto truth = (dir / "tubes_truth").string();
  const auto r = run({"evaluate", "--pred", truth, "--truth", truth, "--out", (dir / "m.csv").string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("dice=0\n") != std::string::npos);
  CHECK(r.out.find("mse=0\n") != std::string::npos);

  const auto other = scratch("evaluate_other");
  REQUIRE(run({"simulate", "tubes", "--dims", "40", "20", "21", "--voxel-um", "10", "--out", other.string()}).code == 0);
  CHECK(run({"evaluate", "--pred", (other / "tubes").string(), "--truth", truth, "--out",
             (dir / "m2.csv").string()}).code == cli::kExitMismatch);
  CHECK(run({"evaluate", "--pred", stem.string(), "--truth", (dir / "missing").string(), "--out",
             (dir / "m3.csv").string()}).code == cli::kExitMismatch);
}

TEST_CASE("model enhancement writes a manifest and reruns bit-identically") {
  const auto dir = scratch("model");
  const auto stem = small_tubes(dir);
  std::vector<std::string> args{"enhance", "--bundle", stem.string(), "--method", "model",
                                "--out", (dir / "m").string(), "--seed", "11"};
  args.insert(args.end(), kFastGrouping.begin(), kFastGrouping.end());
  const auto first = run(args);
  REQUIRE(first.code == 0);
  const auto set = read_field_set(dir / "m");
  for (const auto* f : {"speed", "count", "pressure", "uncertainty"}) CHECK(set.has(f));
  CHECK(count_nonzero(set.scalar("speed")) > 0);

  const auto manifest = (dir / "m.manifest.json").string();
  const auto again = run({"enhance", "--manifest", manifest, "--out", (dir / "m_rerun").string()});
  CHECK(again.code == 0);
  CHECK(again.out.find("rerun outputs match") != std::string::npos);
  CHECK(slurp(dir / "m.speed.f32") == slurp(dir / "m_rerun.speed.f32"));

  // tampered record: the rerun must report the mismatch
  std::string text = slurp(manifest);
  const auto pos = text.find("\"fnv1a64\": \"");
  REQUIRE(pos != std::string::npos);
  text[pos + 12] = text[pos + 12] == '0' ? '1' : '0';
  { std::ofstream(dir / "tampered.json") << text; }
  CHECK(run({"enhance", "--manifest", (dir / "tampered.json").string(), "--out", (dir / "m3").string()}).code ==
        cli::kExitFailure);
}

TEST_CASE("repro fig2 smoke run") {
  const auto dir = scratch("fig2");
  const auto r = run({"repro", "fig2", "--replicates", "2", "--n-min", "4", "--n-max", "6", "--seed", "1",
                      "--out", dir.string()});
  REQUIRE(r.code == 0);
  CHECK(fs::exists(dir / "fig2_rows.csv"));
  CHECK(fs::exists(dir / "fig2_summary.json"));
}
