#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "cli_runner.hpp"
#include "esgn/config.hpp"
#include "esgn/pipeline.hpp"
#include "esgn/viz.hpp"
#include "fixtures.hpp"

using namespace esgn;
namespace fs = std::filesystem;
using fixture::run_cli;

namespace {

std::vector<std::uint8_t> bytes_of(const fs::path& p) { return read_file_bytes(p); }

std::string text_of(const fs::path& p) {
  const auto b = read_file_bytes(p);
  return {b.begin(), b.end()};
}

void write_text(const fs::path& p, const std::string& s) {
  write_file_bytes(p, std::vector<std::uint8_t>(s.begin(), s.end()));
}

// FNV-1a 64 digest of a byte buffer, as hex.
std::string digest(const std::vector<std::uint8_t>& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  char buf[64];
  std::snprintf(buf, sizeof buf, "size=%zu fnv1a64=%016llx\n", bytes.size(), static_cast<unsigned long long>(h));
  return buf;
}

class ScopedEnv {
 public:
  ScopedEnv(const char* name, const char* value) : name_(name) { ::setenv(name, value, 1); }
  ~ScopedEnv() { ::unsetenv(name_); }
  ScopedEnv(const ScopedEnv&) = delete;
  ScopedEnv& operator=(const ScopedEnv&) = delete;

 private:
  const char* name_;
};

double loss_field(const std::string& out, const std::string& key) {
  const auto at = out.find(key + "=");
  REQUIRE(at != std::string::npos);
  return std::stod(out.substr(at + key.size() + 1));
}

std::size_t count_field(const std::string& out, const std::string& key) {
  const auto at = out.find(key + "=");
  REQUIRE(at != std::string::npos);
  return std::stoul(out.substr(at + key.size() + 1));
}

ObjectLabel big_car(double x, double z) {
  ObjectLabel o;
  o.bbox = {100, 100, 200, 170};
  o.box.x = x;
  o.box.y = 1.65;
  o.box.z = z;
  o.box.h = 1.5;
  o.box.w = 1.6;
  o.box.l = 3.9;
  return o;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("usage errors") {
    CHECK(run_cli({}).code == app::kExitUsage);
    CHECK(run_cli({"nope"}).code == app::kExitUsage);
    CHECK(run_cli({"pipeline"}).code == app::kExitUsage);
    CHECK(run_cli({"pipeline", "--config", "/does/not/exist.cfg"}).code == app::kExitUsage);
    CHECK(run_cli({"--help"}).code == app::kExitOk);
    fixture::TempDir tmp("cli_usage");
    const auto cfg = fixture::write_dataset(tmp.path(), 1);
    CHECK(run_cli({"pipeline", "--config", cfg.string(), "--dump", "F_nope"}).code == app::kExitUsage);
    CHECK(run_cli({"pipeline", "--config", cfg.string(), "--threads", "0"}).code == app::kExitUsage);
    CHECK(run_cli({"eval", "--gt", tmp.path().string(), "--det", tmp.path().string(), "--recall-points", "12"}).code ==
          app::kExitUsage);
  }

  TEST_CASE("selftest") {
    const auto r = run_cli({"selftest"});
    CHECK(r.code == 0);
    CHECK(r.out.find("FAIL") == std::string::npos);
    CHECK(r.out.find("selftest iou_offset ok") != std::string::npos);
  }

  TEST_CASE("pipeline: golden, determinism, seed override") {
    fixture::TempDir tmp("cli_pipe");
    const auto cfg = fixture::write_dataset(tmp.path(), 1);
    const auto dump = tmp.path() / "out" / "000000" / "F_gf3.esgt";
    const auto r = run_cli({"pipeline", "--config", cfg.string(), "--dump", "F_gf3,F_cv1"});
    INFO(r.err);
    REQUIRE(r.code == 0);
    CHECK(r.out.find("frame=000000 detections=") == 0);
    REQUIRE(fs::exists(dump));
    CHECK(fs::exists(tmp.path() / "out" / "000000" / "F_cv1.esgt"));
    CHECK(fs::exists(tmp.path() / "out" / "det" / "000000.txt"));
    const auto first = bytes_of(dump);
    CHECK(read_esgt(dump).dims() == Shape{16, 150, 144});
    const std::string d = digest(first);
    CHECK(fixture::matches_golden("fixture_F_gf3.digest", std::vector<std::uint8_t>(d.begin(), d.end())));

    REQUIRE(run_cli({"pipeline", "--config", cfg.string(), "--dump", "F_gf3"}).code == 0);
    CHECK(bytes_of(dump) == first);

    {
      const ScopedEnv env("ESGN_SEED", "0");
      REQUIRE(run_cli({"pipeline", "--config", cfg.string(), "--dump", "F_gf3"}).code == 0);
      CHECK(bytes_of(dump) == first);
    }
    {
      const ScopedEnv env("ESGN_SEED", "12345");
      REQUIRE(run_cli({"pipeline", "--config", cfg.string(), "--dump", "F_gf3"}).code == 0);
      CHECK(bytes_of(dump) != first);
    }
    {
      const ScopedEnv env("ESGN_SEED", "x1");
      const auto bad = run_cli({"pipeline", "--config", cfg.string()});
      CHECK(bad.code == app::kExitUsage);
      CHECK(bad.err.find("ESGN_SEED") != std::string::npos);
    }
  }

  TEST_CASE("pipeline: failing frame names frame, stage and path") {
    fixture::TempDir tmp("cli_fail");
    const auto cfg = fixture::write_dataset(tmp.path(), 2);
    const auto calib = tmp.path() / "data" / "calib" / "000001.txt";
    fs::remove(calib);
    fs::create_directories(tmp.path() / "data" / "calib");
    const auto r = run_cli({"pipeline", "--config", cfg.string(), "--frames", "000000,000001"});
    CHECK(r.code == app::kExitFrameFailed);
    CHECK(r.err.find("000001") != std::string::npos);
    CHECK(r.err.find(calib.string()) != std::string::npos);
    CHECK(r.out.find("frame=000000") != std::string::npos);
  }

  TEST_CASE("pipeline: thread count does not change output") {
    fixture::TempDir tmp("cli_threads");
    const auto cfg = fixture::write_dataset(tmp.path(), 3, 5);
    auto run = [&](const std::string& threads) {
      fs::remove_all(tmp.path() / "out");
      const auto r = run_cli({"pipeline", "--config", cfg.string(), "--threads", threads, "--dump", "F_gf1,F_gv2"});
      REQUIRE(r.code == 0);
      std::vector<std::vector<std::uint8_t>> files;
      for (const char* id : {"000000", "000001", "000002"}) {
        files.push_back(bytes_of(tmp.path() / "out" / id / "F_gf1.esgt"));
        files.push_back(bytes_of(tmp.path() / "out" / id / "F_gv2.esgt"));
        files.push_back(bytes_of(tmp.path() / "out" / "det" / (std::string(id) + ".txt")));
      }
      return std::pair{files, r.out};
    };
    const auto one = run("1");
    const auto three = run("3");
    CHECK(one.first == three.first);
    CHECK(one.second == three.second);
  }

  TEST_CASE("distill: identity teacher, planted cell, library agreement") {
    fixture::TempDir tmp("cli_distill");
    // One frame whose only active cell is known: a small box around a cell
    // that holds LiDAR returns.
    Frame f = make_synthetic_frame(3);
    f.id = "000000";
    const auto spec = VoxelGridSpec::stereo_default();
    const Tensor sparse = build_sparse_mask(points_to_camera(f.points, f.rig), spec);
    std::size_t cx = 0, cz = 0;
    bool found = false;
    for (std::size_t x = 0; x < spec.nx() && !found; ++x) {
      for (std::size_t z = 0; z < spec.nz() && !found; ++z) {
        if (sparse(x, z) == 1.0) {
          cx = x;
          cz = z;
          found = true;
        }
      }
    }
    REQUIRE(found);
    ObjectLabel tiny = big_car(spec.center_x(cx), spec.center_z(cz));
    tiny.box.w = 0.2;
    tiny.box.l = 0.2;
    f.labels = {tiny};
    write_frame(tmp.path() / "data", f);
    const std::string text =
        "data_root = data\noutput_dir = out\nimage_height = 64\nimage_width = 128\ndistill_adapter = identity\n";
    write_text(tmp.path() / "run.cfg", text);
    const std::string cfg = (tmp.path() / "run.cfg").string();

    const auto lib = run_cli({"distill", "--config", cfg, "--dump", "F_gf1,F_gf2,F_gf3,M_fg,M_sp"});
    INFO(lib.err);
    REQUIRE(lib.code == 0);
    CHECK(count_field(lib.out, "active_cells") == 1);

    // Library-level computation of the same frame.
    const RunConfig rc = load_run_config(tmp.path() / "run.cfg");
    const Models models = Models::build(rc);
    const Frame loaded = load_frame(rc.data_root, "000000");
    const StereoResult s = run_stereo(loaded, rc, models);
    const DistillResult d = run_distill(loaded, s.trace.fused, rc, models, std::nullopt);
    CHECK(loss_field(lib.out, "total") == d.loss.total);
    CHECK(loss_field(lib.out, "scale=1 loss") == d.loss.per_scale[0]);
    CHECK(loss_field(lib.out, "mean_total") == d.loss.total);
    CHECK(read_esgt(tmp.path() / "out" / "000000" / "M_sp.esgt") == d.sparse_mask);

    // Teacher = student dumps.
    const fs::path teacher = tmp.path() / "teacher";
    fs::create_directories(teacher);
    for (int i = 1; i <= 3; ++i) {
      fs::copy_file(tmp.path() / "out" / "000000" / ("F_gf" + std::to_string(i) + ".esgt"),
                    teacher / ("F_lgf" + std::to_string(i) + ".esgt"));
    }
    const auto same = run_cli({"distill", "--config", cfg, "--teacher", teacher.string()});
    INFO(same.err);
    REQUIRE(same.code == 0);
    CHECK(loss_field(same.out, "total") == 0.0);

    // Planted difference of 2 at the active cell of scale 2.
    Tensor t2 = read_esgt(teacher / "F_lgf2.esgt");
    t2(0, cx, cz) -= 2.0;
    write_esgt(teacher / "F_lgf2.esgt", t2);
    const auto planted = run_cli({"distill", "--config", cfg, "--teacher", teacher.string()});
    REQUIRE(planted.code == 0);
    CHECK(loss_field(planted.out, "total") == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(loss_field(planted.out, "scale=2 loss") == doctest::Approx(4.0).epsilon(1e-12));
    CHECK(loss_field(planted.out, "scale=1 loss") == 0.0);

    // A planted difference outside the mask changes nothing.
    t2(0, (cx + 7) % spec.nx(), (cz + 11) % spec.nz()) += 100.0;
    write_esgt(teacher / "F_lgf2.esgt", t2);
    const auto outside = run_cli({"distill", "--config", cfg, "--teacher", teacher.string()});
    CHECK(loss_field(outside.out, "total") == loss_field(planted.out, "total"));

    fs::remove(teacher / "F_lgf3.esgt");
    CHECK(run_cli({"distill", "--config", cfg, "--teacher", teacher.string()}).code == app::kExitFrameFailed);
  }

  TEST_CASE("eval: perfect, empty, mismatch") {
    fixture::TempDir tmp("cli_eval");
    const fs::path gt = tmp.path() / "gt", det = tmp.path() / "det", none = tmp.path() / "none",
                   blank = tmp.path() / "blank";
    for (const auto& p : {gt, det, none, blank}) fs::create_directories(p);
    for (int f = 0; f < 3; ++f) {
      std::vector<ObjectLabel> labels{big_car(-4.0 + f, 15.0 + f), big_car(3.0, 25.0 + f)};
      const std::string stem = "00000" + std::to_string(f) + ".txt";
      write_text(gt / stem, serialize_labels(labels));
      for (auto& l : labels) l.has_score = true;
      write_text(det / stem, serialize_labels(labels));
      write_text(blank / stem, "");
    }
    const auto perfect = run_cli({"eval", "--gt", gt.string(), "--det", det.string()});
    CHECK(perfect.code == 0);
    std::istringstream lines(perfect.out);
    std::size_t machine = 0;
    for (std::string line; std::getline(lines, line);) {
      if (line.rfind("class=Car", 0) != 0) continue;
      ++machine;
      CHECK(line.substr(line.find("ap=")) == "ap=100.0000");
    }
    CHECK(machine == 12);
    CHECK(perfect.out.find("class=Car metric=AP3D bucket=moderate iou=0.70 ap=100.0000") != std::string::npos);

    const auto empty = run_cli({"eval", "--gt", gt.string(), "--det", blank.string(), "--recall-points", "11"});
    CHECK(empty.code == 0);
    CHECK(empty.out.find("ap=100") == std::string::npos);
    CHECK(empty.out.find("bucket=hard iou=0.50 ap=0.0000") != std::string::npos);

    const auto missing = run_cli({"eval", "--gt", gt.string(), "--det", none.string()});
    CHECK(missing.code == app::kExitStemMismatch);
    CHECK(missing.out.find("ap=0.0000") != std::string::npos);
    CHECK(missing.err.find("000002") != std::string::npos);

    write_text(det / "999999.txt", "");
    const auto extra = run_cli({"eval", "--gt", gt.string(), "--det", det.string()});
    CHECK(extra.code == app::kExitStemMismatch);
    CHECK(extra.out.find("ap=100.0000") != std::string::npos);
  }

  TEST_CASE("viz: corners, empty PLY, golden") {
    fixture::TempDir tmp("cli_viz");
    const auto cfg = fixture::write_dataset(tmp.path(), 1, 4);
    const auto r = run_cli({"viz", "--config", cfg.string()});
    INFO(r.err);
    REQUIRE(r.code == 0);
    const auto ppm = bytes_of(tmp.path() / "out" / "viz" / "000000.ppm");
    CHECK(fixture::matches_golden("fixture_viz.ppm", ppm));
    REQUIRE(run_cli({"viz", "--config", cfg.string()}).code == 0);
    CHECK(bytes_of(tmp.path() / "out" / "viz" / "000000.ppm") == ppm);
    const std::string ply = text_of(tmp.path() / "out" / "viz" / "000000.ply");
    CHECK(ply.rfind("ply\nformat ascii 1.0\n", 0) == 0);

    // One box straight ahead of the camera.
    fixture::TempDir one("cli_viz_one");
    Frame f = make_synthetic_frame(4);
    f.id = "000000";
    f.labels = {big_car(0.0, 12.0)};
    f.points.clear();
    write_frame(one.path() / "data", f);
    write_text(one.path() / "run.cfg", "data_root = data\noutput_dir = out\nimage_height = 64\nimage_width = 128\n");
    REQUIRE(run_cli({"viz", "--config", (one.path() / "run.cfg").string()}).code == 0);
    const auto img = bytes_of(one.path() / "out" / "viz" / "000000.ppm");
    const std::string header = "P6\n128 64\n255\n";
    REQUIRE(std::string(img.begin(), img.begin() + static_cast<std::ptrdiff_t>(header.size())) == header);
    std::size_t yellow = 0;
    for (std::size_t i = header.size(); i + 2 < img.size(); i += 3) {
      yellow += img[i] == kCornerColor.r && img[i + 1] == kCornerColor.g && img[i + 2] == kCornerColor.b;
    }
    CHECK(yellow >= 8);

    // Empty frame: no labels, no points, no detections.
    fixture::TempDir empty("cli_viz_empty");
    f.labels.clear();
    write_frame(empty.path() / "data", f);
    write_text(empty.path() / "run.cfg", "data_root = data\noutput_dir = out\nimage_height = 64\nimage_width = 128\n");
    REQUIRE(run_cli({"viz", "--config", (empty.path() / "run.cfg").string()}).code == 0);
    const std::string eply = text_of(empty.path() / "out" / "viz" / "000000.ply");
    CHECK(eply.find("element vertex 0\n") != std::string::npos);
    CHECK(eply.find("element edge 0\n") != std::string::npos);
    CHECK(eply.find("end_header\n") == eply.size() - 11);
  }

  TEST_CASE("synth writes a runnable dataset") {
    fixture::TempDir tmp("cli_synth");
    const auto dir = tmp.path() / "ds";
    REQUIRE(run_cli({"synth", "--out", dir.string(), "--count", "2"}).code == 0);
    CHECK(list_frame_ids(dir) == std::vector<std::string>{"000000", "000001"});
    const auto r = run_cli({"pipeline", "--config", (dir / "esgn.cfg").string(), "--frames", "000001"});
    CHECK(r.code == 0);
    CHECK(fs::exists(dir / "out" / "det" / "000001.txt"));
  }
}
