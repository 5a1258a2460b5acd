#include <doctest.h>

#include "esgn/config.hpp"
#include "esgn/error.hpp"
#include "fixtures.hpp"

using namespace esgn;

TEST_SUITE("config") {
  TEST_CASE("defaults and parsing") {
    const RunConfig d = parse_run_config("image_height = 64\nimage_width = 128\n");
    CHECK(d.egfg.voxels.dims() == std::array<std::size_t, 3>{150, 5, 144});
    CHECK(d.lidar.dims() == std::array<std::size_t, 3>{1200, 40, 1152});
    CHECK(d.eval.recall_points == 40);
    CHECK(d.adapter == AdapterKind::kSeeded);
    CHECK_NOTHROW(d.validate());

    const RunConfig c = parse_run_config(
        "# comment\n"
        "  data_root = frames   # trailing comment\n"
        "image_height=32\n"
        "image_width = 64\n"
        "seed = 42\n"
        "recall_points = 11\n"
        "eval_iou = 0.5\n"
        "distill_adapter = identity\n"
        "distill_norm = cell_channels\n"
        "x_range = -10, 10\n",
        "/base");
    CHECK(c.data_root == std::filesystem::path("/base/frames"));
    CHECK(c.seed == 42);
    CHECK(c.eval.recall_points == 11);
    CHECK(c.eval.iou_thresholds == std::vector<double>{0.5});
    CHECK(c.adapter == AdapterKind::kIdentity);
    CHECK(c.distill.norm == DistillNorm::kCellChannels);
    CHECK(c.egfg.voxels.nx() == 50);
  }

  TEST_CASE("errors") {
    CHECK_THROWS_AS(parse_run_config("bogus = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("no equals sign\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("seed = -3\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("focal_alpha = abc\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("x_range = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("distill_adapter = learned\n"), ConfigError);
    CHECK_THROWS_AS(parse_run_config("image_height = 30\nimage_width = 64\n").validate(), ConfigError);
    CHECK_THROWS_AS(parse_run_config("image_height = 32\nimage_width = 64\nrecall_points = 12\n").validate(),
                    ConfigError);
    CHECK_THROWS_AS(RunConfig{}.validate(), ConfigError);
    CHECK_THROWS_AS(load_run_config("/nonexistent/esgn.cfg"), ConfigError);
    try {
      parse_run_config("seed = 1\nwhat = 2\n");
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("what") != std::string::npos);
    }
  }

  TEST_CASE("serialize round trip") {
    RunConfig c = parse_run_config(
        "data_root = /data\noutput_dir = /out\nimage_height = 32\nimage_width = 64\nseed = 9\n"
        "focal_alpha = 0.3\nsmooth_l1_beta = 0.1111\neval_iou = 0.7,0.5\nscore_threshold = 0.4\n");
    const std::string text = serialize_run_config(c);
    CHECK(text.find("score_threshold = 0.4\n") != std::string::npos);
    const RunConfig back = parse_run_config(text);
    CHECK(serialize_run_config(back) == text);
    CHECK(back.loss.focal_alpha == 0.3);
    CHECK(back.seed == 9);
    CHECK(back.data_root == std::filesystem::path("/data"));

    fixture::TempDir tmp("cfg");
    const auto path = tmp.path() / "a.cfg";
    write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
    CHECK(serialize_run_config(load_run_config(path)) == text);
  }
}
