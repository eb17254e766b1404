#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "safl/config.hpp"

#include <doctest.h>

using namespace safl;

TEST_CASE("defaults mirror the module defaults") {
  const RunConfig c;
  c.validate();
  CHECK(c.patch_size == 168);
  CHECK(c.widths == std::array<int, 4>{16, 32, 64, 128});
  CHECK(c.n_ep == 1000);
  CHECK(c.max_step == 2000);
  CHECK(c.learning_rate == 5e-5);
  CHECK(c.momentum == 0.9);
  CHECK(c.weight_decay == 1e-4);
  CHECK(c.depth_min == 0.5);
  CHECK(c.depth_max == 1.1);
  CHECK(c.cyl_radius == 0.02);
  CHECK(c.bin_x == 0.4);
  CHECK(c.repeats == 10);
  CHECK(c.pretrain_scenes == 30);
  CHECK(c.pretrain_stride == 4);
  CHECK(c.augment);

  const NetworkConfig n = c.network();
  CHECK(n.input_size == 224);
  CHECK(n.map_size == 56);
  const SimParams s = c.sim();
  CHECK(s.bin.inner_y == 0.4);
  CHECK(c.camera().fx() == doctest::Approx(0.9 * 480 * 1.0 / 0.4));
}

TEST_CASE("parse: keys, comments, whitespace, widths list") {
  const RunConfig c = parse_config(
      "# experiment\n"
      "patch_size = 12\n"
      "widths = 2, 3, 4, 5\n"
      "\n"
      "max_step=7   # inline comment\n"
      "  seed =  42\n"
      "augment = off\n"
      "eval_scenario = test-3\n"
      "out_dir = runs/exp1\n"
      "learning_rate = 2e-3\n");
  CHECK(c.patch_size == 12);
  CHECK(c.widths == std::array<int, 4>{2, 3, 4, 5});
  CHECK(c.max_step == 7);
  CHECK(c.seed == 42);
  CHECK(c.augment == false);
  CHECK(c.eval_scenario == "test-3");
  CHECK(c.out_dir == "runs/exp1");
  CHECK(c.learning_rate == 2e-3);
  CHECK(c.n_ep == 1000);  // untouched default
}

TEST_CASE("parse rejects unknown keys and bad values with the line number") {
  const auto msg_of = [](auto fn) {
    try {
      fn();
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  CHECK(msg_of([] { parse_config("max_step = 5\nbogus_key = 1\n"); }).find("line 2") !=
        std::string::npos);
  CHECK(msg_of([] { parse_config("max_step = 5\nbogus_key = 1\n"); }).find("bogus_key") !=
        std::string::npos);
  CHECK(msg_of([] { parse_config("max_step = soon\n"); }).find("line 1") != std::string::npos);
  CHECK_THROWS_AS(parse_config("max_step\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("widths = 1,2,3\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("widths = 1,2,3,4,5\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("augment = maybe\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("seed = -1\n"), ConfigError);
}

TEST_CASE("dump/parse round trip is exact, including doubles") {
  RunConfig c;
  c.patch_size = 84;
  c.widths = {8, 16, 32, 64};
  c.learning_rate = 1.0 / 3.0;
  c.camera_height = 0.123456789012345678;
  c.seed = 0xDEADBEEFULL;
  c.eval_scenario = "test-2";
  c.init_checkpoint = "runs/a/final.ckpt";
  const std::string text = dump_config(c);
  const RunConfig back = parse_config(text);
  CHECK(dump_config(back) == text);
  CHECK(back.learning_rate == c.learning_rate);
  CHECK(back.camera_height == c.camera_height);
  CHECK(back.seed == c.seed);
  CHECK(back.widths == c.widths);
  CHECK(back.init_checkpoint == c.init_checkpoint);
}

TEST_CASE("overrides reuse the key table") {
  RunConfig c;
  apply_override(c, "max_step", "11");
  apply_override(c, "widths", "4,4,4,4");
  apply_override(c, "depth_as_rgb", "true");
  CHECK(c.max_step == 11);
  CHECK(c.widths == std::array<int, 4>{4, 4, 4, 4});
  CHECK(c.depth_as_rgb);
  CHECK_THROWS_AS(apply_override(c, "nope", "1"), ConfigError);
}

TEST_CASE("validate rejects inconsistent combinations") {
  RunConfig c;
  c.patch_size = 84;
  c.frame_w = 64;  // narrower than one patch
  c.frame_h = 480;
  CHECK_THROWS_AS(c.validate(), ConfigError);

  RunConfig d;
  d.eval_scenario = "train-z";
  CHECK_THROWS_AS(d.validate(), ConfigError);

  RunConfig e;
  e.pretrain_holdout = e.pretrain_scenes;
  CHECK_THROWS_AS(e.validate(), ConfigError);

  RunConfig f;
  f.max_step = 0;
  CHECK_THROWS_AS(f.validate(), ConfigError);
}
