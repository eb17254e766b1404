#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

// End-to-end checks of the installed binary: exit codes, artifact layout,
// determinism, and the effective-config round trip. SAFL_BIN comes from the
// build system.

namespace fs = std::filesystem;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string output;  // stdout + stderr
};

fs::path work_root() {
  static const fs::path root = [] {
    fs::path p = fs::temp_directory_path() / ("safl_cli_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return root;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

RunResult run(const std::string& args) {
  static int n = 0;
  const fs::path log = work_root() / ("cmd_" + std::to_string(n++) + ".log");
  const std::string cmd =
      std::string(SAFL_BIN) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.output = slurp(log);
  return r;
}

// every fast-run flag in one place: tiny net, tiny frame, four objects
const std::string kTiny = "--patch-size 12 --widths 3,4,5,6 --frame-w 36 --frame-h 24 "
                          "--n-objects 4";

fs::path run_dir_of(const RunResult& r) {
  const std::string tag = "run dir: ";
  const size_t at = r.output.find(tag);
  REQUIRE(at != std::string::npos);
  const size_t end = r.output.find('\n', at);
  return fs::path(r.output.substr(at + tag.size(), end - at - tag.size()));
}

int count_lines(const std::string& s) {
  int n = 0;
  for (char c : s) n += c == '\n';
  return n;
}

}  // namespace

TEST_CASE("usage and help exit codes") {
  CHECK(run("").exit_code == 2);
  CHECK(run("bogus").exit_code == 2);
  CHECK(run("--help").exit_code == 0);
  CHECK(run("train --config /does/not/exist.cfg").exit_code == 3);
  CHECK(run("train --bogus-key 7").exit_code == 2);
  CHECK(run("train --max-step 0 " + kTiny).exit_code == 2);
  CHECK(run("eval " + kTiny).exit_code == 2);  // no checkpoint given
}

TEST_CASE("gradcheck lists every layer kind once and flags injected corruption") {
  const RunResult ok = run("gradcheck");
  CHECK(ok.exit_code == 0);
  for (const char* kind :
       {"conv2d", "relu", "max_pool2", "upsample_nearest2", "concat_channels", "crop_spatial",
        "add", "pixel_softmax2", "masked_cross_entropy", "network(R=16)"}) {
    INFO(kind);
    const size_t first = ok.output.find(std::string(kind) + " ");
    REQUIRE(first != std::string::npos);
    CHECK(ok.output.find(std::string(kind) + " ", first + 1) == std::string::npos);
  }
  CHECK(ok.output.find("FAIL") == std::string::npos);

  const RunResult bad = run("gradcheck --inject-sign-flip");
  CHECK(bad.exit_code == 1);
  CHECK(bad.output.find("FAIL") != std::string::npos);
}

TEST_CASE("train writes the run artifacts and honors max_step") {
  const fs::path out = work_root() / "t1";
  const RunResult r = run("train --out " + out.string() + " --seed 3 --max-step 10 " + kTiny);
  REQUIRE(r.exit_code == 0);
  const fs::path dir = run_dir_of(r);

  REQUIRE(fs::exists(dir / "trial_log.jsonl"));
  REQUIRE(fs::exists(dir / "curve.csv"));
  REQUIRE(fs::exists(dir / "final.ckpt"));
  REQUIRE(fs::exists(dir / "effective.cfg"));
  CHECK(count_lines(slurp(dir / "trial_log.jsonl")) == 10);
  const std::string csv = slurp(dir / "curve.csv");
  CHECK(count_lines(csv) == 11);
  CHECK(csv.rfind("step,rolling,loss,p_ep\n", 0) == 0);

  // all outputs stay inside the run directory
  size_t entries = 0;
  for (const auto& e : fs::directory_iterator(out)) {
    CHECK(e.path() == dir);
    ++entries;
  }
  CHECK(entries == 1);
}

TEST_CASE("same seed twice is byte-identical; effective.cfg reproduces the run") {
  const std::string common = " --seed 5 --max-step 12 --checkpoint-every 6 " + kTiny;
  const RunResult a = run("train --out " + (work_root() / "d1").string() + common);
  const RunResult b = run("train --out " + (work_root() / "d2").string() + common);
  REQUIRE(a.exit_code == 0);
  REQUIRE(b.exit_code == 0);
  const fs::path da = run_dir_of(a), db = run_dir_of(b);
  for (const char* f : {"trial_log.jsonl", "curve.csv", "final.ckpt", "ckpt_000006.ckpt"}) {
    INFO(f);
    CHECK(slurp(da / f) == slurp(db / f));
  }

  // re-run purely from the dumped effective config
  const RunResult c = run("train --config " + (da / "effective.cfg").string() + " --out " +
                          (work_root() / "d3").string());
  REQUIRE(c.exit_code == 0);
  const fs::path dc = run_dir_of(c);
  CHECK(slurp(da / "trial_log.jsonl") == slurp(dc / "trial_log.jsonl"));
  CHECK(slurp(da / "final.ckpt") == slurp(dc / "final.ckpt"));
}

TEST_CASE("eval consumes a train checkpoint and writes the report") {
  const fs::path out = work_root() / "e1";
  const RunResult t = run("train --out " + out.string() + " --seed 1 --max-step 8 " + kTiny);
  REQUIRE(t.exit_code == 0);
  const fs::path ckpt = run_dir_of(t) / "final.ckpt";

  const RunResult e = run("eval --checkpoint " + ckpt.string() + " --out " + out.string() +
                          " --seed 2 --eval-objects 3 --repeats 2 " + kTiny);
  REQUIRE(e.exit_code == 0);
  CHECK(e.output.find("Success Rate") != std::string::npos);
  CHECK(e.output.find("Repeat Times       2") != std::string::npos);
  CHECK(fs::exists(run_dir_of(e) / "report.txt"));

  CHECK(run("eval --checkpoint " + (run_dir_of(t) / "effective.cfg").string() + " " + kTiny)
            .exit_code == 3);  // not a checkpoint
}

TEST_CASE("pretrain emits a checkpoint train can warm-start from") {
  const fs::path out = work_root() / "p1";
  const std::string pre_flags = " --n-objects 6 --pretrain-scenes 6 --pretrain-holdout 2 "
                                "--pretrain-stride 1 --pretrain-epochs 2 --learning-rate 0.02 ";
  const RunResult p =
      run("pretrain --out " + out.string() + " --seed 4 " + kTiny + pre_flags);
  REQUIRE(p.exit_code == 0);
  CHECK(p.output.find("held-out loss before") != std::string::npos);
  const fs::path ckpt = run_dir_of(p) / "pretrained.ckpt";
  REQUIRE(fs::exists(ckpt));

  const RunResult t = run("train --out " + out.string() + " --seed 9 --max-step 5 --init " +
                          ckpt.string() + " " + kTiny);
  CHECK(t.exit_code == 0);
  CHECK(t.output.find("loaded " + ckpt.string()) != std::string::npos);

  CHECK(run("pretrain --pretrain-scenes 0 " + kTiny).exit_code == 2);
}

TEST_CASE("render writes images deterministically") {
  const fs::path out = work_root() / "r1";
  const std::string common =
      " --seed 11 --scenario test-3 --eval-objects 6 --frame-w 64 --frame-h 48 --patch-size 12";
  const RunResult a = run("render --out " + out.string() + common);
  const RunResult b = run("render --out " + out.string() + common);
  REQUIRE(a.exit_code == 0);
  REQUIRE(b.exit_code == 0);
  const fs::path da = run_dir_of(a), db = run_dir_of(b);
  for (const char* f : {"rgb.ppm", "depth.pgm", "scene.txt"}) {
    INFO(f);
    REQUIRE(fs::exists(da / f));
    CHECK(slurp(da / f) == slurp(db / f));
  }
  CHECK(run("render --out /proc/definitely-unwritable --seed 1").exit_code == 3);
}

TEST_CASE("plot overlays curves and rejects bad input") {
  const fs::path out = work_root() / "pl";
  fs::create_directories(out);
  const RunResult t =
      run("train --out " + out.string() + " --seed 6 --max-step 10 " + kTiny);
  REQUIRE(t.exit_code == 0);
  const fs::path csv = run_dir_of(t) / "curve.csv";
  const fs::path svg = out / "chart.svg";

  const RunResult p = run("plot " + csv.string() + " " + csv.string() + " --out " + svg.string());
  REQUIRE(p.exit_code == 0);
  const std::string markup = slurp(svg);
  CHECK(markup.rfind("<?xml", 0) == 0);
  CHECK(markup.find("</svg>") != std::string::npos);

  CHECK(run("plot --out " + svg.string()).exit_code == 2);  // no CSVs
  const fs::path bad = out / "bad.csv";
  std::ofstream(bad) << "not,a,curve\n";
  CHECK(run("plot " + bad.string() + " --out " + svg.string()).exit_code == 3);
  CHECK(run("plot /does/not/exist.csv --out " + svg.string()).exit_code == 3);
}
