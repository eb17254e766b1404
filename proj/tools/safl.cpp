// Operator entry point: train / eval / pretrain / gradcheck / render / plot.
// Exit codes: 0 success, 1 verification or tolerance failure, 2 usage or
// config error, 3 I/O or format error.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "safl/checkpoint.hpp"
#include "safl/config.hpp"
#include "safl/gradcheck.hpp"
#include "safl/image_io.hpp"
#include "safl/learner.hpp"
#include "safl/plot.hpp"

namespace fs = std::filesystem;
using namespace safl;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitVerify = 1;
constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;

// ---- config assembly -------------------------------------------------------------

// Leftover "--key value" / "--key=value" tokens become config overrides.
std::vector<std::pair<std::string, std::string>> override_pairs(
    const std::vector<std::string>& rest) {
  std::vector<std::pair<std::string, std::string>> out;
  for (size_t i = 0; i < rest.size(); ++i) {
    std::string tok = rest[i];
    if (tok.rfind("--", 0) != 0) throw ConfigError("unexpected argument '" + tok + "'");
    tok = tok.substr(2);
    std::string key, value;
    const size_t eq = tok.find('=');
    if (eq != std::string::npos) {
      key = tok.substr(0, eq);
      value = tok.substr(eq + 1);
    } else {
      key = tok;
      if (++i >= rest.size()) throw ConfigError("missing value for --" + key);
      value = rest[i];
    }
    for (char& c : key)
      if (c == '-') c = '_';
    if (key == "init" || key == "checkpoint") key = "init_checkpoint";
    if (key == "scenario") key = "eval_scenario";
    out.emplace_back(key, value);
  }
  return out;
}

RunConfig assemble_config(const std::string& config_path, const std::vector<std::string>& extras,
                          const std::optional<uint64_t>& seed_flag, const std::string& out_flag) {
  RunConfig cfg;
  if (!config_path.empty()) cfg = load_config(config_path);
  for (const auto& [key, value] : override_pairs(extras)) apply_override(cfg, key, value);
  if (seed_flag) cfg.seed = *seed_flag;
  if (!out_flag.empty()) cfg.out_dir = out_flag;
  cfg.validate();
  return cfg;
}

// ---- run directory ----------------------------------------------------------------

// <out_dir>/<UTC timestamp>-s<seed>[-n]; every artifact of one invocation
// lands inside.
fs::path make_run_dir(const std::string& out_dir, uint64_t seed) {
  const auto now = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", &tm);
  const std::string base = std::string(stamp) + "-s" + std::to_string(seed);

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir + ": " + ec.message());
  for (int n = 0;; ++n) {
    fs::path dir = fs::path(out_dir) / (n == 0 ? base : base + "-" + std::to_string(n));
    if (fs::create_directory(dir, ec)) return dir;
    if (ec && ec != std::errc::file_exists)
      throw IoError("cannot create run directory " + dir.string() + ": " + ec.message());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path.string());
  f << text;
  f.flush();
  if (!f) throw IoError("write failed: " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path.string());
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

// ---- commands --------------------------------------------------------------------

Network<float> initial_network(const RunConfig& cfg) {
  if (cfg.init_checkpoint.empty()) return build_network<float>(cfg.network(), cfg.seed);
  Network<float> net = load_checkpoint<float>(cfg.init_checkpoint, cfg.network());
  std::printf("loaded %s (step %llu)\n", cfg.init_checkpoint.c_str(),
              static_cast<unsigned long long>(net.step));
  return net;
}

int cmd_train(const RunConfig& cfg) {
  const fs::path run = make_run_dir(cfg.out_dir, cfg.seed);
  std::printf("run dir: %s\n", run.string().c_str());
  write_text(run / "effective.cfg", dump_config(cfg));

  Network<float> net = initial_network(cfg);
  const Policy policy = cfg.policy == "random" ? Policy::kRandom : Policy::kLearned;

  std::ofstream log(run / "trial_log.jsonl", std::ios::binary | std::ios::trunc);
  if (!log) throw IoError("cannot open trial log in " + run.string());
  std::string csv = "step,rolling,loss,p_ep\n";

  const auto on_trial = [&](const TrialRecord& r) {
    log << record_to_json(r) << '\n';
    log.flush();
    csv += std::to_string(r.step) + "," + detail::g17(r.rolling) + "," + detail::g17(r.loss) +
           "," + detail::g17(r.p_ep) + "\n";
    if (r.step % 100 == 0)
      std::printf("step %5llu  rolling %.2f  p_ep %.3f\n",
                  static_cast<unsigned long long>(r.step), r.rolling, r.p_ep);
  };
  const std::function<void(const Network<float>&, int)> on_checkpoint = [&](
      const Network<float>& n, int step) {
    char name[32];
    std::snprintf(name, sizeof name, "ckpt_%06d.ckpt", step);
    save_checkpoint(n, (run / name).string());
  };

  const auto log_records =
      run_training(net, cfg, cfg.max_step, cfg.seed, policy, on_trial, on_checkpoint);
  if (!log) throw IoError("trial log write failed in " + run.string());

  write_text(run / "curve.csv", csv);
  save_checkpoint(net, (run / "final.ckpt").string());

  uint64_t wins = 0;
  for (const TrialRecord& r : log_records) wins += r.outcome ? 1 : 0;
  std::printf("train: %zu trials, %llu successes, final rolling %.4f\n", log_records.size(),
              static_cast<unsigned long long>(wins), log_records.back().rolling);
  return kExitOk;
}

int cmd_eval(const RunConfig& cfg) {
  if (cfg.init_checkpoint.empty())
    throw ConfigError("eval needs --checkpoint (or init_checkpoint in the config)");
  Network<float> net = load_checkpoint<float>(cfg.init_checkpoint);
  net.cfg.depth_min = cfg.depth_min;
  net.cfg.depth_max = cfg.depth_max;

  const fs::path run = make_run_dir(cfg.out_dir, cfg.seed);
  std::printf("run dir: %s\n", run.string().c_str());
  write_text(run / "effective.cfg", dump_config(cfg));

  const EvalReport r =
      evaluate(net, cfg, cfg.eval_scene(), cfg.eval_objects, cfg.repeats, cfg.seed);
  const std::string report = make_eval_report(r);
  write_text(run / "report.txt", report);
  std::fputs(report.c_str(), stdout);
  return kExitOk;
}

int cmd_pretrain(const RunConfig& cfg) {
  const fs::path run = make_run_dir(cfg.out_dir, cfg.seed);
  std::printf("run dir: %s\n", run.string().c_str());
  write_text(run / "effective.cfg", dump_config(cfg));

  Network<float> net = build_network<float>(cfg.network(), cfg.seed);
  const OracleSet set = make_oracle_set(cfg, cfg.seed);
  std::printf("oracle set: %zu train / %zu held-out samples\n", set.train.size(),
              set.held_out.size());

  const double before = dense_loss(net, set.held_out);
  Rng rng(cfg.seed);
  const double train_loss =
      pretrain(net, set.train, cfg.pretrain_epochs, cfg.optimizer<float>(), cfg.pretrain_batch,
               rng);
  const double after = dense_loss(net, set.held_out);
  std::printf("held-out loss before %.6f after %.6f (train %.6f)\n", before, after, train_loss);

  const fs::path out = run / "pretrained.ckpt";
  save_checkpoint(net, out.string());
  std::printf("wrote %s\n", out.string().c_str());
  return kExitOk;
}

// One fragment per layer kind plus the full reduced network, each against
// central differences. `flip` corrupts the conv weight gradient on purpose.
int cmd_gradcheck(bool flip) {
  const auto t0 = std::chrono::steady_clock::now();
  constexpr double kTol = 1e-6;
  bool ok = true;

  const auto report = [&](const char* name, const GradcheckResult& res) {
    const bool pass = res.max_rel_err < kTol;
    ok = ok && pass;
    std::printf("%-22s max rel err %.3e  %s\n", name, res.max_rel_err, pass ? "ok" : "FAIL");
  };
  const auto random_tensor = [](Rng& rng, int b, int c, int h, int w, double lo = -1.0,
                                double hi = 1.0) {
    Tensor4<double> t(b, c, h, w);
    for (double& v : t.data) v = rng.uniform(lo, hi);
    return t;
  };
  // fixed random projection: a scalar loss that weights every output element
  struct Probe {
    std::vector<double> coeff;
    Probe(size_t n, Rng& rng) : coeff(n) {
      for (double& c : coeff) c = rng.uniform(-1.0, 1.0);
    }
    double operator()(const Tensor4<double>& t) const {
      double s = 0.0;
      for (size_t i = 0; i < t.data.size(); ++i) s += coeff[i] * t.data[i];
      return s;
    }
    Tensor4<double> upstream(const std::array<int, 4>& d) const {
      Tensor4<double> t(d[0], d[1], d[2], d[3]);
      t.data.assign(coeff.begin(), coeff.end());
      return t;
    }
  };

  {
    Rng rng(43);
    auto in = random_tensor(rng, 2, 3, 6, 6);
    auto p = make_conv_params<double>(4, 3, 3, 3, rng);
    Probe probe(2u * 4 * 3 * 3, rng);
    const auto forward = [&] { return probe(conv2d(in, p, 2, 1)); };
    auto g = conv2d_backward(in, p, 2, 1, probe.upstream({2, 4, 3, 3}));
    if (flip)
      for (double& v : g.weights.data) v = -v;
    const std::vector<GradSpan> spans = {
        {in.data.data(), g.input.data.data(), in.data.size()},
        {p.weights.data.data(), g.weights.data.data(), p.weights.data.size()},
        {p.bias.data(), g.bias.data(), p.bias.size()},
    };
    report("conv2d", finite_diff_gradcheck(forward, spans, 1e-5));
  }
  {
    Rng rng(47);
    Tensor4<double> in(1, 2, 4, 4);
    for (double& v : in.data) {
      v = rng.uniform(0.2, 1.2);  // keep |v| clear of the kink
      if (rng.uniform() < 0.5) v = -v;
    }
    Probe probe(in.data.size(), rng);
    const auto forward = [&] { return probe(relu(in)); };
    const auto g = relu_backward(in, probe.upstream(in.dims));
    report("relu", finite_diff_gradcheck(
                       forward, {{in.data.data(), g.data.data(), in.data.size()}}, 1e-5));
  }
  {
    Rng rng(53);
    auto in = random_tensor(rng, 1, 2, 4, 4);
    Probe probe(1u * 2 * 2 * 2, rng);
    const auto forward = [&] { return probe(max_pool2(in)); };
    const auto g = max_pool2_backward(in, probe.upstream({1, 2, 2, 2}));
    report("max_pool2", finite_diff_gradcheck(
                            forward, {{in.data.data(), g.data.data(), in.data.size()}}, 1e-5));
  }
  {
    Rng rng(59);
    auto in = random_tensor(rng, 1, 3, 3, 3);
    Probe probe(1u * 3 * 6 * 6, rng);
    const auto forward = [&] { return probe(upsample_nearest2(in)); };
    const auto g = upsample_nearest2_backward(probe.upstream({1, 3, 6, 6}));
    report("upsample_nearest2",
           finite_diff_gradcheck(forward, {{in.data.data(), g.data.data(), in.data.size()}},
                                 1e-5));
  }
  {
    Rng rng(61);
    auto a = random_tensor(rng, 1, 2, 4, 4);
    auto b = random_tensor(rng, 1, 3, 4, 4);
    Probe probe(1u * 5 * 4 * 4, rng);
    const auto forward = [&] { return probe(concat_channels(a, b)); };
    const auto [da, db] = concat_channels_backward(2, probe.upstream({1, 5, 4, 4}));
    report("concat_channels",
           finite_diff_gradcheck(forward,
                                 {{a.data.data(), da.data.data(), a.data.size()},
                                  {b.data.data(), db.data.data(), b.data.size()}},
                                 1e-5));
  }
  {
    Rng rng(61);
    auto in = random_tensor(rng, 1, 2, 5, 5);
    Probe probe(1u * 2 * 3 * 3, rng);
    const auto forward = [&] { return probe(crop_spatial(in, 3, 3)); };
    const auto g = crop_spatial_backward(5, 5, probe.upstream({1, 2, 3, 3}));
    report("crop_spatial", finite_diff_gradcheck(
                               forward, {{in.data.data(), g.data.data(), in.data.size()}}, 1e-5));
  }
  {
    Rng rng(61);
    auto a = random_tensor(rng, 1, 2, 3, 3);
    auto b = random_tensor(rng, 1, 2, 3, 3);
    Probe probe(a.data.size(), rng);
    const auto forward = [&] { return probe(add(a, b)); };
    const auto d = probe.upstream(a.dims);
    report("add", finite_diff_gradcheck(forward,
                                        {{a.data.data(), d.data.data(), a.data.size()},
                                         {b.data.data(), d.data.data(), b.data.size()}},
                                        1e-5));
  }
  {
    Rng rng(67);
    auto l = random_tensor(rng, 1, 2, 3, 3, -2.0, 2.0);
    Probe probe(l.data.size(), rng);
    const auto forward = [&] { return probe(pixel_softmax2(l)); };
    const auto g = pixel_softmax2_backward(pixel_softmax2(l), probe.upstream(l.dims));
    report("pixel_softmax2", finite_diff_gradcheck(
                                 forward, {{l.data.data(), g.data.data(), l.data.size()}}, 1e-5));
  }
  {
    Rng rng(71);
    auto l = random_tensor(rng, 1, 2, 4, 4, -2.0, 2.0);
    const std::vector<std::vector<PixelLabel>> sel = {{{0, 1, 1}, {2, 3, 0}, {3, 0, 1}}};
    const auto forward = [&] { return masked_cross_entropy(pixel_softmax2(l), sel).loss; };
    const auto ml = masked_cross_entropy(pixel_softmax2(l), sel);
    report("masked_cross_entropy",
           finite_diff_gradcheck(
               forward, {{l.data.data(), ml.d_logits.data.data(), l.data.size()}}, 1e-5));
  }
  {
    // full reduced network (input 16x16, map 4x4) against the masked CE loss.
    // bias nudge + weight scale keep relu pre-activations off the kink and
    // every nonzero gradient above the finite-difference noise floor.
    const int seed = 6;
    Rng rng(1000 + seed);
    const auto ncfg = make_network_config(12, {4, 5, 6, 7});
    auto net = build_network<double>(ncfg, seed);
    Rng noise(7 * seed + 1);
    for_each_layer(net, [&](const std::string&, LayerParams<double>& p, bool) {
      for (auto& b : p.bias) b += noise.uniform(0.01, 0.06);
      for (auto& w : p.weights.data) w *= 1.3;
    });
    const int r = ncfg.input_size;
    Tensor4<double> rgb_in(1, 3, r, r), depth_in(1, 3, r, r);
    for (auto& v : rgb_in.data) v = rng.uniform(0.05, 0.95);
    for (auto& v : depth_in.data) v = rng.uniform(0.05, 0.95);
    const std::vector<std::vector<PixelLabel>> sel = {
        {{1, 1, 1}, {0, 3, 0}, {2, 2, 1}, {3, 0, 0}, {0, 0, 1}, {2, 3, 0}}};

    const auto loss_fn = [&] {
      FwdCtx<double> ctx;
      const auto probs = forward(net, rgb_in, depth_in, ctx);
      return masked_cross_entropy(probs, sel).loss;
    };
    FwdCtx<double> ctx;
    forward(net, rgb_in, depth_in, ctx);
    NetGrads<double> g = backward(net, ctx, masked_cross_entropy(ctx.probs, sel).d_logits, true,
                                  true);
    std::vector<GradSpan> spans;
    for_each_layer(net, [&](const std::string& name, LayerParams<double>& p, bool) {
      LayerGrads<double>* lg = g.slot(name);
      spans.push_back({p.weights.data.data(), lg->weights.data.data(), p.weights.data.size()});
      spans.push_back({p.bias.data(), lg->bias.data(), p.bias.size()});
    });
    spans.push_back({rgb_in.data.data(), g.d_rgb.data.data(), rgb_in.data.size()});
    spans.push_back({depth_in.data.data(), g.d_depth.data.data(), depth_in.data.size()});
    report("network(R=16)", finite_diff_gradcheck(loss_fn, spans, 3e-5));
  }

  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("gradcheck %s in %.1f s (tolerance %.0e)\n", ok ? "passed" : "FAILED", secs, kTol);
  return ok ? kExitOk : kExitVerify;
}

int cmd_render(const RunConfig& cfg) {
  const fs::path run = make_run_dir(cfg.out_dir, cfg.seed);
  std::printf("run dir: %s\n", run.string().c_str());
  write_text(run / "effective.cfg", dump_config(cfg));

  const SceneState scene =
      generate_scene(cfg.eval_scene(), cfg.eval_objects, cfg.seed, cfg.sim());
  const Frame frame = render(scene, cfg.camera(), cfg.frame_w, cfg.frame_h, cfg.seed);

  write_ppm((run / "rgb.ppm").string(), frame.rgb, frame.width, frame.height);
  write_pgm16((run / "depth.pgm").string(), frame.depth, frame.width, frame.height);
  write_text(run / "scene.txt", dump_scene(scene));
  std::printf("render: %s, %d objects, %dx%d -> rgb.ppm depth.pgm scene.txt\n",
              cfg.eval_scenario.c_str(), count_alive(scene), frame.width, frame.height);
  return kExitOk;
}

int cmd_plot(const std::vector<std::string>& csvs, const std::string& out) {
  std::vector<LearningCurve> curves;
  curves.reserve(csvs.size());
  for (const std::string& path : csvs)
    curves.push_back(parse_curve_csv(read_text(path), fs::path(path).stem().string()));
  write_text(out, render_curves_svg(curves));
  std::printf("plot: %zu curves -> %s\n", curves.size(), out.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"self-supervised suction-affordance lab"};
  app.require_subcommand(1);

  std::string config_path, out_flag;
  std::optional<uint64_t> seed_flag;
  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "config file (key = value)");
    sub->add_option("--seed", seed_flag, "RNG seed (overrides the config)");
    sub->add_option("--out", out_flag, "output parent directory");
    sub->allow_extras();  // leftover --key value pairs become config overrides
    return sub;
  };

  auto* train = add_common(app.add_subcommand("train", "online trial-label-train loop"));
  auto* eval = add_common(app.add_subcommand("eval", "bin-clearing evaluation of a checkpoint"));
  auto* pretrain =
      add_common(app.add_subcommand("pretrain", "oracle-labeled warm start for train --init"));
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check of every layer kind");
  bool flip = false;
  gradcheck->add_flag("--inject-sign-flip", flip, "corrupt one backward on purpose (self-test)");
  auto* rendercmd = add_common(app.add_subcommand("render", "write rgb/depth/scene for one seed"));
  auto* plot = app.add_subcommand("plot", "overlay curve CSVs as an SVG chart");
  std::vector<std::string> plot_csvs;
  std::string plot_out = "plot.svg";
  plot->add_option("csvs", plot_csvs, "curve.csv files");
  plot->add_option("--out", plot_out, "output SVG path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (gradcheck->parsed()) return cmd_gradcheck(flip);
    if (plot->parsed()) {
      if (plot_csvs.empty()) {
        std::fprintf(stderr, "plot: at least one curve CSV required\n");
        return kExitUsage;
      }
      return cmd_plot(plot_csvs, plot_out);
    }
    CLI::App* sub = train->parsed()   ? train
                    : eval->parsed()  ? eval
                    : pretrain->parsed() ? pretrain
                                         : rendercmd;
    const RunConfig cfg = assemble_config(config_path, sub->remaining(), seed_flag, out_flag);
    if (train->parsed()) return cmd_train(cfg);
    if (eval->parsed()) return cmd_eval(cfg);
    if (pretrain->parsed()) return cmd_pretrain(cfg);
    return cmd_render(cfg);
  } catch (const IoError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIo;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIo;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitVerify;
  } catch (const Error& e) {  // config, precondition, dims, capacity
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitIo;
  }
}
