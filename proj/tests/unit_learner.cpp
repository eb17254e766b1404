#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "safl/learner.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cstring>
#include <map>

using namespace safl;

namespace {

// Small end-to-end fixture: P=12 network over a 36x24 frame (3x2 patches, M=4).
RunConfig tiny_config() {
  RunConfig c;
  c.patch_size = 12;
  c.widths = {3, 4, 5, 6};
  c.frame_w = 36;
  c.frame_h = 24;
  c.n_objects = 4;
  c.learning_rate = 0.02;
  c.pretrain_scenes = 6;
  c.pretrain_holdout = 2;
  c.pretrain_stride = 2;
  c.pretrain_batch = 4;
  c.validate();
  return c;
}

template <typename T>
std::vector<T> flatten_params(const Network<T>& net) {
  std::vector<T> out;
  for_each_layer(const_cast<Network<T>&>(net), [&](const std::string&, LayerParams<T>& p, bool) {
    out.insert(out.end(), p.weights.data.begin(), p.weights.data.end());
    out.insert(out.end(), p.bias.begin(), p.bias.end());
  });
  return out;
}

}  // namespace

TEST_CASE("Eq. 4: exploration probability decays from 0.5 by 1/5 per N_ep") {
  const ExplorationSchedule s;  // N_ep = 1000
  CHECK(std::abs(exploration_probability(0, s) - 0.5) < 1e-12);
  CHECK(std::abs(exploration_probability(1000, s) - 0.1) < 1e-12);
  CHECK(std::abs(exploration_probability(2000, s) - 0.02) < 1e-12);

  double prev = 1.0;
  for (uint64_t n = 0; n <= 5000; n += 250) {
    const double p = exploration_probability(n, s);
    CHECK(p > 0.0);
    CHECK(p <= 0.5);
    CHECK(p < prev);  // strictly decreasing; equals 0.5 only at n = 0
    prev = p;
  }
  CHECK(exploration_probability(0, {500}) == 0.5);
  CHECK_THROWS_AS(exploration_probability(1, {0}), ConfigError);
}

TEST_CASE("Eq. 5: rolling success over the nearest hundred trials") {
  MetricsTracker t;
  CHECK_THROWS_AS(rolling_success(t), PreconditionError);

  for (int i = 0; i < 25; ++i) t.record(true);
  for (int i = 0; i < 25; ++i) t.record(false);
  CHECK(rolling_success(t) == 0.5);  // partial-window mean at 50 trials

  for (int i = 0; i < 50; ++i) t.record(i < 48);  // 48 more successes
  CHECK(t.total() == 100);
  CHECK(rolling_success(t) == 0.73);

  // window slides: 100 failures push every success out
  for (int i = 0; i < 100; ++i) t.record(false);
  CHECK(rolling_success(t) == 0.0);
  CHECK(t.successes() == 73);  // lifetime counter unaffected
  for (int i = 0; i < 100; ++i) t.record(true);
  CHECK(rolling_success(t) == 1.0);
}

TEST_CASE("select_point: argmax, ties, scaling, and exclusions") {
  // one empty-bin frame gives valid depth everywhere inside
  const RunConfig cfg = tiny_config();
  SceneState empty;
  empty.params = cfg.sim();
  empty.bin = empty.params.bin;
  const CameraModel cam = cfg.camera();
  const Frame frame = render(empty, cam, cfg.frame_w, cfg.frame_h);
  const PatchGrid grid = make_patch_grid(cfg.frame_w, cfg.frame_h, 12);
  const int n_patches = grid.patch_count();
  REQUIRE(n_patches == 6);
  Rng rng(3);

  Tensor4<double> maps(n_patches, 2, 4, 4);
  for (auto& v : maps.data) v = 0.25;

  SUBCASE("unique maximum wins at p_ep = 0") {
    maps.at(4, 0, 2, 1) = 0.9;
    const auto c = select_point(maps, grid, frame, cam, empty.bin, 0.0, rng);
    CHECK(c.sel.patch_index == 4);
    CHECK(c.sel.map_i == 2);
    CHECK(c.sel.map_j == 1);
    CHECK_FALSE(c.explored);
    CHECK(c.p_pred == 0.9);

    // scaling channel 0 by a positive constant changes nothing
    for (int p = 0; p < n_patches; ++p)
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) maps.at(p, 0, i, j) *= 37.5;
    const auto c2 = select_point(maps, grid, frame, cam, empty.bin, 0.0, rng);
    CHECK(c2.sel.patch_index == 4);
    CHECK(c2.sel.map_i == 2);
    CHECK(c2.sel.map_j == 1);
  }

  SUBCASE("equal maxima resolve to the lexicographically smallest (patch, i, j)") {
    maps.at(3, 0, 1, 3) = 0.9;
    maps.at(3, 0, 2, 0) = 0.9;
    maps.at(5, 0, 0, 0) = 0.9;
    const auto c = select_point(maps, grid, frame, cam, empty.bin, 0.0, rng);
    CHECK(c.sel.patch_index == 3);
    CHECK(c.sel.map_i == 1);
    CHECK(c.sel.map_j == 3);
  }

  SUBCASE("pixels with invalid depth never win the argmax") {
    Frame holed = frame;
    maps.at(0, 0, 1, 1) = 0.95;
    const auto sel = make_selection(grid, 0, 1, 1);
    holed.depth[holed.pix(sel.frame_u, sel.frame_v)] = 0.0;
    maps.at(2, 0, 3, 3) = 0.8;
    const auto c = select_point(maps, grid, holed, cam, empty.bin, 0.0, rng);
    CHECK(c.sel.patch_index == 2);
    CHECK(c.sel.map_i == 3);
    CHECK(c.sel.map_j == 3);
  }

  SUBCASE("all-invalid frame raises the no-candidate error") {
    Frame dead = frame;
    std::fill(dead.depth.begin(), dead.depth.end(), 0.0);
    CHECK_THROWS_AS(select_point(maps, grid, dead, cam, empty.bin, 0.0, rng), NoCandidateError);
  }

  SUBCASE("shape mismatch is rejected") {
    Tensor4<double> bad(n_patches, 2, 3, 3);
    CHECK_THROWS_AS(select_point(bad, grid, frame, cam, empty.bin, 0.0, rng), DimError);
  }
}

TEST_CASE("select_point: the random branch is uniform over valid in-bin pixels") {
  const RunConfig cfg = tiny_config();
  SceneState empty;
  empty.params = cfg.sim();
  empty.bin = empty.params.bin;
  const CameraModel cam = cfg.camera();
  const Frame frame = render(empty, cam, cfg.frame_w, cfg.frame_h);
  const PatchGrid grid = make_patch_grid(cfg.frame_w, cfg.frame_h, 12);
  Tensor4<double> maps(grid.patch_count(), 2, 4, 4);
  // adversarial scores: uniformity must ignore them
  Rng fill(5);
  for (auto& v : maps.data) v = fill.uniform();

  const double hx = empty.bin.inner_x / 2, hy = empty.bin.inner_y / 2;
  std::map<std::tuple<int, int, int>, int> counts;
  int support = 0;
  for (int p = 0; p < grid.patch_count(); ++p)
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) {
        const auto sel = make_selection(grid, p, i, j);
        if (!frame.depth_valid(sel.frame_u, sel.frame_v)) continue;
        const auto w = camera_to_world(
            cam, backproject(cam, sel.frame_u, sel.frame_v,
                             frame.depth_at(sel.frame_u, sel.frame_v)));
        if (std::abs(w.x()) < hx && std::abs(w.y()) < hy) {
          counts[{p, i, j}] = 0;
          ++support;
        }
      }
  REQUIRE(support > 10);

  Rng rng(77);
  const int draws = 10000;
  for (int d = 0; d < draws; ++d) {
    const auto c = select_point(maps, grid, frame, cam, empty.bin, 1.0, rng);
    CHECK(c.explored);
    const auto key = std::make_tuple(c.sel.patch_index, c.sel.map_i, c.sel.map_j);
    REQUIRE(counts.count(key) == 1);  // never outside the in-bin support
    ++counts[key];
  }
  const double expect = static_cast<double>(draws) / support;
  double chi2 = 0.0;
  for (const auto& [key, n] : counts) chi2 += (n - expect) * (n - expect) / expect;
  // dof = support - 1; comfortably above the 99.9% quantile only on real bias
  const double dof = support - 1;
  CHECK(chi2 < dof + 4.0 * std::sqrt(2.0 * dof) + 10.0);
}

TEST_CASE("run_trial: labels match outcomes and move the prediction") {
  // one wide cylinder in a small bin so untrained picks land both on and off
  // the cap across the seed batch
  RunConfig cfg = tiny_config();
  cfg.n_objects = 1;
  cfg.cyl_radius = 0.09;
  cfg.bin_x = 0.22;
  cfg.bin_y = 0.22;
  cfg.validate();
  const CameraModel cam = cfg.camera();
  const ExplorationSchedule sched{cfg.n_ep};
  const auto opt = cfg.optimizer<double>();

  int raised = 0, lowered = 0;
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    SceneState scene = generate_scene(Scenario::kTrainA, cfg.n_objects, seed, cfg.sim());
    auto net = build_network<double>(cfg.network(), seed);
    const int before_alive = count_alive(scene);

    // pre-trial predictions on the exact frame the trial will see
    const Frame frame = render(scene, cam, cfg.frame_w, cfg.frame_h);
    const auto patches = split_frame(frame, cfg.patch_size);
    std::vector<const std::vector<float>*> rgbs(patches.size());
    std::vector<const std::vector<double>*> depths(patches.size());
    for (size_t k = 0; k < patches.size(); ++k) {
      rgbs[k] = &patches[k].rgb;
      depths[k] = &patches[k].depth;
    }
    const Tensor4<double> before = predict_patches(net, rgbs, depths);

    MetricsTracker metrics;
    Rng rng(seed * 11 + 1);
    const TrialRecord rec = run_trial(net, scene, cam, cfg.frame_w, cfg.frame_h, 0, sched, opt,
                                      /*augment=*/false, metrics, rng);

    CHECK(rec.step == 1);
    CHECK(rec.p_ep == 0.5);
    CHECK(rec.rolling == (rec.outcome ? 1.0 : 0.0));
    CHECK(count_alive(scene) == before_alive - (rec.outcome ? 1 : 0));
    CHECK(rec.p_pred == doctest::Approx(before.at(rec.patch_index, 0, rec.map_i, rec.map_j)));

    // one gradient step with the trial's label must pull the selected pixel
    // toward the outcome
    const Tensor4<double> after =
        predict_patch(net, patches[rec.patch_index].rgb, patches[rec.patch_index].depth);
    const double p0 = before.at(rec.patch_index, 0, rec.map_i, rec.map_j);
    const double p1 = after.at(0, 0, rec.map_i, rec.map_j);
    if (rec.outcome) {
      CHECK(p1 > p0);
      ++raised;
    } else {
      CHECK(p1 < p0);
      ++lowered;
    }
    CHECK(net.step == 1);
  }
  // the seed batch must exercise both label values
  CHECK(raised > 0);
  CHECK(lowered > 0);
}

TEST_CASE("run_trial: bitwise reproducible and empty-scene precondition") {
  const RunConfig cfg = tiny_config();
  const CameraModel cam = cfg.camera();
  const auto opt = cfg.optimizer<double>();

  const auto once = [&] {
    SceneState scene = generate_scene(Scenario::kTrainB, 4, 9, cfg.sim());
    auto net = build_network<double>(cfg.network(), 2);
    MetricsTracker m;
    Rng rng(123);
    std::string lines;
    for (int t = 0; t < 3; ++t)
      lines += record_to_json(
                   run_trial(net, scene, cam, cfg.frame_w, cfg.frame_h, t, {}, opt, true, m, rng)) +
               "\n";
    return std::make_pair(lines, flatten_params(net));
  };
  const auto [log_a, params_a] = once();
  const auto [log_b, params_b] = once();
  CHECK(log_a == log_b);
  CHECK(params_a == params_b);

  SceneState scene;
  scene.params = cfg.sim();
  auto net = build_network<double>(cfg.network(), 2);
  MetricsTracker m;
  Rng rng(1);
  CHECK_THROWS_AS(run_trial(net, scene, cam, cfg.frame_w, cfg.frame_h, 0, {}, opt, true, m, rng),
                  PreconditionError);
}

TEST_CASE("run_training: exact record count, determinism, checkpoint cadence") {
  RunConfig cfg = tiny_config();
  cfg.checkpoint_every = 3;
  const int max_step = 7;

  auto net1 = build_network<float>(cfg.network(), 5);
  std::vector<int> ckpt_steps;
  const auto log1 = run_training<float>(net1, cfg, max_step, 42, Policy::kLearned, {},
                                        [&](const Network<float>&, int s) { ckpt_steps.push_back(s); });
  CHECK(log1.size() == max_step);
  for (size_t k = 0; k < log1.size(); ++k) CHECK(log1[k].step == k + 1);
  CHECK(ckpt_steps == std::vector<int>{3, 6});
  CHECK(net1.step == max_step);

  auto net2 = build_network<float>(cfg.network(), 5);
  const auto log2 = run_training<float>(net2, cfg, max_step, 42);
  REQUIRE(log2.size() == log1.size());
  for (size_t k = 0; k < log1.size(); ++k)
    CHECK(record_to_json(log1[k]) == record_to_json(log2[k]));
  CHECK(flatten_params(net1) == flatten_params(net2));

  CHECK_THROWS_AS(run_training<float>(net1, cfg, 0, 1), PreconditionError);
}

TEST_CASE("run_training: an emptied bin is restocked from a random training scenario") {
  RunConfig cfg = tiny_config();
  // one giant, mostly-suckable object in a small bin: random picks clear it often
  cfg.n_objects = 1;
  cfg.cyl_radius = 0.1;
  cfg.cyl_height = 0.08;
  cfg.bin_x = 0.3;
  cfg.bin_y = 0.3;
  auto net = build_network<float>(cfg.network(), 3);
  const auto log = run_training<float>(net, cfg, 20, 7, Policy::kRandom);
  int successes = 0;
  for (const auto& r : log) successes += r.outcome ? 1 : 0;
  // every success empties the 1-object bin; later trials prove the restock
  CHECK(successes >= 2);
  CHECK(log.size() == 20);
}

TEST_CASE("run_training: the random-policy baseline never touches the network") {
  const RunConfig cfg = tiny_config();
  auto net = build_network<float>(cfg.network(), 8);
  const auto before = flatten_params(net);
  const auto log = run_training<float>(net, cfg, 6, 11, Policy::kRandom);
  CHECK(flatten_params(net) == before);
  CHECK(net.step == 0);
  for (const auto& r : log) {
    CHECK(r.explored);
    CHECK(r.loss == 0.0);
    CHECK(r.p_ep == 1.0);
  }
}

TEST_CASE("trial records serialize as one well-formed json object per line") {
  const RunConfig cfg = tiny_config();
  auto net = build_network<float>(cfg.network(), 1);
  const auto log = run_training<float>(net, cfg, 2, 3);
  for (const auto& rec : log) {
    const std::string line = record_to_json(rec);
    CHECK(line.find('\n') == std::string::npos);
    const auto j = nlohmann::json::parse(line);
    for (const char* key : {"step", "patch", "map_pixel", "frame_pixel", "world_point", "explored",
                            "p_pred", "success", "loss", "p_ep", "rolling"})
      CHECK(j.contains(key));
    CHECK(j["map_pixel"].size() == 2);
    CHECK(j["world_point"].size() == 3);
    CHECK(j["step"].get<uint64_t>() == rec.step);
    CHECK(j["success"].get<bool>() == rec.outcome);
    CHECK(j["rolling"].get<double>() == rec.rolling);
  }
}

TEST_CASE("oracle pretraining set: stride grid, valid labels, holdout split") {
  const RunConfig strided = tiny_config();
  const OracleSet coarse = make_oracle_set(strided, 21);
  // 6 scenes x 6 patches, 2 scenes held out
  CHECK(coarse.train.size() == 4 * 6);
  CHECK(coarse.held_out.size() == 2 * 6);
  for (const auto& s : coarse.train) {
    CHECK_FALSE(s.labels.empty());
    for (const auto& l : s.labels) {
      CHECK(l.i % strided.pretrain_stride == 0);
      CHECK(l.j % strided.pretrain_stride == 0);
    }
  }

  // dense probing finds both label classes
  RunConfig cfg = tiny_config();
  cfg.pretrain_stride = 1;
  cfg.n_objects = 6;
  const OracleSet set = make_oracle_set(cfg, 21);
  int ones = 0, zeros = 0;
  for (const auto& s : set.train)
    for (const auto& l : s.labels) {
      CHECK((l.label == 0 || l.label == 1));
      ++(l.label ? ones : zeros);
    }
  CHECK(zeros > ones);  // floor and walls dominate any bin scene
  CHECK(ones > 0);      // but some probes do land on suckable caps
}

TEST_CASE("pretraining lowers held-out oracle loss; zero epochs is the identity") {
  const RunConfig cfg = tiny_config();
  const OracleSet set = make_oracle_set(cfg, 21);
  auto net = build_network<double>(cfg.network(), 4);
  const auto opt = cfg.optimizer<double>();

  const auto before_params = flatten_params(net);
  Rng rng0(1);
  pretrain(net, set.train, 0, opt, cfg.pretrain_batch, rng0);
  CHECK(flatten_params(net) == before_params);
  CHECK(net.step == 0);

  const double before = dense_loss(net, set.held_out);
  Rng rng(1);
  const double train_loss = pretrain(net, set.train, 3, opt, cfg.pretrain_batch, rng);
  const double after = dense_loss(net, set.held_out);
  CHECK(after < before);
  CHECK(train_loss < before);
  CHECK(net.step > 0);

  CHECK_THROWS_AS(pretrain(net, {}, 1, opt, 4, rng), PreconditionError);
  CHECK_THROWS_AS(dense_loss(net, {}), PreconditionError);
}

TEST_CASE("tally_eval + make_eval_report reproduce the table arithmetic") {
  // 10 episodes, 20 successes each; 7 failures sprinkled across them
  std::vector<std::vector<bool>> eps(10, std::vector<bool>(20, true));
  for (int k = 0; k < 7; ++k) eps[k % 10].push_back(false);
  const EvalReport r = tally_eval(eps, "train-a", 20);
  CHECK(r.successes == 200);
  CHECK(r.failures == 7);
  CHECK(r.total() == 207);
  CHECK(r.rate() == doctest::Approx(200.0 / 207.0));
  for (const auto& e : r.episodes) CHECK(e.cleared);
  const std::string text = make_eval_report(r);
  CHECK(text.find("Success Suction    200") != std::string::npos);
  CHECK(text.find("Failure Suction    7") != std::string::npos);
  CHECK(text.find("Total Suction      207") != std::string::npos);
  CHECK(text.find("Success Rate       0.9662") != std::string::npos);
  CHECK(text.find("\"success_rate\":0.9662") != std::string::npos);

  std::vector<std::vector<bool>> eps2(10, std::vector<bool>(20, true));
  for (int k = 0; k < 53; ++k) eps2[k % 10].push_back(false);
  const EvalReport r2 = tally_eval(eps2, "test-2", 20);
  CHECK(r2.total() == 253);
  CHECK(make_eval_report(r2).find("Success Rate       0.7905") != std::string::npos);

  const EvalReport perfect = tally_eval({{true, true}, {true, true}}, "test-1", 2);
  CHECK(perfect.failures == 0);
  CHECK(perfect.rate() == 1.0);
  CHECK(make_eval_report(perfect).find("Success Rate       1.0000") != std::string::npos);
}

TEST_CASE("evaluate: greedy protocol obeys the stall guard and the books balance") {
  const RunConfig cfg = tiny_config();
  auto net = build_network<float>(cfg.network(), 6);
  const EvalReport r = evaluate(net, cfg, Scenario::kTest1, 3, 2, 17);
  CHECK(r.repeats == 2);
  CHECK(r.n_objects == 3);
  CHECK(r.episodes.size() == 2);
  int successes = 0, failures = 0;
  for (const auto& e : r.episodes) {
    successes += e.successes;
    failures += e.failures;
    CHECK(e.successes <= 3);
    CHECK(e.successes + e.failures <= 10 * 3);  // stall guard
    if (e.cleared) CHECK(e.successes == 3);
  }
  CHECK(r.successes == successes);
  CHECK(r.failures == failures);

  // untrained net, greedy: deterministic given the seed
  auto net2 = build_network<float>(cfg.network(), 6);
  const EvalReport r2 = evaluate(net2, cfg, Scenario::kTest1, 3, 2, 17);
  CHECK(make_eval_report(r2) == make_eval_report(r));
  CHECK_THROWS_AS(evaluate(net, cfg, Scenario::kTest1, 3, 0, 1), PreconditionError);
}
