#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "safl/camera.hpp"
#include "safl/config.hpp"
#include "safl/network.hpp"
#include "safl/optim.hpp"
#include "safl/rng.hpp"
#include "safl/sim.hpp"

namespace safl {

// ---- exploration schedule ----------------------------------------------------

struct ExplorationSchedule {
  int n_ep = 1000;
};

// p_ep = 0.5 * 5^(-n_l / N_ep): 0.5 at the first trial, /5 every N_ep trials.
inline double exploration_probability(uint64_t n_l, const ExplorationSchedule& sched = {}) {
  if (sched.n_ep < 1) throw ConfigError("exploration_probability: N_ep must be positive");
  return 0.5 * std::pow(5.0, -static_cast<double>(n_l) / sched.n_ep);
}

// ---- rolling metric -----------------------------------------------------------

// Success rate over the latest 100 trials; plain mean while fewer exist.
class MetricsTracker {
 public:
  static constexpr int kWindow = 100;

  void record(bool success) {
    const int slot = static_cast<int>(total_ % kWindow);
    if (total_ >= kWindow) window_scs_ -= ring_[slot];
    ring_[slot] = success ? 1 : 0;
    window_scs_ += ring_[slot];
    if (success) ++n_scs_;
    ++total_;
  }

  uint64_t total() const { return total_; }
  uint64_t successes() const { return n_scs_; }
  int window_successes() const { return window_scs_; }
  int window_size() const { return static_cast<int>(std::min<uint64_t>(total_, kWindow)); }

 private:
  std::array<uint8_t, kWindow> ring_{};
  int window_scs_ = 0;
  uint64_t n_scs_ = 0;
  uint64_t total_ = 0;
};

inline double rolling_success(const MetricsTracker& t) {
  if (t.total() == 0) throw PreconditionError("rolling_success: no trials recorded");
  return static_cast<double>(t.window_successes()) / t.window_size();
}

// ---- point selection ----------------------------------------------------------

struct SelectionChoice {
  PixelSelection sel;
  bool explored = false;
  double p_pred = 0.0;  // channel-0 probability the net assigned to the pick
};

// With probability p_ep, uniform over map pixels whose frame pixel has valid
// depth and backprojects inside the bin interior; otherwise the global argmax
// of channel 0 over every valid map pixel, ties to the lexicographically
// smallest (patch, i, j). maps is the (patches, 2, M, M) probability stack.
template <typename T>
SelectionChoice select_point(const Tensor4<T>& maps, const PatchGrid& grid, const Frame& frame,
                             const CameraModel& cam, const BinGeometry& bin, double p_ep,
                             Rng& rng) {
  const int m = grid.patch_size / 3;
  if (maps.dims[0] != grid.patch_count() || maps.dims[1] != 2 || maps.dims[2] != m ||
      maps.dims[3] != m)
    throw DimError("select_point: affordance maps do not match the patch grid");
  const bool explore = rng.uniform() < p_ep;
  const double hx = bin.inner_x / 2, hy = bin.inner_y / 2;

  std::vector<PixelSelection> valid;       // lexicographic (patch, i, j) order
  std::vector<double> score;
  std::vector<uint32_t> in_bin;            // indices into valid
  valid.reserve(static_cast<size_t>(maps.dims[0]) * m * m);
  for (int p = 0; p < maps.dims[0]; ++p)
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j) {
        const PixelSelection sel = make_selection(grid, p, i, j);
        if (!frame.depth_valid(sel.frame_u, sel.frame_v)) continue;
        if (explore) {
          const Eigen::Vector3d w = camera_to_world(
              cam, backproject(cam, sel.frame_u, sel.frame_v,
                               frame.depth_at(sel.frame_u, sel.frame_v)));
          if (std::abs(w.x()) < hx && std::abs(w.y()) < hy)
            in_bin.push_back(static_cast<uint32_t>(valid.size()));
        }
        valid.push_back(sel);
        score.push_back(static_cast<double>(maps.at(p, 0, i, j)));
      }
  if (valid.empty()) throw NoCandidateError("select_point: no map pixel has valid depth");

  SelectionChoice out;
  out.explored = explore;
  size_t pick = 0;
  if (explore) {
    // a camera that sees no bin interior degenerates to any valid pixel
    if (in_bin.empty())
      pick = static_cast<size_t>(rng.uniform_int(0, static_cast<int>(valid.size()) - 1));
    else
      pick = in_bin[rng.uniform_int(0, static_cast<int>(in_bin.size()) - 1)];
  } else {
    for (size_t k = 1; k < valid.size(); ++k)
      if (score[k] > score[pick]) pick = k;
  }
  out.sel = valid[pick];
  out.p_pred = score[pick];
  return out;
}

// ---- trial loop -----------------------------------------------------------------

struct TrialRecord {
  uint64_t step = 0;  // 1-based trial count; p_ep below used n_l = step - 1
  int patch_index = 0;
  int map_i = 0, map_j = 0;
  int frame_u = 0, frame_v = 0;
  Eigen::Vector3d world_point{0, 0, 0};
  bool explored = false;
  double p_pred = 0.0;
  bool outcome = false;
  double loss = 0.0;
  double p_ep = 0.0;
  double rolling = 0.0;
};

enum class Policy { kLearned, kRandom };

// One Algorithm-1 iteration: perceive, predict, select, execute, label, train.
// kRandom is the baseline: always the random branch, never trains.
template <typename T>
TrialRecord run_trial(Network<T>& net, SceneState& scene, const CameraModel& cam, int frame_w,
                      int frame_h, uint64_t n_l, const ExplorationSchedule& sched,
                      const OptimizerConfig<T>& opt, bool augment_labels, MetricsTracker& metrics,
                      Rng& rng, Policy policy = Policy::kLearned) {
  if (is_empty(scene)) throw PreconditionError("run_trial: the bin is empty");
  const double p_ep =
      policy == Policy::kRandom ? 1.0 : exploration_probability(n_l, sched);
  const uint64_t noise_seed = scene.params.depth_noise_sd > 0 ? rng.next_u64() : 0;
  const Frame frame = render(scene, cam, frame_w, frame_h, noise_seed);
  const PatchGrid grid = make_patch_grid(frame_w, frame_h, net.cfg.patch_size);
  const std::vector<Patch> patches = split_frame(frame, net.cfg.patch_size);

  Tensor4<T> maps;
  if (policy == Policy::kLearned) {
    std::vector<const std::vector<float>*> rgbs(patches.size());
    std::vector<const std::vector<double>*> depths(patches.size());
    for (size_t k = 0; k < patches.size(); ++k) {
      rgbs[k] = &patches[k].rgb;
      depths[k] = &patches[k].depth;
    }
    maps = predict_patches(net, rgbs, depths);
  } else {
    maps = Tensor4<T>(static_cast<int>(patches.size()), 2, net.cfg.map_size, net.cfg.map_size);
  }

  const SelectionChoice choice = select_point(maps, grid, frame, cam, scene.bin, p_ep, rng);
  const Eigen::Vector3d world = selection_to_world(choice.sel, frame, cam);
  const SuctionResult result = attempt_suction(scene, world);

  double loss = 0.0;
  if (policy == Policy::kLearned) {
    const Patch& src = patches[choice.sel.patch_index];
    const LabeledSample sample{src.rgb, src.depth, choice.sel.map_i, choice.sel.map_j,
                               result.success ? 1 : 0};
    const std::vector<LabeledSample> batch =
        augment_labels ? augment_sample(sample, net.cfg.patch_size)
                       : std::vector<LabeledSample>{sample};
    loss = train_step(net, batch, opt);
  }
  metrics.record(result.success);

  TrialRecord rec;
  rec.step = n_l + 1;
  rec.patch_index = choice.sel.patch_index;
  rec.map_i = choice.sel.map_i;
  rec.map_j = choice.sel.map_j;
  rec.frame_u = choice.sel.frame_u;
  rec.frame_v = choice.sel.frame_v;
  rec.world_point = world;
  rec.explored = choice.explored;
  rec.p_pred = choice.p_pred;
  rec.outcome = result.success;
  rec.loss = loss;
  rec.p_ep = p_ep;
  rec.rolling = rolling_success(metrics);
  return rec;
}

inline Scenario random_train_scenario(Rng& rng) {
  return static_cast<Scenario>(static_cast<int>(Scenario::kTrainA) + rng.uniform_int(0, 3));
}

// Full online loop: regenerates a random training scene whenever the bin
// empties, emits one record per trial, fires on_checkpoint every
// cfg.checkpoint_every trials. Callbacks may be empty.
template <typename T>
std::vector<TrialRecord> run_training(
    Network<T>& net, const RunConfig& cfg, int max_step, uint64_t seed,
    Policy policy = Policy::kLearned,
    const std::function<void(const TrialRecord&)>& on_trial = {},
    const std::function<void(const Network<T>&, int)>& on_checkpoint = {}) {
  if (max_step < 1) throw PreconditionError("run_training: max_step must be positive");
  const SimParams sp = cfg.sim();
  const CameraModel cam = cfg.camera();
  const ExplorationSchedule sched{cfg.n_ep};
  const OptimizerConfig<T> opt = cfg.optimizer<T>();
  Rng rng(seed);
  MetricsTracker metrics;
  SceneState scene;
  std::vector<TrialRecord> log;
  log.reserve(max_step);
  for (int t = 0; t < max_step; ++t) {
    if (is_empty(scene))
      scene = generate_scene(random_train_scenario(rng), cfg.n_objects, rng.next_u64(), sp);
    TrialRecord rec = run_trial(net, scene, cam, cfg.frame_w, cfg.frame_h,
                                static_cast<uint64_t>(t), sched, opt, cfg.augment, metrics, rng,
                                policy);
    if (on_trial) on_trial(rec);
    log.push_back(rec);
    if ((t + 1) % cfg.checkpoint_every == 0 && on_checkpoint) on_checkpoint(net, t + 1);
  }
  return log;
}

// ---- pretraining ---------------------------------------------------------------

struct OracleSet {
  std::vector<DenseSample> train;
  std::vector<DenseSample> held_out;
};

// Self-labelled stand-in for the paper's 30 hand-annotated images: probe the
// suction oracle on a stride grid of map pixels across generated scenes. The
// last pretrain_holdout scenes become the held-out split.
inline OracleSet make_oracle_set(const RunConfig& cfg, uint64_t seed) {
  const SimParams sp = cfg.sim();
  const CameraModel cam = cfg.camera();
  const NetworkConfig nc = cfg.network();
  const PatchGrid grid = make_patch_grid(cfg.frame_w, cfg.frame_h, nc.patch_size);
  Rng rng(seed);
  OracleSet out;
  for (int sc = 0; sc < cfg.pretrain_scenes; ++sc) {
    const SceneState scene =
        generate_scene(random_train_scenario(rng), cfg.n_objects, rng.next_u64(), sp);
    const uint64_t noise_seed = sp.depth_noise_sd > 0 ? rng.next_u64() : 0;
    const Frame frame = render(scene, cam, cfg.frame_w, cfg.frame_h, noise_seed);
    const std::vector<Patch> patches = split_frame(frame, nc.patch_size);
    auto& dst = sc >= cfg.pretrain_scenes - cfg.pretrain_holdout ? out.held_out : out.train;
    for (int p = 0; p < static_cast<int>(patches.size()); ++p) {
      DenseSample ds{patches[p].rgb, patches[p].depth, {}};
      for (int i = 0; i < nc.map_size; i += cfg.pretrain_stride)
        for (int j = 0; j < nc.map_size; j += cfg.pretrain_stride) {
          const PixelSelection sel = make_selection(grid, p, i, j);
          if (!frame.depth_valid(sel.frame_u, sel.frame_v)) continue;
          const SuctionResult r = probe_suction(scene, selection_to_world(sel, frame, cam));
          ds.labels.push_back({i, j, r.success ? 1 : 0});
        }
      if (!ds.labels.empty()) dst.push_back(std::move(ds));
    }
  }
  return out;
}

// Mean masked cross-entropy over a sample set, no parameter updates.
template <typename T>
double dense_loss(const Network<T>& net, const std::vector<DenseSample>& set) {
  if (set.empty()) throw PreconditionError("dense_loss: empty sample set");
  double total = 0.0;
  for (const DenseSample& s : set) {
    const Tensor4<T> probs = predict_patch(net, s.rgb, s.depth);
    total += masked_cross_entropy(probs, s.labels).loss;
  }
  return total / static_cast<double>(set.size());
}

// Shuffled mini-batch passes; returns the mean loss of the final epoch
// (0.0 when epochs == 0, parameters untouched).
template <typename T>
double pretrain(Network<T>& net, const std::vector<DenseSample>& set, int epochs,
                const OptimizerConfig<T>& opt, int batch_size, Rng& rng) {
  if (set.empty()) throw PreconditionError("pretrain: empty sample set");
  if (epochs < 0) throw PreconditionError("pretrain: negative epoch count");
  if (batch_size < 1) throw PreconditionError("pretrain: batch size must be positive");
  double epoch_loss = 0.0;
  for (int e = 0; e < epochs; ++e) {
    std::vector<size_t> order(set.size());
    std::iota(order.begin(), order.end(), size_t{0});
    for (size_t k = order.size(); k > 1; --k)
      std::swap(order[k - 1], order[static_cast<size_t>(rng.uniform_int(0, static_cast<int>(k) - 1))]);
    double total = 0.0;
    int steps = 0;
    for (size_t at = 0; at < order.size(); at += batch_size) {
      const size_t end = std::min(order.size(), at + batch_size);
      std::vector<DenseSample> b;
      b.reserve(end - at);
      for (size_t k = at; k < end; ++k) b.push_back(set[order[k]]);
      total += train_step(net, b, opt);
      ++steps;
    }
    epoch_loss = total / steps;
  }
  return epoch_loss;
}

// ---- evaluation ------------------------------------------------------------------

struct EpisodeStats {
  int successes = 0;
  int failures = 0;
  bool cleared = false;
};

struct EvalReport {
  std::string scenario;
  int n_objects = 0;
  int repeats = 0;
  int successes = 0;
  int failures = 0;
  std::vector<EpisodeStats> episodes;

  int total() const { return successes + failures; }
  double rate() const { return total() ? static_cast<double>(successes) / total() : 0.0; }
};

inline EvalReport tally_eval(const std::vector<std::vector<bool>>& episodes,
                             const std::string& scenario, int n_objects) {
  EvalReport r;
  r.scenario = scenario;
  r.n_objects = n_objects;
  r.repeats = static_cast<int>(episodes.size());
  for (const auto& ep : episodes) {
    EpisodeStats es;
    for (bool ok : ep) ++(ok ? es.successes : es.failures);
    es.cleared = es.successes == n_objects;
    r.successes += es.successes;
    r.failures += es.failures;
    r.episodes.push_back(es);
  }
  return r;
}

// Clear-the-bin protocol: per repeat, greedy trials (p_ep = 0, no training)
// until the bin empties or the stall guard (10 x n_objects attempts) fires.
template <typename T>
EvalReport evaluate(const Network<T>& net, const RunConfig& cfg, Scenario scn, int n_objects,
                    int repeats, uint64_t seed) {
  if (repeats < 1) throw PreconditionError("evaluate: repeats must be positive");
  const SimParams sp = cfg.sim();
  const CameraModel cam = cfg.camera();
  const PatchGrid grid = make_patch_grid(cfg.frame_w, cfg.frame_h, net.cfg.patch_size);
  Rng rng(seed);
  std::vector<std::vector<bool>> episodes;
  for (int rep = 0; rep < repeats; ++rep) {
    SceneState scene = generate_scene(scn, n_objects, rng.next_u64(), sp);
    std::vector<bool> outcomes;
    const int stall_limit = 10 * n_objects;
    while (!is_empty(scene) && static_cast<int>(outcomes.size()) < stall_limit) {
      const uint64_t noise_seed = sp.depth_noise_sd > 0 ? rng.next_u64() : 0;
      const Frame frame = render(scene, cam, cfg.frame_w, cfg.frame_h, noise_seed);
      const std::vector<Patch> patches = split_frame(frame, net.cfg.patch_size);
      std::vector<const std::vector<float>*> rgbs(patches.size());
      std::vector<const std::vector<double>*> depths(patches.size());
      for (size_t k = 0; k < patches.size(); ++k) {
        rgbs[k] = &patches[k].rgb;
        depths[k] = &patches[k].depth;
      }
      const Tensor4<T> maps = predict_patches(net, rgbs, depths);
      const SelectionChoice choice = select_point(maps, grid, frame, cam, sp.bin, 0.0, rng);
      const SuctionResult r =
          attempt_suction(scene, selection_to_world(choice.sel, frame, cam));
      outcomes.push_back(r.success);
    }
    episodes.push_back(std::move(outcomes));
  }
  return tally_eval(episodes, scenario_name(scn), n_objects);
}

// ---- serialization ----------------------------------------------------------------

namespace detail {
inline std::string g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
}  // namespace detail

// One log line per trial; numbers at full precision so logs are comparable.
inline std::string record_to_json(const TrialRecord& r) {
  using detail::g17;
  std::string s = "{\"step\":" + std::to_string(r.step);
  s += ",\"patch\":" + std::to_string(r.patch_index);
  s += ",\"map_pixel\":[" + std::to_string(r.map_i) + "," + std::to_string(r.map_j) + "]";
  s += ",\"frame_pixel\":[" + std::to_string(r.frame_u) + "," + std::to_string(r.frame_v) + "]";
  s += ",\"world_point\":[" + g17(r.world_point.x()) + "," + g17(r.world_point.y()) + "," +
       g17(r.world_point.z()) + "]";
  s += std::string(",\"explored\":") + (r.explored ? "true" : "false");
  s += ",\"p_pred\":" + g17(r.p_pred);
  s += std::string(",\"success\":") + (r.outcome ? "true" : "false");
  s += ",\"loss\":" + g17(r.loss);
  s += ",\"p_ep\":" + g17(r.p_ep);
  s += ",\"rolling\":" + g17(r.rolling);
  s += "}";
  return s;
}

// Table-II-shaped summary: aligned text block, then one machine-readable line.
inline std::string make_eval_report(const EvalReport& r) {
  char rate[16];
  std::snprintf(rate, sizeof rate, "%.4f", r.rate());
  int cleared = 0;
  for (const EpisodeStats& e : r.episodes) cleared += e.cleared ? 1 : 0;
  std::string s;
  s += "suction evaluation (" + r.scenario + ")\n";
  s += "episodes cleared   " + std::to_string(cleared) + "/" + std::to_string(r.repeats) + "\n";
  s += "Total Objects      " + std::to_string(r.n_objects) + "\n";
  s += "Repeat Times       " + std::to_string(r.repeats) + "\n";
  s += "Success Suction    " + std::to_string(r.successes) + "\n";
  s += "Failure Suction    " + std::to_string(r.failures) + "\n";
  s += "Total Suction      " + std::to_string(r.total()) + "\n";
  s += "Success Rate       " + std::string(rate) + "\n";
  s += "{\"total_objects\":" + std::to_string(r.n_objects) +
       ",\"repeat_times\":" + std::to_string(r.repeats) +
       ",\"success_suction\":" + std::to_string(r.successes) +
       ",\"failure_suction\":" + std::to_string(r.failures) +
       ",\"total_suction\":" + std::to_string(r.total()) + ",\"success_rate\":" + rate + "}\n";
  return s;
}

}  // namespace safl
