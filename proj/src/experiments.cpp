#include "keyloco/cli/experiments.hpp"

#include "keyloco/cli/checkpoint.hpp"
#include "keyloco/cli/metrics.hpp"
#include "keyloco/cli/run.hpp"
#include "keyloco/cli/svg.hpp"
#include "keyloco/sim/dataset_io.hpp"

#include "json.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

namespace keyloco::cli {

namespace fs = std::filesystem;
using nlohmann::json;

RunConfig desk_config(const std::string& dataset, uint64_t seed) {
  RunConfig rc;
  rc.dataset = dataset;
  rc.checkpoint_every = 250;
  rc.train.seed = seed;
  rc.train.iterations = 2000;
  // position+yaw goals are the TrainConfig default; pooled critics keep the
  // per-iteration cost workable on a small machine
  rc.train.critic_pooled = true;
  return rc;
}

RunConfig sparsity_run_config(const RunConfig& base, const std::string& out_root, bool multi,
                              int lo, int hi) {
  RunConfig rc = base;
  rc.train.multi_critic = multi;
  rc.train.ranges.interval_lo = lo;
  rc.train.ranges.interval_hi = hi;
  char name[64];
  std::snprintf(name, sizeof(name), "%s_%d_%d", multi ? "mc" : "sc", lo, hi);
  rc.out_dir = out_root + "/" + name;
  return rc;
}

RunConfig anticipation_run_config(const RunConfig& base, const std::string& out_root,
                                  bool all_goals) {
  RunConfig rc = base;
  // the fixed scenarios carry position goals only, so the policies train on
  // position keyframes to match
  rc.train.components = {true, false, false};
  rc.train.visibility = all_goals ? keyframes::GoalVisibility::all_goals
                                  : keyframes::GoalVisibility::next_goal_only;
  rc.out_dir = out_root + "/" + (all_goals ? "all_goals" : "next_goal_only");
  return rc;
}

void ensure_dataset(const std::string& path) {
  if (fs::exists(path)) return;
  if (path.find('/') != std::string::npos)
    fs::create_directories(fs::path(path).parent_path());
  sim::ReferenceDataset ds = sim::generate_dataset(sim::DatasetGenConfig{}, 7);
  sim::save_dataset(path, ds, sim::DatasetFormat::bin_f32);
}

namespace {

int metrics_iterations(const std::string& dir) {
  const std::string path = dir + "/metrics.jsonl";
  if (!fs::exists(path)) return 0;
  try {
    return static_cast<int>(read_metrics(path).size());
  } catch (const std::exception&) {
    return 0;  // half-written tail; resume will clean it up
  }
}

}  // namespace

void ensure_run(const RunConfig& rc, bool reuse) {
  const std::string ckpt = rc.out_dir + "/checkpoint";
  const std::string hash = config_hash(rc);
  if (reuse && fs::exists(ckpt + "/manifest.json")) {
    try {
      const CheckpointInfo info = read_checkpoint_info(ckpt);
      if (info.config_hash == hash) {
        if (info.iteration >= rc.train.iterations &&
            metrics_iterations(rc.out_dir) >= rc.train.iterations) {
          if (!log_quiet())
            std::printf("reusing finished run %s (%d iterations)\n", rc.out_dir.c_str(),
                        info.iteration);
          return;
        }
        if (!log_quiet())
          std::printf("resuming %s from iteration %d\n", rc.out_dir.c_str(), info.iteration);
        if (train_run(rc, ckpt) != 0) throw std::runtime_error("resume failed: " + rc.out_dir);
        return;
      }
      if (!log_quiet())
        std::printf("run %s holds a different config, training fresh\n", rc.out_dir.c_str());
    } catch (const std::exception&) {
      // unreadable checkpoint: fall through and retrain
    }
  }
  fs::remove_all(rc.out_dir);
  if (train_run(rc, "") != 0) throw std::runtime_error("training failed: " + rc.out_dir);
}

RunOutcome summarize_run(const std::string& dir, const std::string& name) {
  const auto rows = read_metrics(dir + "/metrics.jsonl");
  if (rows.empty()) throw std::runtime_error("no metrics in " + dir);

  // Episodic goal reward: each episode collects one reward tick per
  // keyframe, so total tick reward over episodes finished that iteration
  // estimates the per-episode sum.
  std::vector<double> goal, per_tick;
  goal.reserve(rows.size());
  for (const auto& r : rows) {
    const double gpk = r.at("goal_per_keyframe").get<double>();
    const double ticks = r.at("keyframe_ticks").get<double>();
    const double eps = std::max(1.0, r.at("episodes_done").get<double>());
    goal.push_back(gpk * ticks / eps);
    per_tick.push_back(gpk);
  }

  RunOutcome out;
  out.name = name;
  out.iterations = static_cast<int>(rows.size());

  const size_t tail = std::max<size_t>(1, goal.size() / 10);
  double sum = 0, sum_tick = 0;
  for (size_t i = goal.size() - tail; i < goal.size(); ++i) {
    sum += goal[i];
    sum_tick += per_tick[i];
  }
  out.final_goal = sum / double(tail);
  out.final_goal_per_tick = sum_tick / double(tail);

  // first iteration whose smoothed curve reaches half the final level
  const int w = 21;
  const double thresh = 0.5 * out.final_goal;
  for (size_t i = 0; i < goal.size(); ++i) {
    const size_t a = i >= w / 2 ? i - w / 2 : 0;
    const size_t b = std::min(goal.size(), i + w / 2 + 1);
    double m = 0;
    for (size_t k = a; k < b; ++k) m += goal[k];
    m /= double(b - a);
    if (m >= thresh) {
      out.rise_iter = rows[i].at("iteration").get<int>();
      break;
    }
  }
  return out;
}

namespace {

double relative_spread(const std::vector<double>& finals) {
  double lo = finals[0], hi = finals[0], sum = 0;
  for (double v : finals) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
    sum += v;
  }
  const double mean = sum / double(finals.size());
  return mean == 0 ? 0 : (hi - lo) / mean;
}

Series curve_series(const std::string& dir, const std::string& label, const std::string& color) {
  Series s;
  s.label = label;
  s.color = color;
  for (const auto& r : read_metrics(dir + "/metrics.jsonl")) {
    s.x.push_back(r.at("iteration").get<double>());
    s.y.push_back(r.at("goal_per_keyframe").get<double>());
  }
  return s;
}

void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot create " + path);
  out << j.dump(2) << "\n";
}

}  // namespace

SparsitySummary run_sparsity(const std::string& out_dir, const RunConfig& base,
                             const ExperimentOptions& opt) {
  fs::create_directories(out_dir);
  const std::vector<std::pair<int, int>> grids{{25, 50}, {50, 75}, {75, 100}};

  json protocol;
  protocol["seed"] = base.train.seed;
  protocol["iterations"] = base.train.iterations;
  protocol["group_weights"] = base.train.group_weights;  // tuned on [25,50], frozen elsewhere
  protocol["intervals"] = json::array();
  for (auto [lo, hi] : grids) protocol["intervals"].push_back({lo, hi});
  protocol["metric"] =
      "final_goal = mean episodic goal-group reward (tick reward sum per finished episode) "
      "over the last tenth of training; spread = (max - min) / mean of final_goal per critic "
      "setup";
  write_json_file(out_dir + "/protocol.json", protocol);

  SparsitySummary sum;
  for (bool multi : {true, false})
    for (auto [lo, hi] : grids) {
      const RunConfig rc = sparsity_run_config(base, out_dir, multi, lo, hi);
      ensure_run(rc, opt.reuse);
      SparsityRun run;
      run.name = fs::path(rc.out_dir).filename().string();
      run.multi_critic = multi;
      run.lo = lo;
      run.hi = hi;
      run.outcome = summarize_run(rc.out_dir, run.name);
      sum.runs.push_back(std::move(run));
    }

  std::vector<double> mc, sc;
  for (const auto& r : sum.runs) (r.multi_critic ? mc : sc).push_back(r.outcome.final_goal);
  sum.spread_mc = relative_spread(mc);
  sum.spread_sc = relative_spread(sc);

  json j;
  j["runs"] = json::array();
  for (const auto& r : sum.runs) {
    json e;
    e["name"] = r.name;
    e["multi_critic"] = r.multi_critic;
    e["interval"] = {r.lo, r.hi};
    e["final_goal"] = r.outcome.final_goal;
    e["final_goal_per_tick"] = r.outcome.final_goal_per_tick;
    e["rise_iter"] = r.outcome.rise_iter;
    j["runs"].push_back(std::move(e));
  }
  j["spread_multi_critic"] = sum.spread_mc;
  j["spread_single_critic"] = sum.spread_sc;
  write_json_file(out_dir + "/summary.json", j);

  const char* mc_colors[] = {"#1f77b4", "#2ca02c", "#9467bd"};
  const char* sc_colors[] = {"#ff7f0e", "#d62728", "#8c564b"};
  std::vector<Series> series;
  int im = 0, is = 0;
  for (const auto& r : sum.runs)
    series.push_back(curve_series(out_dir + "/" + r.name, r.name,
                                  r.multi_critic ? mc_colors[im++ % 3] : sc_colors[is++ % 3]));
  write_line_chart(out_dir + "/goal_reward.svg", "goal reward per keyframe vs. interval range",
                   "iteration", "goal reward / keyframe", series);
  return sum;
}

std::vector<Scenario> anticipation_scenarios() {
  auto pos_kf = [](int t, double x, double y) {
    keyframes::Keyframe kf;
    kf.t_step = t;
    kf.has_position = true;
    kf.px = x;
    kf.py = y;
    return kf;
  };
  Scenario straight{"straight", {}};
  straight.kfs.frames = {pos_kf(50, 0.0, 1.0), pos_kf(75, 0.0, 2.0)};
  Scenario turn{"turn", {}};
  turn.kfs.frames = {pos_kf(50, 0.0, 1.0), pos_kf(75, 1.0, 1.5)};
  Scenario turn_slow{"turn_slow", {}};
  turn_slow.kfs.frames = {pos_kf(50, 0.0, 1.0), pos_kf(100, 1.0, 1.5)};
  return {straight, turn, turn_slow};
}

AnticipationSummary run_anticipation(const std::string& out_dir, const RunConfig& base,
                                     const ExperimentOptions& opt) {
  fs::create_directories(out_dir);
  const auto scenarios = anticipation_scenarios();
  for (const auto& sc : scenarios)
    {
      std::ofstream out(out_dir + "/scenario_" + sc.name + ".json",
                        std::ios::binary | std::ios::trunc);
      out << serialize_scenario(sc);
    }

  json protocol;
  protocol["seed"] = base.train.seed;
  protocol["iterations"] = base.train.iterations;
  protocol["episodes"] = opt.eval_episodes;
  protocol["eval_seed"] = opt.eval_seed;
  protocol["policies"] = {"all_goals", "next_goal_only"};
  protocol["note"] = "stochastic policy evaluation; per-goal position error at the keyframe step";
  write_json_file(out_dir + "/protocol.json", protocol);

  AnticipationSummary sum;
  for (bool all_goals : {true, false}) {
    const RunConfig rc = anticipation_run_config(base, out_dir, all_goals);
    ensure_run(rc, opt.reuse);

    auto tr = make_trainer(rc);
    load_checkpoint(rc.out_dir + "/checkpoint", *tr);
    const std::string policy = all_goals ? "all_goals" : "next_goal_only";

    for (const auto& sc : scenarios) {
      const rl::EvalReport rep =
          tr->evaluate(opt.eval_episodes, opt.eval_seed, sc.kfs, /*stochastic=*/true);
      if (rep.by_ordinal.size() != 2)
        throw std::runtime_error("anticipation: expected two keyframes in " + sc.name);
      AnticipationCell cell;
      cell.first = {rep.by_ordinal[0].pos_mean, rep.by_ordinal[0].pos_std};
      cell.second = {rep.by_ordinal[1].pos_mean, rep.by_ordinal[1].pos_std};
      sum.table[policy][sc.name] = cell;

      // one deterministic trajectory per policy/scenario for the xy plots
      const auto rows = tr->trace_episode(sc.kfs, opt.eval_seed);
      write_trace_csv(out_dir + "/traj_" + policy + "_" + sc.name + ".csv", rows,
                      rc.train.env.nj);
    }
  }

  json j;
  for (const auto& [policy, row] : sum.table)
    for (const auto& [scen, cell] : row) {
      json e;
      e["first_goal"] = {{"mean", cell.first.mean}, {"std", cell.first.stddev}};
      e["second_goal"] = {{"mean", cell.second.mean}, {"std", cell.second.stddev}};
      j[policy][scen] = std::move(e);
    }
  write_json_file(out_dir + "/summary.json", j);

  // xy overlays per scenario
  for (const auto& sc : scenarios) {
    std::vector<Series> paths;
    const char* colors[] = {"#1f77b4", "#ff7f0e"};
    int ci = 0;
    for (const std::string policy : {"all_goals", "next_goal_only"}) {
      Series s;
      s.label = policy;
      s.color = colors[ci++ % 2];
      std::ifstream in(out_dir + "/traj_" + policy + "_" + sc.name + ".csv");
      std::string line;
      std::getline(in, line);  // header
      while (std::getline(in, line)) {
        double t, px, py;
        if (std::sscanf(line.c_str(), "%lf,%lf,%lf", &t, &px, &py) == 3) {
          s.x.push_back(px);
          s.y.push_back(py);
        }
      }
      paths.push_back(std::move(s));
    }
    std::vector<Marker> marks;
    int ord = 1;
    for (const auto& kf : sc.kfs.frames)
      marks.push_back({kf.px, kf.py, "goal " + std::to_string(ord++), "#d62728"});
    marks.push_back({0, 0, "start", "#555555"});
    write_xy_chart(out_dir + "/traj_" + sc.name + ".svg", "trajectories: " + sc.name, paths,
                   marks);
  }
  return sum;
}

}  // namespace keyloco::cli
