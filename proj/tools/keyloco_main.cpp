#include "keyloco/cli/checkpoint.hpp"
#include "keyloco/cli/config.hpp"
#include "keyloco/cli/experiments.hpp"
#include "keyloco/cli/metrics.hpp"
#include "keyloco/cli/run.hpp"
#include "keyloco/cli/scenario.hpp"
#include "keyloco/cli/svg.hpp"
#include "keyloco/sim/dataset_io.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

namespace fs = std::filesystem;
using namespace keyloco;
using cli::ConfigError;

namespace {

// Accepts either a run directory (with checkpoint/ inside) or a checkpoint
// directory itself; returns {checkpoint dir, run dir}.
std::pair<std::string, std::string> resolve_checkpoint(const std::string& path) {
  if (fs::exists(path + "/manifest.json"))
    return {path, fs::path(path).parent_path().string()};
  if (fs::exists(path + "/checkpoint/manifest.json")) return {path + "/checkpoint", path};
  throw ConfigError("no checkpoint found at " + path);
}

int cmd_train(const std::string& config_path, const std::string& out, bool seed_set, uint64_t seed,
              int iters, const std::string& resume) {
  cli::RunConfig rc = cli::load_run_config(config_path);
  if (!out.empty()) rc.out_dir = out;
  if (seed_set) rc.train.seed = seed;
  if (iters > 0) rc.train.iterations = iters;
  if (rc.out_dir.empty()) throw ConfigError("set the output directory (--out or config out_dir)");
  std::string resume_ckpt;
  if (!resume.empty()) resume_ckpt = resolve_checkpoint(resume).first;
  return cli::train_run(rc, resume_ckpt);
}

int cmd_gen_dataset(const std::string& out, uint64_t seed, int clips, double seconds,
                    const std::string& format) {
  sim::DatasetGenConfig dc;
  if (clips > 0) dc.num_clips = clips;
  if (seconds > 0) {
    dc.duration_lo = dc.duration_hi = seconds;
    // clips must cover at least one keyframe interval (plus difference
    // endpoints), or they cannot seed posture goals and style pairs
    const keyframes::SampleRanges ranges;
    const sim::EnvConfig env;
    const int frames = static_cast<int>(std::lround(seconds * dc.fps));
    const int need = static_cast<int>(std::lround(ranges.interval_hi * env.dt * dc.fps)) + 2;
    if (frames < need) {
      char msg[160];
      std::snprintf(msg, sizeof(msg),
                    "--seconds %g gives %d frames per clip; need at least %d to span one "
                    "keyframe interval",
                    seconds, frames, need);
      throw ConfigError(msg);
    }
  }
  sim::DatasetFormat fmt;
  if (format == "bin") fmt = sim::DatasetFormat::bin_f32;
  else if (format == "csv") fmt = sim::DatasetFormat::csv;
  else throw ConfigError("--format must be bin or csv");

  const fs::path parent = fs::path(out).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  const sim::ReferenceDataset ds = sim::generate_dataset(dc, seed);
  sim::save_dataset(out, ds, fmt);
  std::printf("wrote %zu clips (%.1f s at %d fps) to %s\n", ds.clips.size(), ds.total_seconds(),
              ds.fps, out.c_str());
  return 0;
}

void print_kf_stat(const char* label, const rl::EvalKfStat& s) {
  std::printf("%-10s pos %.4f +- %.4f m   yaw %6.2f +- %5.2f deg   posture %6.2f +- %5.2f deg"
              "   (n=%d)\n",
              label, s.pos_mean, s.pos_std, s.yaw_mean_deg, s.yaw_std_deg, s.posture_rmse_mean_deg,
              s.posture_rmse_std_deg, s.count);
}

int cmd_eval(const std::string& ckpt, const std::string& scenario_path, int episodes,
             bool deterministic, bool oracle, uint64_t seed, const std::string& export_dir) {
  const auto [ckpt_dir, run_dir] = resolve_checkpoint(ckpt);
  const std::string config_path = run_dir + "/config.json";
  if (!fs::exists(config_path)) throw ConfigError("no config.json next to checkpoint: " + run_dir);
  const cli::RunConfig rc = cli::load_run_config(config_path);

  auto tr = cli::make_trainer(rc);
  cli::load_checkpoint(ckpt_dir, *tr);

  std::optional<keyframes::KeyframeSet> kfs;
  std::string scen_name = "sampled";
  if (!scenario_path.empty()) {
    const cli::Scenario sc = cli::load_scenario(scenario_path);
    scen_name = sc.name.empty() ? "scenario" : sc.name;
    for (const auto& kf : sc.kfs.frames) {
      if (kf.has_position && !rc.train.components.position)
        throw ConfigError("scenario sets position goals but the policy trained without them");
      if (kf.has_yaw && !rc.train.components.yaw)
        throw ConfigError("scenario sets yaw goals but the policy trained without them");
      if (kf.has_posture && !rc.train.components.posture)
        throw ConfigError("scenario sets posture goals but the policy trained without them");
      if (kf.has_posture && static_cast<int>(kf.theta.size()) != rc.train.env.nj)
        throw ConfigError("scenario posture has " + std::to_string(kf.theta.size()) +
                          " joints, env has " + std::to_string(rc.train.env.nj));
    }
    kfs = sc.kfs;
  }

  const rl::EvalReport rep = tr->evaluate(episodes, seed, kfs, !deterministic, oracle);

  std::printf("checkpoint %s  iteration %d  scenario %s  episodes %d  %s%s\n", ckpt_dir.c_str(),
              tr->iteration(), scen_name.c_str(), episodes,
              deterministic ? "deterministic" : "stochastic", oracle ? "  [oracle fixture]" : "");
  for (size_t i = 0; i < rep.by_ordinal.size(); ++i) {
    char label[32];
    std::snprintf(label, sizeof(label), "keyframe %zu", i + 1);
    print_kf_stat(label, rep.by_ordinal[i]);
  }
  print_kf_stat("overall", rep.overall);
  std::printf("goal reward per keyframe: %.4f\n", rep.goal_reward_mean);

  if (!export_dir.empty()) {
    fs::create_directories(export_dir);
    nlohmann::json j;
    j["checkpoint"] = ckpt_dir;
    j["iteration"] = tr->iteration();
    j["scenario"] = scen_name;
    j["episodes"] = episodes;
    j["deterministic"] = deterministic;
    j["seed"] = seed;
    j["goal_reward_mean"] = rep.goal_reward_mean;
    auto stat = [](const rl::EvalKfStat& s) {
      return nlohmann::json{{"count", s.count},
                            {"pos_mean", s.pos_mean},
                            {"pos_std", s.pos_std},
                            {"yaw_mean_deg", s.yaw_mean_deg},
                            {"yaw_std_deg", s.yaw_std_deg},
                            {"posture_rmse_mean_deg", s.posture_rmse_mean_deg},
                            {"posture_rmse_std_deg", s.posture_rmse_std_deg}};
    };
    j["by_keyframe"] = nlohmann::json::array();
    for (const auto& s : rep.by_ordinal) j["by_keyframe"].push_back(stat(s));
    j["overall"] = stat(rep.overall);
    std::ofstream out(export_dir + "/eval.json", std::ios::binary | std::ios::trunc);
    out << j.dump(2) << "\n";

    if (kfs) {
      const auto rows = tr->trace_episode(*kfs, seed);
      cli::write_trace_csv(export_dir + "/traj_" + scen_name + ".csv", rows, rc.train.env.nj);
    }
    std::printf("exported to %s\n", export_dir.c_str());
  }
  return 0;
}

int cmd_experiment_sparsity(const std::string& out, const std::string& data, uint64_t seed,
                            int iters, bool fresh) {
  cli::ensure_dataset(data);
  cli::RunConfig base = cli::desk_config(data, seed);
  base.train.iterations = iters;
  cli::ExperimentOptions opt;
  opt.reuse = !fresh;
  const cli::SparsitySummary sum = cli::run_sparsity(out, base, opt);

  std::printf("\n%-12s %8s %14s %12s %10s\n", "run", "interval", "final_goal", "per_tick",
              "rise_iter");
  for (const auto& r : sum.runs)
    std::printf("%-12s [%3d,%3d] %14.4f %12.4f %10d\n", r.name.c_str(), r.lo, r.hi,
                r.outcome.final_goal, r.outcome.final_goal_per_tick, r.outcome.rise_iter);
  std::printf("\nrelative spread of final goal reward:  multi-critic %.4f   single-critic %.4f\n",
              sum.spread_mc, sum.spread_sc);
  std::printf("summary: %s/summary.json\n", out.c_str());
  return 0;
}

int cmd_experiment_anticipation(const std::string& out, const std::string& data, uint64_t seed,
                                int iters, int episodes, bool fresh) {
  cli::ensure_dataset(data);
  cli::RunConfig base = cli::desk_config(data, seed);
  base.train.iterations = iters;
  cli::ExperimentOptions opt;
  opt.reuse = !fresh;
  opt.eval_episodes = episodes;
  const cli::AnticipationSummary sum = run_anticipation(out, base, opt);

  std::printf("\nmean +- std position error [m], %d episodes per cell\n", episodes);
  std::printf("%-10s %-8s %24s %24s\n", "scenario", "goal", "all_goals", "next_goal_only");
  for (const char* scen : {"straight", "turn", "turn_slow"})
    for (int goal = 0; goal < 2; ++goal) {
      const auto& a = sum.table.at("all_goals").at(scen);
      const auto& n = sum.table.at("next_goal_only").at(scen);
      const auto& as = goal == 0 ? a.first : a.second;
      const auto& ns = goal == 0 ? n.first : n.second;
      std::printf("%-10s %-8s %14.4f +- %.4f %14.4f +- %.4f\n", scen,
                  goal == 0 ? "first" : "second", as.mean, as.stddev, ns.mean, ns.stddev);
    }
  std::printf("summary: %s/summary.json\n", out.c_str());
  return 0;
}

int cmd_export_plots(const std::string& run_dir) {
  const std::string metrics_path = run_dir + "/metrics.jsonl";
  if (!fs::exists(metrics_path)) throw ConfigError("no metrics.jsonl in " + run_dir);
  const auto rows = cli::read_metrics(metrics_path);
  if (rows.empty()) throw ConfigError("metrics.jsonl is empty in " + run_dir);

  fs::create_directories(run_dir + "/plots");

  // column schema: iteration, reward_<group>..., goal_per_keyframe,
  // episode_len_mean, kl, clip_fraction, lr  (groups from the first record,
  // alphabetical)
  std::vector<std::string> groups;
  for (const auto& [k, v] : rows.front().at("reward").items()) groups.push_back(k);

  std::ofstream csv(run_dir + "/plots/rewards.csv", std::ios::binary | std::ios::trunc);
  csv << "iteration";
  for (const auto& g : groups) csv << ",reward_" << g;
  csv << ",goal_per_keyframe,episode_len_mean,kl,clip_fraction,lr\n";
  char buf[40];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    csv << "," << buf;
  };
  for (const auto& r : rows) {
    csv << r.at("iteration").get<int>();
    for (const auto& g : groups) put(r.at("reward").at(g).get<double>());
    put(r.at("goal_per_keyframe").get<double>());
    put(r.at("episode_len_mean").get<double>());
    put(r.at("kl").get<double>());
    put(r.at("clip_fraction").get<double>());
    put(r.at("lr").get<double>());
    csv << "\n";
  }
  csv.close();

  const std::map<std::string, std::string> palette{
      {"reg", "#2ca02c"}, {"style", "#ff7f0e"}, {"goal", "#1f77b4"}};
  std::vector<cli::Series> series;
  for (const auto& g : groups) {
    cli::Series s;
    s.label = g;
    s.color = palette.count(g) ? palette.at(g) : "#9467bd";
    for (const auto& r : rows) {
      s.x.push_back(r.at("iteration").get<double>());
      s.y.push_back(r.at("reward").at(g).get<double>());
    }
    series.push_back(std::move(s));
  }
  cli::write_line_chart(run_dir + "/plots/rewards.svg", "per-group mean reward", "iteration",
                        "reward", series);

  // xy plots for any exported trajectories sitting in the run dir
  int traj = 0;
  for (const auto& entry : fs::directory_iterator(run_dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("traj_", 0) != 0 || entry.path().extension() != ".csv") continue;
    cli::Series s;
    s.label = name.substr(5, name.size() - 9);
    s.color = "#1f77b4";
    std::ifstream in(entry.path());
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      double t, px, py;
      if (std::sscanf(line.c_str(), "%lf,%lf,%lf", &t, &px, &py) == 3) {
        s.x.push_back(px);
        s.y.push_back(py);
      }
    }
    const std::string svg = run_dir + "/plots/" + name.substr(0, name.size() - 4) + ".svg";
    cli::write_xy_chart(svg, s.label, {s}, {{0, 0, "start", "#555555"}});
    ++traj;
  }
  std::printf("wrote plots/rewards.csv, plots/rewards.svg and %d trajectory plots in %s\n", traj,
              run_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"keyframe locomotion trainer"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "train a policy from a JSON config");
  std::string t_config, t_out, t_resume;
  uint64_t t_seed = 0;
  int t_iters = 0;
  train->add_option("--config", t_config, "run config JSON")->required();
  train->add_option("--out", t_out, "output directory (overrides config)");
  train->add_option("--seed", t_seed, "seed override");
  train->add_option("--iters", t_iters, "iteration count override");
  train->add_option("--resume", t_resume, "checkpoint or run directory to continue from");

  // gen-dataset
  auto* gen = app.add_subcommand("gen-dataset", "generate the synthetic reference dataset");
  std::string g_out = "dataset.bin", g_format = "bin";
  uint64_t g_seed = 7;
  int g_clips = 0;
  double g_seconds = 0;
  gen->add_option("--out", g_out, "output file");
  gen->add_option("--seed", g_seed, "generator seed");
  gen->add_option("--clips", g_clips, "clip count (default 24)");
  gen->add_option("--seconds", g_seconds, "fixed clip length in seconds");
  gen->add_option("--format", g_format, "bin or csv");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on keyframe scenarios");
  std::string e_ckpt, e_scenario, e_export;
  int e_episodes = 20;
  uint64_t e_seed = 9001;
  bool e_det = false, e_oracle = false;
  eval->add_option("--ckpt", e_ckpt, "checkpoint or run directory")->required();
  eval->add_option("--scenario", e_scenario, "scenario JSON (default: sampled keyframes)");
  eval->add_option("--episodes", e_episodes, "episode count");
  eval->add_option("--seed", e_seed, "evaluation seed");
  eval->add_flag("--deterministic", e_det, "use the mean action instead of sampling");
  eval->add_flag("--oracle", e_oracle, "teleport fixture: checks the measurement path, errors 0");
  eval->add_option("--export", e_export, "directory for eval.json and trajectory CSV");

  // experiment
  auto* exp = app.add_subcommand("experiment", "scripted experiment reproductions");
  exp->require_subcommand(1);
  auto* sparsity = exp->add_subcommand("sparsity", "critic setups across keyframe intervals");
  std::string s_out = "runs/sparsity", s_data = "runs/dataset.bin";
  uint64_t s_seed = 1;
  int s_iters = 1500;
  bool s_fresh = false;
  sparsity->add_option("--out", s_out, "experiment directory");
  sparsity->add_option("--data", s_data, "reference dataset (generated if missing)");
  sparsity->add_option("--seed", s_seed, "training seed");
  sparsity->add_option("--iters", s_iters, "iterations per run");
  sparsity->add_flag("--fresh", s_fresh, "retrain even if finished runs exist");

  auto* antic = exp->add_subcommand("anticipation", "goal visibility ablation");
  std::string a_out = "runs/anticipation", a_data = "runs/dataset.bin";
  uint64_t a_seed = 1;
  int a_iters = 2000, a_episodes = 20;
  bool a_fresh = false;
  antic->add_option("--out", a_out, "experiment directory");
  antic->add_option("--data", a_data, "reference dataset (generated if missing)");
  antic->add_option("--seed", a_seed, "training seed");
  antic->add_option("--iters", a_iters, "iterations per run");
  antic->add_option("--episodes", a_episodes, "evaluation episodes per scenario");
  antic->add_flag("--fresh", a_fresh, "retrain even if finished runs exist");

  // export-plots
  auto* plots = app.add_subcommand("export-plots", "CSV and SVG plots for a finished run");
  std::string p_run;
  plots->add_option("--run", p_run, "run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  try {
    if (*train) return cmd_train(t_config, t_out, train->count("--seed") > 0, t_seed, t_iters,
                                 t_resume);
    if (*gen) return cmd_gen_dataset(g_out, g_seed, g_clips, g_seconds, g_format);
    if (*eval) return cmd_eval(e_ckpt, e_scenario, e_episodes, e_det, e_oracle, e_seed, e_export);
    if (*sparsity) return cmd_experiment_sparsity(s_out, s_data, s_seed, s_iters, s_fresh);
    if (*antic)
      return cmd_experiment_anticipation(a_out, a_data, a_seed, a_iters, a_episodes, a_fresh);
    if (*plots) return cmd_export_plots(p_run);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
