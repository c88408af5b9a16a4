#pragma once

#include "keyloco/cli/config.hpp"
#include "keyloco/cli/scenario.hpp"

#include <map>
#include <string>
#include <vector>

namespace keyloco::cli {

struct ExperimentOptions {
  bool reuse = true;      // keep finished runs, resume partial ones
  int eval_episodes = 20;
  uint64_t eval_seed = 9001;
};

// The shared desk-scale configuration every experiment starts from:
// position+yaw goals, all three reward groups, pooled critics.
RunConfig desk_config(const std::string& dataset, uint64_t seed);

// Run configs derived from a base, exposed so the acceptance harness and the
// CLI build byte-identical configurations (and therefore share artifacts).
RunConfig sparsity_run_config(const RunConfig& base, const std::string& out_root, bool multi,
                              int lo, int hi);
RunConfig anticipation_run_config(const RunConfig& base, const std::string& out_root,
                                  bool all_goals);

// Generates the default reference dataset at path if it does not exist yet.
void ensure_dataset(const std::string& path);

// Trains rc.out_dir to completion: reuses a finished run, resumes a partial
// checkpoint, or starts fresh. Throws on failure.
void ensure_run(const RunConfig& rc, bool reuse);

// Learning-curve summary pulled from a run's metrics. final_goal is the mean
// episodic goal-group reward over the final tenth of training (total goal
// tick reward per finished episode); rise_iter is the first iteration whose
// 21-point moving average reaches half of that level.
struct RunOutcome {
  std::string name;
  double final_goal = 0;           // mean episodic goal reward, end of training
  double final_goal_per_tick = 0;  // same window, per keyframe tick
  int rise_iter = -1;
  int iterations = 0;
};
RunOutcome summarize_run(const std::string& dir, const std::string& name);

struct SparsityRun {
  std::string name;
  bool multi_critic = true;
  int lo = 0, hi = 0;
  RunOutcome outcome;
};
struct SparsitySummary {
  std::vector<SparsityRun> runs;
  double spread_mc = 0, spread_sc = 0;  // (max - min) / mean of final goal reward
};

// Six runs: {multi, single} critic x keyframe intervals [25,50], [50,75],
// [75,100], identical seeds and frozen reward weights. Writes summary.json,
// protocol.json and learning-curve SVGs under out_dir.
SparsitySummary run_sparsity(const std::string& out_dir, const RunConfig& base,
                             const ExperimentOptions& opt);

struct GoalErrorStat {
  double mean = 0, stddev = 0;
};
struct AnticipationCell {
  GoalErrorStat first, second;  // position error at each keyframe [m]
};
struct AnticipationSummary {
  // policy name -> scenario name -> per-goal stats
  std::map<std::string, std::map<std::string, AnticipationCell>> table;
};

// Two runs (all goals visible vs. next goal only), evaluated on the fixed
// Straight / Turn / Turn-Slow scenarios. Writes summary.json, the scenario
// files and trajectory plots under out_dir.
AnticipationSummary run_anticipation(const std::string& out_dir, const RunConfig& base,
                                     const ExperimentOptions& opt);

// The fixed two-keyframe evaluation scenarios (positions in meters, times in
// env steps): first goal at step 50, (0, 1.0); Straight continues to (0, 2.0)
// at step 75, Turn to (1.0, 1.5) at step 75, Turn-Slow to (1.0, 1.5) at 100.
std::vector<Scenario> anticipation_scenarios();

}  // namespace keyloco::cli
