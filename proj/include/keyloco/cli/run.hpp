#pragma once

#include "keyloco/cli/config.hpp"

#include <memory>
#include <string>

namespace keyloco::cli {

// Loads the dataset the config names (if any) and builds the trainer.
// A missing dataset file surfaces as ConfigError naming the path.
std::unique_ptr<rl::Trainer<float>> make_trainer(const RunConfig& rc);

// Trains to rc.train.iterations inside rc.out_dir, writing config.json,
// metrics.jsonl, timing.jsonl and checkpoints (checkpoint/ tracks the
// latest; checkpoint_iter_N/ are periodic snapshots). resume_from names a
// checkpoint directory, "" starts fresh. Returns a process exit code.
int train_run(const RunConfig& rc, const std::string& resume_from = "");

// KEYLOCO_LOG=quiet drops per-iteration progress lines.
bool log_quiet();

// Stable trajectory CSV: header then one row per step with time, pose,
// velocities, joint angles and the raw action.
void write_trace_csv(const std::string& path,
                     const std::vector<rl::Trainer<float>::TraceRow>& rows, int nj);

}  // namespace keyloco::cli
