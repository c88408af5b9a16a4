#pragma once

#include "keyloco/rl/trainer.hpp"

#include <stdexcept>
#include <string>

namespace keyloco::cli {

// Configuration and input problems exit with code 2; see keyloco_main.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  int version = 1;
  std::string dataset;  // reference dataset path; empty = train without one
  std::string out_dir;
  int checkpoint_every = 500;
  rl::TrainConfig train;
};

// Strict parse: unknown keys, wrong types, and out-of-range values all throw
// ConfigError naming the full field path.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);

// Canonical exhaustive form: every field explicit, keys sorted. A run
// directory stores this next to its outputs.
std::string serialize_run_config(const RunConfig& rc);

// Stable hex digest of the canonical form minus out_dir, so a moved run
// directory still matches its checkpoints.
std::string config_hash(const RunConfig& rc);

}  // namespace keyloco::cli
