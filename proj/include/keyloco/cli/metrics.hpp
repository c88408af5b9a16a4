#pragma once

#include "keyloco/rl/trainer.hpp"

#include "json.hpp"

#include <string>
#include <vector>

namespace keyloco::cli {

// One compact JSON object per iteration, append-only. Wall-clock time lives
// in a separate timing sidecar so the metrics stream is reproducible
// byte for byte across identical runs.
std::string metrics_json_line(const rl::IterStats& st);
std::string timing_json_line(const rl::IterStats& st);

void append_line(const std::string& path, const std::string& line);

// Reads a metrics file back, validating JSON per line and that iteration
// numbers increase.
std::vector<nlohmann::json> read_metrics(const std::string& path);

}  // namespace keyloco::cli
