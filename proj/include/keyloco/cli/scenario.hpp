#pragma once

#include "keyloco/keyframes/keyframes.hpp"

#include <string>

namespace keyloco::cli {

// Hand-written evaluation scenario: a named keyframe list. Each keyframe
// carries a subset of {position, yaw, posture}; times are env steps and must
// be strictly increasing.
struct Scenario {
  std::string name;
  keyframes::KeyframeSet kfs;
};

Scenario parse_scenario(const std::string& json_text);
Scenario load_scenario(const std::string& path);
std::string serialize_scenario(const Scenario& s);

}  // namespace keyloco::cli
