#include "keyloco/cli/scenario.hpp"

#include "keyloco/cli/config.hpp"

#include "json.hpp"

#include <fstream>
#include <sstream>

namespace keyloco::cli {

namespace {
using nlohmann::json;

[[noreturn]] void fail(const std::string& what) { throw ConfigError("scenario: " + what); }
}  // namespace

Scenario parse_scenario(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    fail(std::string("not valid JSON: ") + e.what());
  }
  if (!j.is_object()) fail("expected an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (it.key() != "name" && it.key() != "keyframes") fail("unknown key '" + it.key() + "'");

  Scenario sc;
  if (j.contains("name")) {
    if (!j["name"].is_string()) fail("name: expected a string");
    sc.name = j["name"].get<std::string>();
  }
  if (!j.contains("keyframes") || !j["keyframes"].is_array() || j["keyframes"].empty())
    fail("needs a non-empty 'keyframes' array");

  for (size_t i = 0; i < j["keyframes"].size(); ++i) {
    const json& f = j["keyframes"][i];
    const std::string at = "keyframes[" + std::to_string(i) + "]";
    if (!f.is_object()) fail(at + ": expected an object");
    for (auto it = f.begin(); it != f.end(); ++it)
      if (it.key() != "t_step" && it.key() != "position" && it.key() != "yaw" &&
          it.key() != "posture")
        fail(at + ": unknown key '" + it.key() + "'");

    keyframes::Keyframe kf;
    if (!f.contains("t_step") || !f["t_step"].is_number_integer())
      fail(at + ": needs integer 't_step'");
    kf.t_step = f["t_step"].get<int>();
    if (kf.t_step < 1) fail(at + ": t_step must be >= 1");

    if (f.contains("position")) {
      const json& p = f["position"];
      if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number())
        fail(at + ".position: expected [x, y]");
      kf.has_position = true;
      kf.px = p[0].get<double>();
      kf.py = p[1].get<double>();
    }
    if (f.contains("yaw")) {
      if (!f["yaw"].is_number()) fail(at + ".yaw: expected a number (radians)");
      kf.has_yaw = true;
      kf.yaw = f["yaw"].get<double>();
    }
    if (f.contains("posture")) {
      const json& p = f["posture"];
      if (!p.is_array() || p.empty()) fail(at + ".posture: expected a joint angle array");
      kf.has_posture = true;
      for (size_t k = 0; k < p.size(); ++k) {
        if (!p[k].is_number()) fail(at + ".posture[" + std::to_string(k) + "]: expected a number");
        kf.theta.push_back(p[k].get<double>());
      }
    }
    if (!kf.has_position && !kf.has_yaw && !kf.has_posture)
      fail(at + ": needs at least one of position, yaw, posture");
    sc.kfs.frames.push_back(std::move(kf));
  }

  try {
    sc.kfs.validate();
  } catch (const std::exception& e) {
    fail(e.what());
  }
  return sc;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_scenario(ss.str());
}

std::string serialize_scenario(const Scenario& s) {
  json j;
  j["name"] = s.name;
  json arr = json::array();
  for (const auto& kf : s.kfs.frames) {
    json f;
    f["t_step"] = kf.t_step;
    if (kf.has_position) f["position"] = {kf.px, kf.py};
    if (kf.has_yaw) f["yaw"] = kf.yaw;
    if (kf.has_posture) f["posture"] = kf.theta;
    arr.push_back(std::move(f));
  }
  j["keyframes"] = std::move(arr);
  return j.dump(2) + "\n";
}

}  // namespace keyloco::cli
