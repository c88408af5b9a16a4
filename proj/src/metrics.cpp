#include "keyloco/cli/metrics.hpp"

#include <fstream>
#include <stdexcept>

namespace keyloco::cli {

using nlohmann::json;

std::string metrics_json_line(const rl::IterStats& st) {
  json j;
  j["iteration"] = st.iteration;
  j["lr"] = st.lr;
  j["reward"] = st.reward_mean;  // per-group per-step means
  j["goal_per_keyframe"] = st.goal_per_keyframe;
  j["keyframe_ticks"] = st.keyframe_ticks;
  j["episode_len_mean"] = st.episode_len_mean;
  j["episodes_done"] = st.episodes_done;
  j["terminations"] = st.terminations;
  j["policy_loss"] = st.policy_loss;
  j["entropy"] = st.entropy;
  j["kl"] = st.kl;
  j["clip_fraction"] = st.clip_fraction;
  j["value_loss"] = st.value_loss;
  j["disc_loss"] = st.disc_loss;
  j["disc_expert_mean"] = st.disc_expert_mean;
  j["disc_policy_mean"] = st.disc_policy_mean;
  j["disc_gp"] = st.disc_gp;
  j["style_reward_mean"] = st.style_reward_mean;
  j["curriculum"] = st.curriculum;
  return j.dump();
}

std::string timing_json_line(const rl::IterStats& st) {
  json j;
  j["iteration"] = st.iteration;
  j["wall_ms"] = st.wall_ms;
  return j.dump();
}

void append_line(const std::string& path, const std::string& line) {
  std::ofstream out(path, std::ios::app | std::ios::binary);
  if (!out) throw std::runtime_error("metrics: cannot open for append: " + path);
  out << line << "\n";
  if (!out) throw std::runtime_error("metrics: write failed: " + path);
}

std::vector<json> read_metrics(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("metrics: cannot open: " + path);
  std::vector<json> rows;
  std::string line;
  int line_no = 0;
  int64_t last_iter = -1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw std::runtime_error("metrics: " + path + ":" + std::to_string(line_no) +
                               ": bad JSON: " + e.what());
    }
    if (!j.contains("iteration") || !j["iteration"].is_number_integer())
      throw std::runtime_error("metrics: " + path + ":" + std::to_string(line_no) +
                               ": missing iteration");
    const int64_t it = j["iteration"].get<int64_t>();
    if (it <= last_iter)
      throw std::runtime_error("metrics: " + path + ":" + std::to_string(line_no) +
                               ": iteration not increasing");
    last_iter = it;
    rows.push_back(std::move(j));
  }
  return rows;
}

}  // namespace keyloco::cli
