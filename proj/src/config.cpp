#include "keyloco/cli/config.hpp"

#include "json.hpp"

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace keyloco::cli {

namespace {

using nlohmann::json;

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw ConfigError("config: " + (path.empty() ? what : path + ": " + what));
}

std::string join(const std::string& base, const std::string& key) {
  return base.empty() ? key : base + "." + key;
}

// Strict object view: every key must be consumed by a getter, leftovers are
// reported as unknown with their full path. Type mismatches never coerce.
class Obj {
 public:
  Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(path_, "expected an object");
  }

  const json* child(const char* key) {
    auto it = j_.find(key);
    if (it == j_.end()) return nullptr;
    seen_.insert(key);
    return &*it;
  }

  void get_bool(const char* key, bool& out) {
    if (const json* v = child(key)) {
      if (!v->is_boolean()) fail(join(path_, key), "expected true or false");
      out = v->get<bool>();
    }
  }

  void get_int(const char* key, int& out) {
    if (const json* v = child(key)) {
      if (!v->is_number_integer()) fail(join(path_, key), "expected an integer");
      out = v->get<int>();
    }
  }

  void get_u64(const char* key, uint64_t& out) {
    if (const json* v = child(key)) {
      if (!v->is_number_integer() || (v->is_number_integer() && !v->is_number_unsigned() &&
                                      v->get<int64_t>() < 0))
        fail(join(path_, key), "expected a non-negative integer");
      out = v->get<uint64_t>();
    }
  }

  void get_double(const char* key, double& out) {
    if (const json* v = child(key)) {
      if (!v->is_number()) fail(join(path_, key), "expected a number");
      out = v->get<double>();
    }
  }

  void get_string(const char* key, std::string& out) {
    if (const json* v = child(key)) {
      if (!v->is_string()) fail(join(path_, key), "expected a string");
      out = v->get<std::string>();
    }
  }

  // [lo, hi] pairs
  void get_int_pair(const char* key, int& lo, int& hi) {
    if (const json* v = child(key)) {
      if (!v->is_array() || v->size() != 2 || !(*v)[0].is_number_integer() ||
          !(*v)[1].is_number_integer())
        fail(join(path_, key), "expected [lo, hi] integers");
      lo = (*v)[0].get<int>();
      hi = (*v)[1].get<int>();
    }
  }

  void get_double_pair(const char* key, double& lo, double& hi) {
    if (const json* v = child(key)) {
      if (!v->is_array() || v->size() != 2 || !(*v)[0].is_number() || !(*v)[1].is_number())
        fail(join(path_, key), "expected [lo, hi] numbers");
      lo = (*v)[0].get<double>();
      hi = (*v)[1].get<double>();
    }
  }

  void get_ints(const char* key, std::vector<int>& out) {
    if (const json* v = child(key)) {
      if (!v->is_array()) fail(join(path_, key), "expected an array of integers");
      std::vector<int> tmp;
      for (size_t i = 0; i < v->size(); ++i) {
        if (!(*v)[i].is_number_integer())
          fail(join(path_, key) + "[" + std::to_string(i) + "]", "expected an integer");
        tmp.push_back((*v)[i].get<int>());
      }
      out = std::move(tmp);
    }
  }

  void get_doubles(const char* key, std::vector<double>& out) {
    if (const json* v = child(key)) {
      if (!v->is_array()) fail(join(path_, key), "expected an array of numbers");
      std::vector<double> tmp;
      for (size_t i = 0; i < v->size(); ++i) {
        if (!(*v)[i].is_number())
          fail(join(path_, key) + "[" + std::to_string(i) + "]", "expected a number");
        tmp.push_back((*v)[i].get<double>());
      }
      out = std::move(tmp);
    }
  }

  void finish() {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) fail(join(path_, it.key()), "unknown key");
  }

  const std::string& path() const { return path_; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

rl::Group parse_group(const std::string& s, const std::string& path) {
  if (s == "regularization") return rl::Group::regularization;
  if (s == "style") return rl::Group::style;
  if (s == "goal") return rl::Group::goal;
  fail(path, "unknown reward group '" + s + "' (regularization, style, goal)");
}

const char* group_key(rl::Group g) {
  switch (g) {
    case rl::Group::regularization: return "regularization";
    case rl::Group::style: return "style";
    case rl::Group::goal: return "goal";
  }
  return "?";
}

void parse_env(const json& j, const std::string& path, sim::EnvConfig& e) {
  Obj o(j, path);
  o.get_int("nj", e.nj);
  o.get_double("dt", e.dt);
  o.get_double("a_max", e.a_max);
  o.get_double("alpha_max", e.alpha_max);
  o.get_double("c_v", e.c_v);
  o.get_double("c_w", e.c_w);
  o.get_double("kp", e.kp);
  o.get_double("kd", e.kd);
  o.get_double("theta_hard", e.theta_hard);
  o.get_double("theta_soft", e.theta_soft);
  o.get_double("joint_target_scale", e.joint_target_scale);
  o.get_double("theta_ddot_max", e.theta_ddot_max);
  o.get_int("max_steps", e.max_steps);
  o.get_double("diverge_bound", e.diverge_bound);
  o.get_bool("push_enabled", e.push_enabled);
  o.get_double("push_prob", e.push_prob);
  o.get_double("push_vmax", e.push_vmax);
  o.finish();
}

void parse_keyframes(const json& j, const std::string& path, rl::TrainConfig& t) {
  Obj o(j, path);
  o.get_int("max", t.tokens.max_keyframes);
  o.get_bool("variable", t.variable_keyframes);
  o.get_double("horizon_past", t.tokens.horizon_past);
  o.get_double("tt_scale", t.tokens.tt_scale);
  o.get_int_pair("interval", t.ranges.interval_lo, t.ranges.interval_hi);
  o.get_double_pair("radius", t.ranges.radius_lo, t.ranges.radius_hi);
  o.get_double("dir_range", t.ranges.dir_range);
  o.get_double("dyaw_range", t.ranges.dyaw_range);
  if (const json* v = o.child("components")) {
    if (!v->is_array()) fail(join(path, "components"), "expected an array of strings");
    t.components = keyframes::GoalComponents{false, false, false};
    for (size_t i = 0; i < v->size(); ++i) {
      const std::string p = join(path, "components") + "[" + std::to_string(i) + "]";
      if (!(*v)[i].is_string()) fail(p, "expected a string");
      const std::string s = (*v)[i].get<std::string>();
      if (s == "position") t.components.position = true;
      else if (s == "yaw") t.components.yaw = true;
      else if (s == "posture") t.components.posture = true;
      else fail(p, "unknown goal component '" + s + "' (position, yaw, posture)");
    }
    if (!t.components.position && !t.components.yaw && !t.components.posture)
      fail(join(path, "components"), "needs at least one goal component");
  }
  std::string vis;
  o.get_string("visibility", vis);
  if (!vis.empty()) {
    if (vis == "all_goals") t.visibility = keyframes::GoalVisibility::all_goals;
    else if (vis == "next_goal_only") t.visibility = keyframes::GoalVisibility::next_goal_only;
    else fail(join(path, "visibility"), "expected 'all_goals' or 'next_goal_only'");
  }
  o.get_double("curriculum_pmax", t.curriculum_pmax);
  o.get_double("rsi_prob", t.rsi_prob);
  o.finish();
}

void parse_encoder(const json& j, const std::string& path, nets::EncoderConfig& e) {
  Obj o(j, path);
  o.get_int("layers", e.num_layers);
  o.get_int("heads", e.num_heads);
  o.get_int("model_dim", e.model_dim);
  o.get_int("ff_dim", e.ff_dim);
  o.finish();
}

void parse_networks(const json& j, const std::string& path, rl::TrainConfig& t) {
  Obj o(j, path);
  o.get_ints("trunk", t.trunk_hidden);
  o.get_ints("critic", t.critic_hidden);
  o.get_ints("disc", t.disc_hidden);
  std::string ci;
  o.get_string("critic_input", ci);
  if (!ci.empty()) {
    if (ci == "tokens") t.critic_pooled = false;
    else if (ci == "pooled") t.critic_pooled = true;
    else fail(join(path, "critic_input"), "expected 'tokens' or 'pooled'");
  }
  o.finish();
}

void parse_algo(const json& j, const std::string& path, rl::TrainConfig& t) {
  Obj o(j, path);
  o.get_int("num_envs", t.num_envs);
  o.get_int("horizon", t.horizon);
  o.get_double("gamma", t.gamma);
  o.get_double("lam", t.lam);
  o.get_double("clip", t.clip_eps);
  o.get_double("entropy", t.entropy_coeff);
  o.get_double("target_kl", t.target_kl);
  o.get_double("lr", t.lr);
  o.get_double("lr_min", t.lr_min);
  o.get_double("lr_max", t.lr_max);
  o.get_bool("adaptive_lr", t.adaptive_lr);
  o.get_int("epochs", t.epochs);
  o.get_int("minibatches", t.minibatches);
  std::string vt;
  o.get_string("value_target", vt);
  if (!vt.empty()) {
    if (vt == "gae_return") t.value_target = rl::ValueTarget::gae_return;
    else if (vt == "one_step_td") t.value_target = rl::ValueTarget::one_step_td;
    else fail(join(path, "value_target"), "expected 'gae_return' or 'one_step_td'");
  }
  o.finish();
}

void parse_rewards(const json& j, const std::string& path, rl::TrainConfig& t) {
  Obj o(j, path);
  if (const json* v = o.child("groups")) {
    if (!v->is_array() || v->empty()) fail(join(path, "groups"), "expected a non-empty array");
    std::vector<rl::Group> gs;
    for (size_t i = 0; i < v->size(); ++i) {
      const std::string p = join(path, "groups") + "[" + std::to_string(i) + "]";
      if (!(*v)[i].is_string()) fail(p, "expected a string");
      gs.push_back(parse_group((*v)[i].get<std::string>(), p));
    }
    t.groups = std::move(gs);
  }
  o.get_doubles("weights", t.group_weights);
  o.get_bool("multi_critic", t.multi_critic);
  o.finish();
}

void parse_discriminator(const json& j, const std::string& path, rl::TrainConfig& t) {
  Obj o(j, path);
  o.get_double("lr", t.disc_lr);
  o.get_int("updates", t.disc_updates);
  o.get_int("batch", t.disc_batch);
  o.get_double("w_gp", t.w_gp);
  o.finish();
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: not valid JSON: ") + e.what());
  }

  RunConfig rc;
  Obj o(j, "");
  o.get_int("version", rc.version);
  if (rc.version != 1) fail("version", "unsupported config version " + std::to_string(rc.version));
  o.get_string("dataset", rc.dataset);
  o.get_string("out_dir", rc.out_dir);
  o.get_int("checkpoint_every", rc.checkpoint_every);
  o.get_u64("seed", rc.train.seed);
  o.get_int("iterations", rc.train.iterations);

  if (const json* v = o.child("env")) parse_env(*v, "env", rc.train.env);
  if (const json* v = o.child("keyframes")) parse_keyframes(*v, "keyframes", rc.train);
  if (const json* v = o.child("encoder")) parse_encoder(*v, "encoder", rc.train.encoder);
  if (const json* v = o.child("networks")) parse_networks(*v, "networks", rc.train);
  if (const json* v = o.child("algo")) parse_algo(*v, "algo", rc.train);
  if (const json* v = o.child("rewards")) parse_rewards(*v, "rewards", rc.train);
  if (const json* v = o.child("discriminator")) parse_discriminator(*v, "discriminator", rc.train);
  o.finish();

  if (rc.checkpoint_every < 1) fail("checkpoint_every", "must be >= 1");
  if (rc.train.iterations < 1) fail("iterations", "must be >= 1");
  if (rc.train.ranges.interval_lo < 1 || rc.train.ranges.interval_hi < rc.train.ranges.interval_lo)
    fail("keyframes.interval", "need 1 <= lo <= hi");
  if (rc.train.ranges.radius_lo < 0 || rc.train.ranges.radius_hi < rc.train.ranges.radius_lo)
    fail("keyframes.radius", "need 0 <= lo <= hi");
  if (rc.train.tokens.max_keyframes < 1) fail("keyframes.max", "must be >= 1");
  try {
    rc.train.validate();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return rc;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("config: cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string serialize_run_config(const RunConfig& rc) {
  const rl::TrainConfig& t = rc.train;
  json j;
  j["version"] = rc.version;
  j["dataset"] = rc.dataset;
  j["out_dir"] = rc.out_dir;
  j["checkpoint_every"] = rc.checkpoint_every;
  j["seed"] = t.seed;
  j["iterations"] = t.iterations;

  json& e = j["env"];
  e["nj"] = t.env.nj;
  e["dt"] = t.env.dt;
  e["a_max"] = t.env.a_max;
  e["alpha_max"] = t.env.alpha_max;
  e["c_v"] = t.env.c_v;
  e["c_w"] = t.env.c_w;
  e["kp"] = t.env.kp;
  e["kd"] = t.env.kd;
  e["theta_hard"] = t.env.theta_hard;
  e["theta_soft"] = t.env.theta_soft;
  e["joint_target_scale"] = t.env.joint_target_scale;
  e["theta_ddot_max"] = t.env.theta_ddot_max;
  e["max_steps"] = t.env.max_steps;
  e["diverge_bound"] = t.env.diverge_bound;
  e["push_enabled"] = t.env.push_enabled;
  e["push_prob"] = t.env.push_prob;
  e["push_vmax"] = t.env.push_vmax;

  json& k = j["keyframes"];
  k["max"] = t.tokens.max_keyframes;
  k["variable"] = t.variable_keyframes;
  k["horizon_past"] = t.tokens.horizon_past;
  k["tt_scale"] = t.tokens.tt_scale;
  k["interval"] = {t.ranges.interval_lo, t.ranges.interval_hi};
  k["radius"] = {t.ranges.radius_lo, t.ranges.radius_hi};
  k["dir_range"] = t.ranges.dir_range;
  k["dyaw_range"] = t.ranges.dyaw_range;
  {
    json comps = json::array();
    if (t.components.position) comps.push_back("position");
    if (t.components.yaw) comps.push_back("yaw");
    if (t.components.posture) comps.push_back("posture");
    k["components"] = comps;
  }
  k["visibility"] =
      t.visibility == keyframes::GoalVisibility::all_goals ? "all_goals" : "next_goal_only";
  k["curriculum_pmax"] = t.curriculum_pmax;
  k["rsi_prob"] = t.rsi_prob;

  json& enc = j["encoder"];
  enc["layers"] = t.encoder.num_layers;
  enc["heads"] = t.encoder.num_heads;
  enc["model_dim"] = t.encoder.model_dim;
  enc["ff_dim"] = t.encoder.ff_dim;

  json& n = j["networks"];
  n["trunk"] = t.trunk_hidden;
  n["critic"] = t.critic_hidden;
  n["disc"] = t.disc_hidden;
  n["critic_input"] = t.critic_pooled ? "pooled" : "tokens";

  json& a = j["algo"];
  a["num_envs"] = t.num_envs;
  a["horizon"] = t.horizon;
  a["gamma"] = t.gamma;
  a["lam"] = t.lam;
  a["clip"] = t.clip_eps;
  a["entropy"] = t.entropy_coeff;
  a["target_kl"] = t.target_kl;
  a["lr"] = t.lr;
  a["lr_min"] = t.lr_min;
  a["lr_max"] = t.lr_max;
  a["adaptive_lr"] = t.adaptive_lr;
  a["epochs"] = t.epochs;
  a["minibatches"] = t.minibatches;
  a["value_target"] = t.value_target == rl::ValueTarget::gae_return ? "gae_return" : "one_step_td";

  json& r = j["rewards"];
  {
    json gs = json::array();
    for (rl::Group g : t.groups) gs.push_back(group_key(g));
    r["groups"] = gs;
  }
  r["weights"] = t.group_weights;
  r["multi_critic"] = t.multi_critic;

  json& d = j["discriminator"];
  d["lr"] = t.disc_lr;
  d["updates"] = t.disc_updates;
  d["batch"] = t.disc_batch;
  d["w_gp"] = t.w_gp;

  return j.dump(2) + "\n";
}

std::string config_hash(const RunConfig& rc) {
  RunConfig c = rc;
  // The hash identifies training semantics. Where outputs land, how often
  // snapshots are taken and when to stop are not part of that, so a resumed
  // or extended run still matches its checkpoints. The dataset path string
  // is also dropped: the same file reached by a different path is the same
  // input (the stored config.json still records the path used).
  c.out_dir.clear();
  c.dataset.clear();
  c.checkpoint_every = 1;
  c.train.iterations = 1;
  const std::string s = serialize_run_config(c);
  uint64_t h = 1469598103934665603ULL;  // FNV-1a 64
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace keyloco::cli
