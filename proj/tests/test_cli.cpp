#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "keyloco/cli/checkpoint.hpp"
#include "keyloco/cli/config.hpp"
#include "keyloco/cli/experiments.hpp"
#include "keyloco/cli/metrics.hpp"
#include "keyloco/cli/run.hpp"
#include "keyloco/cli/scenario.hpp"
#include "keyloco/cli/svg.hpp"
#include "keyloco/sim/dataset_io.hpp"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace keyloco;
namespace fs = std::filesystem;

namespace {

const int kQuietEnv = []() {
  setenv("KEYLOCO_LOG", "quiet", 1);
  return 0;
}();

std::string tmp_dir(const std::string& leaf) {
  const fs::path p = fs::temp_directory_path() / "keyloco_cli_test" / leaf;
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(bool(in));
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template <typename F>
std::string thrown_message(F&& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

bool contains(const std::string& hay, const std::string& needle) {
  return hay.find(needle) != std::string::npos;
}

sim::ReferenceDataset tiny_dataset() {
  sim::DatasetGenConfig dc;
  dc.num_clips = 3;
  dc.duration_lo = 2.0;
  dc.duration_hi = 3.0;
  return sim::generate_dataset(dc, 11);
}

cli::RunConfig tiny_run_config(const std::string& out_dir, const std::string& dataset) {
  cli::RunConfig rc;
  rc.out_dir = out_dir;
  rc.dataset = dataset;
  rc.checkpoint_every = 2;
  rc.train.num_envs = 4;
  rc.train.horizon = 8;
  rc.train.iterations = 4;
  rc.train.seed = 3;
  rc.train.tokens.max_keyframes = 2;
  rc.train.ranges.interval_lo = 5;
  rc.train.ranges.interval_hi = 10;
  rc.train.encoder = {1, 1, 16, 32, 0};
  rc.train.trunk_hidden = {16};
  rc.train.critic_hidden = {16};
  rc.train.disc_hidden = {16};
  rc.train.epochs = 2;
  rc.train.minibatches = 2;
  rc.train.env.push_enabled = false;
  return rc;
}

std::string write_tiny_dataset(const std::string& dir) {
  const std::string path = dir + "/ds.bin";
  sim::save_dataset(path, tiny_dataset(), sim::DatasetFormat::bin_f32);
  return path;
}

}  // namespace

TEST_CASE("config defaults and canonical round trip") {
  const cli::RunConfig rc = cli::parse_run_config("{}");
  CHECK(rc.train.num_envs == 256);
  CHECK(rc.train.horizon == 32);
  CHECK(rc.train.gamma == 0.99);
  CHECK(rc.train.groups.size() == 3);
  CHECK(rc.train.group_weights == std::vector<double>{0.1, 0.5, 0.5});
  CHECK(rc.train.multi_critic);
  CHECK(!rc.train.critic_pooled);
  CHECK(rc.train.visibility == keyframes::GoalVisibility::all_goals);
  CHECK(rc.train.ranges.interval_lo == 25);
  CHECK(rc.train.ranges.interval_hi == 50);
  CHECK(rc.train.components.position);
  CHECK(rc.train.components.yaw);
  CHECK(!rc.train.components.posture);

  const std::string s = cli::serialize_run_config(rc);
  CHECK(contains(s, "\"gae_return\""));
  CHECK(contains(s, "\"tokens\""));
  const cli::RunConfig back = cli::parse_run_config(s);
  CHECK(cli::serialize_run_config(back) == s);  // canonical fixed point
}

TEST_CASE("config parses every block") {
  const char* text = R"({
    "version": 1, "seed": 42, "iterations": 7, "dataset": "d.bin", "out_dir": "o",
    "checkpoint_every": 3,
    "env": {"nj": 3, "dt": 0.01, "push_enabled": true},
    "keyframes": {"max": 5, "variable": false, "interval": [10, 20], "radius": [0.2, 0.4],
                  "components": ["position", "posture"], "visibility": "next_goal_only",
                  "curriculum_pmax": 0.5, "rsi_prob": 0.3},
    "encoder": {"layers": 3, "heads": 2, "model_dim": 32, "ff_dim": 64},
    "networks": {"trunk": [32, 16], "critic": [8], "disc": [12], "critic_input": "pooled"},
    "algo": {"num_envs": 8, "horizon": 16, "gamma": 0.9, "lam": 0.8, "clip": 0.1,
             "entropy": 0.01, "target_kl": 0.05, "lr": 0.001, "lr_min": 1e-5, "lr_max": 0.1,
             "adaptive_lr": false, "epochs": 3, "minibatches": 2, "value_target": "one_step_td"},
    "rewards": {"groups": ["regularization", "goal"], "weights": [0.2, 0.8],
                "multi_critic": false},
    "discriminator": {"lr": 0.01, "updates": 5, "batch": 32, "w_gp": 2.5}
  })";
  const cli::RunConfig rc = cli::parse_run_config(text);
  CHECK(rc.train.seed == 42);
  CHECK(rc.train.iterations == 7);
  CHECK(rc.dataset == "d.bin");
  CHECK(rc.checkpoint_every == 3);
  CHECK(rc.train.env.nj == 3);
  CHECK(rc.train.env.dt == 0.01);
  CHECK(rc.train.env.push_enabled);
  CHECK(rc.train.tokens.max_keyframes == 5);
  CHECK(!rc.train.variable_keyframes);
  CHECK(rc.train.ranges.interval_lo == 10);
  CHECK(rc.train.ranges.radius_hi == 0.4);
  CHECK(rc.train.components.position);
  CHECK(!rc.train.components.yaw);
  CHECK(rc.train.components.posture);
  CHECK(rc.train.visibility == keyframes::GoalVisibility::next_goal_only);
  CHECK(rc.train.curriculum_pmax == 0.5);
  CHECK(rc.train.rsi_prob == 0.3);
  CHECK(rc.train.encoder.num_layers == 3);
  CHECK(rc.train.encoder.num_heads == 2);
  CHECK(rc.train.trunk_hidden == std::vector<int>{32, 16});
  CHECK(rc.train.critic_pooled);
  CHECK(rc.train.num_envs == 8);
  CHECK(!rc.train.adaptive_lr);
  CHECK(rc.train.value_target == rl::ValueTarget::one_step_td);
  CHECK(rc.train.groups == std::vector<rl::Group>{rl::Group::regularization, rl::Group::goal});
  CHECK(rc.train.group_weights == std::vector<double>{0.2, 0.8});
  CHECK(!rc.train.multi_critic);
  CHECK(rc.train.disc_lr == 0.01);
  CHECK(rc.train.disc_batch == 32);
}

TEST_CASE("config errors carry field paths") {
  CHECK(contains(thrown_message([] { cli::parse_run_config("{"); }), "not valid JSON"));
  CHECK(contains(thrown_message([] { cli::parse_run_config(R"({"bogus": 1})"); }),
                 "bogus: unknown key"));
  CHECK(contains(thrown_message([] { cli::parse_run_config(R"({"algo": {"gama": 1}})"); }),
                 "algo.gama"));
  CHECK(contains(thrown_message([] { cli::parse_run_config(R"({"algo": {"num_envs": 2.5}})"); }),
                 "algo.num_envs: expected an integer"));
  CHECK(contains(thrown_message([] { cli::parse_run_config(R"({"env": {"dt": "x"}})"); }),
                 "env.dt: expected a number"));
  CHECK(contains(
      thrown_message([] { cli::parse_run_config(R"({"keyframes": {"interval": [5]}})"); }),
      "keyframes.interval"));
  CHECK(contains(
      thrown_message([] { cli::parse_run_config(R"({"rewards": {"groups": ["stle"]}})"); }),
      "unknown reward group 'stle'"));
  CHECK(contains(thrown_message([] {
                   cli::parse_run_config(R"({"rewards": {"groups": ["goal"], "weights": [1, 2]}})");
                 }),
                 "align"));
  CHECK(contains(
      thrown_message([] { cli::parse_run_config(R"({"keyframes": {"components": []}})"); }),
      "at least one goal component"));
  CHECK(contains(thrown_message([] { cli::parse_run_config(R"({"version": 9})"); }),
                 "unsupported config version"));
  CHECK(contains(thrown_message([] { cli::parse_run_config(R"({"iterations": 0})"); }),
                 "iterations"));
}

TEST_CASE("config hash tracks semantics, not bookkeeping") {
  cli::RunConfig a;
  a.out_dir = "x";
  a.train.iterations = 100;
  a.checkpoint_every = 10;
  cli::RunConfig b;
  b.out_dir = "elsewhere";
  b.dataset = "/abs/path/to/the/same/data.bin";
  b.train.iterations = 900;
  b.checkpoint_every = 50;
  CHECK(cli::config_hash(a) == cli::config_hash(b));

  cli::RunConfig c = a;
  c.train.seed = 999;
  CHECK(cli::config_hash(c) != cli::config_hash(a));
  cli::RunConfig d = a;
  d.train.gamma = 0.95;
  CHECK(cli::config_hash(d) != cli::config_hash(a));
  CHECK(cli::config_hash(a).size() == 16);
}

TEST_CASE("scenario parse, serialize and validation") {
  const char* text = R"({
    "name": "demo",
    "keyframes": [
      {"t_step": 25, "position": [0.5, 0.1]},
      {"t_step": 50, "yaw": 0.3, "posture": [0.1, -0.2, 0.0, 0.4]}
    ]})";
  const cli::Scenario sc = cli::parse_scenario(text);
  CHECK(sc.name == "demo");
  REQUIRE(sc.kfs.frames.size() == 2);
  CHECK(sc.kfs.frames[0].has_position);
  CHECK(!sc.kfs.frames[0].has_yaw);
  CHECK(sc.kfs.frames[1].has_yaw);
  CHECK(sc.kfs.frames[1].has_posture);
  CHECK(sc.kfs.frames[1].theta.size() == 4);

  const cli::Scenario back = cli::parse_scenario(cli::serialize_scenario(sc));
  CHECK(cli::serialize_scenario(back) == cli::serialize_scenario(sc));

  CHECK(contains(thrown_message([] { cli::parse_scenario(R"({"keyframes": []})"); }),
                 "non-empty"));
  CHECK(contains(thrown_message([] {
                   cli::parse_scenario(R"({"keyframes": [{"t_step": 5}]})");
                 }),
                 "at least one of"));
  CHECK(contains(thrown_message([] {
                   cli::parse_scenario(
                       R"({"keyframes": [{"t_step": 9, "yaw": 0}, {"t_step": 9, "yaw": 1}]})");
                 }),
                 "strictly increasing"));
  CHECK(contains(thrown_message([] {
                   cli::parse_scenario(R"({"keyframes": [{"t_step": 5, "pos": [1, 2]}]})");
                 }),
                 "unknown key 'pos'"));
}

TEST_CASE("metrics lines append, read back and reject disorder") {
  const std::string dir = tmp_dir("metrics");
  const std::string path = dir + "/m.jsonl";

  rl::IterStats st;
  st.reward_mean = {{"goal", 0.5}, {"reg", 0.1}};
  st.value_loss = {0.1, 0.2};
  st.wall_ms = 123.0;
  for (int i = 0; i < 3; ++i) {
    st.iteration = i;
    st.kl = 0.01 * i;
    cli::append_line(path, cli::metrics_json_line(st));
  }
  const auto rows = cli::read_metrics(path);
  REQUIRE(rows.size() == 3);
  CHECK(rows[2].at("kl").get<double>() == doctest::Approx(0.02));
  CHECK(rows[0].at("reward").at("goal").get<double>() == 0.5);
  CHECK(!rows[0].contains("wall_ms"));  // timing lives in the sidecar
  CHECK(contains(cli::timing_json_line(st), "wall_ms"));

  st.iteration = 1;  // regression
  cli::append_line(path, cli::metrics_json_line(st));
  CHECK(contains(thrown_message([&] { cli::read_metrics(path); }), "not increasing"));

  const std::string bad = dir + "/bad.jsonl";
  cli::append_line(bad, "{oops");
  CHECK(contains(thrown_message([&] { cli::read_metrics(bad); }), "bad JSON"));
}

TEST_CASE("svg writers emit deterministic plots") {
  const std::string dir = tmp_dir("svg");
  cli::Series a{"alpha", "#ff0000", {0, 1, 2, 3}, {0.0, 0.5, 0.25, 1.0}};
  cli::Series b{"beta", "#0000ff", {0, 1, 2, 3}, {1.0, 0.75, 0.5, 0.0}};
  const std::string path = dir + "/chart.svg";
  cli::write_line_chart(path, "demo", "iter", "value", {a, b});
  const std::string first = slurp(path);
  CHECK(contains(first, "<svg"));
  CHECK(contains(first, "alpha"));
  size_t polylines = 0;
  for (size_t p = first.find("<polyline"); p != std::string::npos;
       p = first.find("<polyline", p + 1))
    ++polylines;
  CHECK(polylines == 2);  // one per series

  cli::write_line_chart(path, "demo", "iter", "value", {a, b});
  CHECK(slurp(path) == first);  // idempotent re-export

  cli::write_xy_chart(dir + "/xy.svg", "траектория", {a}, {{0.5, 0.5, "goal"}});
  CHECK(contains(slurp(dir + "/xy.svg"), "goal"));
}

TEST_CASE("checkpoint round trip is bitwise") {
  const std::string dir = tmp_dir("ckpt");
  const std::string ds_path = write_tiny_dataset(dir);
  const cli::RunConfig rc = tiny_run_config(dir + "/run", ds_path);

  auto a = cli::make_trainer(rc);
  a->iterate();
  a->iterate();
  cli::save_checkpoint(dir + "/c1", *a, "testhash");

  const cli::CheckpointInfo info = cli::read_checkpoint_info(dir + "/c1");
  CHECK(info.iteration == 2);
  CHECK(info.config_hash == "testhash");
  CHECK(info.lr == a->learning_rate());

  auto b = cli::make_trainer(rc);
  cli::load_checkpoint(dir + "/c1", *b);
  CHECK(b->iteration() == 2);
  CHECK(b->learning_rate() == a->learning_rate());

  auto pa = a->named_params(), pb = b->named_params();
  REQUIRE(pa.size() == pb.size());
  for (size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].name == pb[i].name);
    REQUIRE(pa[i].arr->size() == pb[i].arr->size());
    CHECK(std::memcmp(pa[i].arr->data.data(), pb[i].arr->data.data(),
                      pa[i].arr->size() * sizeof(float)) == 0);
  }
  auto oa = a->optimizer_snapshots(), ob = b->optimizer_snapshots();
  REQUIRE(oa.size() == ob.size());
  for (size_t i = 0; i < oa.size(); ++i) {
    CHECK(oa[i].name == ob[i].name);
    CHECK(oa[i].steps == ob[i].steps);
    REQUIRE(oa[i].state.size() == ob[i].state.size());
    for (size_t k = 0; k < oa[i].state.size(); ++k)
      CHECK(std::memcmp(oa[i].state[k].data.data(), ob[i].state[k].data.data(),
                        oa[i].state[k].size() * sizeof(float)) == 0);
  }

  // forward outputs after load match bitwise: deterministic eval twice
  const rl::EvalReport ra = a->evaluate(2, 77, std::nullopt, false);
  const rl::EvalReport rb = b->evaluate(2, 77, std::nullopt, false);
  CHECK(ra.overall.pos_mean == rb.overall.pos_mean);
  CHECK(ra.overall.yaw_mean_deg == rb.overall.yaw_mean_deg);
  CHECK(ra.goal_reward_mean == rb.goal_reward_mean);

  // a second save emits byte-identical files
  cli::save_checkpoint(dir + "/c2", *b, "testhash");
  CHECK(slurp(dir + "/c1/params.bin") == slurp(dir + "/c2/params.bin"));
  CHECK(slurp(dir + "/c1/manifest.json") == slurp(dir + "/c2/manifest.json"));
}

TEST_CASE("checkpoint rejects mismatched networks") {
  const std::string dir = tmp_dir("ckpt_bad");
  const std::string ds_path = write_tiny_dataset(dir);
  const cli::RunConfig rc = tiny_run_config(dir + "/run", ds_path);
  auto a = cli::make_trainer(rc);
  cli::save_checkpoint(dir + "/c", *a, "h");

  cli::RunConfig other = rc;
  other.train.trunk_hidden = {24};
  auto b = cli::make_trainer(other);
  CHECK(contains(thrown_message([&] { cli::load_checkpoint(dir + "/c", *b); }), "mismatch"));
}

TEST_CASE("train_run writes a complete, deterministic run directory") {
  const std::string dir = tmp_dir("train");
  const std::string ds_path = write_tiny_dataset(dir);

  cli::RunConfig rc1 = tiny_run_config(dir + "/r1", ds_path);
  REQUIRE(cli::train_run(rc1) == 0);
  CHECK(fs::exists(dir + "/r1/config.json"));
  CHECK(fs::exists(dir + "/r1/checkpoint/manifest.json"));
  CHECK(fs::exists(dir + "/r1/checkpoint_iter_000002/manifest.json"));
  CHECK(fs::exists(dir + "/r1/timing.jsonl"));

  const auto rows = cli::read_metrics(dir + "/r1/metrics.jsonl");
  REQUIRE(rows.size() == 4);
  CHECK(rows.front().at("iteration").get<int>() == 0);
  CHECK(rows.back().at("iteration").get<int>() == 3);

  // stored config parses back to the same canonical form
  const cli::RunConfig stored = cli::load_run_config(dir + "/r1/config.json");
  CHECK(cli::serialize_run_config(stored) == cli::serialize_run_config(rc1));

  cli::RunConfig rc2 = tiny_run_config(dir + "/r2", ds_path);
  REQUIRE(cli::train_run(rc2) == 0);
  CHECK(slurp(dir + "/r1/metrics.jsonl") == slurp(dir + "/r2/metrics.jsonl"));
}

TEST_CASE("train_run resume extends the metrics stream without discontinuity") {
  const std::string dir = tmp_dir("resume");
  const std::string ds_path = write_tiny_dataset(dir);

  cli::RunConfig rc = tiny_run_config(dir + "/r", ds_path);
  REQUIRE(cli::train_run(rc) == 0);
  const std::string four = slurp(dir + "/r/metrics.jsonl");

  rc.train.iterations = 6;  // extend the same run
  REQUIRE(cli::train_run(rc, dir + "/r/checkpoint") == 0);
  const auto rows = cli::read_metrics(dir + "/r/metrics.jsonl");
  REQUIRE(rows.size() == 6);
  CHECK(rows.back().at("iteration").get<int>() == 5);
  const std::string six = slurp(dir + "/r/metrics.jsonl");
  CHECK(six.substr(0, four.size()) == four);  // old lines untouched

  // resuming from an older periodic checkpoint truncates the stale tail
  rc.train.iterations = 4;
  REQUIRE(cli::train_run(rc, dir + "/r/checkpoint_iter_000002") == 0);
  const auto rows2 = cli::read_metrics(dir + "/r/metrics.jsonl");
  REQUIRE(rows2.size() == 4);

  // a different config cannot resume this run
  cli::RunConfig other = rc;
  other.train.gamma = 0.9;
  CHECK(cli::train_run(other, dir + "/r/checkpoint") == 2);
}

TEST_CASE("ensure_run trains once and then reuses the artifacts") {
  const std::string dir = tmp_dir("ensure");
  const std::string ds_path = write_tiny_dataset(dir);
  cli::RunConfig rc = tiny_run_config(dir + "/r", ds_path);

  cli::ensure_run(rc, true);
  const std::string first = slurp(dir + "/r/metrics.jsonl");
  cli::ensure_run(rc, true);  // no retraining: bytes unchanged
  CHECK(slurp(dir + "/r/metrics.jsonl") == first);

  // partial run resumes to completion
  rc.train.iterations = 6;
  cli::ensure_run(rc, true);
  CHECK(cli::read_metrics(dir + "/r/metrics.jsonl").size() == 6);

  const cli::RunOutcome oc = cli::summarize_run(dir + "/r", "r");
  CHECK(oc.iterations == 6);
  CHECK(std::isfinite(oc.final_goal));
  CHECK(std::isfinite(oc.final_goal_per_tick));
}

TEST_CASE("trace CSV has the documented schema") {
  const std::string dir = tmp_dir("trace");
  const std::string ds_path = write_tiny_dataset(dir);
  const cli::RunConfig rc = tiny_run_config(dir + "/run", ds_path);
  auto tr = cli::make_trainer(rc);

  keyframes::KeyframeSet kfs;
  keyframes::Keyframe kf;
  kf.t_step = 6;
  kf.has_position = true;
  kf.px = 0.2;
  kf.py = 0.0;
  kfs.frames.push_back(kf);

  const auto rows = tr->trace_episode(kfs, 5);
  REQUIRE(!rows.empty());
  const std::string path = dir + "/traj_demo.csv";
  cli::write_trace_csv(path, rows, rc.train.env.nj);

  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header ==
        "t,px,py,yaw,vx,vy,omega,theta_0,theta_1,theta_2,theta_3,u_0,u_1,u_2,u_3,u_4,u_5,u_6");
  size_t lines = 0;
  for (std::string line; std::getline(in, line);)
    if (!line.empty()) ++lines;
  CHECK(lines == rows.size());
}

TEST_CASE("anticipation scenarios match the pinned timings and coordinates") {
  const auto scs = cli::anticipation_scenarios();
  REQUIRE(scs.size() == 3);
  CHECK(scs[0].name == "straight");
  CHECK(scs[1].name == "turn");
  CHECK(scs[2].name == "turn_slow");
  for (const auto& sc : scs) {
    REQUIRE(sc.kfs.frames.size() == 2);
    CHECK(sc.kfs.frames[0].t_step == 50);
    CHECK(sc.kfs.frames[0].px == 0.0);
    CHECK(sc.kfs.frames[0].py == 1.0);
    CHECK(sc.kfs.frames[0].has_position);
    CHECK(!sc.kfs.frames[0].has_yaw);
    CHECK(!sc.kfs.frames[0].has_posture);
  }
  CHECK(scs[0].kfs.frames[1].t_step == 75);
  CHECK(scs[0].kfs.frames[1].px == 0.0);
  CHECK(scs[0].kfs.frames[1].py == 2.0);
  CHECK(scs[1].kfs.frames[1].t_step == 75);
  CHECK(scs[1].kfs.frames[1].px == 1.0);
  CHECK(scs[1].kfs.frames[1].py == 1.5);
  CHECK(scs[2].kfs.frames[1].t_step == 100);
  CHECK(scs[2].kfs.frames[1].px == 1.0);
  CHECK(scs[2].kfs.frames[1].py == 1.5);
}
