#include "keyloco/cli/run.hpp"

#include "keyloco/cli/checkpoint.hpp"
#include "keyloco/cli/metrics.hpp"
#include "keyloco/sim/dataset_io.hpp"

#include "json.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>

namespace keyloco::cli {

namespace fs = std::filesystem;

bool log_quiet() {
  const char* v = std::getenv("KEYLOCO_LOG");
  return v && std::string(v) == "quiet";
}

std::unique_ptr<rl::Trainer<float>> make_trainer(const RunConfig& rc) {
  sim::ReferenceDataset ds;
  if (!rc.dataset.empty()) {
    if (!fs::exists(rc.dataset)) throw ConfigError("dataset file not found: " + rc.dataset);
    ds = sim::load_dataset(rc.dataset);
  }
  return std::make_unique<rl::Trainer<float>>(rc.train, std::move(ds));
}

namespace {

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot create " + path);
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return s;
}

// Drop metrics lines at or past the resume point so a rollback to an older
// checkpoint cannot leave duplicate iterations behind.
void truncate_jsonl(const std::string& path, int keep_below) {
  if (!fs::exists(path)) return;
  std::ifstream in(path, std::ios::binary);
  std::string line, kept;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (j.at("iteration").get<int>() >= keep_below) break;
    } catch (const std::exception&) {
      break;  // half-written tail from an interrupted run
    }
    kept += line;
    kept += "\n";
  }
  in.close();
  write_file(path, kept);
}

void print_progress(const rl::IterStats& st, int total) {
  std::printf("iter %5d/%d  lr %.2e  kl %.4f  clip %.2f  goal/kf %.3f  ep_len %.0f", st.iteration,
              total, st.lr, st.kl, st.clip_fraction, st.goal_per_keyframe, st.episode_len_mean);
  for (const auto& [k, v] : st.reward_mean) std::printf("  r_%s %.3f", k.c_str(), v);
  if (st.disc_loss != 0) std::printf("  disc %.3f", st.disc_loss);
  std::printf("  %.1fs\n", st.wall_ms / 1000.0);
  std::fflush(stdout);
}

}  // namespace

void write_trace_csv(const std::string& path,
                     const std::vector<rl::Trainer<float>::TraceRow>& rows, int nj) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot create " + path);
  out << "t,px,py,yaw,vx,vy,omega";
  for (int j = 0; j < nj; ++j) out << ",theta_" << j;
  for (int k = 0; k < 3 + nj; ++k) out << ",u_" << k;
  out << "\n";
  char buf[40];
  auto put = [&](double v, bool lead_comma = true) {
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    if (lead_comma) out << ',';
    out << buf;
  };
  for (const auto& r : rows) {
    put(r.t, false);
    put(r.state.px);
    put(r.state.py);
    put(r.state.yaw);
    put(r.state.vx);
    put(r.state.vy);
    put(r.state.omega);
    for (int j = 0; j < nj; ++j) put(r.state.theta[j]);
    for (double u : r.action) put(u);
    out << "\n";
  }
  if (!out) throw std::runtime_error("write failed: " + path);
}

int train_run(const RunConfig& rc, const std::string& resume_from) {
  if (rc.out_dir.empty()) {
    std::fprintf(stderr, "error: train needs an output directory\n");
    return 2;
  }

  std::unique_ptr<rl::Trainer<float>> tr;
  try {
    tr = make_trainer(rc);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    // config-shaped trainer rejections (style without dataset, bad sizes)
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }

  const std::string hash = config_hash(rc);
  fs::create_directories(rc.out_dir);
  const std::string config_path = rc.out_dir + "/config.json";
  const std::string canonical = serialize_run_config(rc);
  if (fs::exists(config_path) && !resume_from.empty()) {
    // resuming into an existing run dir: the configuration must not have
    // drifted, or the metrics stream would silently change meaning
    RunConfig prev;
    try {
      prev = load_run_config(config_path);
    } catch (const ConfigError& e) {
      std::fprintf(stderr, "error: existing %s unreadable: %s\n", config_path.c_str(), e.what());
      return 2;
    }
    if (config_hash(prev) != hash) {
      std::fprintf(stderr, "error: config does not match the one stored in %s\n",
                   config_path.c_str());
      return 2;
    }
  } else if (fs::exists(config_path) && read_file(config_path) != canonical) {
    std::fprintf(stderr, "error: %s already holds a different config; use --resume or a new dir\n",
                 config_path.c_str());
    return 2;
  }
  write_file(config_path, canonical);

  const std::string metrics_path = rc.out_dir + "/metrics.jsonl";
  const std::string timing_path = rc.out_dir + "/timing.jsonl";

  if (!resume_from.empty()) {
    try {
      const CheckpointInfo info = read_checkpoint_info(resume_from);
      if (!info.config_hash.empty() && info.config_hash != hash) {
        std::fprintf(stderr, "error: checkpoint %s was written by a different config\n",
                     resume_from.c_str());
        return 2;
      }
      load_checkpoint(resume_from, *tr);
    } catch (const std::exception& e) {
      std::fprintf(stderr, "error: %s\n", e.what());
      return 2;
    }
    truncate_jsonl(metrics_path, tr->iteration());
    truncate_jsonl(timing_path, tr->iteration());
    if (!log_quiet())
      std::printf("resumed from %s at iteration %d\n", resume_from.c_str(), tr->iteration());
  } else {
    fs::remove(metrics_path);
    fs::remove(timing_path);
  }
  const int total = rc.train.iterations;

  try {
    while (tr->iteration() < total) {
      const auto t0 = std::chrono::steady_clock::now();
      rl::IterStats st = tr->iterate();
      st.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                       .count();
      append_line(metrics_path, metrics_json_line(st));
      append_line(timing_path, timing_json_line(st));
      if (!log_quiet()) print_progress(st, total);

      if (tr->iteration() % rc.checkpoint_every == 0 && tr->iteration() < total) {
        char name[64];
        std::snprintf(name, sizeof(name), "/checkpoint_iter_%06d", tr->iteration());
        save_checkpoint(rc.out_dir + name, *tr, hash);
        save_checkpoint(rc.out_dir + "/checkpoint", *tr, hash);
      }
    }
    save_checkpoint(rc.out_dir + "/checkpoint", *tr, hash);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: training failed: %s\n", e.what());
    return 1;
  }

  if (!log_quiet()) std::printf("done: %d iterations, outputs in %s\n", total, rc.out_dir.c_str());
  return 0;
}

}  // namespace keyloco::cli
