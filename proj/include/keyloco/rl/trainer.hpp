#pragma once

#include "keyloco/autodiff/adam.hpp"
#include "keyloco/autodiff/tape.hpp"
#include "keyloco/keyframes/keyframes.hpp"
#include "keyloco/nets/critic.hpp"
#include "keyloco/nets/discriminator.hpp"
#include "keyloco/nets/policy.hpp"
#include "keyloco/rewards/rewards.hpp"
#include "keyloco/rl/gae.hpp"
#include "keyloco/sim/dataset.hpp"
#include "keyloco/sim/env.hpp"
#include "keyloco/util/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace keyloco::rl {

enum class Group { regularization, style, goal };

inline const char* group_name(Group g) {
  switch (g) {
    case Group::regularization: return "reg";
    case Group::style: return "style";
    case Group::goal: return "goal";
  }
  return "?";
}

struct TrainConfig {
  sim::EnvConfig env;
  int num_envs = 256;
  int horizon = 32;

  keyframes::TokenConfig tokens;
  keyframes::SampleRanges ranges;
  keyframes::GoalComponents components;
  keyframes::GoalVisibility visibility = keyframes::GoalVisibility::all_goals;
  bool variable_keyframes = true;  // n_k ~ U{1..max_keyframes} per episode
  double rsi_prob = 0.8;
  double curriculum_pmax = 0.8;

  nets::EncoderConfig encoder{2, 1, 64, 128, 0};  // token_dim is filled in by the trainer
  std::vector<int> trunk_hidden{128, 64};
  std::vector<int> critic_hidden{128, 64};
  std::vector<int> disc_hidden{128, 64};

  double gamma = 0.99, lam = 0.95;
  double clip_eps = 0.2, entropy_coeff = 0.02, target_kl = 0.02;
  double lr = 1e-4, lr_min = 1e-6, lr_max = 1e-2;
  bool adaptive_lr = true;
  int epochs = 5, minibatches = 4;
  ValueTarget value_target = ValueTarget::gae_return;

  // Reward groups and their advantage weights, aligned. multi_critic=false
  // collapses everything to one critic on the weighted reward sum.
  std::vector<Group> groups{Group::regularization, Group::style, Group::goal};
  std::vector<double> group_weights{0.1, 0.5, 0.5};
  bool multi_critic = true;
  // Critics read the full token sequence through their own encoders by
  // default; the pooled switch feeds them the policy encoder's feature
  // vector instead (frozen during the iteration), which costs a fraction
  // of the update time on one core.
  bool critic_pooled = false;

  double disc_lr = 3e-4;
  int disc_updates = 20, disc_batch = 768;
  double w_gp = 5.0;

  int iterations = 2000;
  uint64_t seed = 1;

  bool has_group(Group g) const {
    return std::find(groups.begin(), groups.end(), g) != groups.end();
  }
  int n_groups() const { return static_cast<int>(groups.size()); }

  void validate() const {
    env.validate();
    if (num_envs < 1 || horizon < 1) throw std::runtime_error("train: need envs and horizon");
    if (groups.empty() || groups.size() != group_weights.size())
      throw std::runtime_error("train: groups and weights must align");
    for (double w : group_weights)
      if (w < 0) throw std::runtime_error("train: negative group weight");
    if (!(gamma > 0 && gamma <= 1) || !(lam > 0 && lam <= 1))
      throw std::runtime_error("train: gamma, lambda must be in (0,1]");
    if (epochs < 1 || minibatches < 1) throw std::runtime_error("train: bad update counts");
    if (disc_batch % 2 != 0) throw std::runtime_error("train: disc batch must be even");
  }
};

// Everything one iteration collects, env-major: sample index = env*T + t.
struct RolloutBatch {
  int N = 0, T = 0, rows = 0, D = 0, A = 0, G = 0, Fs = 0;
  std::vector<double> tokens;                     // [N*T][rows*D]
  std::vector<uint8_t> masks;                     // [N*T][rows]
  std::vector<double> actions, old_mean;          // [N*T][A]
  std::vector<double> old_log_std;                // [A]
  std::vector<double> logp_old;                   // [N*T]
  std::vector<std::vector<double>> rewards;       // [G][N*T]
  std::vector<std::vector<double>> values;        // [G][N*T]
  std::vector<std::vector<double>> next_values;   // [G][N*T], used when done && boot
  std::vector<std::vector<double>> v_end;         // [G][N]
  std::vector<uint8_t> done, boot;                // [N*T]
  std::vector<double> style_pairs;                // [N*T][Fs]
  std::vector<double> pooled;                     // [N*T][model_dim], pooled critics only

  int n() const { return N * T; }
  int idx(int e, int t) const { return e * T + t; }
};

struct IterStats {
  int iteration = 0;
  double lr = 0;
  std::map<std::string, double> reward_mean;  // per group, per-step mean
  double goal_per_keyframe = 0;               // mean goal reward at ticks
  int keyframe_ticks = 0;
  double episode_len_mean = 0;
  int episodes_done = 0;
  std::map<std::string, int> terminations;
  double policy_loss = 0, entropy = 0, kl = 0, clip_fraction = 0;
  std::vector<double> value_loss;  // per critic
  double disc_loss = 0, disc_expert_mean = 0, disc_policy_mean = 0, disc_gp = 0;
  double style_reward_mean = 0;
  double curriculum = 0;  // P(random keyframes) at this iteration
  double wall_ms = 0;
};

struct EvalKfStat {
  int count = 0;
  double pos_mean = 0, pos_std = 0;
  double yaw_mean_deg = 0, yaw_std_deg = 0;
  double posture_rmse_mean_deg = 0, posture_rmse_std_deg = 0;
};

struct EvalReport {
  std::vector<EvalKfStat> by_ordinal;
  EvalKfStat overall;
  double goal_reward_mean = 0;  // per keyframe tick
};

template <typename S>
class Trainer {
 public:
  using Arr = autodiff::Array<S>;
  using Tape = autodiff::Tape<S>;
  using Var = autodiff::Var;

  Trainer(const TrainConfig& cfg, sim::ReferenceDataset dataset)
      : cfg_(cfg), ds_(std::move(dataset)), lr_(cfg.lr) {
    cfg_.validate();
    const int nj = cfg_.env.nj;
    if (cfg_.has_group(Group::style) && ds_.clips.empty())
      throw std::runtime_error("train: style group requires a reference dataset");
    if (!ds_.clips.empty() && ds_.nj != nj)
      throw std::runtime_error("train: dataset joint count differs from env");

    nets::EncoderConfig ec = cfg_.encoder;
    ec.token_dim = cfg_.tokens.token_dim(nj);
    policy_ = nets::Policy<S>::build(ec, cfg_.trunk_hidden, cfg_.env.action_dim(),
                                     cfg_.seed);
    const int n_critics = cfg_.multi_critic ? cfg_.n_groups() : 1;
    critics_ = nets::CriticSet<S>::build(n_critics, ec, cfg_.critic_hidden, cfg_.seed,
                                         !cfg_.critic_pooled, ec.model_dim);
    adam_policy_ = autodiff::Adam<S>{};
    adam_critics_.assign(n_critics, autodiff::Adam<S>{});
    if (style_active()) {
      disc_ = nets::Discriminator<S>::build(sim::style_feature_dim(nj), cfg_.disc_hidden,
                                            cfg_.seed);
      adam_disc_ = autodiff::Adam<S>{};
    }

    rng_act_ = Rng::derive(cfg_.seed, 0, 0x616374);      // action noise
    rng_episode_ = Rng::derive(cfg_.seed, 0, 0x6b6673);  // keyframe draws
    rng_update_ = Rng::derive(cfg_.seed, 0, 0x757064);   // minibatch shuffles
    rng_disc_ = Rng::derive(cfg_.seed, 0, 0x64736272);   // disc batches

    envs_.reserve(cfg_.num_envs);
    for (int e = 0; e < cfg_.num_envs; ++e) envs_.emplace_back(cfg_.env, cfg_.seed, e);
    kfs_.resize(cfg_.num_envs);
    ep_len_.assign(cfg_.num_envs, 0);
    for (int e = 0; e < cfg_.num_envs; ++e) reset_env(e);
  }

  const TrainConfig& config() const { return cfg_; }
  int iteration() const { return iter_; }
  double learning_rate() const { return lr_; }
  bool style_active() const { return cfg_.has_group(Group::style); }

  nets::Policy<S>& policy() { return policy_; }
  nets::CriticSet<S>& critics() { return critics_; }
  nets::Discriminator<S>& discriminator() { return disc_; }

  // One full learning iteration.
  IterStats iterate() {
    IterStats st;
    st.iteration = iter_;
    st.curriculum =
        ds_.clips.empty() ? 1.0 : keyframes::curriculum_mix(progress(), cfg_.curriculum_pmax);
    stats_ = &st;
    RolloutBatch rb = collect_rollout();
    fill_style_rewards(rb, st);
    fill_values(rb);
    AdvantageBundle bundle = advantages(rb);
    ppo_update(rb, bundle, st);
    if (style_active()) train_discriminator(rb, st);
    st.lr = lr_;
    stats_ = nullptr;
    ++iter_;
    return st;
  }

  // Mean-action or stochastic evaluation; fixed_kfs pins the scenario.
  // teleport_oracle bypasses the policy and lands exactly on each goal.
  EvalReport evaluate(int episodes, uint64_t seed,
                      const std::optional<keyframes::KeyframeSet>& fixed_kfs = std::nullopt,
                      bool stochastic = false, bool teleport_oracle = false,
                      std::optional<keyframes::GoalVisibility> vis_override = std::nullopt) {
    const int nj = cfg_.env.nj;
    const keyframes::GoalVisibility vis = vis_override.value_or(cfg_.visibility);
    sim::EnvConfig ecfg = cfg_.env;
    ecfg.push_enabled = false;
    ecfg.max_steps = 1 << 20;  // scenario length decides, not the timeout

    std::vector<std::vector<double>> pos_err, yaw_err, rmse_err;  // [ordinal][samples]
    std::vector<double> goal_rewards;

    for (int ep = 0; ep < episodes; ++ep) {
      sim::PlanarEnv env(ecfg, Rng::mix(seed ^ 0x65766100ULL), ep);
      env.reset_default();
      Rng rng = Rng::derive(seed, static_cast<uint64_t>(ep), 0x65766c);
      keyframes::KeyframeSet kfs;
      if (fixed_kfs) {
        kfs = *fixed_kfs;
      } else {
        kfs = keyframes::sample_random_keyframes(cfg_.ranges, cfg_.tokens.max_keyframes,
                                                 env.state(), cfg_.components,
                                                 ds_.clips.empty() ? nullptr : &ds_, nj, rng);
      }
      if (pos_err.size() < kfs.frames.size()) {
        pos_err.resize(kfs.frames.size());
        yaw_err.resize(kfs.frames.size());
        rmse_err.resize(kfs.frames.size());
      }
      const int last_step = kfs.last_goal_step();
      size_t next_kf = 0;
      while (env.state().t_step < last_step) {
        if (teleport_oracle) {
          teleport_step(env, kfs);
        } else {
          std::vector<double> u = policy_action(env.state(), kfs, vis, stochastic, rng);
          env.step(u);
        }
        const sim::EnvState& s = env.state();
        if (next_kf < kfs.frames.size() && kfs.frames[next_kf].t_step == s.t_step) {
          const keyframes::Keyframe& kf = kfs.frames[next_kf];
          keyframes::GoalError e = keyframes::goal_error(s, kf, cfg_.env.dt, nj);
          if (kf.has_position) pos_err[next_kf].push_back(e.pos_norm());
          if (kf.has_yaw) yaw_err[next_kf].push_back(rad_to_deg(std::abs(e.dyaw)));
          if (kf.has_posture) rmse_err[next_kf].push_back(rad_to_deg(e.posture_rmse()));
          goal_rewards.push_back(rewards::goal_reward_at(s, kf, nj));
          ++next_kf;
        }
      }
    }

    EvalReport rep;
    std::vector<double> all_pos, all_yaw, all_rmse;
    for (size_t k = 0; k < pos_err.size(); ++k) {
      EvalKfStat s;
      s.count = static_cast<int>(std::max({pos_err[k].size(), yaw_err[k].size(),
                                           rmse_err[k].size()}));
      mean_std(pos_err[k], s.pos_mean, s.pos_std);
      mean_std(yaw_err[k], s.yaw_mean_deg, s.yaw_std_deg);
      mean_std(rmse_err[k], s.posture_rmse_mean_deg, s.posture_rmse_std_deg);
      rep.by_ordinal.push_back(s);
      all_pos.insert(all_pos.end(), pos_err[k].begin(), pos_err[k].end());
      all_yaw.insert(all_yaw.end(), yaw_err[k].begin(), yaw_err[k].end());
      all_rmse.insert(all_rmse.end(), rmse_err[k].begin(), rmse_err[k].end());
    }
    rep.overall.count = static_cast<int>(std::max({all_pos.size(), all_yaw.size(), all_rmse.size()}));
    mean_std(all_pos, rep.overall.pos_mean, rep.overall.pos_std);
    mean_std(all_yaw, rep.overall.yaw_mean_deg, rep.overall.yaw_std_deg);
    mean_std(all_rmse, rep.overall.posture_rmse_mean_deg, rep.overall.posture_rmse_std_deg);
    double gr = 0;
    for (double v : goal_rewards) gr += v;
    rep.goal_reward_mean = goal_rewards.empty() ? 0 : gr / goal_rewards.size();
    return rep;
  }

  // Deterministic single-episode trace for export: rows of
  // (t, state, action) until the last keyframe tick.
  struct TraceRow {
    double t = 0;
    sim::EnvState state;
    std::vector<double> action;
  };
  std::vector<TraceRow> trace_episode(const keyframes::KeyframeSet& kfs, uint64_t seed) {
    sim::EnvConfig ecfg = cfg_.env;
    ecfg.push_enabled = false;
    ecfg.max_steps = 1 << 20;
    sim::PlanarEnv env(ecfg, Rng::mix(seed ^ 0x74726163ULL), 0);
    env.reset_default();
    Rng rng = Rng::derive(seed, 0, 0x747263);
    std::vector<TraceRow> rows;
    rows.push_back({0.0, env.state(), std::vector<double>(cfg_.env.action_dim(), 0.0)});
    const int last_step = kfs.last_goal_step();
    while (env.state().t_step < last_step) {
      std::vector<double> u = policy_action(env.state(), kfs, cfg_.visibility, false, rng);
      env.step(u);
      rows.push_back({env.state().clock, env.state(), u});
    }
    return rows;
  }

  // Named parameter views over every network, for checkpoints.
  struct ParamRef {
    std::string name;
    Arr* arr;
  };
  std::vector<ParamRef> named_params() {
    std::vector<ParamRef> out;
    auto add_store = [&](const std::string& prefix, nets::ParamStore<S>& st) {
      for (int i = 0; i < st.count(); ++i) out.push_back({prefix + "/" + st.name(i), &st.value(i)});
    };
    add_store("policy", policy_.store);
    for (int g = 0; g < critics_.size(); ++g)
      add_store("critic" + std::to_string(g), critics_.critics[g].store);
    if (style_active()) add_store("disc", disc_.store);
    return out;
  }

  // Optimizer snapshots for checkpointing: m then v in slot order, empty if
  // the optimizer never stepped.
  struct OptSnapshot {
    std::string name;
    std::vector<Arr> state;
    int64_t steps = 0;
  };
  std::vector<OptSnapshot> optimizer_snapshots() const {
    std::vector<OptSnapshot> out;
    auto add = [&](const std::string& prefix, const autodiff::Adam<S>& ad) {
      OptSnapshot s;
      s.name = prefix;
      s.steps = ad.steps();
      for (const Arr* a : ad.state()) s.state.push_back(*a);
      out.push_back(std::move(s));
    };
    add("adam_policy", adam_policy_);
    for (int g = 0; g < critics_.size(); ++g)
      add("adam_critic" + std::to_string(g), adam_critics_[g]);
    if (style_active()) add("adam_disc", adam_disc_);
    return out;
  }

  void restore_optimizer(const OptSnapshot& snap) {
    if (snap.name == "adam_policy") { adam_policy_.restore(snap.state, snap.steps); return; }
    if (snap.name == "adam_disc" && style_active()) {
      adam_disc_.restore(snap.state, snap.steps);
      return;
    }
    for (int g = 0; g < critics_.size(); ++g)
      if (snap.name == "adam_critic" + std::to_string(g)) {
        adam_critics_[g].restore(snap.state, snap.steps);
        return;
      }
    throw std::runtime_error("unknown optimizer '" + snap.name + "'");
  }

  void set_iteration(int it) { iter_ = it; }
  void set_learning_rate(double lr) { lr_ = lr; }

 private:
  TrainConfig cfg_;
  sim::ReferenceDataset ds_;
  nets::Policy<S> policy_;
  nets::CriticSet<S> critics_;
  nets::Discriminator<S> disc_;
  autodiff::Adam<S> adam_policy_, adam_disc_;
  std::vector<autodiff::Adam<S>> adam_critics_;
  std::vector<sim::PlanarEnv> envs_;
  std::vector<keyframes::KeyframeSet> kfs_;
  std::vector<int> ep_len_;
  Rng rng_act_{0}, rng_episode_{0}, rng_update_{0}, rng_disc_{0};
  double lr_;
  int iter_ = 0;
  IterStats* stats_ = nullptr;

  double progress() const {
    return cfg_.iterations <= 1 ? 1.0 : static_cast<double>(iter_) / cfg_.iterations;
  }

  static void mean_std(const std::vector<double>& v, double& mean, double& stddev) {
    mean = stddev = 0;
    if (v.empty()) return;
    for (double x : v) mean += x;
    mean /= v.size();
    for (double x : v) stddev += (x - mean) * (x - mean);
    stddev = std::sqrt(stddev / v.size());
  }

  void reset_env(int e) {
    envs_[e].reset(ds_.clips.empty() ? nullptr : &ds_, ds_.clips.empty() ? 0.0 : cfg_.rsi_prob);
    ep_len_[e] = 0;
    const int nj = cfg_.env.nj;
    const int n_k = cfg_.variable_keyframes
                        ? rng_episode_.uniform_int(1, cfg_.tokens.max_keyframes)
                        : cfg_.tokens.max_keyframes;
    const double p_random = ds_.clips.empty()
                                ? 1.0
                                : keyframes::curriculum_mix(progress(), cfg_.curriculum_pmax);
    if (rng_episode_.bernoulli(p_random)) {
      kfs_[e] = keyframes::sample_random_keyframes(cfg_.ranges, n_k, envs_[e].state(),
                                                   cfg_.components,
                                                   ds_.clips.empty() ? nullptr : &ds_, nj,
                                                   rng_episode_);
    } else {
      kfs_[e] = keyframes::sample_dataset_keyframes(cfg_.ranges, n_k, envs_[e].state(),
                                                    cfg_.components, ds_, nj, rng_episode_);
    }
  }

  // Stack per-env token sequences into one [N*rows, D] array.
  void stack_tokens(Arr& out, std::vector<uint8_t>& masks_out, int base_row,
                    const keyframes::TokenSequence& seq) {
    const int rows = cfg_.tokens.rows();
    const int D = seq.tokens.cols();
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < D; ++c)
        out.at(base_row + r, c) = static_cast<S>(seq.tokens.at(r, c));
      masks_out[base_row + r] = seq.masked[r];
    }
  }

  std::vector<double> policy_action(const sim::EnvState& s, const keyframes::KeyframeSet& kfs,
                                    keyframes::GoalVisibility vis, bool stochastic, Rng& rng) {
    const int nj = cfg_.env.nj;
    keyframes::TokenSequence seq =
        keyframes::build_tokens(s, kfs, cfg_.tokens, cfg_.env.dt, nj, vis);
    const int rows = cfg_.tokens.rows(), D = cfg_.tokens.token_dim(nj);
    Arr toks = Arr::zeros(rows, D);
    std::vector<uint8_t> masks(rows);
    stack_tokens(toks, masks, 0, seq);
    Tape t;
    t.check_finite = false;
    auto pv = policy_.store.attach(t);
    auto out = policy_.forward(t, pv, t.input(toks), masks, rows);
    Arr mean = t.val(out.mean);
    Arr ls = t.val(out.log_std);
    std::vector<double> u(cfg_.env.action_dim());
    for (int a = 0; a < cfg_.env.action_dim(); ++a) {
      u[a] = static_cast<double>(mean.at(0, a));
      if (stochastic) u[a] += std::exp(static_cast<double>(ls[a])) * rng.normal();
    }
    return u;
  }

  void teleport_step(sim::PlanarEnv& env, const keyframes::KeyframeSet& kfs) {
    sim::EnvState s = env.state();
    const int t_next = s.t_step + 1;
    for (const auto& kf : kfs.frames) {
      if (kf.t_step == t_next) {
        if (kf.has_position) { s.px = kf.px; s.py = kf.py; }
        if (kf.has_yaw) s.yaw = kf.yaw;
        if (kf.has_posture) s.theta = kf.theta;
        break;
      }
    }
    s.t_step = t_next;
    s.clock += cfg_.env.dt;
    env.set_state(s);
  }

  RolloutBatch collect_rollout() {
    const int N = cfg_.num_envs, T = cfg_.horizon, nj = cfg_.env.nj;
    const int rows = cfg_.tokens.rows(), D = cfg_.tokens.token_dim(nj);
    const int A = cfg_.env.action_dim(), G = cfg_.n_groups();
    const int Fs = sim::style_feature_dim(nj);

    RolloutBatch rb;
    rb.N = N; rb.T = T; rb.rows = rows; rb.D = D; rb.A = A; rb.G = G; rb.Fs = Fs;
    rb.tokens.assign(static_cast<size_t>(N) * T * rows * D, 0.0);
    rb.masks.assign(static_cast<size_t>(N) * T * rows, 0);
    rb.actions.assign(static_cast<size_t>(N) * T * A, 0.0);
    rb.old_mean.assign(static_cast<size_t>(N) * T * A, 0.0);
    rb.logp_old.assign(static_cast<size_t>(N) * T, 0.0);
    rb.rewards.assign(G, std::vector<double>(static_cast<size_t>(N) * T, 0.0));
    rb.values.assign(G, std::vector<double>(static_cast<size_t>(N) * T, 0.0));
    rb.next_values.assign(G, std::vector<double>(static_cast<size_t>(N) * T, 0.0));
    rb.v_end.assign(G, std::vector<double>(N, 0.0));
    rb.done.assign(static_cast<size_t>(N) * T, 0);
    rb.boot.assign(static_cast<size_t>(N) * T, 0);
    rb.style_pairs.assign(static_cast<size_t>(N) * T * Fs, 0.0);
    if (cfg_.critic_pooled)
      rb.pooled.assign(static_cast<size_t>(N) * T * cfg_.encoder.model_dim, 0.0);

    term_tokens_.clear();
    term_masks_.clear();
    term_sample_.clear();

    IterStats& st = *stats_;

    for (int t = 0; t < T; ++t) {
      // tokens for the whole env batch
      Arr toks = Arr::zeros(N * rows, D);
      std::vector<uint8_t> masks(static_cast<size_t>(N) * rows);
      for (int e = 0; e < N; ++e) {
        keyframes::TokenSequence seq = keyframes::build_tokens(
            envs_[e].state(), kfs_[e], cfg_.tokens, cfg_.env.dt, nj, cfg_.visibility);
        stack_tokens(toks, masks, e * rows, seq);
        const int i = rb.idx(e, t);
        for (int r = 0; r < rows; ++r) {
          for (int c = 0; c < D; ++c)
            rb.tokens[(static_cast<size_t>(i) * rows + r) * D + c] = seq.tokens.at(r, c);
          rb.masks[static_cast<size_t>(i) * rows + r] = seq.masked[r];
        }
      }

      // policy forward and action sampling; the pooled encoder features
      // double as the critics' observation when critic_pooled is on
      Arr mean, ls;
      {
        Tape tp;
        tp.check_finite = false;
        auto pv = policy_.store.attach(tp);
        Var pooled_v = policy_.enc.forward(tp, pv, tp.input(toks), masks, rows);
        Var mean_v = policy_.trunk.forward(tp, pv, pooled_v);
        mean = tp.val(mean_v);
        ls = tp.val(pv[policy_.log_std_id]);
        if (cfg_.critic_pooled) {
          const int M = cfg_.encoder.model_dim;
          const Arr& pl = tp.val(pooled_v);  // no ops follow, reference stays valid
          for (int e = 0; e < N; ++e)
            for (int c = 0; c < M; ++c)
              rb.pooled[static_cast<size_t>(rb.idx(e, t)) * M + c] =
                  static_cast<double>(pl.at(e, c));
        }
      }
      if (t == 0) {
        rb.old_log_std.resize(A);
        for (int a = 0; a < A; ++a) rb.old_log_std[a] = static_cast<double>(ls[a]);
      }
      const double log2pi = std::log(2.0 * kPi);
      for (int e = 0; e < N; ++e) {
        const int i = rb.idx(e, t);
        double logp = 0;
        std::vector<double> u(A);
        for (int a = 0; a < A; ++a) {
          const double mu = static_cast<double>(mean.at(e, a));
          const double lsd = static_cast<double>(ls[a]);
          const double eps = rng_act_.normal();
          u[a] = mu + std::exp(lsd) * eps;
          logp += -0.5 * eps * eps - lsd;
          rb.old_mean[static_cast<size_t>(i) * A + a] = mu;
          rb.actions[static_cast<size_t>(i) * A + a] = u[a];
        }
        rb.logp_old[i] = logp - 0.5 * A * log2pi;

        // step, rewards, termination
        sim::EnvState prev = envs_[e].state();
        envs_[e].step(u);
        const sim::EnvState& s = envs_[e].state();
        ++ep_len_[e];
        sim::style_features_from_states(prev, s, &rb.style_pairs[static_cast<size_t>(i) * Fs]);

        for (int g = 0; g < G; ++g) {
          switch (cfg_.groups[g]) {
            case Group::regularization:
              rb.rewards[g][i] = rewards::regularization_reward(envs_[e].derived(), s.theta,
                                                                cfg_.env.theta_soft);
              break;
            case Group::goal: {
              const double r = rewards::goal_reward(s, kfs_[e], nj);
              rb.rewards[g][i] = r;
              for (const auto& kf : kfs_[e].frames)
                if (kf.t_step == s.t_step) {
                  ++st.keyframe_ticks;
                  st.goal_per_keyframe += r;
                }
              break;
            }
            case Group::style:
              break;  // filled after collection by the discriminator
          }
        }

        sim::TermRecord tr = envs_[e].check_termination(kfs_[e].last_goal_step());
        if (tr.done) {
          rb.done[i] = 1;
          rb.boot[i] = tr.bootstrap ? 1 : 0;
          if (tr.bootstrap) {
            keyframes::TokenSequence seq = keyframes::build_tokens(
                s, kfs_[e], cfg_.tokens, cfg_.env.dt, nj, cfg_.visibility);
            for (int r = 0; r < rows; ++r) {
              for (int c = 0; c < D; ++c) term_tokens_.push_back(seq.tokens.at(r, c));
              term_masks_.push_back(seq.masked[r]);
            }
            term_sample_.push_back(i);
          }
          ++st.terminations[sim::term_name(tr.reason)];
          st.episode_len_mean += ep_len_[e];
          ++st.episodes_done;
          reset_env(e);
        }
      }
    }
    if (st.episodes_done > 0) st.episode_len_mean /= st.episodes_done;
    if (st.keyframe_ticks > 0) st.goal_per_keyframe /= st.keyframe_ticks;

    // truncation tokens at the horizon
    end_tokens_.clear();
    end_masks_.clear();
    for (int e = 0; e < N; ++e) {
      keyframes::TokenSequence seq = keyframes::build_tokens(
          envs_[e].state(), kfs_[e], cfg_.tokens, cfg_.env.dt, nj, cfg_.visibility);
      for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < D; ++c) end_tokens_.push_back(seq.tokens.at(r, c));
        end_masks_.push_back(seq.masked[r]);
      }
    }

    for (int g = 0; g < G; ++g) {
      double m = 0;
      for (double v : rb.rewards[g]) m += v;
      st.reward_mean[group_name(cfg_.groups[g])] = m / rb.n();
    }
    return rb;
  }

  // Discriminator scores over the rollout's transition pairs.
  void fill_style_rewards(RolloutBatch& rb, IterStats& st) {
    if (!style_active()) return;
    int style_g = -1;
    for (int g = 0; g < rb.G; ++g)
      if (cfg_.groups[g] == Group::style) style_g = g;
    const int n = rb.n(), Fs = rb.Fs;
    const int chunk = 4096;
    double sum = 0;
    for (int base = 0; base < n; base += chunk) {
      const int b = std::min(chunk, n - base);
      Arr x = Arr::zeros(b, Fs);
      for (int i = 0; i < b; ++i)
        for (int c = 0; c < Fs; ++c)
          x.at(i, c) = static_cast<S>(rb.style_pairs[static_cast<size_t>(base + i) * Fs + c]);
      Tape t;
      t.check_finite = false;
      auto dv = disc_.store.attach(t);
      Arr d = t.val(disc_.forward(t, dv, t.input(x)));
      for (int i = 0; i < b; ++i) {
        const double r = rewards::style_reward(static_cast<double>(d.at(i, 0)));
        rb.rewards[style_g][base + i] = r;
        sum += r;
      }
    }
    st.style_reward_mean = sum / n;
    st.reward_mean[group_name(Group::style)] = st.style_reward_mean;
  }

  // Critic values for every stored sequence, terminal and end states included.
  void fill_values(RolloutBatch& rb) {
    if (cfg_.critic_pooled) {
      fill_values_pooled(rb);
      return;
    }
    const int rows = rb.rows, D = rb.D, n = rb.n(), N = rb.N;
    const int n_term = static_cast<int>(term_sample_.size());
    const int total = n + n_term + N;
    const int chunk = 2048;  // sequences per forward

    for (int g = 0; g < critics_.size(); ++g) {
      const auto& critic = critics_.critics[g];
      for (int base = 0; base < total; base += chunk) {
        const int b = std::min(chunk, total - base);
        Arr toks = Arr::zeros(b * rows, D);
        std::vector<uint8_t> masks(static_cast<size_t>(b) * rows);
        for (int i = 0; i < b; ++i) {
          const int s = base + i;
          const double* src;
          const uint8_t* msrc;
          if (s < n) {
            src = &rb.tokens[static_cast<size_t>(s) * rows * D];
            msrc = &rb.masks[static_cast<size_t>(s) * rows];
          } else if (s < n + n_term) {
            src = &term_tokens_[static_cast<size_t>(s - n) * rows * D];
            msrc = &term_masks_[static_cast<size_t>(s - n) * rows];
          } else {
            src = &end_tokens_[static_cast<size_t>(s - n - n_term) * rows * D];
            msrc = &end_masks_[static_cast<size_t>(s - n - n_term) * rows];
          }
          for (int r = 0; r < rows; ++r) {
            for (int c = 0; c < D; ++c) toks.at(i * rows + r, c) = static_cast<S>(src[r * D + c]);
            masks[static_cast<size_t>(i) * rows + r] = msrc[r];
          }
        }
        Tape t;
        t.check_finite = false;
        auto cv = critics_.critics[g].store.attach(t);
        Arr v = t.val(critic.forward(t, cv, t.input(toks), masks, rows));
        for (int i = 0; i < b; ++i) {
          const int s = base + i;
          const double val = static_cast<double>(v.at(i, 0));
          if (s < n) rb.values[g][s] = val;
          else if (s < n + n_term) rb.next_values[g][term_sample_[s - n]] = val;
          else rb.v_end[g][s - n - n_term] = val;
        }
      }
    }
  }

  // Pooled variant: stored policy-encoder features stand in for the token
  // sequences; only terminal and horizon-end states need one extra encoder
  // pass.
  void fill_values_pooled(RolloutBatch& rb) {
    const int rows = rb.rows, D = rb.D, n = rb.n(), N = rb.N;
    const int M = cfg_.encoder.model_dim;
    const int n_term = static_cast<int>(term_sample_.size());

    std::vector<double> extra(static_cast<size_t>(n_term + N) * M);
    {
      const int b = n_term + N;
      Arr toks = Arr::zeros(b * rows, D);
      std::vector<uint8_t> masks(static_cast<size_t>(b) * rows);
      for (int i = 0; i < b; ++i) {
        const double* src = i < n_term ? &term_tokens_[static_cast<size_t>(i) * rows * D]
                                       : &end_tokens_[static_cast<size_t>(i - n_term) * rows * D];
        const uint8_t* msrc = i < n_term ? &term_masks_[static_cast<size_t>(i) * rows]
                                         : &end_masks_[static_cast<size_t>(i - n_term) * rows];
        for (int r = 0; r < rows; ++r) {
          for (int c = 0; c < D; ++c) toks.at(i * rows + r, c) = static_cast<S>(src[r * D + c]);
          masks[static_cast<size_t>(i) * rows + r] = msrc[r];
        }
      }
      Tape t;
      t.check_finite = false;
      auto pv = policy_.store.attach(t);
      const Arr& f = t.val(policy_.enc.forward(t, pv, t.input(toks), masks, rows));
      for (int i = 0; i < b; ++i)
        for (int c = 0; c < M; ++c)
          extra[static_cast<size_t>(i) * M + c] = static_cast<double>(f.at(i, c));
    }

    const int total = n + n_term + N;
    const int chunk = 8192;
    for (int g = 0; g < critics_.size(); ++g) {
      for (int base = 0; base < total; base += chunk) {
        const int b = std::min(chunk, total - base);
        Arr x = Arr::zeros(b, M);
        for (int i = 0; i < b; ++i) {
          const int s = base + i;
          const double* src =
              s < n ? &rb.pooled[static_cast<size_t>(s) * M] : &extra[static_cast<size_t>(s - n) * M];
          for (int c = 0; c < M; ++c) x.at(i, c) = static_cast<S>(src[c]);
        }
        Tape t;
        t.check_finite = false;
        auto cv = critics_.critics[g].store.attach(t);
        Arr v = t.val(critics_.critics[g].forward_pooled(t, cv, t.input(x)));
        for (int i = 0; i < b; ++i) {
          const int s = base + i;
          const double val = static_cast<double>(v.at(i, 0));
          if (s < n) rb.values[g][s] = val;
          else if (s < n + n_term) rb.next_values[g][term_sample_[s - n]] = val;
          else rb.v_end[g][s - n - n_term] = val;
        }
      }
    }
  }

  AdvantageBundle advantages(RolloutBatch& rb) {
    const int N = rb.N, T = rb.T;
    const int n_critics = critics_.size();
    // per-critic reward streams: raw groups, or the weighted sum for the
    // single-critic baseline
    std::vector<std::vector<double>> crit_rewards;
    if (cfg_.multi_critic) {
      crit_rewards = rb.rewards;
    } else {
      std::vector<double> combined(rb.n(), 0.0);
      for (int g = 0; g < rb.G; ++g)
        for (int i = 0; i < rb.n(); ++i) combined[i] += cfg_.group_weights[g] * rb.rewards[g][i];
      crit_rewards.push_back(std::move(combined));
    }

    adv_.assign(n_critics, std::vector<double>(rb.n(), 0.0));
    targets_.assign(n_critics, std::vector<double>(rb.n(), 0.0));
    std::vector<double> r(T), v(T), nv(T);
    std::vector<uint8_t> dn(T), bt(T);
    for (int g = 0; g < n_critics; ++g) {
      for (int e = 0; e < N; ++e) {
        for (int t = 0; t < T; ++t) {
          const int i = rb.idx(e, t);
          r[t] = crit_rewards[g][i];
          v[t] = rb.values[g][i];
          nv[t] = rb.next_values[g][i];
          dn[t] = rb.done[i];
          bt[t] = rb.boot[i];
        }
        GaeResult res = gae(r, v, dn, bt, nv, rb.v_end[g][e], cfg_.gamma, cfg_.lam,
                            cfg_.value_target);
        for (int t = 0; t < T; ++t) {
          adv_[g][rb.idx(e, t)] = res.adv[t];
          targets_[g][rb.idx(e, t)] = res.target[t];
        }
      }
    }

    const std::vector<double> mix_w =
        cfg_.multi_critic ? cfg_.group_weights : std::vector<double>{1.0};
    return mix_advantages(adv_, mix_w);
  }

  void ppo_update(const RolloutBatch& rb, const AdvantageBundle& bundle, IterStats& st) {
    const int n = rb.n(), rows = rb.rows, D = rb.D, A = rb.A;
    const int B_floor = n / cfg_.minibatches;
    st.value_loss.assign(critics_.size(), 0.0);
    int updates = 0;

    Arr old_ls = Arr::zeros(1, A);
    for (int a = 0; a < A; ++a) old_ls[a] = static_cast<S>(rb.old_log_std[a]);

    for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
      std::vector<int> perm = rng_update_.perm(n);
      int cursor = 0;
      for (int mb = 0; mb < cfg_.minibatches; ++mb) {
        const int B = B_floor + (mb < n % cfg_.minibatches ? 1 : 0);
        // gather the minibatch
        Arr toks = Arr::zeros(B * rows, D);
        std::vector<uint8_t> masks(static_cast<size_t>(B) * rows);
        Arr act = Arr::zeros(B, A), old_mu = Arr::zeros(B, A);
        Arr advb = Arr::zeros(B, 1), lpo = Arr::zeros(B, 1);
        const int M = cfg_.encoder.model_dim;
        Arr poolb = cfg_.critic_pooled ? Arr::zeros(B, M) : Arr();
        std::vector<Arr> tgt(critics_.size(), Arr::zeros(B, 1));
        for (int i = 0; i < B; ++i) {
          const int s = perm[cursor + i];
          const double* src = &rb.tokens[static_cast<size_t>(s) * rows * D];
          for (int r = 0; r < rows; ++r) {
            for (int c = 0; c < D; ++c) toks.at(i * rows + r, c) = static_cast<S>(src[r * D + c]);
            masks[static_cast<size_t>(i) * rows + r] = rb.masks[static_cast<size_t>(s) * rows + r];
          }
          for (int a = 0; a < A; ++a) {
            act.at(i, a) = static_cast<S>(rb.actions[static_cast<size_t>(s) * A + a]);
            old_mu.at(i, a) = static_cast<S>(rb.old_mean[static_cast<size_t>(s) * A + a]);
          }
          if (cfg_.critic_pooled)
            for (int c = 0; c < M; ++c)
              poolb.at(i, c) = static_cast<S>(rb.pooled[static_cast<size_t>(s) * M + c]);
          advb.at(i, 0) = static_cast<S>(bundle.mixed[s]);
          lpo.at(i, 0) = static_cast<S>(rb.logp_old[s]);
          for (int g = 0; g < critics_.size(); ++g)
            tgt[g].at(i, 0) = static_cast<S>(targets_[g][s]);
        }
        cursor += B;

        // policy step
        {
          Tape t;
          auto pv = policy_.store.attach(t);
          auto out = policy_.forward(t, pv, t.input(toks), masks, rows);
          Var logp = nets::gaussian_log_prob(t, out.mean, out.log_std, t.input(act));
          Var ratio = t.exp(t.sub(logp, t.input(lpo)));
          Var adv_in = t.input(advb);
          Var surr = t.mean(t.min_elem(
              t.mul(ratio, adv_in),
              t.mul(t.clamp(ratio, S(1.0 - cfg_.clip_eps), S(1.0 + cfg_.clip_eps)), adv_in)));
          Var ent = nets::gaussian_entropy(t, out.log_std);
          Var loss = t.scale(t.add(surr, t.scale(ent, S(cfg_.entropy_coeff))), S(-1));
          t.backward(loss);

          const double kl = nets::gaussian_kl(old_mu, old_ls, t.val(out.mean),
                                              t.val(out.log_std));
          if (cfg_.adaptive_lr) {
            if (kl > 2.0 * cfg_.target_kl) lr_ = std::max(lr_ / 2.0, cfg_.lr_min);
            else if (kl < cfg_.target_kl / 2.0) lr_ = std::min(lr_ * 1.5, cfg_.lr_max);
          }
          st.kl += kl;
          st.policy_loss += static_cast<double>(t.val(loss).data[0]);
          st.entropy = static_cast<double>(t.val(ent).data[0]);
          const Arr& rv = t.val(ratio);
          int clipped = 0;
          for (int i = 0; i < B; ++i)
            if (std::abs(static_cast<double>(rv.at(i, 0)) - 1.0) > cfg_.clip_eps) ++clipped;
          st.clip_fraction += static_cast<double>(clipped) / B;

          auto grads = policy_.store.grads(t, pv);
          adam_policy_.step(policy_.store.values(), grads, S(lr_));
        }

        // critics, independently
        for (int g = 0; g < critics_.size(); ++g) {
          Tape t;
          auto cv = critics_.critics[g].store.attach(t);
          Var v = cfg_.critic_pooled
                      ? critics_.critics[g].forward_pooled(t, cv, t.input(poolb))
                      : critics_.critics[g].forward(t, cv, t.input(toks), masks, rows);
          Var vloss = t.mean(t.square(t.sub(v, t.input(tgt[g]))));
          t.backward(vloss);
          st.value_loss[g] += static_cast<double>(t.val(vloss).data[0]);
          auto grads = critics_.critics[g].store.grads(t, cv);
          adam_critics_[g].step(critics_.critics[g].store.values(), grads, S(lr_));
        }
        ++updates;
      }
    }
    st.kl /= updates;
    st.policy_loss /= updates;
    st.clip_fraction /= updates;
    for (auto& v : st.value_loss) v /= updates;
  }

  void train_discriminator(const RolloutBatch& rb, IterStats& st) {
    const int Fs = rb.Fs;
    int half = cfg_.disc_batch / 2;
    if (rb.n() < half) half = rb.n();  // reduce with a note in stats

    // expert pair sampling across clips, uniform over usable frame pairs
    std::vector<int64_t> cum;
    int64_t total_pairs = 0;
    for (const auto& c : ds_.clips) {
      total_pairs += c.frames - 1;
      cum.push_back(total_pairs);
    }
    if (total_pairs <= 0) throw std::runtime_error("disc: dataset has no frame pairs");

    double loss_sum = 0, gp_sum = 0, de_sum = 0, dp_sum = 0;
    for (int u = 0; u < cfg_.disc_updates; ++u) {
      Arr expert = Arr::zeros(half, Fs), pol = Arr::zeros(half, Fs);
      std::vector<double> feat(Fs);
      for (int i = 0; i < half; ++i) {
        int64_t k = rng_disc_.uniform_int(0, static_cast<int>(total_pairs - 1));
        size_t ci = std::lower_bound(cum.begin(), cum.end(), k + 1) - cum.begin();
        int frame = static_cast<int>(k - (ci == 0 ? 0 : cum[ci - 1]));
        sim::style_features_from_clip(ds_.clips[ci], frame, feat.data());
        for (int c = 0; c < Fs; ++c) expert.at(i, c) = static_cast<S>(feat[c]);
        const int s = rng_disc_.uniform_int(0, rb.n() - 1);
        for (int c = 0; c < Fs; ++c)
          pol.at(i, c) = static_cast<S>(rb.style_pairs[static_cast<size_t>(s) * Fs + c]);
      }
      Tape t;
      auto dv = disc_.store.attach(t);
      auto losses = rewards::discriminator_loss(t, dv, disc_, expert, pol, cfg_.w_gp);
      t.backward(losses.total);
      loss_sum += static_cast<double>(t.val(losses.total).data[0]);
      gp_sum += static_cast<double>(t.val(losses.grad_penalty).data[0]);
      de_sum += static_cast<double>(t.val(losses.d_expert_mean).data[0]);
      dp_sum += static_cast<double>(t.val(losses.d_policy_mean).data[0]);
      auto grads = disc_.store.grads(t, dv);
      adam_disc_.step(disc_.store.values(), grads, S(cfg_.disc_lr));
    }
    st.disc_loss = loss_sum / cfg_.disc_updates;
    st.disc_gp = gp_sum / cfg_.disc_updates;
    st.disc_expert_mean = de_sum / cfg_.disc_updates;
    st.disc_policy_mean = dp_sum / cfg_.disc_updates;
  }

  // scratch kept across phases of one iteration
  std::vector<double> term_tokens_, end_tokens_;
  std::vector<uint8_t> term_masks_, end_masks_;
  std::vector<int> term_sample_;
  std::vector<std::vector<double>> adv_, targets_;
};

}  // namespace keyloco::rl
