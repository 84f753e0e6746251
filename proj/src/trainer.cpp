#include "planforge/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>

namespace planforge {

namespace {

std::string zero_pad(long v, int width) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%0*ld", width, v);
  return buf;
}

std::string episode_path(const std::string& dir, long index) {
  return path_join(dir, "ep_" + zero_pad(index, 6) + ".json");
}

std::string round_checkpoint_path(const std::string& dir, long round) {
  return path_join(dir, "ck_round_" + zero_pad(round, 4) + ".json");
}

// ep_000123.json -> 123; -1 when the name does not follow the scheme.
long episode_index_of(const std::string& path) {
  const auto slash = path.find_last_of('/');
  std::string name = slash == std::string::npos ? path : path.substr(slash + 1);
  if (name.size() <= 8 || name.compare(0, 3, "ep_") != 0) return -1;
  name = name.substr(3, name.size() - 8);  // strip ep_ and .json
  char* end = nullptr;
  const long v = std::strtol(name.c_str(), &end, 10);
  return (end && *end == '\0') ? v : -1;
}

// Everything the loop mutates between rounds.
struct LearnerState {
  Policy policy;
  TargetPolicy target;
  AdamState agent_opt, mixer_opt;
  Rng sampler{0};
  long update_count = 0;
  long episode_count = 0;
};

Checkpoint to_checkpoint(const RunConfig& config, const LearnerState& ls) {
  Checkpoint ck;
  ck.config = config;
  ck.update_count = ls.update_count;
  ck.episode_count = ls.episode_count;
  ck.last_sync_step = ls.target.last_sync_step;
  ck.sampler_state = ls.sampler.state();
  ck.online_agent = ls.policy.net.params;
  ck.online_mixer = ls.policy.mixer.params;
  ck.target_agent = ls.target.net.params;
  ck.target_mixer = ls.target.mixer.params;
  ck.adam_agent_m = ls.agent_opt.m;
  ck.adam_agent_v = ls.agent_opt.v;
  ck.adam_agent_t = ls.agent_opt.t;
  ck.adam_mixer_m = ls.mixer_opt.m;
  ck.adam_mixer_v = ls.mixer_opt.v;
  ck.adam_mixer_t = ls.mixer_opt.t;
  return ck;
}

LearnerState from_checkpoint(const Checkpoint& ck, const Environment& probe) {
  LearnerState ls;
  ls.policy = policy_from_checkpoint(ck, probe);
  ls.target = TargetPolicy::from(ls.policy);
  copy_values(ck.target_agent, ls.target.net.params);
  copy_values(ck.target_mixer, ls.target.mixer.params);
  ls.agent_opt = AdamState::like(ls.policy.net.params);
  ls.mixer_opt = AdamState::like(ls.policy.mixer.params);
  copy_values(ck.adam_agent_m, ls.agent_opt.m);
  copy_values(ck.adam_agent_v, ls.agent_opt.v);
  ls.agent_opt.t = ck.adam_agent_t;
  copy_values(ck.adam_mixer_m, ls.mixer_opt.m);
  copy_values(ck.adam_mixer_v, ls.mixer_opt.v);
  ls.mixer_opt.t = ck.adam_mixer_t;
  ls.sampler.set_state(ck.sampler_state);
  ls.update_count = ck.update_count;
  ls.episode_count = ck.episode_count;
  ls.target.last_sync_step = ck.last_sync_step;
  return ls;
}

// The checkpoint must describe the same run; only the budget, destination,
// and checkpoint cadence may change across a resume.
void check_resume_compatible(const RunConfig& from_checkpoint,
                             const RunConfig& config) {
  RunConfig normalized = from_checkpoint;
  normalized.episodes = config.episodes;
  normalized.out_dir = config.out_dir;
  normalized.checkpoint_every_rounds = config.checkpoint_every_rounds;
  if (!(normalized == config))
    throw ConfigError(
        "resume: checkpoint was written by a different run configuration "
        "(only episodes, out_dir, and checkpoint_every_rounds may change)");
}

}  // namespace

std::vector<Case> make_train_cases(const RunConfig& config) {
  config.validate();
  std::vector<Case> cases;
  cases.reserve(static_cast<std::size_t>(config.train_cases));
  for (int i = 0; i < config.train_cases; ++i) {
    Case c = generate_case(
        derive_seed(config.base_seed, kTrainCaseStream + static_cast<std::uint64_t>(i)),
        config.grid, config.phantom_template, config.prescription_gy);
    c.id = "train_" + zero_pad(i, 3);
    cases.push_back(std::move(c));
  }
  return cases;
}

std::vector<Case> make_test_cases(const RunConfig& config) {
  config.validate();
  std::vector<Case> cases;
  cases.reserve(static_cast<std::size_t>(config.test_cases));
  for (int i = 0; i < config.test_cases; ++i) {
    Case c = generate_case(
        derive_seed(config.base_seed, kTestCaseStream + static_cast<std::uint64_t>(i)),
        config.grid, config.phantom_template, config.prescription_gy);
    c.id = "test_" + zero_pad(i, 3);
    cases.push_back(std::move(c));
  }
  return cases;
}

std::vector<Environment> make_environments(const std::vector<Case>& cases,
                                           const RunConfig& config) {
  if (cases.empty()) throw ConfigError("no cases to build environments from");
  std::vector<Environment> envs;
  envs.reserve(cases.size());
  for (const Case& c : cases)
    envs.push_back(Environment::make(c, config.solver, config.registry_mode));
  for (const Environment& e : envs)
    if (e.state_dim() != envs.front().state_dim() ||
        e.n_agents() != envs.front().n_agents())
      throw ConfigError("cases disagree on structure layout; environments "
                        "must share one agent registry");
  return envs;
}

Policy policy_from_checkpoint(const Checkpoint& ck, const Environment& probe) {
  Rng shape_rng(0);  // values are overwritten below
  Policy policy = make_policy(ck.config, probe, shape_rng);
  // copy_values validates that the checkpoint's names and shapes match the
  // networks its config builds.
  copy_values(ck.online_agent, policy.net.params);
  copy_values(ck.online_mixer, policy.mixer.params);
  return policy;
}

Policy make_policy(const RunConfig& config, const Environment& probe, Rng& rng) {
  AgentNetConfig nc;
  nc.state_dim = probe.state_dim();
  nc.n_agents = probe.n_agents();
  nc.shared = config.shared_trunk;
  nc.trunk_dim = config.trunk_dim;
  nc.hidden_dim = config.hidden_dim;
  MixerConfig mc;
  mc.state_dim = probe.state_dim();
  mc.n_agents = probe.n_agents();
  mc.embed_dim = config.mixer_embed_dim;
  Policy policy = Policy::init(nc, mc, rng);
  policy.epsilon = config.hyper.epsilon_initial;
  return policy;
}

TrainOutcome train_run(const RunConfig& config, const std::string& resume_from) {
  config.validate();
  ensure_dir(config.out_dir);
  const std::string episodes_dir = path_join(config.out_dir, "episodes");
  const std::string ckpt_dir = path_join(config.out_dir, "checkpoints");
  const std::string telemetry_path = path_join(config.out_dir, "telemetry.csv");
  ensure_dir(episodes_dir);
  ensure_dir(ckpt_dir);
  save_config(config, path_join(config.out_dir, "config.json"));

  const std::vector<Case> cases = make_train_cases(config);
  const std::vector<Environment> envs = make_environments(cases, config);

  LearnerState ls;
  std::vector<TelemetryRow> telemetry;
  TrainOutcome outcome;
  DataBank bank(config.bank_capacity);

  if (resume_from.empty()) {
    Rng init_rng(derive_seed(config.base_seed, kNetInitStream));
    ls.policy = make_policy(config, envs.front(), init_rng);
    ls.target = TargetPolicy::from(ls.policy);
    ls.agent_opt = AdamState::like(ls.policy.net.params);
    ls.mixer_opt = AdamState::like(ls.policy.mixer.params);
    ls.sampler = Rng(derive_seed(config.base_seed, kSamplerStream));
    // A loadable state exists before any learning, so an abort at any later
    // point always leaves a good checkpoint behind.
    const std::string p = round_checkpoint_path(ckpt_dir, 0);
    save_checkpoint(to_checkpoint(config, ls), p);
    outcome.final_checkpoint = p;
  } else {
    const Checkpoint ck = load_checkpoint(resume_from);
    check_resume_compatible(ck.config, config);
    ls = from_checkpoint(ck, envs.front());
    outcome.final_checkpoint = resume_from;
    // Telemetry and bank state as of the checkpoint: keep rows up to its
    // update counter, refill the bank from the episodes it had seen.
    if (file_exists(telemetry_path))
      for (const TelemetryRow& r : load_telemetry_csv(telemetry_path))
        if (r.update <= ls.update_count) telemetry.push_back(r);
    for (const std::string& path : list_files(episodes_dir, "ep_", ".json")) {
      const long index = episode_index_of(path);
      if (index < 0 || index >= ls.episode_count) continue;
      EpisodeRecord rec = load_episode(path);
      if (!rec.failed) bank.push(std::move(rec));
    }
  }

  long round = (ls.episode_count + config.workers - 1) / config.workers;
  while (ls.episode_count < config.episodes && !outcome.aborted) {
    const long first = ls.episode_count;
    WorkerPool pool{static_cast<int>(
        std::min<long>(config.workers, config.episodes - first))};
    const std::vector<EpisodeRecord> records = collect_round(
        pool, envs, ls.policy, config.hyper, config.base_seed, first, bank,
        config.horizon);
    for (std::size_t k = 0; k < records.size(); ++k)
      save_episode(records[k], episode_path(episodes_dir, first + static_cast<long>(k)));
    ls.episode_count = first + static_cast<long>(records.size());
    ++round;

    double mean_return = 0.0, mean_best = 0.0;
    int ok = 0;
    for (const EpisodeRecord& r : records)
      if (!r.failed) {
        mean_return += r.episode_return;
        mean_best += r.best_relative;
        ++ok;
      }
    if (ok > 0) {
      mean_return /= ok;
      mean_best /= ok;
    }
    const double round_epsilon = epsilon_at(
        static_cast<int>(first), config.hyper.epsilon_initial,
        config.hyper.epsilon_decay, config.hyper.epsilon_decay_every);

    if (bank.size() >= static_cast<std::size_t>(config.hyper.batch_episodes)) {
      for (int u = 0; u < config.hyper.updates_per_round; ++u) {
        const TDBatch batch =
            sample_batch(bank, config.hyper.batch_episodes, ls.sampler);
        UpdateStats stats;
        try {
          stats = learner_update(ls.policy, ls.target, batch, config.hyper,
                                 ls.agent_opt, ls.mixer_opt);
        } catch (const NumericError& e) {
          outcome.aborted = true;
          outcome.abort_reason = e.what();
          break;
        }
        ++ls.update_count;
        telemetry.push_back({ls.update_count, ls.episode_count, round_epsilon,
                             stats.loss, stats.mean_q_tot, mean_return,
                             mean_best});
        if (ls.update_count - ls.target.last_sync_step >=
            config.hyper.target_sync_period)
          sync_target(ls.policy, ls.target, ls.update_count);
      }
    }
    save_telemetry_csv(telemetry, telemetry_path);

    if (!outcome.aborted && round % config.checkpoint_every_rounds == 0) {
      const std::string p = round_checkpoint_path(ckpt_dir, round);
      save_checkpoint(to_checkpoint(config, ls), p);
      outcome.final_checkpoint = p;
    }
  }

  if (!outcome.aborted) {
    const std::string p = path_join(ckpt_dir, "final.json");
    save_checkpoint(to_checkpoint(config, ls), p);
    outcome.final_checkpoint = p;
  }
  save_telemetry_csv(telemetry, telemetry_path);
  if (!telemetry.empty())
    save_training_curves(telemetry,
                         path_join(config.out_dir, "training_curves.svg"));

  outcome.telemetry = std::move(telemetry);
  outcome.episodes_collected = ls.episode_count;
  outcome.updates_done = ls.update_count;
  return outcome;
}

}  // namespace planforge
