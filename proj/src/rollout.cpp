#include "planforge/rollout.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

namespace planforge {

Environment Environment::make(const Case& c, const SolverOptions& solver,
                              RegistryMode mode) {
  Environment env;
  env.plan_case = c;
  const bool full =
      mode == RegistryMode::Full ||
      (mode == RegistryMode::Auto &&
       c.structures.size() == static_cast<Index>(canonical_structure_names().size()));
  env.registry = full ? ParameterRegistry::for_structures(c.structures,
                                                          c.prescription_gy)
                      : ParameterRegistry::reduced_for_structures(
                            c.structures, c.prescription_gy);
  env.scoring = ScoringSystem::for_structures(c.structures);
  env.solver = solver;
  return env;
}

Index Environment::state_dim() const {
  return plan_case.structures.size() * kDvhBins;
}

void EpisodeRecord::validate(int expected_horizon) const {
  if (failed)
    throw ConfigError("episode record marked failed: " + failure_reason);
  const size_t t_count = actions.size();
  if (static_cast<int>(t_count) != expected_horizon)
    throw ConfigError("episode record: horizon mismatch");
  if (states.size() != t_count + 1 || scores.size() != t_count + 1 ||
      tuner.size() != t_count + 1 || parameters.size() != t_count + 1 ||
      static_cast<size_t>(rewards.size()) != t_count)
    throw ConfigError("episode record: per-step array lengths disagree");
  for (size_t t = 0; t < t_count; ++t) {
    const ScoreBreakdown& next = scores[t + 1];
    if (std::abs(rewards[static_cast<Index>(t)] -
                 reward(next.total, next.max_total)) > 1e-9)
      throw ConfigError("episode record: reward inconsistent with scores");
  }
  if (std::abs(episode_return - rewards.sum()) > 1e-9)
    throw ConfigError("episode record: return does not match rewards");
  double best = 0.0;
  for (const ScoreBreakdown& s : scores) best = std::max(best, s.relative());
  if (std::abs(best_relative - best) > 1e-12)
    throw ConfigError("episode record: best relative score mismatch");
}

TDEpisode EpisodeRecord::to_td() const {
  TDEpisode td;
  td.states.reserve(states.size());
  for (const Matrix& s : states) td.states.push_back(state_features(s));
  td.actions = actions;
  td.rewards = rewards;
  return td;
}

EpisodeRecord run_episode(const Environment& env, const Policy& policy,
                          double epsilon, std::uint64_t seed, int horizon) {
  if (horizon <= 0) throw ConfigError("run_episode: horizon must be positive");
  if (policy.net.cfg.n_agents != env.n_agents())
    throw ConfigError("run_episode: policy agent count differs from registry");
  if (policy.net.cfg.state_dim != env.state_dim())
    throw ConfigError("run_episode: policy state dimension differs from case");

  EpisodeRecord rec;
  rec.case_id = env.plan_case.id;
  rec.seed = seed;
  rec.epsilon = epsilon;
  Rng rng(seed);

  TunerState x = TunerState::initial(env.registry.size());
  Vector fluence = Vector::Zero(env.plan_case.influence.cols());
  std::vector<double> rewards;
  try {
    Vector params = to_values(x, env.registry);
    PlanState s = step_environment(env.plan_case, env.registry, params, fluence,
                                   env.solver);
    fluence = s.fluence;
    rec.states.push_back(s.dvh);
    rec.scores.push_back(plan_score(s.dose, env.plan_case, env.scoring));
    rec.tuner.push_back(x);
    rec.parameters.push_back(params);

    History history{state_features(s.dvh)};
    for (int t = 0; t < horizon; ++t) {
      const ActionVector a = select_actions(policy, history, epsilon, rng);
      x = apply_actions(x, a);
      params = to_values(x, env.registry);
      PlanState next = step_environment(env.plan_case, env.registry, params,
                                        fluence, env.solver);
      fluence = next.fluence;
      const ScoreBreakdown score = plan_score(next.dose, env.plan_case,
                                              env.scoring);
      rec.actions.push_back(a);
      rewards.push_back(reward(score.total, score.max_total));
      rec.states.push_back(next.dvh);
      rec.scores.push_back(score);
      rec.tuner.push_back(x);
      rec.parameters.push_back(params);
      history.push_back(state_features(next.dvh));
    }
  } catch (const std::exception& e) {
    rec.failed = true;
    rec.failure_reason = e.what();
  }

  rec.rewards = Eigen::Map<const Vector>(rewards.data(),
                                         static_cast<Index>(rewards.size()));
  if (!rec.failed) {
    rec.episode_return = rec.rewards.sum();
    for (const ScoreBreakdown& s : rec.scores)
      rec.best_relative = std::max(rec.best_relative, s.relative());
  }
  return rec;
}

DataBank::DataBank(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw ConfigError("data bank: capacity must be positive");
}

const EpisodeRecord& DataBank::at(std::size_t i) const {
  if (i >= records_.size()) throw ConfigError("data bank: index out of range");
  return records_[i];
}

void DataBank::push(EpisodeRecord rec) {
  if (rec.failed)
    throw ConfigError("data bank: failed episodes are excluded");
  records_.push_back(std::move(rec));
  total_pushed_ += 1;
  while (records_.size() > capacity_) records_.pop_front();
}

void WorkerPool::validate() const {
  if (workers < 1) throw ConfigError("worker pool: need at least one worker");
}

std::vector<EpisodeRecord> collect_round(const WorkerPool& pool,
                                         const std::vector<Environment>& cases,
                                         const Policy& policy, const Hyper& hyper,
                                         std::uint64_t base_seed,
                                         long first_episode, DataBank& bank,
                                         int horizon) {
  pool.validate();
  hyper.validate();
  if (cases.empty()) throw ConfigError("collect_round: no cases");
  if (first_episode < 0)
    throw ConfigError("collect_round: episode index must be nonnegative");

  const int k = pool.workers;
  std::vector<EpisodeRecord> records(static_cast<size_t>(k));
  auto run_slot = [&](int slot) {
    const long global = first_episode + slot;
    const Environment& env =
        cases[static_cast<size_t>(global) % cases.size()];
    const double eps =
        epsilon_at(static_cast<int>(global), hyper.epsilon_initial,
                   hyper.epsilon_decay, hyper.epsilon_decay_every);
    const std::uint64_t seed =
        derive_seed(base_seed, static_cast<std::uint64_t>(global));
    try {
      records[static_cast<size_t>(slot)] =
          run_episode(env, policy, eps, seed, horizon);
    } catch (const std::exception& e) {
      records[static_cast<size_t>(slot)].failed = true;
      records[static_cast<size_t>(slot)].failure_reason = e.what();
      records[static_cast<size_t>(slot)].case_id = env.plan_case.id;
      records[static_cast<size_t>(slot)].seed = seed;
    }
  };

  if (k == 1) {
    run_slot(0);
  } else {
    std::vector<std::thread> threads;
    threads.reserve(static_cast<size_t>(k));
    for (int slot = 0; slot < k; ++slot) threads.emplace_back(run_slot, slot);
    for (auto& t : threads) t.join();
  }

  for (const EpisodeRecord& rec : records)
    if (!rec.failed) bank.push(rec);
  return records;
}

TDBatch sample_batch(const DataBank& bank, int batch_episodes, Rng& rng) {
  if (batch_episodes <= 0)
    throw ConfigError("sample_batch: batch size must be positive");
  if (static_cast<size_t>(batch_episodes) > bank.size())
    throw ConfigError("sample_batch: not enough episodes banked");
  std::vector<size_t> idx(bank.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  TDBatch batch;
  batch.episodes.reserve(static_cast<size_t>(batch_episodes));
  for (int i = 0; i < batch_episodes; ++i) {
    const size_t j =
        static_cast<size_t>(i) +
        static_cast<size_t>(rng.uniform_int(
            static_cast<std::uint64_t>(idx.size() - static_cast<size_t>(i))));
    std::swap(idx[static_cast<size_t>(i)], idx[j]);
    batch.episodes.push_back(bank.at(idx[static_cast<size_t>(i)]).to_td());
  }
  return batch;
}

}  // namespace planforge
