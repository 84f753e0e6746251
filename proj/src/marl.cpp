#include "planforge/marl.hpp"

#include <cmath>

namespace planforge {

Vector state_features(const Matrix& dvh) {
  return Eigen::Map<const Vector>(dvh.data(), dvh.size());
}

void Hyper::validate() const {
  if (!(gamma > 0.0 && gamma < 1.0))
    throw ConfigError("hyper: gamma must lie in (0,1)");
  if (batch_episodes <= 0) throw ConfigError("hyper: batch_episodes must be positive");
  if (lr <= 0.0) throw ConfigError("hyper: lr must be positive");
  if (target_sync_period <= 0)
    throw ConfigError("hyper: target_sync_period must be positive");
  if (updates_per_round <= 0)
    throw ConfigError("hyper: updates_per_round must be positive");
  if (!(epsilon_initial >= 0.0 && epsilon_initial <= 1.0))
    throw ConfigError("hyper: epsilon_initial must lie in [0,1]");
  if (!(epsilon_decay > 0.0 && epsilon_decay <= 1.0))
    throw ConfigError("hyper: epsilon_decay must lie in (0,1]");
  if (epsilon_decay_every <= 0)
    throw ConfigError("hyper: epsilon_decay_every must be positive");
}

double epsilon_at(int episode, double initial, double decay, int every) {
  if (episode < 0) throw ConfigError("epsilon_at: episode must be nonnegative");
  return initial * std::pow(decay, static_cast<double>(episode / every));
}

Policy Policy::init(const AgentNetConfig& net_cfg, const MixerConfig& mixer_cfg,
                    Rng& rng) {
  if (net_cfg.n_agents != mixer_cfg.n_agents)
    throw ConfigError("policy: agent count mismatch between net and mixer");
  if (net_cfg.state_dim != mixer_cfg.state_dim)
    throw ConfigError("policy: state dimension mismatch between net and mixer");
  Policy p;
  p.net = AgentNet::init(net_cfg, rng);
  p.mixer = HyperMixer::init(mixer_cfg, rng);
  return p;
}

void Policy::validate() const {
  net.params.validate();
  mixer.params.validate();
  if (!(epsilon >= 0.0 && epsilon <= 1.0))
    throw ConfigError("policy: epsilon must lie in [0,1]");
}

TargetPolicy TargetPolicy::from(const Policy& policy) {
  TargetPolicy t;
  t.net = policy.net;
  t.mixer = policy.mixer;
  t.last_sync_step = 0;
  return t;
}

void sync_target(const Policy& policy, TargetPolicy& target, long step) {
  copy_values(policy.net.params, target.net.params);
  copy_values(policy.mixer.params, target.mixer.params);
  target.last_sync_step = step;
}

namespace {

// Unrolls one agent over the history; returns the utilities at every prefix
// length and fills `caches` when requested.
std::vector<Vector> unroll_agent(const AgentNet& net, int agent,
                                 const History& history,
                                 std::vector<AgentStepCache>* caches) {
  std::vector<Vector> qs;
  qs.reserve(history.size());
  if (caches != nullptr) caches->resize(history.size());
  RecurrentState rec = zero_state(net.cfg.hidden_dim);
  for (size_t t = 0; t < history.size(); ++t) {
    AgentStepCache* c = caches != nullptr ? &(*caches)[t] : nullptr;
    qs.push_back(agent_forward(net, agent, history[t], rec, c));
  }
  return qs;
}

}  // namespace

Vector agent_q(const Policy& policy, const History& history, int agent) {
  if (history.empty()) throw ConfigError("agent_q: history must be nonempty");
  RecurrentState rec = zero_state(policy.net.cfg.hidden_dim);
  Vector q;
  for (const Vector& s : history) q = agent_forward(policy.net, agent, s, rec);
  return q;
}

int argmax_q(const Vector& q) {
  int best = 0;
  for (Index i = 1; i < q.size(); ++i)
    if (q[i] > q[best]) best = static_cast<int>(i);
  return best;
}

IntVector select_actions(const Policy& policy, const History& history, Rng& rng) {
  return select_actions(policy, history, policy.epsilon, rng);
}

IntVector select_actions(const Policy& policy, const History& history,
                         double epsilon, Rng& rng) {
  if (history.empty())
    throw ConfigError("select_actions: history must be nonempty");
  if (!(epsilon >= 0.0 && epsilon <= 1.0))
    throw ConfigError("select_actions: epsilon must lie in [0,1]");
  const int n = policy.net.cfg.n_agents;
  IntVector actions(n);
  for (int a = 0; a < n; ++a) {
    if (rng.uniform() < epsilon) {
      actions[a] = static_cast<int>(rng.uniform_int(3)) - 1;
    } else {
      actions[a] = argmax_q(agent_q(policy, history, a)) - 1;
    }
  }
  return actions;
}

void TDEpisode::validate(int n_agents, Index state_dim) const {
  if (states.size() < 2)
    throw ConfigError("episode: needs at least one transition");
  if (actions.size() + 1 != states.size() ||
      static_cast<size_t>(rewards.size()) != actions.size())
    throw ConfigError("episode: states/actions/rewards lengths disagree");
  for (const Vector& s : states) {
    if (s.size() != state_dim)
      throw ConfigError("episode: state feature length mismatch");
    if (!s.allFinite()) throw NumericError("episode: non-finite state");
  }
  for (const IntVector& a : actions) {
    if (a.size() != n_agents)
      throw ConfigError("episode: joint action size mismatch");
    for (Index i = 0; i < a.size(); ++i)
      if (a[i] < -1 || a[i] > 1)
        throw ConfigError("episode: actions must lie in {-1,0,+1}");
  }
  if (!rewards.allFinite()) throw NumericError("episode: non-finite reward");
}

void TDBatch::validate(int n_agents, Index state_dim) const {
  if (episodes.empty()) throw ConfigError("batch: must be nonempty");
  for (const TDEpisode& e : episodes) {
    e.validate(n_agents, state_dim);
    if (e.horizon() != episodes.front().horizon())
      throw ConfigError("batch: episodes must share one horizon");
  }
}

double td_target(const Matrix& online_next_q, const Matrix& target_next_q,
                 const std::function<double(const Vector&)>& target_mix,
                 double reward, double gamma) {
  if (online_next_q.rows() != target_next_q.rows() ||
      online_next_q.cols() != target_next_q.cols())
    throw ConfigError("td_target: utility table shape mismatch");
  const Index n = online_next_q.rows();
  Vector selected(n);
  for (Index i = 0; i < n; ++i) {
    const int a = argmax_q(online_next_q.row(i).transpose());
    selected[i] = target_next_q(i, a);
  }
  return reward + gamma * target_mix(selected);
}

UpdateStats td_loss_and_grads(const Policy& policy, const TargetPolicy& target,
                              const TDBatch& batch, const Hyper& hyper,
                              GradSet& agent_grads, GradSet& mixer_grads) {
  hyper.validate();
  const int n = policy.net.cfg.n_agents;
  const Index sd = policy.net.cfg.state_dim;
  const int n_actions = policy.net.cfg.n_actions;
  batch.validate(n, sd);

  const int horizon = batch.episodes.front().horizon();
  const double denom =
      static_cast<double>(batch.episodes.size()) * horizon;

  double loss = 0.0;
  double q_tot_sum = 0.0;

  for (const TDEpisode& ep : batch.episodes) {
    // Unroll every agent once over the full history for both estimators.
    std::vector<std::vector<AgentStepCache>> caches(
        static_cast<size_t>(n));
    std::vector<std::vector<Vector>> online_q(static_cast<size_t>(n));
    std::vector<std::vector<Vector>> target_q(static_cast<size_t>(n));
    for (int a = 0; a < n; ++a) {
      online_q[static_cast<size_t>(a)] =
          unroll_agent(policy.net, a, ep.states, &caches[static_cast<size_t>(a)]);
      target_q[static_cast<size_t>(a)] =
          unroll_agent(target.net, a, ep.states, nullptr);
    }

    std::vector<std::vector<Vector>> dq(static_cast<size_t>(n));
    for (int a = 0; a < n; ++a)
      dq[static_cast<size_t>(a)].assign(ep.states.size(),
                                        Vector::Zero(n_actions));

    for (int t = 0; t < horizon; ++t) {
      // Chosen-action utilities at s_t.
      Vector q_chosen(n);
      for (int a = 0; a < n; ++a)
        q_chosen[a] = online_q[static_cast<size_t>(a)][static_cast<size_t>(t)]
                              [ep.actions[static_cast<size_t>(t)][a] + 1];
      MixCache mc;
      const double q_tot = mix(policy.mixer, q_chosen,
                               ep.states[static_cast<size_t>(t)], &mc);
      q_tot_sum += q_tot;

      // Target value at s_{t+1}.
      double y;
      if (hyper.done_mask_final && t == horizon - 1) {
        y = ep.rewards[t];
      } else {
        Matrix online_next(n, n_actions), target_next(n, n_actions);
        for (int a = 0; a < n; ++a) {
          online_next.row(a) =
              online_q[static_cast<size_t>(a)][static_cast<size_t>(t + 1)]
                  .transpose();
          target_next.row(a) =
              target_q[static_cast<size_t>(a)][static_cast<size_t>(t + 1)]
                  .transpose();
        }
        auto target_mix = [&](const Vector& q) {
          return mix(target.mixer, q, ep.states[static_cast<size_t>(t + 1)]);
        };
        y = td_target(online_next, target_next, target_mix, ep.rewards[t],
                      hyper.gamma);
      }

      const double diff = q_tot - y;
      loss += diff * diff / denom;
      const double upstream = 2.0 * diff / denom;
      const Vector dq_mix = mix_backward(policy.mixer, mc, upstream, mixer_grads);
      for (int a = 0; a < n; ++a)
        dq[static_cast<size_t>(a)][static_cast<size_t>(t)]
          [ep.actions[static_cast<size_t>(t)][a] + 1] = dq_mix[a];
    }

    for (int a = 0; a < n; ++a)
      agent_backward_sequence(policy.net, a, caches[static_cast<size_t>(a)],
                              dq[static_cast<size_t>(a)], agent_grads);
  }

  if (!std::isfinite(loss))
    throw NumericError("learner update produced a non-finite loss");

  return {loss, q_tot_sum / denom};
}

UpdateStats learner_update(Policy& policy, const TargetPolicy& target,
                           const TDBatch& batch, const Hyper& hyper,
                           AdamState& agent_opt, AdamState& mixer_opt) {
  GradSet agent_grads = zero_like(policy.net.params);
  GradSet mixer_grads = zero_like(policy.mixer.params);
  const UpdateStats stats =
      td_loss_and_grads(policy, target, batch, hyper, agent_grads, mixer_grads);

  AdamConfig opt_cfg;
  opt_cfg.lr = hyper.lr;
  adam_step(policy.net.params, agent_grads, agent_opt, opt_cfg);
  adam_step(policy.mixer.params, mixer_grads, mixer_opt, opt_cfg);

  return stats;
}

}  // namespace planforge
